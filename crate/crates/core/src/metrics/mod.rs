//! Reconstruction quality (PSNR, SSIM, MS-SSIM), task accuracy (mAP) and
//! the rate–distortion sweep that ties them to stream sizes.
//!
//! SSIM here is a direct 2-D window evaluation with two-pass moments, kept
//! separate from the trainer's separable version so each checks the other.

pub mod map;
pub mod rd;

use crate::error::{Error, Result};
use crate::imagery::RgbImage;

/// Exponents of the five MS-SSIM scales, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 6.5025;
pub const SSIM_C2: f64 = 58.5225;

fn same_size(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `10·log10(255² / MSE)` over all samples; `+∞` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b)?;
    let se: u64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| (x as i64 - y as i64).pow(2) as u64)
        .sum();
    if se == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = se as f64 / a.samples().len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// BT.601 luma in `[0, 255]`, row-major.
pub fn luma(img: &RgbImage) -> Vec<f64> {
    img.samples()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// A single-channel plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Gray {
    pub fn luma_of(img: &RgbImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            values: luma(img),
        }
    }

    /// 2×2 mean; an odd last row or column is dropped.
    pub fn downsample(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dx, dy| self.values[(2 * y + dy) * self.width + 2 * x + dx];
                values.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
            }
        }
        Self { width: w, height: h, values }
    }
}

/// Mean SSIM and mean contrast-structure term over every pixel.
pub struct SsimMaps {
    pub ssim: f64,
    pub cs: f64,
}

/// Direct evaluation: at each pixel, the Gaussian window clipped to the image
/// and renormalized, with mean-centred second moments.
pub fn ssim_maps(a: &Gray, b: &Gray) -> Result<SsimMaps> {
    if (a.width, a.height) != (b.width, b.height) || a.values.is_empty() {
        return Err(Error::ShapeMismatch("ssim of different or empty planes".into()));
    }
    let (w, h) = (a.width as isize, a.height as isize);
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
    for py in 0..h {
        for px in 0..w {
            let mut taps = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (px + dx, py + dy);
                    if (0..w).contains(&x) && (0..h).contains(&y) {
                        taps.push((g[(dy + r) as usize] * g[(dx + r) as usize], (y * w + x) as usize));
                    }
                }
            }
            let norm: f64 = taps.iter().map(|t| t.0).sum();
            let mean = |v: &[f64]| taps.iter().map(|&(wt, i)| wt * v[i]).sum::<f64>() / norm;
            let (ma, mb) = (mean(&a.values), mean(&b.values));
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for &(wt, i) in &taps {
                let (da, db) = (a.values[i] - ma, b.values[i] - mb);
                va += wt * da * da;
                vb += wt * db * db;
                cov += wt * da * db;
            }
            let (va, vb, cov) = (va / norm, vb / norm, cov / norm);
            let l = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
            let cs = (2.0 * cov + SSIM_C2) / (va + vb + SSIM_C2);
            ssim_sum += l * cs;
            cs_sum += cs;
        }
    }
    let n = a.values.len() as f64;
    Ok(SsimMaps {
        ssim: ssim_sum / n,
        cs: cs_sum / n,
    })
}

/// SSIM on luma.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b)?;
    Ok(ssim_maps(&Gray::luma_of(a), &Gray::luma_of(b))?.ssim)
}

/// Scales MS-SSIM uses for an image whose smaller side is `side`: each scale
/// must still be at least one window wide, up to five.
pub fn ms_ssim_scales(side: usize) -> usize {
    (0..MS_SSIM_WEIGHTS.len()).take_while(|&k| side >> k >= SSIM_WINDOW).count()
}

/// MS-SSIM on luma: mean contrast-structure at every scale but the coarsest,
/// full SSIM at the coarsest, combined with the published exponents. Below
/// 176 pixels fewer scales fit; the leading exponents are then renormalized
/// to sum to one. Negative terms count as zero.
pub fn ms_ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b)?;
    let scales = ms_ssim_scales(a.width().min(a.height()));
    ms_ssim_with_scales(&Gray::luma_of(a), &Gray::luma_of(b), scales)
}

pub fn ms_ssim_with_scales(a: &Gray, b: &Gray, scales: usize) -> Result<f64> {
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() || ms_ssim_scales(a.width.min(a.height)) < scales {
        return Err(Error::BadDimensions(format!(
            "{}x{} is too small for {scales} MS-SSIM scale(s) of an {SSIM_WINDOW}-pixel window",
            a.width, a.height
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let (mut a, mut b) = (a.clone(), b.clone());
    let mut out = 1.0;
    for (k, wk) in weights.iter().enumerate() {
        let m = ssim_maps(&a, &b)?;
        let term = if k + 1 == scales { m.ssim } else { m.cs };
        out *= term.max(0.0).powf(wk / total);
        a = a.downsample();
        b = b.downsample();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::ssim as fast;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(base: &RgbImage, amp: i32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = base
            .samples()
            .iter()
            .map(|&v| (v as i32 + rng.gen_range(-amp..=amp)).clamp(0, 255) as u8)
            .collect();
        RgbImage::from_raw(base.width(), base.height(), s).unwrap()
    }

    fn textured(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = 128.0 + 60.0 * ((x as f64) * 0.3).sin() + 40.0 * ((y as f64) * 0.17).cos();
            [v as u8, (255.0 - v) as u8, ((x * y) % 256) as u8]
        })
    }

    #[test]
    fn psnr_examples() {
        let a = RgbImage::filled(4, 4, [0, 0, 0]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&a, &RgbImage::filled(4, 4, [255, 255, 255])).unwrap(), 0.0);
        let d16 = psnr(&a, &RgbImage::filled(4, 4, [16, 16, 16])).unwrap();
        assert!((d16 - 24.0484).abs() < 1e-4, "{d16}");
        assert!((d16 - 10.0 * (65025.0f64 / 256.0).log10()).abs() < 1e-12);
        let b = textured(8, 8);
        let c = noisy(&b, 10, 1);
        assert_eq!(psnr(&b, &c).unwrap(), psnr(&c, &b).unwrap());
        assert!(psnr(&a, &RgbImage::filled(5, 4, [0, 0, 0])).is_err());
    }

    #[test]
    fn psnr_falls_as_error_grows() {
        let a = RgbImage::filled(4, 4, [100, 100, 100]);
        let mut last = f64::INFINITY;
        for d in 1..50u8 {
            let p = psnr(&a, &RgbImage::filled(4, 4, [100 + d, 100, 100])).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_matches_trainer_ssim() {
        for (seed, (w, h)) in [(1, (16, 16)), (2, (23, 9)), (3, (5, 30)), (4, (64, 64))] {
            let a = textured(w, h);
            let b = noisy(&a, 30, seed);
            let direct = ssim(&a, &b).unwrap();
            let (sep, _) = fast::ssim(&luma(&a), &luma(&b), w, h, SSIM_C1, SSIM_C2, false);
            assert!((direct - sep).abs() < 1e-6, "{direct} vs {sep}");
        }
    }

    #[test]
    fn ms_ssim_identity_and_scale_rule() {
        assert_eq!(ms_ssim_scales(176), 5);
        assert_eq!(ms_ssim_scales(175), 4);
        assert_eq!(ms_ssim_scales(64), 3);
        assert_eq!(ms_ssim_scales(11), 1);
        assert_eq!(ms_ssim_scales(10), 0);
        let a = textured(48, 40);
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
        assert!(ms_ssim(&RgbImage::filled(10, 40, [0, 0, 0]), &RgbImage::filled(10, 40, [0, 0, 0])).is_err());
    }

    #[test]
    fn single_scale_is_ssim() {
        let a = textured(32, 24);
        let b = noisy(&a, 25, 7);
        let (ga, gb) = (Gray::luma_of(&a), Gray::luma_of(&b));
        let one = ms_ssim_with_scales(&ga, &gb, 1).unwrap();
        let (sep, _) = fast::ssim(&ga.values, &gb.values, 32, 24, SSIM_C1, SSIM_C2, false);
        assert!((one - sep).abs() < 1e-6);
    }

    #[test]
    fn ms_ssim_decreases_with_noise() {
        let a = textured(64, 64);
        let mut last = 1.0;
        for (i, amp) in [4, 12, 24, 48, 96].into_iter().enumerate() {
            let v = ms_ssim(&a, &noisy(&a, amp, 10 + i as u64)).unwrap();
            assert!(v <= last && (0.0..=1.0).contains(&v), "{amp}: {v}");
            last = v;
        }
    }

    #[test]
    fn five_scales_on_large_images() {
        let a = textured(180, 176);
        let b = noisy(&a, 20, 3);
        let v = ms_ssim(&a, &b).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }
}
