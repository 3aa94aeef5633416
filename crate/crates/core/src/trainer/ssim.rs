//! Gaussian-windowed SSIM on one plane, with its gradient.
//!
//! Windows are 11×11, σ = 1.5, evaluated at every pixel ("same" size). Near
//! the border the window is truncated to the image and renormalized, so tiny
//! images (down to 1×1) are valid. The Gaussian is separable and so is the
//! truncation, which lets the blur run as two banded 1-D passes.

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;

fn gaussian() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
}

/// Row-normalized banded weights for one axis.
struct Taps {
    rows: Vec<(usize, Vec<f64>)>,
}

impl Taps {
    fn new(n: usize) -> Self {
        let g = gaussian();
        let r = WINDOW / 2;
        let rows = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(n - 1);
                let w: Vec<f64> = (lo..=hi).map(|j| g[j + r - i]).collect();
                let s: f64 = w.iter().sum();
                (lo, w.into_iter().map(|v| v / s).collect())
            })
            .collect();
        Self { rows }
    }
}

/// The separable window for one image size.
pub struct Window {
    width: usize,
    height: usize,
    x: Taps,
    y: Taps,
}

impl Window {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            x: Taps::new(width),
            y: Taps::new(height),
        }
    }

    /// Weighted local mean at every pixel.
    pub fn blur(&self, img: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            let row = &img[y * w..(y + 1) * w];
            for (x, (lo, taps)) in self.x.rows.iter().enumerate() {
                tmp[y * w + x] = taps.iter().zip(&row[*lo..]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; w * h];
        for (y, (lo, taps)) in self.y.rows.iter().enumerate() {
            for (k, t) in taps.iter().enumerate() {
                let src = &tmp[(lo + k) * w..(lo + k + 1) * w];
                for (o, s) in out[y * w..(y + 1) * w].iter_mut().zip(src) {
                    *o += t * s;
                }
            }
        }
        out
    }

    /// Adjoint of [`Window::blur`].
    pub fn blur_transpose(&self, g: &[f64]) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0; w * h];
        for (y, (lo, taps)) in self.y.rows.iter().enumerate() {
            for (k, t) in taps.iter().enumerate() {
                let dst = &mut tmp[(lo + k) * w..(lo + k + 1) * w];
                for (d, s) in dst.iter_mut().zip(&g[y * w..(y + 1) * w]) {
                    *d += t * s;
                }
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for (x, (lo, taps)) in self.x.rows.iter().enumerate() {
                let gv = tmp[y * w + x];
                for (k, t) in taps.iter().enumerate() {
                    out[y * w + lo + k] += t * gv;
                }
            }
        }
        out
    }
}

/// Mean SSIM of `b` against `a`, and optionally `∂SSIM/∂b`.
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize, c1: f64, c2: f64, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    assert_eq!(a.len(), width * height);
    assert_eq!(b.len(), width * height);
    let win = Window::new(width, height);
    let mu_a = win.blur(a);
    let mu_b = win.blur(b);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let m_aa = win.blur(&prod(a, a));
    let m_bb = win.blur(&prod(b, b));
    let m_ab = win.blur(&prod(a, b));
    let n = (width * height) as f64;

    let mut total = 0.0;
    let mut g_mu = vec![0.0; a.len()];
    let mut g_bb = vec![0.0; a.len()];
    let mut g_ab = vec![0.0; a.len()];
    for i in 0..a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = m_aa[i] - ma * ma;
        let var_b = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let a1 = 2.0 * ma * mb + c1;
        let a2 = 2.0 * cov + c2;
        let b1 = ma * ma + mb * mb + c1;
        let b2 = var_a + var_b + c2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if want_grad {
            g_mu[i] = s * (2.0 * ma / a1 - 2.0 * ma / a2 - 2.0 * mb / b1 + 2.0 * mb / b2) / n;
            g_bb[i] = -s / b2 / n;
            g_ab[i] = 2.0 * s / a2 / n;
        }
    }
    let grad = want_grad.then(|| {
        let t_mu = win.blur_transpose(&g_mu);
        let t_bb = win.blur_transpose(&g_bb);
        let t_ab = win.blur_transpose(&g_ab);
        (0..a.len())
            .map(|i| t_mu[i] + 2.0 * b[i] * t_bb[i] + a[i] * t_ab[i])
            .collect()
    });
    (total / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{check_gradient, numeric_grad, random_vec};

    const C1: f64 = 6.5025;
    const C2: f64 = 58.5225;

    #[test]
    fn window_rows_sum_to_one() {
        for n in [1, 3, 11, 40] {
            let w = Window::new(n, 2);
            let ones = vec![1.0; 2 * n];
            for v in w.blur(&ones) {
                assert!((v - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blur_transpose_is_adjoint() {
        let (w, h) = (13, 9);
        let win = Window::new(w, h);
        let u = random_vec::<f64>(w * h, 1);
        let v = random_vec::<f64>(w * h, 2);
        let lhs: f64 = win.blur(&u).iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(win.blur_transpose(&v)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn identical_planes_score_exactly_one() {
        let a: Vec<f64> = random_vec::<f64>(64, 3).iter().map(|v| 128.0 + 100.0 * v).collect();
        assert_eq!(ssim(&a, &a, 8, 8, C1, C2, false).0, 1.0);
    }

    #[test]
    fn constant_planes_match_closed_form() {
        let a = vec![100.0; 64];
        let b = vec![110.0; 64];
        let expect = (2.0 * 100.0 * 110.0 + C1) / (100.0f64.powi(2) + 110.0f64.powi(2) + C1);
        assert!((ssim(&a, &b, 8, 8, C1, C2, false).0 - expect).abs() < 1e-12);
    }

    #[test]
    fn symmetric() {
        let a: Vec<f64> = random_vec::<f64>(120, 4).iter().map(|v| 120.0 + 90.0 * v).collect();
        let b: Vec<f64> = random_vec::<f64>(120, 5).iter().map(|v| 120.0 + 90.0 * v).collect();
        let (ab, _) = ssim(&a, &b, 12, 10, C1, C2, false);
        let (ba, _) = ssim(&b, &a, 12, 10, C1, C2, false);
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let (w, h) = (5 + seed as usize % 3, 6);
            let a: Vec<f64> = random_vec::<f64>(w * h, seed).iter().map(|v| 128.0 + 100.0 * v).collect();
            let b: Vec<f64> = random_vec::<f64>(w * h, seed + 100).iter().map(|v| 128.0 + 100.0 * v).collect();
            let (_, g) = ssim(&a, &b, w, h, C1, C2, true);
            // per-sample gradients are ~1e-4; work in those units so the
            // 1e-6 floor can't hide a mismatch
            let analytic: Vec<f64> = g.unwrap().iter().map(|v| v * 1e4).collect();
            let numeric: Vec<f64> = numeric_grad(&b, |v| ssim(&a, v, w, h, C1, C2, false).0)
                .iter()
                .map(|v| v * 1e4)
                .collect();
            check_gradient(&analytic, &numeric);
        }
    }
}
