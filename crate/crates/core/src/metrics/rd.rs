//! Rate–distortion sweep: encode each image at every QP, decode at every
//! level and record stream sizes next to quality and task accuracy.

use std::io::Write;

use super::map::{map_evaluate, Detection, IouMode};
use super::{ms_ssim, psnr};
use crate::container::{decode, encode, DecodeLevel, EncodeOptions};
use crate::error::{Error, Result};
use crate::imagery::{InstanceMap, RgbImage};
use crate::networks::Model;
use crate::residual::Qp;

/// The QPs of the evaluation protocol.
pub const DEFAULT_QPS: [u8; 6] = [17, 22, 27, 32, 37, 42];

pub const CSV_HEADER: &str =
    "image_id,qp,bpp_s1,bpp_s2,bpp_s3,bpp_total,psnr_general,psnr_high,msssim_general,msssim_high,map_det,map_seg";

#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub id: String,
    pub image: RgbImage,
    pub instances: Option<InstanceMap>,
}

/// One (image, QP) measurement. Metrics that do not apply (no stream 1, an
/// image too small for MS-SSIM) are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub image_id: String,
    pub qp: u8,
    /// Payload BPP of streams 1–3; an absent stream counts 0.
    pub bpp: [f64; 3],
    pub psnr_general: f64,
    pub psnr_high: f64,
    pub msssim_general: f64,
    pub msssim_high: f64,
    pub map_det: f64,
    pub map_seg: f64,
}

impl RdPoint {
    /// Bits of every stream that was written.
    pub fn bpp_total(&self) -> f64 {
        self.bpp.iter().sum()
    }

    /// What a machine-only receiver pays: stream 1 alone.
    pub fn bpp_tasks(&self) -> f64 {
        self.bpp[0]
    }
}

fn or_nan(r: Result<f64>) -> f64 {
    r.unwrap_or(f64::NAN)
}

/// All QPs for one image. Streams 1–2 do not depend on the QP, but each
/// point is encoded from scratch so the numbers stand on their own.
pub fn rd_image(item: &CorpusItem, model: &Model<f32>, qps: &[u8]) -> Result<Vec<RdPoint>> {
    let gts: Vec<Detection> = item
        .instances
        .as_ref()
        .map(|m| m.visible_instances().iter().map(Detection::from_record).collect())
        .unwrap_or_default();
    let mut out = Vec::with_capacity(qps.len());
    for &qp in qps {
        let opts = EncodeOptions {
            qp: Qp::new(qp)?,
            residual: true,
        };
        let bits = encode(&item.image, item.instances.as_ref(), model, opts)?;
        let stats = bits.stats();
        let (map_det, map_seg) = if bits.header.flags.profile {
            let tasks = decode(&bits, DecodeLevel::Tasks, None)?.tasks.unwrap_or_default();
            let dets: Vec<Detection> = tasks.instances.iter().map(Detection::from_task).collect();
            (
                map_evaluate(&dets, &gts, IouMode::BBox)?.map,
                map_evaluate(&dets, &gts, IouMode::Mask)?.map,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        let d = decode(&bits, DecodeLevel::High, Some(model))?;
        let (general, high) = match (&d.general, &d.high) {
            (Some(g), Some(h)) => (g, h),
            _ => return Err(Error::MissingStream("reconstruction")),
        };
        if d.clipped > 0 {
            log::debug!("{} qp {qp}: {} samples clipped", item.id, d.clipped);
        }
        out.push(RdPoint {
            image_id: item.id.clone(),
            qp,
            bpp: [stats.bpp(0), stats.bpp(1), stats.bpp(2)],
            psnr_general: psnr(&item.image, general)?,
            psnr_high: psnr(&item.image, high)?,
            msssim_general: or_nan(ms_ssim(&item.image, general)),
            msssim_high: or_nan(ms_ssim(&item.image, high)),
            map_det,
            map_seg,
        });
    }
    Ok(out)
}

/// Outcome of a sweep: points of every image that succeeded, and the error
/// of every one that did not.
#[derive(Debug, Default)]
pub struct RdSweep {
    pub points: Vec<RdPoint>,
    pub failures: Vec<(String, Error)>,
}

/// Runs [`rd_image`] over the corpus in order; a failing image is logged and
/// skipped.
pub fn rd_sweep(corpus: &[CorpusItem], model: &Model<f32>, qps: &[u8]) -> RdSweep {
    collect(corpus.iter().map(|item| (item.id.clone(), rd_image(item, model, qps))))
}

/// Folds per-image results (e.g. from a parallel map) into an [`RdSweep`].
pub fn collect(results: impl IntoIterator<Item = (String, Result<Vec<RdPoint>>)>) -> RdSweep {
    let mut sweep = RdSweep::default();
    for (id, r) in results {
        match r {
            Ok(p) => sweep.points.extend(p),
            Err(e) => {
                log::warn!("{id}: {e}");
                sweep.failures.push((id, e));
            }
        }
    }
    sweep
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

pub fn write_rd_csv(points: &[RdPoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for p in points {
        let fields = [
            p.bpp[0],
            p.bpp[1],
            p.bpp[2],
            p.bpp_total(),
            p.psnr_general,
            p.psnr_high,
            p.msssim_general,
            p.msssim_high,
            p.map_det,
            p.map_seg,
        ];
        let cols: Vec<String> = fields.iter().map(|&v| num(v)).collect();
        writeln!(w, "{},{},{}", p.image_id, p.qp, cols.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::ModelConfig;
    use crate::tensor::norm::NormKind;
    use crate::synth::{default_dictionary, generate_scene, SceneConfig};

    fn corpus(n: u64) -> Vec<CorpusItem> {
        let dict = default_dictionary();
        (0..n)
            .map(|s| {
                let scene = generate_scene(&SceneConfig::desk(), &dict, s).unwrap();
                CorpusItem {
                    id: format!("img{s}"),
                    image: scene.image,
                    instances: Some(scene.instances),
                }
            })
            .collect()
    }

    #[test]
    fn sweep_shape_and_invariants() {
        let model = Model::new(ModelConfig::desk(NormKind::Channel), 3).unwrap();
        let sweep = rd_sweep(&corpus(2), &model, &DEFAULT_QPS);
        assert!(sweep.failures.is_empty());
        assert_eq!(sweep.points.len(), 12);
        for img in sweep.points.chunks(6) {
            for p in img {
                assert_eq!(p.bpp[0], img[0].bpp[0]);
                assert_eq!(p.bpp[1], img[0].bpp[1]);
                assert!(p.bpp.iter().all(|&b| b > 0.0));
                assert_eq!((p.map_det, p.map_seg), (1.0, 1.0));
                assert!(p.psnr_high >= p.psnr_general);
            }
            for w in img.windows(2) {
                assert!(w[1].bpp[2] <= w[0].bpp[2]);
            }
        }
    }

    #[test]
    fn failures_do_not_stop_the_sweep() {
        let model = Model::new(ModelConfig::desk(NormKind::Channel), 3).unwrap();
        let mut c = corpus(2);
        c[0].instances = None;
        let sweep = rd_sweep(&c, &model, &[27]);
        assert_eq!(sweep.failures.len(), 1);
        assert_eq!(sweep.failures[0].0, "img0");
        assert_eq!(sweep.points.len(), 1);
    }

    #[test]
    fn csv_layout() {
        let p = RdPoint {
            image_id: "a".into(),
            qp: 22,
            bpp: [0.5, 0.25, 1.0],
            psnr_general: 30.0,
            psnr_high: f64::INFINITY,
            msssim_general: 0.9,
            msssim_high: 1.0,
            map_det: f64::NAN,
            map_seg: 1.0,
        };
        let mut out = Vec::new();
        write_rd_csv(&[p], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[1],
            "a,22,0.500000,0.250000,1.000000,1.750000,30.000000,inf,0.900000,1.000000,nan,1.000000"
        );
    }
}
