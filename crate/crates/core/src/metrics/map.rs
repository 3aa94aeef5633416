//! COCO-style mean average precision over IoU thresholds 0.50:0.05:0.95.
//!
//! Detections are matched greedily in score order (ties broken by category,
//! then instance index) to the unmatched ground truth of the same category
//! with the highest IoU at or above the threshold. AP uses all-point
//! interpolation of the precision–recall curve. IoU comparisons are done on
//! integer pixel counts, so thresholds are exact.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::imagery::{BBox, InstanceRecord, Mask};
use crate::profile::TaskInstance;

/// Thresholds are `i / 20` for these `i`.
pub const THRESHOLD_STEPS: std::ops::RangeInclusive<u64> = 10..=19;

pub fn thresholds() -> Vec<f64> {
    THRESHOLD_STEPS.map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IouMode {
    BBox,
    Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub category_id: u16,
    pub instance_index: u8,
    pub score: f64,
    pub bbox: BBox,
    pub mask: Mask,
}

impl Detection {
    /// Profile-decoded instances carry score 1.
    pub fn from_task(t: &TaskInstance) -> Self {
        Self {
            category_id: t.category_id,
            instance_index: t.instance_index,
            score: 1.0,
            bbox: t.bbox,
            mask: t.mask.clone(),
        }
    }

    pub fn from_record(r: &InstanceRecord) -> Self {
        Self {
            category_id: r.category_id,
            instance_index: r.instance_index,
            score: 1.0,
            bbox: r.bbox,
            mask: r.mask.clone(),
        }
    }
}

/// IoU as `(intersection, union)` pixel counts.
pub fn iou_counts(a: &Detection, b: &Detection, mode: IouMode) -> Result<(u64, u64)> {
    let (ia, ib, inter) = match mode {
        IouMode::BBox => (a.bbox.area(), b.bbox.area(), a.bbox.intersection_area(&b.bbox)),
        IouMode::Mask => {
            if (a.mask.width(), a.mask.height()) != (b.mask.width(), b.mask.height()) {
                return Err(Error::ShapeMismatch("masks of different sizes".into()));
            }
            (a.mask.count(), b.mask.count(), a.mask.intersection_count(&b.mask))
        }
    };
    Ok((inter as u64, (ia + ib - inter) as u64))
}

pub fn iou(a: &Detection, b: &Detection, mode: IouMode) -> Result<f64> {
    let (i, u) = iou_counts(a, b, mode)?;
    Ok(if u == 0 { 0.0 } else { i as f64 / u as f64 })
}

/// `i/u ≥ step/20`, exactly.
fn passes(counts: (u64, u64), step: u64) -> bool {
    counts.1 > 0 && counts.0 * 20 >= step * counts.1
}

/// Score-descending order with the (category, instance index) tie-break.
pub fn ranking(dets: &[&Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (dets[a], dets[b]);
        db.score
            .partial_cmp(&da.score)
            .unwrap_or(Ordering::Equal)
            .then((da.category_id, da.instance_index).cmp(&(db.category_id, db.instance_index)))
    });
    order
}

/// All-point interpolated AP from TP flags in rank order.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut precision = Vec::with_capacity(tp.len());
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    tp.iter().zip(&precision).filter(|(&t, _)| t).map(|(_, &p)| p).sum::<f64>() / n_gt as f64
}

/// Greedy matching of one category at one threshold; TP flag per ranked det.
fn greedy_tp(dets: &[&Detection], gts: &[&Detection], step: u64, mode: IouMode) -> Result<Vec<bool>> {
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for &d in &ranking(dets) {
        let mut best: Option<(usize, (u64, u64))> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let c = iou_counts(dets[d], gt, mode)?;
            // compare i1/u1 > i2/u2 without division
            if passes(c, step) && best.is_none_or(|(_, b)| c.0 * b.1 > b.0 * c.1) {
                best = Some((g, c));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        out.push(best.is_some());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// Mean over categories at each threshold.
    pub per_threshold: Vec<f64>,
    pub categories: usize,
}

/// mAP of `dets` against `gts`, averaged over thresholds and over the
/// categories present in `gts`. With no ground truth the result is 1 when
/// there are also no detections and 0 (with a warning) otherwise.
pub fn map_evaluate(dets: &[Detection], gts: &[Detection], mode: IouMode) -> Result<MapResult> {
    let n_thr = THRESHOLD_STEPS.count();
    if gts.is_empty() {
        let v = if dets.is_empty() {
            1.0
        } else {
            log::warn!("{} detections but no ground truth; mAP is 0", dets.len());
            0.0
        };
        return Ok(MapResult {
            map: v,
            per_threshold: vec![v; n_thr],
            categories: 0,
        });
    }
    let categories: BTreeSet<u16> = gts.iter().map(|g| g.category_id).collect();
    let mut per_threshold = vec![0.0; n_thr];
    for &cat in &categories {
        let d: Vec<&Detection> = dets.iter().filter(|x| x.category_id == cat).collect();
        let g: Vec<&Detection> = gts.iter().filter(|x| x.category_id == cat).collect();
        for (slot, step) in per_threshold.iter_mut().zip(THRESHOLD_STEPS) {
            *slot += average_precision(&greedy_tp(&d, &g, step, mode)?, g.len());
        }
    }
    let nc = categories.len() as f64;
    per_threshold.iter_mut().for_each(|v| *v /= nc);
    Ok(MapResult {
        map: per_threshold.iter().sum::<f64>() / n_thr as f64,
        per_threshold,
        categories: categories.len(),
    })
}
