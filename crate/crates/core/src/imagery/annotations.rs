//! JSON-lines polygon annotations: `{"category_id": 24, "polygon": [[x, y], ...]}`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

use super::{CategoryDictionary, InstanceMap, InstanceRecord, Mask};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PolygonAnnotation {
    pub category_id: u32,
    pub polygon: Vec<[f64; 2]>,
}

/// Parses every nonblank line; vertex coordinates are rounded to the nearest
/// integer (halves away from zero).
pub fn parse_annotations(text: &str) -> Result<Vec<PolygonAnnotation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::MalformedAnnotation { line: n + 1, reason };
        let mut ann: PolygonAnnotation =
            serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if ann.polygon.len() < 3 {
            return Err(err(format!(
                "degenerate polygon with {} vertices",
                ann.polygon.len()
            )));
        }
        for v in &mut ann.polygon {
            if !v[0].is_finite() || !v[1].is_finite() || v[0].abs() > 1e7 || v[1].abs() > 1e7 {
                return Err(err("vertex out of range".into()));
            }
            v[0] = v[0].round();
            v[1] = v[1].round();
        }
        out.push(ann);
    }
    Ok(out)
}

/// Fills pixels whose centers lie inside the polygon (even-odd rule).
pub fn rasterize_polygon(polygon: &[[f64; 2]], width: usize, height: usize) -> Mask {
    let mut mask = Mask::new(width, height);
    let mut crossings = Vec::new();
    for py in 0..height {
        let yc = py as f64 + 0.5;
        crossings.clear();
        let n = polygon.len();
        for i in 0..n {
            let [xi, yi] = polygon[i];
            let [xj, yj] = polygon[(i + n - 1) % n];
            if (yi > yc) != (yj > yc) {
                crossings.push((xj - xi) * (yc - yi) / (yj - yi) + xi);
            }
        }
        crossings.sort_by(f64::total_cmp);
        for span in crossings.chunks_exact(2) {
            // Inside when x0 <= xc < x1 with xc = px + 0.5.
            let first = (span[0] - 0.5).ceil().max(0.0);
            let last_excl = (span[1] - 0.5).ceil().min(width as f64);
            let (mut px, end) = (first as usize, last_excl.max(0.0) as usize);
            while px < end {
                mask.set(px, py, true);
                px += 1;
            }
        }
    }
    mask
}

/// Builds an instance map from polygon annotations. Instance indices run
/// 1, 2, … per category in file order. Polygons that cover no pixel center
/// are skipped and do not consume an index.
pub fn build_instance_map(
    anns: &[PolygonAnnotation],
    dict: &CategoryDictionary,
    width: usize,
    height: usize,
) -> Result<InstanceMap> {
    let mut next_index: HashMap<u16, u32> = HashMap::new();
    let mut records = Vec::with_capacity(anns.len());
    for ann in anns {
        let cat = u16::try_from(ann.category_id)
            .ok()
            .filter(|c| dict.contains(*c))
            .ok_or(Error::UnknownCategory(ann.category_id))?;
        let mask = rasterize_polygon(&ann.polygon, width, height);
        if mask.is_empty() {
            log::warn!("category {cat}: polygon covers no pixels, skipped");
            continue;
        }
        let idx = next_index.entry(cat).or_insert(0);
        *idx += 1;
        if *idx > 255 {
            return Err(Error::TooManyInstances { category: cat });
        }
        records.push(InstanceRecord::new(cat, *idx as u8, mask)?);
    }
    InstanceMap::new(width, height, records)
}

pub fn ingest_annotations(
    path: impl AsRef<Path>,
    dict: &CategoryDictionary,
    width: usize,
    height: usize,
) -> Result<InstanceMap> {
    let anns = parse_annotations(&fs::read_to_string(path)?)?;
    build_instance_map(&anns, dict, width, height)
}
