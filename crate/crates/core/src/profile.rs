//! 16-bit gray-scale instance profile.
//!
//! Each instance pixel stores `v = 256·(c − 1) + n` where `c ∈ [1, 256]` is the
//! category id and `n ∈ [1, 255]` the instance index within that category.
//! `v = 0` is background; multiples of 256 are never produced and are rejected
//! on decode.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::imagery::{BBox, Gray16, InstanceMap, Mask};

/// Packs a (category, instance) pair into its profile value.
pub fn pack_value(category: u32, instance: u32) -> Result<u16> {
    if !(1..=256).contains(&category) {
        return Err(Error::CategoryOutOfRange(category));
    }
    if !(1..=255).contains(&instance) {
        return Err(Error::InstanceOutOfRange(instance));
    }
    Ok((256 * (category - 1) + instance) as u16)
}

/// Inverse of [`pack_value`]: `c = ⌊v/256⌋ + 1`, `n = v − 256·(c − 1)`.
pub fn unpack_value(v: u16) -> Result<(u16, u8)> {
    if v == 0 {
        return Err(Error::BackgroundValue(v));
    }
    if v % 256 == 0 {
        return Err(Error::UnrepresentableValue(v));
    }
    let c = v / 256 + 1;
    let n = v - 256 * (c - 1);
    Ok((c, n as u8))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayProfile {
    width: usize,
    height: usize,
    values: Vec<u16>,
}

impl GrayProfile {
    pub fn new(width: usize, height: usize, values: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} profile",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.values[y * self.width + x]
    }

    /// Checks every nonzero value decodes to a valid pair.
    pub fn validate(&self) -> Result<()> {
        match self.values.iter().find(|&&v| v != 0 && v % 256 == 0) {
            Some(v) => Err(Error::CorruptProfile(format!("value {v} is a multiple of 256"))),
            None => Ok(()),
        }
    }

    /// Replicates edge values out to `width × height`.
    pub fn padded(&self, width: usize, height: usize) -> GrayProfile {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(self.get(x.min(self.width - 1), y.min(self.height - 1)));
            }
        }
        GrayProfile {
            width,
            height,
            values,
        }
    }

    pub fn cropped(&self, width: usize, height: usize) -> Result<GrayProfile> {
        if width > self.width || height > self.height {
            return Err(Error::BadDimensions(format!(
                "cannot crop {}x{} profile to {width}x{height}",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            values.extend_from_slice(&self.values[y * self.width..y * self.width + width]);
        }
        GrayProfile::new(width, height, values)
    }

    pub fn to_gray16(&self) -> Gray16 {
        Gray16 {
            width: self.width,
            height: self.height,
            values: self.values.clone(),
        }
    }

    pub fn from_gray16(g: Gray16) -> Result<Self> {
        let p = Self::new(g.width, g.height, g.values)?;
        p.validate()?;
        Ok(p)
    }

    /// Network input channel: `v / 65535` per pixel.
    pub fn to_channel(&self) -> Vec<f32> {
        self.values.iter().map(|&v| value_to_channel(v)).collect()
    }
}

pub fn value_to_channel(v: u16) -> f32 {
    (v as f64 / 65535.0) as f32
}

/// Paints every instance in paint order; uncovered pixels stay 0.
pub fn encode_profile(map: &InstanceMap) -> Result<GrayProfile> {
    let mut profile = GrayProfile::zeros(map.width(), map.height());
    for &i in map.paint_order() {
        let inst = &map.instances()[i];
        let v = pack_value(inst.category_id as u32, inst.instance_index as u32)?;
        for (x, y) in inst.mask.iter() {
            profile.values[y * map.width() + x] = v;
        }
    }
    Ok(profile)
}

/// One decoded instance: what classification, detection and segmentation
/// need.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub category_id: u16,
    pub instance_index: u8,
    pub bbox: BBox,
    pub mask: Mask,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskOutputs {
    pub instances: Vec<TaskInstance>,
}

/// Recovers one output per distinct nonzero value, ordered by value (i.e. by
/// category, then instance index).
pub fn decode_tasks(profile: &GrayProfile) -> Result<TaskOutputs> {
    let (w, h) = (profile.width, profile.height);
    let mut masks: BTreeMap<u16, Mask> = BTreeMap::new();
    for (p, &v) in profile.values.iter().enumerate() {
        if v == 0 {
            continue;
        }
        if v % 256 == 0 {
            return Err(Error::CorruptProfile(format!(
                "value {v} at ({}, {}) is a multiple of 256",
                p % w,
                p / w
            )));
        }
        masks
            .entry(v)
            .or_insert_with(|| Mask::new(w, h))
            .set(p % w, p / w, true);
    }
    let instances = masks
        .into_iter()
        .map(|(v, mask)| {
            let (category_id, instance_index) = unpack_value(v)?;
            let bbox = mask.bbox().expect("mask has at least one pixel");
            Ok(TaskInstance {
                category_id,
                instance_index,
                bbox,
                mask,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TaskOutputs { instances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::InstanceRecord;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        let mut m = Mask::new(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(x, y, true);
            }
        }
        m
    }

    fn cats_and_dog() -> InstanceMap {
        InstanceMap::new(
            16,
            16,
            vec![
                InstanceRecord::new(24, 1, rect(16, 16, 0, 0, 6, 6)).unwrap(),
                InstanceRecord::new(24, 2, rect(16, 16, 8, 0, 14, 5)).unwrap(),
                InstanceRecord::new(45, 1, rect(16, 16, 2, 8, 15, 15)).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn worked_values() {
        assert_eq!(pack_value(24, 1).unwrap(), 5889);
        assert_eq!(pack_value(24, 2).unwrap(), 5890);
        assert_eq!(pack_value(45, 1).unwrap(), 11265);
        assert_eq!(pack_value(1, 1).unwrap(), 1);
        assert_eq!(unpack_value(5890).unwrap(), (24, 2));
        assert_eq!(unpack_value(1).unwrap(), (1, 1));
    }

    #[test]
    fn range_errors() {
        assert!(matches!(pack_value(0, 1), Err(Error::CategoryOutOfRange(0))));
        assert!(matches!(pack_value(257, 1), Err(Error::CategoryOutOfRange(257))));
        assert!(matches!(pack_value(3, 0), Err(Error::InstanceOutOfRange(0))));
        assert!(matches!(pack_value(3, 256), Err(Error::InstanceOutOfRange(256))));
        assert!(matches!(unpack_value(0), Err(Error::BackgroundValue(0))));
        assert!(matches!(unpack_value(512), Err(Error::UnrepresentableValue(512))));
    }

    #[test]
    fn exhaustive_bijection() {
        let mut seen = vec![false; 1 << 16];
        for c in 1..=256u32 {
            for n in 1..=255u32 {
                let v = pack_value(c, n).unwrap();
                assert!(!seen[v as usize]);
                seen[v as usize] = true;
                assert_eq!(unpack_value(v).unwrap(), (c as u16, n as u8));
            }
        }
        // every value that is not background or a multiple of 256 is hit
        for v in 0..=u16::MAX {
            assert_eq!(seen[v as usize], v % 256 != 0, "{v}");
        }
    }

    #[test]
    fn profile_value_set_for_example() {
        let p = encode_profile(&cats_and_dog()).unwrap();
        let mut vals: Vec<u16> = p.values().to_vec();
        vals.sort_unstable();
        vals.dedup();
        assert_eq!(vals, vec![0, 5889, 5890, 11265]);
        let tasks = decode_tasks(&p).unwrap();
        let cats: Vec<u16> = tasks.instances.iter().map(|t| t.category_id).collect();
        assert_eq!(cats, vec![24, 24, 45]);
    }

    #[test]
    fn empty_map_gives_zero_profile() {
        let p = encode_profile(&InstanceMap::empty(5, 3)).unwrap();
        assert!(p.values().iter().all(|&v| v == 0));
        assert!(decode_tasks(&p).unwrap().instances.is_empty());
    }

    #[test]
    fn overlap_matches_last_painter_simulation() {
        // large instance (category 2) under a small one (category 9) under
        // a medium one that overlaps both
        let map = InstanceMap::new(
            8,
            8,
            vec![
                InstanceRecord::new(9, 1, rect(8, 8, 2, 2, 4, 4)).unwrap(),
                InstanceRecord::new(2, 1, rect(8, 8, 0, 0, 8, 8)).unwrap(),
                InstanceRecord::new(2, 2, rect(8, 8, 3, 3, 7, 7)).unwrap(),
            ],
        )
        .unwrap();
        let p = encode_profile(&map).unwrap();
        // brute force: for each pixel, the covering instance with the
        // smallest area wins (areas 4 < 16 < 64 are distinct here)
        for y in 0..8 {
            for x in 0..8 {
                let owner = map
                    .instances()
                    .iter()
                    .filter(|r| r.mask.get(x, y))
                    .min_by_key(|r| r.mask.count());
                let expect = owner.map_or(0, |r| {
                    256 * (r.category_id - 1) + r.instance_index as u16
                });
                assert_eq!(p.get(x, y), expect, "({x},{y})");
            }
        }
        let tasks = decode_tasks(&p).unwrap();
        let visible = map.visible_instances();
        assert_eq!(tasks.instances.len(), visible.len());
        for v in &visible {
            let t = tasks
                .instances
                .iter()
                .find(|t| (t.category_id, t.instance_index) == (v.category_id, v.instance_index))
                .unwrap();
            assert_eq!(t.mask, v.mask);
            assert_eq!(t.bbox, v.bbox);
        }
    }

    #[test]
    fn corrupt_value_rejected() {
        let p = GrayProfile::new(2, 1, vec![5889, 256]).unwrap();
        assert!(matches!(decode_tasks(&p), Err(Error::CorruptProfile(_))));
        assert!(p.validate().is_err());
    }

    #[test]
    fn channel_mapping() {
        assert_eq!(value_to_channel(0), 0.0);
        assert_eq!(value_to_channel(65535), 1.0);
        assert_eq!(value_to_channel(5889), (5889.0f64 / 65535.0) as f32);
        let mut prev = -1.0f32;
        for v in 0..=u16::MAX {
            let c = value_to_channel(v);
            assert!(c > prev, "{v}");
            prev = c;
        }
    }
}
