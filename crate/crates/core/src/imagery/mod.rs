//! Raster images, instance annotations and the pixel bookkeeping shared by the
//! rest of the codec.

mod annotations;
mod pnm;

pub use annotations::{build_instance_map, ingest_annotations, parse_annotations, rasterize_polygon, PolygonAnnotation};
pub use pnm::{
    decode_pgm16, decode_ppm, encode_pgm16, encode_ppm, load_image, save_image, Gray16,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit RGB image, interleaved, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl RgbImage {
    pub fn from_raw(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::BadDimensions(format!("{width}x{height}")));
        }
        if samples.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {width}x{height} RGB image",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let samples = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::from_raw(width, height, samples).expect("nonzero dims")
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut samples = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                samples.extend_from_slice(&f(x, y));
            }
        }
        Self::from_raw(width, height, samples).expect("nonzero dims")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.samples[i], self.samples[i + 1], self.samples[i + 2]]
    }

    pub fn crop(&self, size: OriginalSize) -> Result<RgbImage> {
        if size.width > self.width || size.height > self.height || size.width == 0 || size.height == 0 {
            return Err(Error::BadDimensions(format!(
                "cannot crop {}x{} to {}x{}",
                self.width, self.height, size.width, size.height
            )));
        }
        let mut samples = Vec::with_capacity(size.width * size.height * 3);
        for y in 0..size.height {
            let row = y * self.width * 3;
            samples.extend_from_slice(&self.samples[row..row + size.width * 3]);
        }
        RgbImage::from_raw(size.width, size.height, samples)
    }
}

/// Dimensions of an image before padding, kept so decoders can crop back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OriginalSize {
    pub width: usize,
    pub height: usize,
}

pub fn padded_len(n: usize, multiple: usize) -> usize {
    n.div_ceil(multiple) * multiple
}

/// Pads to the next multiple of `m` in each dimension by replicating edge
/// pixels.
pub fn pad_to_multiple(img: &RgbImage, m: usize) -> Result<(RgbImage, OriginalSize)> {
    if m == 0 {
        return Err(Error::InvalidArgument("padding multiple must be >= 1".into()));
    }
    let orig = OriginalSize {
        width: img.width,
        height: img.height,
    };
    let (pw, ph) = (padded_len(img.width, m), padded_len(img.height, m));
    if (pw, ph) == (img.width, img.height) {
        return Ok((img.clone(), orig));
    }
    let padded = RgbImage::from_fn(pw, ph, |x, y| {
        img.pixel(x.min(img.width - 1), y.min(img.height - 1))
    });
    Ok((padded, orig))
}

/// Row-major bitset covering a `width × height` raster.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            words: vec![0; (width * height).div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        let i = y * self.width + x;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        let i = y * self.width + x;
        if on {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Set pixels as `(x, y)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        (0..self.width * self.height)
            .filter(move |&i| self.words[i / 64] >> (i % 64) & 1 == 1)
            .map(move |i| (i % w, i / w))
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for (x, y) in self.iter() {
            b = Some(match b {
                None => BBox {
                    x_min: x,
                    y_min: y,
                    x_max: x,
                    y_max: y,
                },
                Some(b) => BBox {
                    x_min: b.x_min.min(x),
                    y_min: b.y_min.min(y),
                    x_max: b.x_max.max(x),
                    y_max: b.y_max.max(y),
                },
            });
        }
        b
    }
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn area(&self) -> usize {
        (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)
    }

    pub fn intersection_area(&self, o: &BBox) -> usize {
        let x0 = self.x_min.max(o.x_min);
        let y0 = self.y_min.max(o.y_min);
        let x1 = self.x_max.min(o.x_max);
        let y1 = self.y_max.min(o.y_max);
        if x0 > x1 || y0 > y1 {
            0
        } else {
            (x1 - x0 + 1) * (y1 - y0 + 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRecord {
    pub category_id: u16,
    pub instance_index: u8,
    pub mask: Mask,
    pub bbox: BBox,
}

impl InstanceRecord {
    /// Builds a record, deriving the bbox from the mask. Fails on an empty mask.
    pub fn new(category_id: u16, instance_index: u8, mask: Mask) -> Result<Self> {
        let bbox = mask
            .bbox()
            .ok_or_else(|| Error::InvalidArgument("instance mask is empty".into()))?;
        Ok(Self {
            category_id,
            instance_index,
            mask,
            bbox,
        })
    }
}

/// Instances of one image plus the order they are painted into a profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    width: usize,
    height: usize,
    instances: Vec<InstanceRecord>,
    paint_order: Vec<usize>,
}

impl InstanceMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            instances: Vec::new(),
            paint_order: Vec::new(),
        }
    }

    /// Builds a map with paint order = descending mask area (stable on ties),
    /// so smaller objects end up on top.
    pub fn new(width: usize, height: usize, instances: Vec<InstanceRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for inst in &instances {
            if inst.mask.width() != width || inst.mask.height() != height {
                return Err(Error::ShapeMismatch(format!(
                    "mask {}x{} in a {width}x{height} map",
                    inst.mask.width(),
                    inst.mask.height()
                )));
            }
            if !(1..=256).contains(&inst.category_id) {
                return Err(Error::CategoryOutOfRange(inst.category_id as u32));
            }
            if inst.instance_index == 0 {
                return Err(Error::InstanceOutOfRange(0));
            }
            if !seen.insert((inst.category_id, inst.instance_index)) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate instance ({}, {})",
                    inst.category_id, inst.instance_index
                )));
            }
        }
        let areas: Vec<usize> = instances.iter().map(|i| i.mask.count()).collect();
        let mut paint_order: Vec<usize> = (0..instances.len()).collect();
        paint_order.sort_by(|&a, &b| areas[b].cmp(&areas[a]));
        Ok(Self {
            width,
            height,
            instances,
            paint_order,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn instances(&self) -> &[InstanceRecord] {
        &self.instances
    }

    pub fn paint_order(&self) -> &[usize] {
        &self.paint_order
    }

    /// Masks as they remain after painting in `paint_order`; instances that
    /// end up fully covered are dropped. Order follows `instances`.
    pub fn visible_instances(&self) -> Vec<InstanceRecord> {
        let mut owner: Vec<Option<usize>> = vec![None; self.width * self.height];
        for &i in &self.paint_order {
            for (x, y) in self.instances[i].mask.iter() {
                owner[y * self.width + x] = Some(i);
            }
        }
        let mut masks: Vec<Mask> = (0..self.instances.len())
            .map(|_| Mask::new(self.width, self.height))
            .collect();
        for (p, o) in owner.iter().enumerate() {
            if let Some(i) = o {
                masks[*i].set(p % self.width, p / self.width, true);
            }
        }
        self.instances
            .iter()
            .zip(masks)
            .filter_map(|(inst, m)| InstanceRecord::new(inst.category_id, inst.instance_index, m).ok())
            .collect()
    }
}

/// Fixed category-id → name table shared by encoder and decoder; never
/// transmitted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryDictionary {
    entries: BTreeMap<u16, String>,
}

impl CategoryDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: u16, name: impl Into<String>) -> Result<()> {
        if !(1..=256).contains(&id) {
            return Err(Error::CategoryOutOfRange(id as u32));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::InvalidArgument(format!("duplicate category id {id}")));
        }
        self.entries.insert(id, name.into());
        Ok(())
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.entries.get(&id).map(String::as_str)
    }

    pub fn contains(&self, id: u16) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, &str)> {
        self.entries.iter().map(|(k, v)| (*k, v.as_str()))
    }

    /// Parses `id<TAB>name` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dict = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| Error::MalformedDictionary { line: n + 1, reason };
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| err("expected id<TAB>name".into()))?;
            let id: u32 = id
                .trim()
                .parse()
                .map_err(|_| err(format!("bad id {id:?}")))?;
            if !(1..=256).contains(&id) {
                return Err(err(format!("id {id} outside [1, 256]")));
            }
            dict.insert(id as u16, name.trim())
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(dict)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(id, name)| format!("{id}\t{name}\n"))
            .collect()
    }
}
