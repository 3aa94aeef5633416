//! Lossless plane codec used for the profile (stream1) and the quantized
//! feature planes (stream2).
//!
//! Pipeline per channel: median edge prediction, zigzag mapping of the
//! residual, adaptive order-0 range coding.
//!
//! Byte layout of a coded plane (little-endian):
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 4    | magic `HPL1`                                  |
//! | 4      | 1    | version (1)                                   |
//! | 5      | 1    | bit depth (8 or 16)                           |
//! | 6      | 1    | channels (1 or 3)                             |
//! | 7      | 1    | predictor id (0 = MED)                        |
//! | 8      | 4    | width                                         |
//! | 12     | 4    | height                                        |
//! | 16     | 4    | CRC-32 of the raw samples                     |
//! | 20     | 4    | payload length in bytes                       |
//! | 24     | 4    | CRC-32 of bytes 0..24 followed by the payload |
//! | 28     | n    | range-coded payload                           |

use crate::entropy::{unzigzag, zigzag, RangeDecoder, RangeEncoder, UIntModel};
use crate::error::{Error, Result};

pub const PLANE_MAGIC: [u8; 4] = *b"HPL1";
pub const PLANE_VERSION: u8 = 1;
pub const PLANE_HEADER_LEN: usize = 28;
pub const PREDICTOR_MED: u8 = 0;
const MAX_SAMPLES: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    fn from_bits(b: u8) -> Result<Self> {
        match b {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            _ => Err(Error::BadDimensions(format!("bit depth {b}"))),
        }
    }
}

/// Channel-planar samples, row-major within each channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    width: usize,
    height: usize,
    depth: BitDepth,
    channels: usize,
    samples: Vec<u16>,
}

impl Plane {
    pub fn new(
        width: usize,
        height: usize,
        depth: BitDepth,
        channels: usize,
        samples: Vec<u16>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::BadDimensions(format!(
                "{width}x{height} with {channels} channels"
            )));
        }
        let n = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .filter(|&n| n <= MAX_SAMPLES)
            .ok_or_else(|| Error::BadDimensions(format!("{width}x{height}x{channels}")))?;
        if samples.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for {width}x{height}x{channels}",
                samples.len()
            )));
        }
        if let Some(v) = samples.iter().find(|&&v| v > depth.max_value()) {
            return Err(Error::InvalidArgument(format!(
                "sample {v} exceeds {}-bit range",
                depth.bits()
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            channels,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u16> {
        self.samples
    }

    pub fn raw_bytes(&self) -> usize {
        self.samples.len() * (self.depth.bits() as usize / 8)
    }

    fn sample_crc(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        match self.depth {
            BitDepth::Eight => {
                let bytes: Vec<u8> = self.samples.iter().map(|&v| v as u8).collect();
                h.update(&bytes);
            }
            BitDepth::Sixteen => {
                for v in &self.samples {
                    h.update(&v.to_le_bytes());
                }
            }
        }
        h.finalize()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPlane {
    bytes: Vec<u8>,
}

impl CodedPlane {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn payload_bits(&self) -> u64 {
        (self.bytes.len().saturating_sub(PLANE_HEADER_LEN) as u64) * 8
    }

    pub fn total_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

/// Median edge predictor: `median(left, above, left + above − above_left)`.
pub fn med_predict(left: i32, above: i32, above_left: i32) -> i32 {
    if above_left >= left.max(above) {
        left.min(above)
    } else if above_left <= left.min(above) {
        left.max(above)
    } else {
        left + above - above_left
    }
}

fn neighbours(chan: &[u16], w: usize, x: usize, y: usize) -> (i32, i32, i32) {
    let at = |x: usize, y: usize| chan[y * w + x] as i32;
    match (x, y) {
        (0, 0) => (0, 0, 0),
        (_, 0) => {
            let l = at(x - 1, 0);
            (l, l, l)
        }
        (0, _) => {
            let a = at(0, y - 1);
            (a, a, a)
        }
        _ => (at(x - 1, y), at(x, y - 1), at(x - 1, y - 1)),
    }
}

pub fn compress_plane(p: &Plane) -> CodedPlane {
    let mut enc = RangeEncoder::new();
    let plane_len = p.width * p.height;
    for chan in p.samples.chunks_exact(plane_len) {
        let mut model = UIntModel::default();
        for y in 0..p.height {
            for x in 0..p.width {
                let (l, a, al) = neighbours(chan, p.width, x, y);
                let residual = chan[y * p.width + x] as i32 - med_predict(l, a, al);
                model.encode(&mut enc, zigzag(residual));
            }
        }
    }
    let payload = enc.finish();

    let mut bytes = Vec::with_capacity(PLANE_HEADER_LEN + payload.len());
    bytes.extend_from_slice(&PLANE_MAGIC);
    bytes.push(PLANE_VERSION);
    bytes.push(p.depth.bits());
    bytes.push(p.channels as u8);
    bytes.push(PREDICTOR_MED);
    bytes.extend_from_slice(&(p.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(p.height as u32).to_le_bytes());
    bytes.extend_from_slice(&p.sample_crc().to_le_bytes());
    bytes.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    let mut h = crc32fast::Hasher::new();
    h.update(&bytes);
    h.update(&payload);
    bytes.extend_from_slice(&h.finalize().to_le_bytes());
    bytes.extend_from_slice(&payload);
    CodedPlane { bytes }
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

/// Length of the coded plane starting at `bytes[0]`, read from its header.
pub fn coded_len(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < PLANE_HEADER_LEN {
        return Err(Error::Truncated("coded plane header"));
    }
    Ok(PLANE_HEADER_LEN + u32_at(bytes, 20) as usize)
}

pub fn decompress_plane(c: &CodedPlane) -> Result<Plane> {
    decode_plane_bytes(&c.bytes)
}

pub fn decode_plane_bytes(b: &[u8]) -> Result<Plane> {
    if b.len() < PLANE_HEADER_LEN {
        return Err(Error::Truncated("coded plane header"));
    }
    if b[0..4] != PLANE_MAGIC || b[4] != PLANE_VERSION {
        return Err(Error::BadMagic("coded plane"));
    }
    let depth = BitDepth::from_bits(b[5])?;
    let channels = b[6] as usize;
    if b[7] != PREDICTOR_MED {
        return Err(Error::BadMagic("unknown predictor id"));
    }
    let width = u32_at(b, 8) as usize;
    let height = u32_at(b, 12) as usize;
    let sample_crc = u32_at(b, 16);
    let payload_len = u32_at(b, 20) as usize;
    let stored = u32_at(b, 24);
    if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
        return Err(Error::BadDimensions(format!(
            "{width}x{height} with {channels} channels"
        )));
    }
    let total = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|&n| n <= MAX_SAMPLES)
        .ok_or_else(|| Error::BadDimensions(format!("{width}x{height}x{channels}")))?;
    let payload = b
        .get(PLANE_HEADER_LEN..PLANE_HEADER_LEN + payload_len)
        .ok_or(Error::Truncated("coded plane payload"))?;
    let mut h = crc32fast::Hasher::new();
    h.update(&b[..24]);
    h.update(payload);
    let computed = h.finalize();
    if computed != stored {
        return Err(Error::Checksum {
            what: "coded plane",
            stored,
            computed,
        });
    }

    let mut dec = RangeDecoder::new(payload)?;
    let plane_len = width * height;
    let max = depth.max_value() as i32;
    let mut samples = vec![0u16; total];
    for chan in samples.chunks_exact_mut(plane_len) {
        let mut model = UIntModel::default();
        for y in 0..height {
            for x in 0..width {
                let (l, a, al) = neighbours(chan, width, x, y);
                let residual = unzigzag(model.decode(&mut dec)?);
                let v = med_predict(l, a, al).checked_add(residual);
                match v {
                    Some(v) if (0..=max).contains(&v) => chan[y * width + x] = v as u16,
                    _ => return Err(Error::Truncated("decoded sample out of range")),
                }
            }
        }
    }
    dec.finish()?;
    let plane = Plane {
        width,
        height,
        depth,
        channels,
        samples,
    };
    let computed = plane.sample_crc();
    if computed != sample_crc {
        return Err(Error::Checksum {
            what: "plane samples",
            stored: sample_crc,
            computed,
        });
    }
    Ok(plane)
}
