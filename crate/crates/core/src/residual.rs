//! Lossy coding of the residual `r = x − x̃` (stream 3).
//!
//! Each channel is cut into 8×8 blocks, transformed with an orthonormal
//! DCT-II, quantized uniformly with step `2^((qp − 4) / 6)` and scanned in
//! zigzag order. Per block the coder sends the scan position after the last
//! nonzero coefficient, the DC as a difference from the previous block's DC,
//! then the AC coefficients up to that position, each band with its own
//! adaptive context.
//!
//! Stream layout (little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 1    | qp                            |
//! | 1      | 12   | payload length per channel    |
//! | 13     | …    | three range-coder payloads    |
//! | end−4  | 4    | CRC-32 of everything before   |

use crate::entropy::{RangeDecoder, RangeEncoder, SignedModel, UIntModel};
use crate::error::{Error, Result};
use crate::imagery::RgbImage;

pub const BLOCK: usize = 8;
pub const QP_MAX: u8 = 51;
pub const RESIDUAL_LIMIT: i16 = 255;
const HEADER_LEN: usize = 13;
const BLOCK_LEN: usize = BLOCK * BLOCK;

/// Quantization parameter in `[0, 51]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Qp(u8);

impl Qp {
    pub fn new(qp: u8) -> Result<Self> {
        if qp > QP_MAX {
            return Err(Error::InvalidArgument(format!("qp {qp} outside [0, {QP_MAX}]")));
        }
        Ok(Self(qp))
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn step(self) -> f64 {
        2f64.powf((self.0 as f64 - 4.0) / 6.0)
    }
}

/// Three planar channels of signed residuals in `[-255, 255]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualPlane {
    width: usize,
    height: usize,
    samples: Vec<i16>,
}

impl ResidualPlane {
    /// `samples` is planar: all of R, then G, then B.
    pub fn new(width: usize, height: usize, samples: Vec<i16>) -> Result<Self> {
        if width == 0 || height == 0 || width % BLOCK != 0 || height % BLOCK != 0 {
            return Err(Error::BadDimensions(format!(
                "residual {width}x{height} must be a nonzero multiple of {BLOCK}"
            )));
        }
        if samples.len() != 3 * width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} residual samples for {width}x{height}x3",
                samples.len()
            )));
        }
        if let Some(v) = samples.iter().find(|v| v.abs() > RESIDUAL_LIMIT) {
            return Err(Error::InvalidArgument(format!("residual sample {v} outside [-255, 255]")));
        }
        Ok(Self { width, height, samples })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; 3 * width * height])
    }

    /// `x − x̃` per sample.
    pub fn between(x: &RgbImage, predicted: &RgbImage) -> Result<Self> {
        if (x.width(), x.height()) != (predicted.width(), predicted.height()) {
            return Err(Error::ShapeMismatch("residual of differently sized images".into()));
        }
        let (w, h) = (x.width(), x.height());
        let mut samples = vec![0i16; 3 * w * h];
        for (i, (a, b)) in x.samples().chunks_exact(3).zip(predicted.samples().chunks_exact(3)).enumerate() {
            for c in 0..3 {
                samples[c * w * h + i] = a[c] as i16 - b[c] as i16;
            }
        }
        Self::new(w, h, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn channel(&self, c: usize) -> &[i16] {
        let n = self.width * self.height;
        &self.samples[c * n..(c + 1) * n]
    }
}

fn basis() -> [[f64; BLOCK]; BLOCK] {
    std::array::from_fn(|k| {
        let alpha = if k == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
        std::array::from_fn(|n| {
            alpha * ((2 * n + 1) as f64 * k as f64 * std::f64::consts::PI / (2 * BLOCK) as f64).cos()
        })
    })
}

/// Orthonormal 2-D DCT-II of a row-major 8×8 block.
pub fn dct8x8(block: &[f64; BLOCK_LEN]) -> [f64; BLOCK_LEN] {
    let c = basis();
    let mut tmp = [0.0; BLOCK_LEN];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y * BLOCK + u] = (0..BLOCK).map(|x| c[u][x] * block[y * BLOCK + x]).sum();
        }
    }
    let mut out = [0.0; BLOCK_LEN];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            out[v * BLOCK + u] = (0..BLOCK).map(|y| c[v][y] * tmp[y * BLOCK + u]).sum();
        }
    }
    out
}

/// Inverse of [`dct8x8`].
pub fn idct8x8(coef: &[f64; BLOCK_LEN]) -> [f64; BLOCK_LEN] {
    let c = basis();
    let mut tmp = [0.0; BLOCK_LEN];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y * BLOCK + u] = (0..BLOCK).map(|v| c[v][y] * coef[v * BLOCK + u]).sum();
        }
    }
    let mut out = [0.0; BLOCK_LEN];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y * BLOCK + x] = (0..BLOCK).map(|u| c[u][x] * tmp[y * BLOCK + u]).sum();
        }
    }
    out
}

/// Raster index of each zigzag scan position.
pub fn zigzag_order() -> [usize; BLOCK_LEN] {
    let mut order = [0; BLOCK_LEN];
    let mut i = 0;
    for s in 0..2 * BLOCK - 1 {
        let lo = s.saturating_sub(BLOCK - 1);
        let hi = s.min(BLOCK - 1);
        // odd diagonals run down-left, even ones up-right
        let rows: Vec<usize> = if s % 2 == 1 { (lo..=hi).collect() } else { (lo..=hi).rev().collect() };
        for y in rows {
            order[i] = y * BLOCK + (s - y);
            i += 1;
        }
    }
    order
}

/// Context band of an AC scan position.
fn band(pos: usize) -> usize {
    match pos {
        1..=2 => 0,
        3..=9 => 1,
        10..=27 => 2,
        _ => 3,
    }
}

#[derive(Default)]
struct ChannelModels {
    last: UIntModel,
    dc: SignedModel,
    ac: [SignedModel; 4],
}

fn blocks(width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..height / BLOCK).flat_map(move |by| (0..width / BLOCK).map(move |bx| (bx * BLOCK, by * BLOCK)))
}

fn encode_channel(chan: &[i16], width: usize, height: usize, step: f64) -> Vec<u8> {
    let order = zigzag_order();
    let mut enc = RangeEncoder::new();
    let mut m = ChannelModels::default();
    let mut prev_dc = 0i32;
    for (x0, y0) in blocks(width, height) {
        let mut block = [0.0; BLOCK_LEN];
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                block[y * BLOCK + x] = chan[(y0 + y) * width + x0 + x] as f64;
            }
        }
        let coef = dct8x8(&block);
        let q: Vec<i32> = order.iter().map(|&i| (coef[i] / step).round() as i32).collect();
        let end = q.iter().rposition(|&v| v != 0).map_or(0, |p| p + 1);
        m.last.encode(&mut enc, end as u32);
        if end == 0 {
            prev_dc = 0;
            continue;
        }
        m.dc.encode(&mut enc, q[0] - prev_dc);
        prev_dc = q[0];
        for (pos, &v) in q.iter().enumerate().take(end).skip(1) {
            m.ac[band(pos)].encode(&mut enc, v);
        }
    }
    enc.finish()
}

fn decode_channel(payload: &[u8], width: usize, height: usize, step: f64) -> Result<Vec<i16>> {
    let order = zigzag_order();
    let mut dec = RangeDecoder::new(payload)?;
    let mut m = ChannelModels::default();
    let mut prev_dc = 0i32;
    let mut out = vec![0i16; width * height];
    // larger magnitudes can't come from a valid residual at any qp
    let limit = (BLOCK as f64 * RESIDUAL_LIMIT as f64 / Qp(0).step()).ceil() as i32 + 1;
    for (x0, y0) in blocks(width, height) {
        let end = m.last.decode(&mut dec)? as usize;
        if end > BLOCK_LEN {
            return Err(Error::Truncated("residual block end past 64 coefficients"));
        }
        let mut coef = [0.0; BLOCK_LEN];
        if end == 0 {
            prev_dc = 0;
        } else {
            let dc = prev_dc
                .checked_add(m.dc.decode(&mut dec)?)
                .filter(|v| v.abs() <= limit)
                .ok_or(Error::Truncated("residual DC out of range"))?;
            prev_dc = dc;
            coef[order[0]] = dc as f64 * step;
            for (pos, &idx) in order.iter().enumerate().take(end).skip(1) {
                let v = m.ac[band(pos)].decode(&mut dec)?;
                if v.abs() > limit {
                    return Err(Error::Truncated("residual coefficient out of range"));
                }
                coef[idx] = v as f64 * step;
            }
        }
        let px = idct8x8(&coef);
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                let v = px[y * BLOCK + x].round().clamp(-RESIDUAL_LIMIT as f64, RESIDUAL_LIMIT as f64);
                out[(y0 + y) * width + x0 + x] = v as i16;
            }
        }
    }
    dec.finish()?;
    Ok(out)
}

pub fn encode_residual(r: &ResidualPlane, qp: Qp) -> Vec<u8> {
    let step = qp.step();
    let payloads: Vec<Vec<u8>> = (0..3).map(|c| encode_channel(r.channel(c), r.width, r.height, step)).collect();
    let mut out = Vec::with_capacity(HEADER_LEN + payloads.iter().map(Vec::len).sum::<usize>() + 4);
    out.push(qp.0);
    for p in &payloads {
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    }
    for p in &payloads {
        out.extend_from_slice(p);
    }
    out.extend_from_slice(&crc32fast::hash(&out).to_le_bytes());
    out
}

/// The qp a stream was coded with, without decoding it.
pub fn stream_qp(bytes: &[u8]) -> Result<Qp> {
    Qp::new(*bytes.first().ok_or(Error::Truncated("residual stream"))?)
}

/// Decodes a stream produced by [`encode_residual`] for a `width × height`
/// residual (the padded image size, carried by the container).
pub fn decode_residual(bytes: &[u8], width: usize, height: usize) -> Result<ResidualPlane> {
    ResidualPlane::zeros(width, height)?;
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::Truncated("residual stream header"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum {
            what: "residual stream",
            stored,
            computed,
        });
    }
    let qp = stream_qp(body)?;
    let lens: Vec<usize> = (0..3)
        .map(|c| u32::from_le_bytes(body[1 + 4 * c..5 + 4 * c].try_into().expect("4 bytes")) as usize)
        .collect();
    let total = lens.iter().try_fold(HEADER_LEN, |acc, &l| acc.checked_add(l));
    if total != Some(body.len()) {
        return Err(Error::Truncated("residual payload lengths disagree with stream size"));
    }
    let mut samples = Vec::with_capacity(3 * width * height);
    let mut off = HEADER_LEN;
    for len in lens {
        samples.extend(decode_channel(&body[off..off + len], width, height, qp.step())?);
        off += len;
    }
    ResidualPlane::new(width, height, samples)
}

/// `x̂ = clip(x̃ + r̃, 0, 255)`, with the number of samples the clip changed.
pub fn reconstruct_high(predicted: &RgbImage, r: &ResidualPlane) -> Result<(RgbImage, usize)> {
    let (w, h) = (predicted.width(), predicted.height());
    if (w, h) != (r.width, r.height) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {w}x{h} vs residual {}x{}",
            r.width, r.height
        )));
    }
    let mut clipped = 0;
    let mut out = Vec::with_capacity(3 * w * h);
    for (i, px) in predicted.samples().chunks_exact(3).enumerate() {
        for (c, &p) in px.iter().enumerate() {
            let v = p as i32 + r.samples[c * w * h + i] as i32;
            if !(0..=255).contains(&v) {
                clipped += 1;
            }
            out.push(v.clamp(0, 255) as u8);
        }
    }
    Ok((RgbImage::from_raw(w, h, out)?, clipped))
}
