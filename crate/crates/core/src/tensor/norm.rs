//! Channel-, batch- and instance-wise normalization with a per-channel affine.
//!
//! The three kinds differ only in which samples share statistics:
//! * channel: all channels at one `(b, y, x)` position,
//! * batch: one channel across every batch item and position,
//! * instance: one channel of one batch item across positions.
//!
//! Statistics are training-mode only (no running averages). Batch norm on a
//! batch of one reduces to instance statistics. Reductions accumulate in f64.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Channel,
    Batch,
    Instance,
}

impl NormKind {
    pub const ALL: [NormKind; 3] = [NormKind::Channel, NormKind::Batch, NormKind::Instance];

    pub fn name(self) -> &'static str {
        match self {
            NormKind::Channel => "channel",
            NormKind::Batch => "batch",
            NormKind::Instance => "instance",
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(NormKind::Channel),
            "batch" => Ok(NormKind::Batch),
            "instance" => Ok(NormKind::Instance),
            _ => Err(Error::InvalidArgument(format!("unknown norm kind {s:?}"))),
        }
    }
}

struct Grouping {
    groups: usize,
    size: usize,
    hw: usize,
    channels: usize,
    kind: NormKind,
}

impl Grouping {
    fn new(kind: NormKind, [n, c, h, w]: [usize; 4]) -> Self {
        let hw = h * w;
        let (groups, size) = match kind {
            NormKind::Channel => (n * hw, c),
            NormKind::Batch => (c, n * hw),
            NormKind::Instance => (n * c, hw),
        };
        Self {
            groups,
            size,
            hw,
            channels: c,
            kind,
        }
    }

    /// Group of flat index `i`.
    #[inline]
    fn group(&self, i: usize) -> usize {
        match self.kind {
            NormKind::Channel => (i / (self.hw * self.channels)) * self.hw + i % self.hw,
            NormKind::Batch => (i / self.hw) % self.channels,
            NormKind::Instance => i / self.hw,
        }
    }

    #[inline]
    fn channel(&self, i: usize) -> usize {
        (i / self.hw) % self.channels
    }
}

/// Values kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    kind: NormKind,
    normalized: Tensor<T>,
    inv_std: Vec<f64>,
}

pub fn normalize<T: Scalar>(
    x: &Tensor<T>,
    kind: NormKind,
    gain: &[T],
    offset: &[T],
    eps: f64,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let c = x.channels();
    if gain.len() != c || offset.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "norm affine of length {}/{} for {c} channels",
            gain.len(),
            offset.len()
        )));
    }
    let g = Grouping::new(kind, x.shape());
    let data = x.data();
    let mut mean = vec![0.0f64; g.groups];
    for (i, &v) in data.iter().enumerate() {
        mean[g.group(i)] += v.to_f64();
    }
    mean.iter_mut().for_each(|m| *m /= g.size as f64);
    let mut var = vec![0.0f64; g.groups];
    for (i, &v) in data.iter().enumerate() {
        let d = v.to_f64() - mean[g.group(i)];
        var[g.group(i)] += d * d;
    }
    let inv_std: Vec<f64> = var
        .iter()
        .map(|v| 1.0 / (v / g.size as f64 + eps).sqrt())
        .collect();

    let mut normalized = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for (i, &v) in data.iter().enumerate() {
        let k = g.group(i);
        let xh = (v.to_f64() - mean[k]) * inv_std[k];
        let ch = g.channel(i);
        normalized.data_mut()[i] = T::from_f64(xh);
        y.data_mut()[i] = T::from_f64(xh * gain[ch].to_f64() + offset[ch].to_f64());
    }
    Ok((
        y,
        NormCache {
            kind,
            normalized,
            inv_std,
        },
    ))
}

pub struct NormGrads<T> {
    pub input: Tensor<T>,
    pub gain: Vec<T>,
    pub offset: Vec<T>,
}

pub fn normalize_backward<T: Scalar>(cache: &NormCache<T>, gain: &[T], dy: &Tensor<T>) -> Result<NormGrads<T>> {
    dy.expect_shape(cache.normalized.shape(), "norm output gradient")?;
    let g = Grouping::new(cache.kind, dy.shape());
    let xhat = cache.normalized.data();
    let mut sum_d = vec![0.0f64; g.groups];
    let mut sum_dx = vec![0.0f64; g.groups];
    let mut dgain = vec![0.0f64; g.channels];
    let mut doffset = vec![0.0f64; g.channels];
    for (i, &d) in dy.data().iter().enumerate() {
        let (k, ch) = (g.group(i), g.channel(i));
        let d = d.to_f64();
        let xh = xhat[i].to_f64();
        let dxh = d * gain[ch].to_f64();
        sum_d[k] += dxh;
        sum_dx[k] += dxh * xh;
        dgain[ch] += d * xh;
        doffset[ch] += d;
    }
    let m = g.size as f64;
    let mut dx = Tensor::zeros(dy.shape());
    for (i, &d) in dy.data().iter().enumerate() {
        let (k, ch) = (g.group(i), g.channel(i));
        let dxh = d.to_f64() * gain[ch].to_f64();
        let xh = xhat[i].to_f64();
        dx.data_mut()[i] = T::from_f64(cache.inv_std[k] / m * (m * dxh - sum_d[k] - xh * sum_dx[k]));
    }
    Ok(NormGrads {
        input: dx,
        gain: dgain.into_iter().map(T::from_f64).collect(),
        offset: doffset.into_iter().map(T::from_f64).collect(),
    })
}
