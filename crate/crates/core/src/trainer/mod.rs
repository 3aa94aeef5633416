//! Joint training of LE and IP under `λ·mean|x − x̃| − β·SSIM(x, x̃)`.
//!
//! Both terms are evaluated in display units (`[0, 255]`) so the SSIM
//! constants apply as published. The ℓ1 term averages over all RGB samples;
//! SSIM is computed on luma (BT.601 weights) and averaged over the batch.

pub mod ssim;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagery::RgbImage;
use crate::networks::{image_to_tensor, profile_to_tensor, ClampGradient, Model};
use crate::profile::GrayProfile;
use crate::tensor::adam::Adam;
use crate::tensor::{Parameterized, Scalar, Tensor};

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub beta: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            beta: 1.0,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl LossConfig {
    pub fn c1(&self) -> f64 {
        (255.0 * self.k1).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (255.0 * self.k2).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// `λ·mean|x − x̃|`.
    pub l1_term: f64,
    /// `β·SSIM`; enters the total with a minus sign.
    pub ssim_term: f64,
    pub total: f64,
}

fn luma_planes<T: Scalar>(t: &Tensor<T>, b: usize) -> Vec<f64> {
    let hw = t.height() * t.width();
    let item = t.item(b);
    (0..hw)
        .map(|i| (0..3).map(|c| LUMA[c] * item[c * hw + i].to_f64()).sum())
        .collect()
}

/// Loss of prediction `xt` against target `x`, both `[n, 3, H, W]` in
/// display units, and its gradient with respect to `xt`.
pub fn compute_loss<T: Scalar>(x: &Tensor<T>, xt: &Tensor<T>, cfg: &LossConfig) -> Result<(LossValue, Tensor<T>)> {
    xt.expect_shape(x.shape(), "loss input")?;
    if x.channels() != 3 {
        return Err(Error::ShapeMismatch(format!("loss needs RGB, got {:?}", x.shape())));
    }
    if !x.all_finite() || !xt.all_finite() {
        return Err(Error::NonFinite("loss input".into()));
    }
    let n = x.len() as f64;
    let mut l1 = 0.0;
    let mut grad = Tensor::zeros(x.shape());
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(x.data()).zip(xt.data()) {
        let d = b.to_f64() - a.to_f64();
        l1 += d.abs();
        *g = T::from_f64(cfg.lambda * d.signum() * f64::from(d != 0.0) / n);
    }
    let l1_term = cfg.lambda * l1 / n;

    let (h, w) = (x.height(), x.width());
    let batch = x.batch();
    let mut ssim_sum = 0.0;
    for b in 0..batch {
        let (s, g) = ssim::ssim(&luma_planes(x, b), &luma_planes(xt, b), w, h, cfg.c1(), cfg.c2(), true);
        ssim_sum += s;
        let g = g.expect("requested");
        let item = grad.item_mut(b);
        for c in 0..3 {
            for (i, gv) in g.iter().enumerate() {
                let slot = &mut item[c * h * w + i];
                *slot = T::from_f64(slot.to_f64() - cfg.beta * LUMA[c] * gv / batch as f64);
            }
        }
    }
    let ssim_term = cfg.beta * ssim_sum / batch as f64;
    let value = LossValue {
        l1_term,
        ssim_term,
        total: l1_term - ssim_term,
    };
    if !value.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {value:?}")));
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Held for the first half of the epochs, then decayed linearly so the
    /// last epoch runs at `lr / (epochs - epochs / 2)`.
    pub lr: f64,
    pub batch_size: usize,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
    pub loss: LossConfig,
    pub clamp_gradient: ClampGradient,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.02,
            batch_size: 8,
            seed: 0,
            loss: LossConfig::default(),
            clamp_gradient: ClampGradient::default(),
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let hold = self.epochs / 2;
        if epoch < hold {
            self.lr
        } else {
            self.lr * (self.epochs.saturating_sub(epoch)) as f64 / (self.epochs - hold) as f64
        }
    }

    pub fn steps_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch_size)
    }

    fn validate(&self, samples: usize) -> Result<()> {
        if samples == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("training needs samples, epochs and a batch size".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// One training image with its profile channel, as network tensors.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub profile: Option<Tensor<f32>>,
}

impl Sample {
    pub fn new(image: &RgbImage, profile: Option<&GrayProfile>) -> Result<Self> {
        if let Some(p) = profile {
            if (p.width(), p.height()) != (image.width(), image.height()) {
                return Err(Error::ShapeMismatch("profile and image sizes differ".into()));
            }
        }
        Ok(Self {
            image: image_to_tensor(image),
            profile: profile.map(profile_to_tensor),
        })
    }
}

fn stack(items: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let [_, c, h, w] = items[0].shape();
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for t in items {
        t.expect_shape([1, c, h, w], "batch item")?;
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec([items.len(), c, h, w], data)
}

fn batch_tensors(samples: &[&Sample]) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
    let images: Vec<&Tensor<f32>> = samples.iter().map(|s| &s.image).collect();
    let profiles: Option<Vec<&Tensor<f32>>> = samples.iter().map(|s| s.profile.as_ref()).collect();
    Ok((stack(&images)?, profiles.map(|p| stack(&p)).transpose()?))
}

fn to_display(t: &Tensor<f32>) -> Tensor<f32> {
    t.map(|v| (v + 1.0) * 127.5)
}

/// Forward pass, loss, and backward pass for one batch; returns the loss.
fn batch_step(model: &mut Model<f32>, batch: &[&Sample], cfg: &TrainConfig, backward: bool) -> Result<LossValue> {
    let (x, p) = batch_tensors(batch)?;
    let cache = model.forward(&x, p.as_ref())?;
    let (value, grad) = compute_loss(&to_display(&x), &to_display(cache.prediction()), &cfg.loss)?;
    if backward {
        model.backward_with(&cache, &grad.map(|g| g * 127.5), cfg.clamp_gradient)?;
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossValue,
}

/// Trains `model` in place. `on_epoch(epoch, model)` runs after every epoch
/// (checkpointing, logging). Returns the loss of every step, measured before
/// that step's update.
pub fn train(
    model: &mut Model<f32>,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &Model<f32>) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    cfg.validate(data.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs * cfg.steps_per_epoch(data.len()));
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            model.zero_grad();
            let loss = batch_step(model, &batch, cfg, true).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("step {}: {what}", trace.len())),
                e => e,
            })?;
            adam.step(&mut model.params_mut(), lr)?;
            log::debug!("step {} loss {:.4}", trace.len(), loss.total);
            trace.push(LossRecord {
                step: trace.len(),
                epoch,
                lr,
                loss,
            });
        }
        on_epoch(epoch, model)?;
    }
    Ok(trace)
}

/// Mean loss over `data` in fixed order without updating the model.
pub fn evaluate_loss(model: &Model<f32>, data: &[Sample], cfg: &TrainConfig) -> Result<LossValue> {
    cfg.validate(data.len())?;
    let mut model = model.clone();
    let mut sum = LossValue {
        l1_term: 0.0,
        ssim_term: 0.0,
        total: 0.0,
    };
    let all: Vec<&Sample> = data.iter().collect();
    for batch in all.chunks(cfg.batch_size) {
        let v = batch_step(&mut model, batch, cfg, false)?;
        let wgt = batch.len() as f64 / data.len() as f64;
        sum.l1_term += v.l1_term * wgt;
        sum.ssim_term += v.ssim_term * wgt;
        sum.total += v.total * wgt;
    }
    Ok(sum)
}

pub fn write_loss_csv(records: &[LossRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "step,l1_term,ssim_term,total")?;
    for r in records {
        writeln!(out, "{},{:.6},{:.6},{:.6}", r.step, r.loss.l1_term, r.loss.ssim_term, r.loss.total)?;
    }
    Ok(())
}
