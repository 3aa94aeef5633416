//! Parameterized layers over the raw kernels: convolution, transpose
//! convolution, normalization, and the conv→norm→activation and residual
//! blocks the networks are assembled from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{self, Geometry};
use super::norm::{self, NormCache, NormKind, NORM_EPS};
use super::ops;
use super::{Param, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Tconv,
    Resblock,
}

/// One entry of a network description: `kernels` filters of size
/// `filter × filter` applied with `stride`, then optional normalization and
/// an activation. Padding is always `⌊filter/2⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernels: usize,
    pub filter: usize,
    pub stride: usize,
    pub norm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.filter % 2 == 0 || !(1..=2).contains(&self.stride) || self.kernels == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer needs odd filter, stride 1 or 2 and at least one kernel: {self:?}"
            )));
        }
        if self.kind == LayerKind::Resblock && self.stride != 1 {
            return Err(Error::InvalidArgument("residual blocks keep resolution".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub geometry: Geometry,
    pub transpose: bool,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform weights, zero bias.
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        filter: usize,
        stride: usize,
        transpose: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_c * filter * filter) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = in_c * out_c * filter * filter;
        let values = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
        let shape = if transpose {
            vec![in_c, out_c, filter, filter]
        } else {
            vec![out_c, in_c, filter, filter]
        };
        Self {
            in_c,
            out_c,
            geometry: Geometry::same(filter, stride),
            transpose,
            weight: Param::new(format!("{name}.weight"), shape, values),
            bias: Param::filled(format!("{name}.bias"), vec![out_c], T::zero()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.channels() != self.in_c {
            return Err(Error::ShapeMismatch(format!(
                "{}: {} input channels, expected {}",
                self.weight.name,
                x.channels(),
                self.in_c
            )));
        }
        if self.transpose {
            conv::conv_transpose2d(x, &self.weight.value, &self.bias.value, self.out_c, self.geometry)
        } else {
            conv::conv2d(x, &self.weight.value, &self.bias.value, self.out_c, self.geometry)
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = if self.transpose {
            conv::conv_transpose2d_backward(x, &self.weight.value, self.out_c, self.geometry, dy)?
        } else {
            conv::conv2d_backward(x, &self.weight.value, self.out_c, self.geometry, dy)?
        };
        accumulate(&mut self.weight.grad, &g.weight);
        accumulate(&mut self.bias.grad, &g.bias);
        Ok(g.input)
    }

    pub fn out_len(&self, input: usize) -> usize {
        if self.transpose {
            conv::transpose_out_len(input, self.geometry.stride)
        } else {
            self.geometry.out_len(input)
        }
    }
}

fn accumulate<T: Scalar>(acc: &mut [T], g: &[T]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + b;
    }
}

#[derive(Debug, Clone)]
pub struct Norm<T> {
    pub kind: NormKind,
    pub gain: Param<T>,
    pub offset: Param<T>,
}

impl<T: Scalar> Norm<T> {
    pub fn new(name: &str, kind: NormKind, channels: usize) -> Self {
        Self {
            kind,
            gain: Param::filled(format!("{name}.gain"), vec![channels], T::one()),
            offset: Param::filled(format!("{name}.offset"), vec![channels], T::zero()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, NormCache<T>)> {
        norm::normalize(x, self.kind, &self.gain.value, &self.offset.value, NORM_EPS)
    }

    pub fn backward(&mut self, cache: &NormCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = norm::normalize_backward(cache, &self.gain.value, dy)?;
        accumulate(&mut self.gain.grad, &g.gain);
        accumulate(&mut self.offset.grad, &g.offset);
        Ok(g.input)
    }
}

/// `activation(norm(conv(x)))`.
#[derive(Debug, Clone)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub norm: Option<Norm<T>>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct ConvBlockCache<T> {
    input: Tensor<T>,
    norm: Option<NormCache<T>>,
    output: Tensor<T>,
}

impl<T> ConvBlockCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(
        name: &str,
        in_c: usize,
        spec: &LayerSpec,
        norm_kind: NormKind,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = Conv2d::new(
            &format!("{name}.conv"),
            in_c,
            spec.kernels,
            spec.filter,
            spec.stride,
            spec.kind == LayerKind::Tconv,
            rng,
        );
        let norm = spec
            .norm
            .then(|| Norm::new(&format!("{name}.norm"), norm_kind, spec.kernels));
        Self {
            conv,
            norm,
            activation: spec.activation,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<ConvBlockCache<T>> {
        let mut h = self.conv.forward(x)?;
        let mut norm_cache = None;
        if let Some(n) = &self.norm {
            let (y, c) = n.forward(&h)?;
            h = y;
            norm_cache = Some(c);
        }
        let output = match self.activation {
            Activation::Relu => ops::relu(&h),
            Activation::Tanh => ops::tanh(&h),
            Activation::None => h,
        };
        Ok(ConvBlockCache {
            input: x.clone(),
            norm: norm_cache,
            output,
        })
    }

    pub fn backward(&mut self, cache: &ConvBlockCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = match self.activation {
            Activation::Relu => ops::relu_backward(&cache.output, dy),
            Activation::Tanh => ops::tanh_backward(&cache.output, dy),
            Activation::None => dy.clone(),
        };
        if let (Some(n), Some(c)) = (self.norm.as_mut(), cache.norm.as_ref()) {
            d = n.backward(c, &d)?;
        }
        self.conv.backward(&cache.input, &d)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.conv.weight, &self.conv.bias];
        if let Some(n) = &self.norm {
            v.push(&n.gain);
            v.push(&n.offset);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.conv.weight, &mut self.conv.bias];
        if let Some(n) = &mut self.norm {
            v.push(&mut n.gain);
            v.push(&mut n.offset);
        }
        v
    }
}

/// `x + norm(conv(relu(norm(conv(x)))))` at constant width and resolution.
#[derive(Debug, Clone)]
pub struct ResBlock<T> {
    pub first: ConvBlock<T>,
    pub second: ConvBlock<T>,
}

#[derive(Debug, Clone)]
pub struct ResBlockCache<T> {
    first: ConvBlockCache<T>,
    second: ConvBlockCache<T>,
    output: Tensor<T>,
}

impl<T> ResBlockCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

impl<T: Scalar> ResBlock<T> {
    pub fn new(name: &str, channels: usize, filter: usize, norm_kind: NormKind, rng: &mut impl Rng) -> Self {
        let spec = |activation| LayerSpec {
            kind: LayerKind::Conv,
            kernels: channels,
            filter,
            stride: 1,
            norm: true,
            activation,
        };
        Self {
            first: ConvBlock::new(&format!("{name}.a"), channels, &spec(Activation::Relu), norm_kind, rng),
            second: ConvBlock::new(&format!("{name}.b"), channels, &spec(Activation::None), norm_kind, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<ResBlockCache<T>> {
        let first = self.first.forward(x)?;
        let second = self.second.forward(first.output())?;
        let output = ops::add(x, second.output())?;
        Ok(ResBlockCache {
            first,
            second,
            output,
        })
    }

    pub fn backward(&mut self, cache: &ResBlockCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let dh = self.second.backward(&cache.second, dy)?;
        let dx = self.first.backward(&cache.first, &dh)?;
        ops::add(&dx, dy)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.first.params();
        v.extend(self.second.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.first.params_mut();
        v.extend(self.second.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Checks every parameter gradient already accumulated in `block`.
    fn param_check<B: Clone>(
        block: &B,
        params: impl Fn(&mut B) -> Vec<&mut Param<f64>>,
        loss: impl Fn(&B) -> f64,
    ) {
        let mut probe = block.clone();
        let n = params(&mut probe).len();
        for i in 0..n {
            let p = &params(&mut probe)[i];
            let (analytic, at) = (p.grad.clone(), p.value.clone());
            let numeric = numeric_grad(&at, |v| {
                let mut b = block.clone();
                params(&mut b)[i].value = v.to_vec();
                loss(&b)
            });
            check_gradient(&analytic, &numeric);
        }
    }

    #[test]
    fn conv_block_gradients() {
        for (seed, kind, act, tconv) in [
            (0, NormKind::Channel, Activation::Relu, false),
            (1, NormKind::Batch, Activation::Tanh, true),
            (2, NormKind::Instance, Activation::Relu, true),
        ] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = LayerSpec {
                kind: if tconv { LayerKind::Tconv } else { LayerKind::Conv },
                kernels: 3,
                filter: 3,
                stride: 2,
                norm: true,
                activation: act,
            };
            let mut block = ConvBlock::<f64>::new("b", 2, &spec, kind, &mut rng);
            let x = random_tensor::<f64>([2, 2, 4, 4], seed + 5);
            let cache = block.forward(&x).unwrap();
            let probe = random_tensor::<f64>(cache.output().shape(), seed + 6);
            let dx = block.backward(&cache, &probe).unwrap();
            let loss = |b: &ConvBlock<f64>, x: &Tensor<f64>| dot(b.forward(x).unwrap().output(), &probe);
            check_gradient(
                dx.data(),
                &numeric_grad(x.data(), |v| loss(&block, &Tensor::from_vec(x.shape(), v.to_vec()).unwrap())),
            );
            param_check(&block, |b| b.params_mut(), |b| loss(b, &x));
        }
    }

    #[test]
    fn resblock_gradients() {
        for kind in NormKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut block = ResBlock::<f64>::new("r", 3, 3, kind, &mut rng);
            let x = random_tensor::<f64>([2, 3, 3, 3], 4);
            let cache = block.forward(&x).unwrap();
            let probe = random_tensor::<f64>(x.shape(), 8);
            let dx = block.backward(&cache, &probe).unwrap();
            let loss = |b: &ResBlock<f64>, x: &Tensor<f64>| dot(b.forward(x).unwrap().output(), &probe);
            check_gradient(
                dx.data(),
                &numeric_grad(x.data(), |v| loss(&block, &Tensor::from_vec(x.shape(), v.to_vec()).unwrap())),
            );
            param_check(&block, |b| b.params_mut(), |b| loss(b, &x));
        }
    }

    #[test]
    fn spec_validation() {
        let ok = LayerSpec {
            kind: LayerKind::Conv,
            kernels: 4,
            filter: 7,
            stride: 1,
            norm: true,
            activation: Activation::Relu,
        };
        assert!(ok.validate().is_ok());
        assert!(LayerSpec { filter: 4, ..ok }.validate().is_err());
        assert!(LayerSpec { stride: 3, ..ok }.validate().is_err());
        assert!(LayerSpec {
            kind: LayerKind::Resblock,
            stride: 2,
            ..ok
        }
        .validate()
        .is_err());
    }
}
