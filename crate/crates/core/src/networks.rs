//! The low-level feature extractor (LE) and the image predictor (IP).
//!
//! LE maps the image, stacked with the profile channel, to three tanh feature
//! planes at 1/8 resolution. IP upsamples those planes back to full size,
//! stacks the profile channel again and predicts a correction `f`; the
//! general-quality image is `clamp(u + f, -1, 1)` with `u` the upsampled
//! features.
//!
//! Images enter the networks scaled to `[-1, 1]` (`v / 127.5 - 1`), channel
//! order `[R, G, B, profile]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::RgbImage;
use crate::lossless::{BitDepth, Plane};
use crate::profile::GrayProfile;
use crate::tensor::checkpoint::{Checkpoint, NamedTensor};
use crate::tensor::layers::{Activation, ConvBlock, ConvBlockCache, LayerKind, LayerSpec, ResBlock, ResBlockCache};
use crate::tensor::norm::NormKind;
use crate::tensor::{ops, Param, Parameterized, Scalar, Tensor};
pub use crate::tensor::ops::ClampGradient;

/// Spatial reduction of LE and the matching upsampling factor of IP.
pub const FEATURE_SCALE: usize = 8;
pub const FEATURE_CHANNELS: usize = 3;
pub const IP_RESBLOCKS: usize = 9;

pub const FULL_WIDTHS: [usize; 4] = [64, 128, 256, 512];
/// Full widths divided by 8, for tests and CPU training.
pub const DESK_WIDTHS: [usize; 4] = [8, 16, 32, 64];

fn spec(kind: LayerKind, kernels: usize, filter: usize, stride: usize, norm: bool, activation: Activation) -> LayerSpec {
    LayerSpec {
        kind,
        kernels,
        filter,
        stride,
        norm,
        activation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeConfig {
    pub layers: Vec<LayerSpec>,
    pub norm: NormKind,
}

impl LeConfig {
    pub fn with_widths(w: [usize; 4], norm: NormKind) -> Self {
        use Activation::*;
        use LayerKind::*;
        Self {
            layers: vec![
                spec(Conv, w[0], 7, 1, true, Relu),
                spec(Conv, w[1], 3, 2, true, Relu),
                spec(Conv, w[2], 3, 2, true, Relu),
                spec(Conv, w[3], 3, 2, true, Relu),
                spec(Conv, FEATURE_CHANNELS, 3, 1, false, Tanh),
            ],
            norm,
        }
    }

    fn validate(&self) -> Result<()> {
        let first = self.layers.first().ok_or_else(|| bad("LE has no layers"))?;
        if first.kind != LayerKind::Conv || first.filter != 7 || first.stride != 1 {
            return Err(bad("LE must open with a 7x7 stride-1 convolution"));
        }
        let last = self.layers.last().unwrap();
        if last.kernels != FEATURE_CHANNELS || last.activation != Activation::Tanh {
            return Err(bad("LE must end in 3 tanh channels"));
        }
        if self.layers.iter().any(|l| l.kind == LayerKind::Tconv) || stride_product(&self.layers) != FEATURE_SCALE {
            return Err(bad("LE must downsample by exactly 8 without transpose layers"));
        }
        self.layers.iter().try_for_each(LayerSpec::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpConfig {
    pub layers: Vec<LayerSpec>,
    pub norm: NormKind,
}

impl IpConfig {
    pub fn with_widths(w: [usize; 4], norm: NormKind) -> Self {
        use Activation::*;
        use LayerKind::*;
        let mut layers = vec![
            spec(Conv, w[0], 7, 1, true, Relu),
            spec(Conv, w[1], 3, 2, true, Relu),
            spec(Conv, w[2], 3, 2, true, Relu),
            spec(Conv, w[3], 3, 2, true, Relu),
        ];
        layers.extend((0..IP_RESBLOCKS).map(|_| spec(Resblock, w[3], 3, 1, true, None)));
        layers.extend([
            spec(Tconv, w[2], 3, 2, true, Relu),
            spec(Tconv, w[1], 3, 2, true, Relu),
            spec(Tconv, w[0], 3, 2, true, Relu),
            spec(Conv, FEATURE_CHANNELS, 3, 1, false, Tanh),
        ]);
        Self { layers, norm }
    }

    fn validate(&self) -> Result<()> {
        let count = |k| self.layers.iter().filter(|l| l.kind == k).count();
        if count(LayerKind::Resblock) != IP_RESBLOCKS {
            return Err(bad("IP must contain nine residual blocks"));
        }
        // three stride-2 transpose layers plus the stride-1 output layer
        if count(LayerKind::Tconv) != 3 {
            return Err(bad("IP must contain three transpose convolutions"));
        }
        let last = self.layers.last().unwrap();
        if last.kind != LayerKind::Conv || last.kernels != FEATURE_CHANNELS || last.activation != Activation::Tanh {
            return Err(bad("IP must end in 3 tanh channels"));
        }
        let down = stride_product(self.layers.iter().filter(|l| l.kind != LayerKind::Tconv));
        let up = stride_product(self.layers.iter().filter(|l| l.kind == LayerKind::Tconv));
        if down != up {
            return Err(bad("IP must restore its input resolution"));
        }
        self.layers.iter().try_for_each(LayerSpec::validate)
    }
}

fn stride_product<'a>(layers: impl IntoIterator<Item = &'a LayerSpec>) -> usize {
    layers.into_iter().map(|l| l.stride).product()
}

fn bad(msg: &str) -> Error {
    Error::InvalidArgument(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub le: LeConfig,
    pub ip: IpConfig,
    /// When false both networks run without the profile channel and the
    /// container carries no stream1.
    pub use_profile: bool,
}

impl ModelConfig {
    pub fn full(norm: NormKind) -> Self {
        Self::with_widths(FULL_WIDTHS, norm)
    }

    pub fn desk(norm: NormKind) -> Self {
        Self::with_widths(DESK_WIDTHS, norm)
    }

    pub fn with_widths(w: [usize; 4], norm: NormKind) -> Self {
        Self {
            le: LeConfig::with_widths(w, norm),
            ip: IpConfig::with_widths(w, norm),
            use_profile: true,
        }
    }

    pub fn without_profile(mut self) -> Self {
        self.use_profile = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.le.validate()?;
        self.ip.validate()
    }

    fn side_channels(&self) -> usize {
        usize::from(self.use_profile)
    }
}

#[derive(Debug, Clone)]
enum Layer<T> {
    Block(ConvBlock<T>),
    Res(ResBlock<T>),
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Block(ConvBlockCache<T>),
    Res(ResBlockCache<T>),
}

impl<T> LayerCache<T> {
    fn output(&self) -> &Tensor<T> {
        match self {
            LayerCache::Block(c) => c.output(),
            LayerCache::Res(c) => c.output(),
        }
    }
}

/// A straight chain of layers.
#[derive(Debug, Clone)]
struct Sequential<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    fn build(prefix: &str, in_c: usize, specs: &[LayerSpec], norm: NormKind, rng: &mut ChaCha8Rng) -> Self {
        let mut c = in_c;
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let name = format!("{prefix}.{i}");
                let layer = match s.kind {
                    LayerKind::Resblock => Layer::Res(ResBlock::new(&name, c, s.filter, norm, rng)),
                    _ => Layer::Block(ConvBlock::new(&name, c, s, norm, rng)),
                };
                c = s.kernels;
                layer
            })
            .collect();
        Self { layers }
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for l in &self.layers {
            h = match l {
                Layer::Block(b) => b.forward(&h)?.output().clone(),
                Layer::Res(r) => r.forward(&h)?.output().clone(),
            };
        }
        Ok(h)
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Vec<LayerCache<T>>> {
        let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let input = caches.last().map_or(x, |c| c.output());
            let cache = match l {
                Layer::Block(b) => LayerCache::Block(b.forward(input)?),
                Layer::Res(r) => LayerCache::Res(r.forward(input)?),
            };
            caches.push(cache);
        }
        Ok(caches)
    }

    fn backward(&mut self, caches: &[LayerCache<T>], dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        for (l, c) in self.layers.iter_mut().zip(caches).rev() {
            d = match (l, c) {
                (Layer::Block(b), LayerCache::Block(c)) => b.backward(c, &d)?,
                (Layer::Res(r), LayerCache::Res(c)) => r.backward(c, &d)?,
                _ => unreachable!("cache built by this chain"),
            };
        }
        Ok(d)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Block(b) => b.params(),
                Layer::Res(r) => r.params(),
            })
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Block(b) => b.params_mut(),
                Layer::Res(r) => r.params_mut(),
            })
            .collect()
    }

    /// The final layer, whose zeroing turns IP into the identity-plus-zero.
    fn last_block_mut(&mut self) -> Option<&mut ConvBlock<T>> {
        match self.layers.last_mut() {
            Some(Layer::Block(b)) => Some(b),
            _ => None,
        }
    }
}

/// LE and IP together.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    le: Sequential<T>,
    ip: Sequential<T>,
}

/// Everything the training forward pass keeps for backward.
pub struct ForwardCache<T> {
    le: Vec<LayerCache<T>>,
    ip: Vec<LayerCache<T>>,
    pre_clamp: Tensor<T>,
    prediction: Tensor<T>,
}

impl<T> ForwardCache<T> {
    /// `x̃` in `[-1, 1]`.
    pub fn prediction(&self) -> &Tensor<T> {
        &self.prediction
    }

    /// Continuous LE output.
    pub fn features(&self) -> &Tensor<T> {
        self.le.last().expect("LE is nonempty").output()
    }
}

impl<T: Scalar> Model<T> {
    /// He-uniform initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = config.side_channels();
        let le = Sequential::build("le", FEATURE_CHANNELS + side, &config.le.layers, config.le.norm, &mut rng);
        let ip = Sequential::build("ip", FEATURE_CHANNELS + side, &config.ip.layers, config.ip.norm, &mut rng);
        Ok(Self { config, le, ip })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn stack(&self, x: &Tensor<T>, profile: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        match (self.config.use_profile, profile) {
            (true, Some(p)) => ops::concat_channels(&[x, p]),
            (false, None) => Ok(x.clone()),
            (true, None) => Err(Error::MissingStream("profile channel")),
            (false, Some(_)) => Err(bad("model was built without the profile channel")),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != FEATURE_CHANNELS || x.height() % FEATURE_SCALE != 0 || x.width() % FEATURE_SCALE != 0 {
            return Err(Error::BadDimensions(format!(
                "network input {:?} must have 3 channels and sides divisible by {FEATURE_SCALE}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Continuous features `y` in `(-1, 1)`, shape `[n, 3, H/8, W/8]`.
    pub fn extract_features(&self, x: &Tensor<T>, profile: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.le.infer(&self.stack(x, profile)?)
    }

    /// `x̃ = clamp(upsample(y) + IP(upsample(y), s̃), -1, 1)`.
    pub fn predict_image(&self, y: &Tensor<T>, profile: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let u = ops::upsample_nearest(y, FEATURE_SCALE)?;
        let f = self.ip.infer(&self.stack(&u, profile)?)?;
        Ok(ops::clamp(&ops::add(&u, &f)?, -T::one(), T::one()))
    }

    /// Training pass on continuous features.
    pub fn forward(&self, x: &Tensor<T>, profile: Option<&Tensor<T>>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let le = self.le.forward(&self.stack(x, profile)?)?;
        let u = ops::upsample_nearest(le.last().unwrap().output(), FEATURE_SCALE)?;
        let ip = self.ip.forward(&self.stack(&u, profile)?)?;
        let pre_clamp = ops::add(&u, ip.last().unwrap().output())?;
        let prediction = ops::clamp(&pre_clamp, -T::one(), T::one());
        Ok(ForwardCache {
            le,
            ip,
            pre_clamp,
            prediction,
        })
    }

    /// Accumulates parameter gradients given `∂L/∂x̃`.
    pub fn backward(&mut self, cache: &ForwardCache<T>, d_prediction: &Tensor<T>) -> Result<()> {
        self.backward_with(cache, d_prediction, ClampGradient::Exact)
    }

    /// [`Model::backward`] with a choice of how the output clamp passes gradient.
    pub fn backward_with(&mut self, cache: &ForwardCache<T>, d_prediction: &Tensor<T>, clamp: ClampGradient) -> Result<()> {
        d_prediction.expect_shape(cache.prediction.shape(), "prediction gradient")?;
        let d_sum = match clamp {
            ClampGradient::Exact => ops::clamp_backward(&cache.pre_clamp, -T::one(), T::one(), d_prediction),
            ClampGradient::Inward => ops::clamp_backward_inward(&cache.pre_clamp, -T::one(), T::one(), d_prediction),
        };
        let d_stack = self.ip.backward(&cache.ip, &d_sum)?;
        let d_u = if self.config.use_profile {
            let parts = ops::split_channels(&d_stack, &[FEATURE_CHANNELS, 1])?;
            ops::add(&d_sum, &parts[0])?
        } else {
            ops::add(&d_sum, &d_stack)?
        };
        let d_y = ops::upsample_nearest_backward(&d_u, FEATURE_SCALE)?;
        // the input gradient of LE is not needed
        self.le.backward(&cache.le, &d_y)?;
        Ok(())
    }

    /// Zeroes the IP output layer so `f = tanh(0) = 0` and `x̃ = clamp(u)`.
    pub fn zero_correction(&mut self) {
        if let Some(b) = self.ip.last_block_mut() {
            b.conv.weight.value.iter_mut().for_each(|v| *v = T::zero());
            b.conv.bias.value.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Same graph with parameters converted to `U`.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::new(self.config.clone(), 0).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out
    }
}

impl<T: Scalar> Parameterized<T> for Model<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.le.params();
        v.extend(self.ip.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.le.params_mut();
        v.extend(self.ip.params_mut());
        v
    }
}

impl Model<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: serde_json::to_string(&self.config).expect("config serializes"),
            tensors: self
                .params()
                .into_iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.value.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&ck.config)
            .map_err(|e| Error::InvalidArgument(format!("checkpoint config: {e}")))?;
        let mut model = Self::new(config, 0)?;
        let params = model.params_mut();
        if params.len() != ck.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, model needs {}",
                ck.tensors.len(),
                params.len()
            )));
        }
        for (p, t) in params.into_iter().zip(&ck.tensors) {
            if p.name != t.name || p.shape != t.shape {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint tensor {} {:?} where {} {:?} expected",
                    t.name, t.shape, p.name, p.shape
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint tensor {}", t.name)));
            }
            p.value.clone_from(&t.values);
        }
        Ok(model)
    }

    /// CRC32 of the serialized checkpoint; stored in containers.
    pub fn checksum(&self) -> u32 {
        self.to_checkpoint().checksum()
    }
}

/// `[1, 3, H, W]` tensor with samples scaled to `[-1, 1]`.
pub fn image_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width(), img.height());
    let s = img.samples();
    Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| s[(y * w + x) * 3 + c] as f32 / 127.5 - 1.0)
}

/// Inverse of [`image_to_tensor`] for batch item `b`, rounding to 8 bits.
pub fn tensor_to_image(t: &Tensor<f32>, b: usize) -> Result<RgbImage> {
    if t.channels() != 3 || b >= t.batch() {
        return Err(Error::ShapeMismatch(format!("cannot read image {b} from {:?}", t.shape())));
    }
    let (h, w) = (t.height(), t.width());
    Ok(RgbImage::from_fn(w, h, |x, y| {
        std::array::from_fn(|c| to_display(t.at([b, c, y, x])))
    }))
}

/// `[-1, 1]` → nearest integer in `[0, 255]`.
pub fn to_display(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// `[1, 1, H, W]` profile channel.
pub fn profile_to_tensor(p: &GrayProfile) -> Tensor<f32> {
    Tensor::from_vec([1, 1, p.height(), p.width()], p.to_channel()).expect("profile dims are nonzero")
}

pub fn quantize_feature(y: f32) -> u8 {
    ((y as f64 + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize_feature(q: u8) -> f32 {
    (q as f64 / 127.5 - 1.0) as f32
}

/// 8-bit quantized LE output: 3 channel-planar planes at 1/8 resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturePlanes {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl FeaturePlanes {
    /// Quantizes batch item 0 of `y`.
    pub fn quantize(y: &Tensor<f32>) -> Result<Self> {
        if y.channels() != FEATURE_CHANNELS {
            return Err(Error::ShapeMismatch(format!("features {:?}", y.shape())));
        }
        Ok(Self {
            width: y.width(),
            height: y.height(),
            samples: y.item(0).iter().map(|&v| quantize_feature(v)).collect(),
        })
    }

    pub fn dequantize(&self) -> Tensor<f32> {
        let data = self.samples.iter().map(|&q| dequantize_feature(q)).collect();
        Tensor::from_vec([1, FEATURE_CHANNELS, self.height, self.width], data).expect("nonzero dims")
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

    pub fn to_plane(&self) -> Plane {
        let s = self.samples.iter().map(|&v| v as u16).collect();
        Plane::new(self.width, self.height, BitDepth::Eight, FEATURE_CHANNELS, s).expect("valid feature plane")
    }

    pub fn from_plane(p: &Plane) -> Result<Self> {
        if p.depth() != BitDepth::Eight || p.channels() != FEATURE_CHANNELS {
            return Err(Error::ShapeMismatch("feature stream must be a 3-channel 8-bit plane".into()));
        }
        Ok(Self {
            width: p.width(),
            height: p.height(),
            samples: p.samples().iter().map(|&v| v as u8).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::*;

    fn tiny(norm: NormKind) -> ModelConfig {
        // channel norm over two channels is too ill-conditioned for
        // finite differences
        ModelConfig::with_widths([4, 4, 5, 5], norm)
    }

    #[test]
    fn presets_validate() {
        for norm in NormKind::ALL {
            ModelConfig::full(norm).validate().unwrap();
            ModelConfig::desk(norm).validate().unwrap();
        }
        let mut c = ModelConfig::desk(NormKind::Channel);
        c.ip.layers.remove(5);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(NormKind::Channel);
        c.le.layers[0].filter = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(NormKind::Channel);
        c.le.layers[1].stride = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn shapes_for_every_norm() {
        for norm in NormKind::ALL {
            let m = Model::<f32>::new(ModelConfig::desk(norm), 1).unwrap();
            let x = random_tensor::<f32>([1, 3, 64, 64], 2);
            let p = random_tensor::<f32>([1, 1, 64, 64], 3).map(|v| v.abs());
            let y = m.extract_features(&x, Some(&p)).unwrap();
            assert_eq!(y.shape(), [1, 3, 8, 8]);
            assert!(y.data().iter().all(|v| v.abs() < 1.0));
            let xt = m.predict_image(&y, Some(&p)).unwrap();
            assert_eq!(xt.shape(), [1, 3, 64, 64]);
            assert!(xt.data().iter().all(|v| v.abs() <= 1.0));
        }
        let x = random_tensor::<f32>([1, 3, 60, 64], 2);
        let m = Model::<f32>::new(ModelConfig::desk(NormKind::Channel), 1).unwrap();
        assert!(matches!(m.extract_features(&x, None), Err(Error::BadDimensions(_))));
    }

    #[test]
    fn profile_flag_controls_inputs() {
        let with = Model::<f32>::new(tiny(NormKind::Channel), 1).unwrap();
        let without = Model::<f32>::new(tiny(NormKind::Channel).without_profile(), 1).unwrap();
        let x = random_tensor::<f32>([1, 3, 16, 16], 2);
        let p = Tensor::zeros([1, 1, 16, 16]);
        assert!(with.extract_features(&x, None).is_err());
        assert!(without.extract_features(&x, Some(&p)).is_err());
        assert!(without.extract_features(&x, None).is_ok());
        assert!(without.parameter_count() < with.parameter_count());
    }

    #[test]
    fn zeroed_correction_is_upsampling() {
        let mut m = Model::<f32>::new(ModelConfig::desk(NormKind::Channel), 4).unwrap();
        m.zero_correction();
        let y = random_tensor::<f32>([1, 3, 4, 4], 5).map(|v| v * 0.9);
        let p = Tensor::zeros([1, 1, 32, 32]);
        let xt = m.predict_image(&y, Some(&p)).unwrap();
        assert_eq!(xt, ops::upsample_nearest(&y, 8).unwrap());
    }

    #[test]
    fn deterministic_features() {
        let run = || {
            let m = Model::<f32>::new(ModelConfig::desk(NormKind::Channel), 7).unwrap();
            let x = random_tensor::<f32>([1, 3, 32, 32], 8);
            let p = random_tensor::<f32>([1, 1, 32, 32], 9).map(|v| v.abs());
            FeaturePlanes::quantize(&m.extract_features(&x, Some(&p)).unwrap()).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.samples().len(), 3 * 4 * 4);
    }

    #[test]
    fn quantization_endpoints_and_bound() {
        assert_eq!(quantize_feature(-1.0), 0);
        assert_eq!(quantize_feature(1.0), 255);
        assert_eq!(quantize_feature(0.0), 128);
        assert!((dequantize_feature(128) - 0.003_921_6).abs() < 1e-6);
        assert_eq!(quantize_feature(-3.0), 0);
        for i in 0..=10_000 {
            let y = -1.0 + 2.0 * i as f32 / 10_000.0;
            let back = dequantize_feature(quantize_feature(y));
            assert!((back - y).abs() <= 1.0 / 254.0, "{y} -> {back}");
        }
    }

    #[test]
    fn feature_plane_round_trip() {
        let y = random_tensor::<f32>([1, 3, 2, 3], 1);
        let f = FeaturePlanes::quantize(&y).unwrap();
        assert_eq!(FeaturePlanes::from_plane(&f.to_plane()).unwrap(), f);
        assert_eq!(f.dequantize().shape(), [1, 3, 2, 3]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::<f32>::new(ModelConfig::desk(NormKind::Instance), 3).unwrap();
        let ck = m.to_checkpoint();
        let back = Model::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.checksum(), m.checksum());
        let other = Model::<f32>::new(ModelConfig::desk(NormKind::Instance), 4).unwrap();
        assert_ne!(other.checksum(), m.checksum());
        let mut broken = ck.clone();
        broken.tensors.pop();
        assert!(Model::from_checkpoint(&broken).is_err());
    }

    #[test]
    fn image_tensor_round_trip() {
        let img = RgbImage::from_fn(5, 3, |x, y| [(x * 50) as u8, (y * 90) as u8, 255]);
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), [1, 3, 3, 5]);
        assert_eq!(tensor_to_image(&t, 0).unwrap(), img);
    }

    /// Whole-model wiring: directional derivatives along a random direction
    /// per parameter tensor. Elementwise checks live with each layer; here
    /// the dense ReLU/clamp kinks make per-element differences fragile.
    #[test]
    fn model_gradients() {
        for (norm, use_profile) in [(NormKind::Channel, true), (NormKind::Batch, false), (NormKind::Instance, true)] {
            let mut cfg = tiny(norm);
            cfg.use_profile = use_profile;
            let mut model = Model::<f64>::new(cfg, 11).unwrap();
            // a 4x4 bottleneck; at 1x1 instance norm is constant
            let x = random_tensor::<f64>([2, 3, 32, 32], 12).map(|v| v * 0.8);
            let p = random_tensor::<f64>([2, 1, 32, 32], 13).map(|v| v.abs());
            let p = use_profile.then_some(&p);
            let cache = model.forward(&x, p).unwrap();
            let probe = random_tensor::<f64>(cache.prediction().shape(), 14);
            model.backward(&cache, &probe).unwrap();
            let loss = |m: &Model<f64>| dot(m.forward(&x, p).unwrap().prediction(), &probe);
            let n = model.params().len();
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for i in 0..n {
                let (grad, at) = {
                    let q = &model.params()[i];
                    (q.grad.clone(), q.value.clone())
                };
                let dir = random_vec::<f64>(at.len(), 100 + i as u64);
                analytic.push(grad.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>());
                let along = |t: f64| {
                    let mut m2 = model.clone();
                    for (v, (a, d)) in m2.params_mut()[i].value.iter_mut().zip(at.iter().zip(&dir)) {
                        *v = a + t * d;
                    }
                    loss(&m2)
                };
                numeric.push(numeric_grad_step(&[0.0], 1e-6, |t| along(t[0]))[0]);
            }
            // biases feeding a norm have exactly zero gradient; roundoff at
            // this step is ~1e-7 on a loss of magnitude ~1e3
            check_gradient_floor(&analytic, &numeric, 1e-3);
        }
    }
}
