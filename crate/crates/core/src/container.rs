//! The layered bitstream: three independently decodable streams behind one
//! header, and the encode/decode pipelines that produce and consume it.
//!
//! | stream | content                                   | decodes to          |
//! |--------|-------------------------------------------|---------------------|
//! | 1      | 16-bit profile, lossless, original size   | task outputs        |
//! | 2      | quantized LE features, lossless, 1/8 size | `x̃` (with stream 1) |
//! | 3      | DCT-coded residual, padded size           | `x̂` (with 1 and 2)  |
//!
//! Header layout (little-endian, 44 bytes):
//!
//! | offset | size | field                                        |
//! |--------|------|----------------------------------------------|
//! | 0      | 4    | magic `HMIC`                                 |
//! | 4      | 1    | version (1)                                  |
//! | 5      | 1    | flags: bit 0/1/2 = stream 1/2/3 present      |
//! | 6      | 1    | qp (0 when stream 3 is absent)               |
//! | 7      | 1    | reserved, 0                                  |
//! | 8      | 8    | original width, height (u32 each)            |
//! | 16     | 8    | padded width, height (u32 each)              |
//! | 24     | 4    | model checksum (0 when stream 2 is absent)   |
//! | 28     | 12   | stream 1/2/3 lengths in bytes (u32 each)     |
//! | 40     | 4    | CRC-32 of bytes 0..40                        |
//!
//! Streams follow the header in order; absent streams have length 0. A
//! model built without the profile channel writes streams 2 and 3 only.

use std::io::Read;

use crate::error::{Error, Result, Stage, StageExt};
use crate::imagery::{pad_to_multiple, padded_len, InstanceMap, OriginalSize, RgbImage};
use crate::lossless::{compress_plane, decode_plane_bytes, BitDepth, Plane};
use crate::networks::{image_to_tensor, profile_to_tensor, tensor_to_image, FeaturePlanes, Model, FEATURE_SCALE};
use crate::profile::{decode_tasks, encode_profile, GrayProfile, TaskOutputs};
use crate::residual::{decode_residual, encode_residual, reconstruct_high, stream_qp, Qp, ResidualPlane};

pub const MAGIC: [u8; 4] = *b"HMIC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 44;
/// Largest side accepted from a header.
const MAX_SIDE: u32 = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flags {
    pub profile: bool,
    pub features: bool,
    pub residual: bool,
}

impl Flags {
    pub fn bits(self) -> u8 {
        self.profile as u8 | (self.features as u8) << 1 | (self.residual as u8) << 2
    }

    pub fn from_bits(b: u8) -> Result<Self> {
        if b & !0b111 != 0 {
            return Err(Error::BadMagic("unknown container flag bits"));
        }
        let f = Self {
            profile: b & 1 != 0,
            features: b & 2 != 0,
            residual: b & 4 != 0,
        };
        if f.residual && !f.features {
            return Err(Error::MissingStream("stream3 requires stream2"));
        }
        if !(f.profile || f.features) {
            return Err(Error::MissingStream("container holds no streams"));
        }
        Ok(f)
    }

    fn present(self) -> [bool; 3] {
        [self.profile, self.features, self.residual]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DecodeLevel {
    Tasks,
    General,
    High,
}

impl std::str::FromStr for DecodeLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tasks" => Ok(Self::Tasks),
            "general" => Ok(Self::General),
            "high" => Ok(Self::High),
            _ => Err(Error::InvalidArgument(format!("decode level {s:?} (tasks|general|high)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub flags: Flags,
    pub qp: u8,
    pub original: OriginalSize,
    pub padded_width: u32,
    pub padded_height: u32,
    pub model_checksum: u32,
    pub lengths: [u32; 3],
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(b[off..off + 4].try_into().expect("4 bytes"))
}

impl Header {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(&MAGIC);
        b[4] = VERSION;
        b[5] = self.flags.bits();
        b[6] = self.qp;
        let words = [
            self.original.width as u32,
            self.original.height as u32,
            self.padded_width,
            self.padded_height,
            self.model_checksum,
            self.lengths[0],
            self.lengths[1],
            self.lengths[2],
        ];
        for (i, w) in words.iter().enumerate() {
            b[8 + 4 * i..12 + 4 * i].copy_from_slice(&w.to_le_bytes());
        }
        let crc = crc32fast::hash(&b[..40]);
        b[40..].copy_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::Truncated("container header"));
        }
        if b[..4] != MAGIC {
            return Err(Error::BadMagic("not an HMIC container"));
        }
        if b[4] != VERSION {
            return Err(Error::BadMagic("unsupported container version"));
        }
        let stored = u32_at(b, 40);
        let computed = crc32fast::hash(&b[..40]);
        if stored != computed {
            return Err(Error::Checksum {
                what: "container header",
                stored,
                computed,
            });
        }
        if b[7] != 0 {
            return Err(Error::BadMagic("reserved header byte is nonzero"));
        }
        let flags = Flags::from_bits(b[5])?;
        let (ow, oh, pw, ph) = (u32_at(b, 8), u32_at(b, 12), u32_at(b, 16), u32_at(b, 20));
        let m = FEATURE_SCALE as u32;
        if ow == 0 || oh == 0 || ow > MAX_SIDE || oh > MAX_SIDE || pw != ow.div_ceil(m) * m || ph != oh.div_ceil(m) * m {
            return Err(Error::BadDimensions(format!("original {ow}x{oh}, padded {pw}x{ph}")));
        }
        let h = Self {
            flags,
            qp: b[6],
            original: OriginalSize {
                width: ow as usize,
                height: oh as usize,
            },
            padded_width: pw,
            padded_height: ph,
            model_checksum: u32_at(b, 24),
            lengths: [u32_at(b, 28), u32_at(b, 32), u32_at(b, 36)],
        };
        for (present, len) in flags.present().into_iter().zip(h.lengths) {
            if present != (len > 0) {
                return Err(Error::BadMagic("stream length disagrees with presence flag"));
            }
        }
        if flags.residual {
            Qp::new(h.qp)?;
        } else if h.qp != 0 {
            return Err(Error::BadMagic("qp set without stream3"));
        }
        Ok(h)
    }

    pub fn total_len(&self) -> u64 {
        HEADER_LEN as u64 + self.lengths.iter().map(|&l| l as u64).sum::<u64>()
    }

    /// Whether the streams needed for `level` are present. Whether the
    /// profile is needed for images depends on the model, checked at decode.
    pub fn supports(&self, level: DecodeLevel) -> bool {
        match level {
            DecodeLevel::Tasks => self.flags.profile,
            DecodeLevel::General => self.flags.features,
            DecodeLevel::High => self.flags.features && self.flags.residual,
        }
    }
}

/// A parsed container. Streams not needed for a partial read stay `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredBitstream {
    pub header: Header,
    pub streams: [Option<Vec<u8>>; 3],
}

impl LayeredBitstream {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = self.header.to_bytes().to_vec();
        for (i, (present, len)) in self.header.flags.present().into_iter().zip(self.header.lengths).enumerate() {
            match (&self.streams[i], present) {
                (Some(s), true) if s.len() == len as usize => out.extend_from_slice(s),
                (None, false) => {}
                _ => return Err(Error::MissingStream("stream contents disagree with header")),
            }
        }
        Ok(out)
    }

    /// Parses a complete container; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = Header::parse(bytes)?;
        if bytes.len() as u64 != header.total_len() {
            return Err(Error::Truncated("container length disagrees with header"));
        }
        let mut off = HEADER_LEN;
        let mut streams: [Option<Vec<u8>>; 3] = Default::default();
        for (slot, len) in streams.iter_mut().zip(header.lengths) {
            if len > 0 {
                *slot = Some(bytes[off..off + len as usize].to_vec());
                off += len as usize;
            }
        }
        Ok(Self { header, streams })
    }

    /// Reads the header and only the streams `level` needs, leaving the
    /// reader positioned before the first unread stream.
    pub fn read_for_level(mut r: impl Read, level: DecodeLevel) -> Result<Self> {
        let mut hb = [0u8; HEADER_LEN];
        r.read_exact(&mut hb).map_err(|_| Error::Truncated("container header"))?;
        let header = Header::parse(&hb)?;
        if !header.supports(level) {
            return Err(missing(level));
        }
        let needed = match level {
            DecodeLevel::Tasks => 1,
            DecodeLevel::General => 2,
            DecodeLevel::High => 3,
        };
        let mut streams: [Option<Vec<u8>>; 3] = Default::default();
        for (i, slot) in streams.iter_mut().enumerate().take(needed) {
            let len = header.lengths[i] as usize;
            if len > 0 {
                let mut buf = Vec::new();
                (&mut r).take(len as u64).read_to_end(&mut buf)?;
                if buf.len() != len {
                    return Err(Error::Truncated("container stream"));
                }
                *slot = Some(buf);
            }
        }
        Ok(Self { header, streams })
    }

    /// Drops the streams above `level` and rewrites the header to match, so
    /// the result is a valid standalone container.
    pub fn truncated(&self, level: DecodeLevel) -> Result<Self> {
        if !self.header.supports(level) {
            return Err(missing(level));
        }
        let keep = |i: usize| match level {
            DecodeLevel::Tasks => i == 0,
            DecodeLevel::General => i < 2,
            DecodeLevel::High => true,
        };
        let mut out = self.clone();
        for i in 0..3 {
            if !keep(i) {
                out.streams[i] = None;
                out.header.lengths[i] = 0;
            }
        }
        let f = &mut out.header.flags;
        f.features &= keep(1);
        f.residual &= keep(2);
        if !f.residual {
            out.header.qp = 0;
        }
        if !f.features {
            out.header.model_checksum = 0;
        }
        Ok(out)
    }

    pub fn stats(&self) -> StreamStats {
        let pixels = (self.header.original.width * self.header.original.height) as u64;
        StreamStats {
            bits: self.header.lengths.map(|l| l as u64 * 8),
            header_bits: HEADER_LEN as u64 * 8,
            pixels,
        }
    }
}

fn missing(level: DecodeLevel) -> Error {
    Error::MissingStream(match level {
        DecodeLevel::Tasks => "tasks decode needs stream1",
        DecodeLevel::General => "general decode needs stream2",
        DecodeLevel::High => "high decode needs stream2 and stream3",
    })
}

/// Per-stream sizes. BPP counts stream payloads only; the fixed container
/// header is reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamStats {
    pub bits: [u64; 3],
    pub header_bits: u64,
    pub pixels: u64,
}

impl StreamStats {
    pub fn bpp(&self, stream: usize) -> f64 {
        self.bits[stream] as f64 / self.pixels as f64
    }

    pub fn total_bits(&self) -> u64 {
        self.bits.iter().sum()
    }

    pub fn total_bpp(&self) -> f64 {
        self.total_bits() as f64 / self.pixels as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodeOptions {
    pub qp: Qp,
    /// Write stream 3. Without it the container decodes to `x̃` at most.
    pub residual: bool,
}

fn profile_plane(p: &GrayProfile) -> Plane {
    Plane::new(p.width(), p.height(), BitDepth::Sixteen, 1, p.values().to_vec()).expect("profile dims are valid")
}

/// Predicts `x̃` on the padded grid from dequantized features, exactly as
/// the decoder will.
fn predict(model: &Model<f32>, features: &FeaturePlanes, profile: Option<&GrayProfile>) -> Result<RgbImage> {
    let p = profile.map(profile_to_tensor);
    let xt = model.predict_image(&features.dequantize(), p.as_ref())?;
    tensor_to_image(&xt, 0)
}

/// Runs the full encoder. `instances` must match the image size and is
/// required exactly when the model takes the profile channel.
pub fn encode(
    image: &RgbImage,
    instances: Option<&InstanceMap>,
    model: &Model<f32>,
    opts: EncodeOptions,
) -> Result<LayeredBitstream> {
    let use_profile = model.config().use_profile;
    let (padded, original) = pad_to_multiple(image, FEATURE_SCALE)?;
    let (pw, ph) = (padded.width(), padded.height());

    let profile = match (use_profile, instances) {
        (true, Some(m)) => {
            if (m.width(), m.height()) != (image.width(), image.height()) {
                return Err(Error::ShapeMismatch("instance map and image sizes differ".into()).at(Stage::Profile));
            }
            Some(encode_profile(m).stage(Stage::Profile)?)
        }
        (true, None) => return Err(Error::MissingStream("instance map for the profile stream").at(Stage::Profile)),
        (false, _) => None,
    };
    let stream1 = profile.as_ref().map(|p| compress_plane(&profile_plane(p)).into_bytes());
    let padded_profile = profile.as_ref().map(|p| p.padded(pw, ph));

    let p_tensor = padded_profile.as_ref().map(profile_to_tensor);
    let y = model.extract_features(&image_to_tensor(&padded), p_tensor.as_ref()).stage(Stage::Features)?;
    let features = FeaturePlanes::quantize(&y).stage(Stage::Features)?;
    let stream2 = compress_plane(&features.to_plane()).into_bytes();

    let stream3 = if opts.residual {
        let predicted = predict(model, &features, padded_profile.as_ref()).stage(Stage::Prediction)?;
        let r = ResidualPlane::between(&padded, &predicted).stage(Stage::Stream3)?;
        Some(encode_residual(&r, opts.qp))
    } else {
        None
    };

    let streams = [stream1, Some(stream2), stream3];
    let mut lengths = [0u32; 3];
    for (l, s) in lengths.iter_mut().zip(&streams) {
        let n = s.as_ref().map_or(0, Vec::len);
        *l = u32::try_from(n).map_err(|_| Error::BadDimensions("stream larger than 4 GiB".into()))?;
    }
    let header = Header {
        flags: Flags {
            profile: streams[0].is_some(),
            features: true,
            residual: streams[2].is_some(),
        },
        qp: if opts.residual { opts.qp.value() } else { 0 },
        original,
        padded_width: pw as u32,
        padded_height: ph as u32,
        model_checksum: model.checksum(),
        lengths,
    };
    Ok(LayeredBitstream { header, streams })
}

/// What a decode produced; fields above the requested level stay `None`.
#[derive(Debug, Clone, Default)]
pub struct Decoded {
    pub profile: Option<GrayProfile>,
    pub tasks: Option<TaskOutputs>,
    /// `x̃` cropped to the original size.
    pub general: Option<RgbImage>,
    /// `x̂` cropped to the original size.
    pub high: Option<RgbImage>,
    /// Samples the `x̂` clip changed (over the padded grid).
    pub clipped: usize,
}

fn stream<'a>(b: &'a LayeredBitstream, i: usize, what: &'static str) -> Result<&'a [u8]> {
    b.streams[i].as_deref().ok_or(Error::MissingStream(what))
}

fn decode_profile(b: &LayeredBitstream) -> Result<GrayProfile> {
    let plane = decode_plane_bytes(stream(b, 0, "stream1")?)?;
    let o = b.header.original;
    if plane.depth() != BitDepth::Sixteen || plane.channels() != 1 || (plane.width(), plane.height()) != (o.width, o.height) {
        return Err(Error::ShapeMismatch("stream1 is not a profile of the original size".into()));
    }
    let p = GrayProfile::new(o.width, o.height, plane.into_samples())?;
    p.validate()?;
    Ok(p)
}

/// Decodes up to `level`. A model whose checksum matches the header is
/// required from the general level up.
pub fn decode(b: &LayeredBitstream, level: DecodeLevel, model: Option<&Model<f32>>) -> Result<Decoded> {
    let h = &b.header;
    if !h.supports(level) {
        return Err(missing(level).at(Stage::Container));
    }
    let mut out = Decoded::default();
    if level == DecodeLevel::Tasks {
        let profile = decode_profile(b).stage(Stage::Stream1)?;
        out.tasks = Some(decode_tasks(&profile).stage(Stage::Stream1)?);
        out.profile = Some(profile);
        return Ok(out);
    }

    let model = model.ok_or(Error::MissingStream("model parameters for image decode"))?;
    let loaded = model.checksum();
    if loaded != h.model_checksum {
        return Err(Error::ModelMismatch {
            container: h.model_checksum,
            loaded,
        });
    }
    if model.config().use_profile && !h.flags.profile {
        return Err(Error::MissingStream("stream1 (the model takes the profile channel)").at(Stage::Container));
    }
    if h.flags.profile {
        let profile = decode_profile(b).stage(Stage::Stream1)?;
        out.tasks = Some(decode_tasks(&profile).stage(Stage::Stream1)?);
        out.profile = Some(profile);
    }
    let (pw, ph) = (h.padded_width as usize, h.padded_height as usize);
    let plane = decode_plane_bytes(stream(b, 1, "stream2")?).stage(Stage::Stream2)?;
    let features = FeaturePlanes::from_plane(&plane).stage(Stage::Stream2)?;
    if (features.width() * FEATURE_SCALE, features.height() * FEATURE_SCALE) != (pw, ph) {
        return Err(Error::ShapeMismatch("stream2 size disagrees with header".into()).at(Stage::Stream2));
    }
    let padded_profile = match (model.config().use_profile, &out.profile) {
        (true, Some(p)) => Some(p.padded(pw, ph)),
        _ => None,
    };
    let predicted = predict(model, &features, padded_profile.as_ref()).stage(Stage::Prediction)?;
    out.general = Some(predicted.crop(h.original)?);

    if level == DecodeLevel::High {
        let s3 = stream(b, 2, "stream3")?;
        if stream_qp(s3).stage(Stage::Stream3)?.value() != h.qp {
            return Err(Error::BadMagic("stream3 qp disagrees with header").at(Stage::Stream3));
        }
        let r = decode_residual(s3, pw, ph).stage(Stage::Stream3)?;
        let (high, clipped) = reconstruct_high(&predicted, &r)?;
        out.high = Some(high.crop(h.original)?);
        out.clipped = clipped;
    }
    Ok(out)
}

/// Size of the padded grid for an image, as written to headers.
pub fn padded_size(width: usize, height: usize) -> (usize, usize) {
    (padded_len(width, FEATURE_SCALE), padded_len(height, FEATURE_SCALE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagery::{InstanceRecord, Mask};
    use crate::networks::ModelConfig;
    use crate::tensor::norm::NormKind;
    use std::io::Cursor;

    fn tiny_model(use_profile: bool) -> Model<f32> {
        let mut cfg = ModelConfig::with_widths([4, 4, 4, 4], NormKind::Channel);
        cfg.use_profile = use_profile;
        Model::new(cfg, 3).unwrap()
    }

    fn scene(w: usize, h: usize) -> (RgbImage, InstanceMap) {
        let img = RgbImage::from_fn(w, h, |x, y| [(x * 9) as u8, (y * 7) as u8, ((x + y) * 3) as u8]);
        let mut m = Mask::new(w, h);
        for y in 2..h / 2 {
            for x in 1..w / 2 {
                m.set(x, y, true);
            }
        }
        let map = InstanceMap::new(w, h, vec![InstanceRecord::new(24, 1, m).unwrap()]).unwrap();
        (img, map)
    }

    fn opts(qp: u8) -> EncodeOptions {
        EncodeOptions {
            qp: Qp::new(qp).unwrap(),
            residual: true,
        }
    }

    #[test]
    fn header_round_trip_and_layout() {
        let h = Header {
            flags: Flags {
                profile: true,
                features: true,
                residual: true,
            },
            qp: 27,
            original: OriginalSize { width: 61, height: 40 },
            padded_width: 64,
            padded_height: 40,
            model_checksum: 0xdead_beef,
            lengths: [10, 20, 30],
        };
        let b = h.to_bytes();
        assert_eq!(&b[..8], b"HMIC\x01\x07\x1b\x00");
        assert_eq!(&b[8..12], 61u32.to_le_bytes());
        assert_eq!(&b[24..28], 0xdead_beefu32.to_le_bytes());
        assert_eq!(Header::parse(&b).unwrap(), h);
        for i in 0..HEADER_LEN {
            let mut bad = b;
            bad[i] ^= 1;
            assert!(Header::parse(&bad).is_err(), "flip at {i}");
        }
    }

    #[test]
    fn flag_rules() {
        assert!(Flags::from_bits(0).is_err());
        assert!(Flags::from_bits(0b101).is_err());
        assert!(Flags::from_bits(0b1000).is_err());
        for ok in [0b001, 0b011, 0b111, 0b010, 0b110] {
            assert_eq!(Flags::from_bits(ok).unwrap().bits(), ok);
        }
    }

    #[test]
    fn encode_decode_all_levels() {
        let (img, map) = scene(20, 13);
        let model = tiny_model(true);
        let b = encode(&img, Some(&map), &model, opts(22)).unwrap();
        assert_eq!(b.header.flags.bits(), 0b111);
        assert_eq!((b.header.padded_width, b.header.padded_height), (24, 16));
        let bytes = b.to_bytes().unwrap();
        let parsed = LayeredBitstream::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, b);

        let tasks = decode(&parsed, DecodeLevel::Tasks, None).unwrap();
        assert_eq!(tasks.profile.unwrap(), encode_profile(&map).unwrap());
        let high = decode(&parsed, DecodeLevel::High, Some(&model)).unwrap();
        let general = high.general.unwrap();
        let high_img = high.high.unwrap();
        assert_eq!((general.width(), general.height()), (20, 13));
        assert_eq!((high_img.width(), high_img.height()), (20, 13));
        assert_eq!(decode(&parsed, DecodeLevel::General, Some(&model)).unwrap().general.unwrap(), general);
    }

    #[test]
    fn general_only_mode_and_missing_stream() {
        let (img, map) = scene(16, 16);
        let model = tiny_model(true);
        let b = encode(&img, Some(&map), &model, EncodeOptions { residual: false, ..opts(30) }).unwrap();
        assert_eq!(b.header.flags.bits(), 0b011);
        assert_eq!(b.header.qp, 0);
        let err = decode(&b, DecodeLevel::High, Some(&model)).unwrap_err();
        assert!(matches!(err.root(), Error::MissingStream(_)));
    }

    #[test]
    fn profile_off_layout() {
        let (img, _) = scene(16, 8);
        let model = tiny_model(false);
        let b = encode(&img, None, &model, opts(30)).unwrap();
        assert_eq!(b.header.flags.bits(), 0b110);
        assert!(decode(&b, DecodeLevel::Tasks, None).is_err());
        let d = decode(&b, DecodeLevel::High, Some(&model)).unwrap();
        assert!(d.tasks.is_none() && d.high.is_some());
        // a profile model can't decode images from it
        let err = decode(&b, DecodeLevel::General, Some(&tiny_model(true))).unwrap_err();
        assert!(matches!(err, Error::ModelMismatch { .. }));
    }

    #[test]
    fn model_mismatch_rejected() {
        let (img, map) = scene(8, 8);
        let b = encode(&img, Some(&map), &tiny_model(true), opts(30)).unwrap();
        let other = Model::new(ModelConfig::with_widths([4, 4, 4, 4], NormKind::Channel), 4).unwrap();
        assert!(matches!(decode(&b, DecodeLevel::General, Some(&other)), Err(Error::ModelMismatch { .. })));
        assert!(decode(&b, DecodeLevel::General, None).is_err());
    }

    #[test]
    fn truncation_keeps_prefix_decodable() {
        let (img, map) = scene(16, 16);
        let model = tiny_model(true);
        let full = encode(&img, Some(&map), &model, opts(22)).unwrap();
        let full_dec = decode(&full, DecodeLevel::High, Some(&model)).unwrap();

        let t = full.truncated(DecodeLevel::Tasks).unwrap();
        let tb = t.to_bytes().unwrap();
        assert_eq!(tb.len() as u32, HEADER_LEN as u32 + full.header.lengths[0]);
        let t = LayeredBitstream::from_bytes(&tb).unwrap();
        assert_eq!(t.header.flags.bits(), 0b001);
        assert_eq!(decode(&t, DecodeLevel::Tasks, None).unwrap().tasks, full_dec.tasks);
        assert!(decode(&t, DecodeLevel::General, Some(&model)).is_err());

        let g = LayeredBitstream::from_bytes(&full.truncated(DecodeLevel::General).unwrap().to_bytes().unwrap()).unwrap();
        assert_eq!(decode(&g, DecodeLevel::General, Some(&model)).unwrap().general, full_dec.general);
        assert!(decode(&g, DecodeLevel::High, Some(&model)).is_err());
    }

    /// Counts bytes handed out by the inner reader.
    struct Counting<R> {
        inner: R,
        read: usize,
    }

    impl<R: Read> Read for Counting<R> {
        fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
            let n = self.inner.read(buf)?;
            self.read += n;
            Ok(n)
        }
    }

    #[test]
    fn tasks_read_touches_only_stream1() {
        let (img, map) = scene(16, 16);
        let model = tiny_model(true);
        let full = encode(&img, Some(&map), &model, opts(22)).unwrap();
        let bytes = full.to_bytes().unwrap();
        let mut r = Counting {
            inner: Cursor::new(&bytes),
            read: 0,
        };
        let part = LayeredBitstream::read_for_level(&mut r, DecodeLevel::Tasks).unwrap();
        assert_eq!(r.read, HEADER_LEN + full.header.lengths[0] as usize);
        assert!(part.streams[1].is_none() && part.streams[2].is_none());
        assert!(decode(&part, DecodeLevel::Tasks, None).unwrap().tasks.is_some());
    }

    #[test]
    fn container_corruption_detected() {
        let (img, map) = scene(8, 8);
        let model = tiny_model(true);
        let bytes = encode(&img, Some(&map), &model, opts(22)).unwrap().to_bytes().unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x04;
            let ok = LayeredBitstream::from_bytes(&bad).and_then(|b| decode(&b, DecodeLevel::High, Some(&model)));
            assert!(ok.is_err(), "flip at {i}");
        }
        for n in 0..bytes.len() {
            assert!(LayeredBitstream::from_bytes(&bytes[..n]).is_err());
        }
    }

    #[test]
    fn stats_sum_parts() {
        let (img, map) = scene(16, 16);
        let b = encode(&img, Some(&map), &tiny_model(true), opts(22)).unwrap();
        let s = b.stats();
        assert_eq!(s.total_bits(), s.bits.iter().sum::<u64>());
        assert_eq!(s.bits[0], b.streams[0].as_ref().unwrap().len() as u64 * 8);
        assert!((s.total_bpp() - (s.bpp(0) + s.bpp(1) + s.bpp(2))).abs() < 1e-12);
        assert_eq!(s.pixels, 256);
    }
}
