//! Binary PPM (P6, 8-bit) and PGM (P5, 16-bit big-endian) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::RgbImage;

/// Upper bound on width·height accepted from a header; guards allocation on
/// hostile input.
const MAX_PIXELS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedImage(msg.into())
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed(format!("expected {what}")));
        }
        if self.pos - start > 10 {
            return Err(malformed(format!("{what} too large")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse::<u64>()
            .map_err(|_| malformed(format!("{what} too large")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(malformed("missing magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed("zero dimension"));
    }
    if width.checked_mul(height).is_none_or(|n| n > MAX_PIXELS) {
        return Err(malformed("dimensions too large"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(malformed(format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(malformed("missing whitespace after maxval")),
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval: maxval as u32,
        data_offset: cur.pos + 1,
    })
}

/// Parses a binary P6 file with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(malformed("not a P6 file"));
    }
    if h.maxval != 255 {
        return Err(malformed(format!("maxval {} != 255", h.maxval)));
    }
    let need = h.width * h.height * 3;
    let payload = &bytes[h.data_offset..];
    if payload.len() < need {
        return Err(malformed(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    RgbImage::from_raw(h.width, h.height, payload[..need].to_vec())
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.samples());
    out
}

/// A 16-bit single-channel raster as stored in a P5 file with maxval 65535.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray16 {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u16>,
}

pub fn decode_pgm16(bytes: &[u8]) -> Result<Gray16> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(malformed("not a P5 file"));
    }
    if h.maxval != 65535 {
        return Err(malformed(format!("maxval {} != 65535", h.maxval)));
    }
    let need = h.width * h.height * 2;
    let payload = &bytes[h.data_offset..];
    if payload.len() < need {
        return Err(malformed(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    let values = payload[..need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(Gray16 {
        width: h.width,
        height: h.height,
        values,
    })
}

pub fn encode_pgm16(g: &Gray16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", g.width, g.height).into_bytes();
    out.reserve(g.values.len() * 2);
    for v in &g.values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?)
}

pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_black_pixel() {
        let img = decode_ppm(b"P6\n1 1\n255\n\0\0\0").unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.samples(), &[0, 0, 0]);
    }

    #[test]
    fn gradient_2x2_payload() {
        let payload: Vec<u8> = (0..12u8).map(|i| i * 21).collect();
        let mut file = b"P6\n2 2\n255\n".to_vec();
        file.extend_from_slice(&payload);
        let img = decode_ppm(&file).unwrap();
        assert_eq!(img.samples(), payload.as_slice());
        assert_eq!(img.pixel(1, 1), [189, 210, 231]);
    }

    #[test]
    fn canonical_roundtrip_is_byte_identical() {
        let mut file = b"P6\n3 2\n255\n".to_vec();
        file.extend((0..18u8).map(|i| i.wrapping_mul(37)));
        let img = decode_ppm(&file).unwrap();
        assert_eq!(encode_ppm(&img), file);
    }

    #[test]
    fn comments_in_header() {
        let img = decode_ppm(b"P6 # made by hand\n1 # w\n1\n255\n\x01\x02\x03").unwrap();
        assert_eq!(img.samples(), &[1, 2, 3]);
    }

    #[test]
    fn header_errors() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
        assert!(decode_ppm(b"P6\n0 2\n255\n").is_err());
        assert!(decode_ppm(b"P6\n1").is_err());
        assert!(decode_ppm(b"P6\n99999999999 1\n255\n").is_err());
        assert!(decode_ppm(b"").is_err());
    }

    #[test]
    fn pgm16_is_big_endian() {
        let g = Gray16 {
            width: 2,
            height: 1,
            values: vec![5889, 0xff01],
        };
        let bytes = encode_pgm16(&g);
        assert!(bytes.ends_with(&[0x17, 0x01, 0xff, 0x01]));
        assert_eq!(decode_pgm16(&bytes).unwrap(), g);
        assert!(decode_pgm16(&bytes[..bytes.len() - 1]).is_err());
    }
}
