//! Binary netpbm images: P5 (grayscale) and P6 (RGB), maxval 255.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channels interleaved.
    pub pixels: Vec<u8>,
}

/// `round(v * 255)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

impl ImageRecord {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ImageFormat(format!(
                "unsupported channel count {channels}"
            )));
        }
        if width == 0 || height == 0 || width * height * channels != pixels.len() {
            return Err(Error::ImageFormat(format!(
                "{}x{}x{} image cannot hold {} bytes",
                width,
                height,
                channels,
                pixels.len()
            )));
        }
        Ok(ImageRecord {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Quantizes unit-range features to bytes.
    pub fn from_features(
        width: usize,
        height: usize,
        channels: usize,
        values: &[f64],
    ) -> Result<Self> {
        ImageRecord::new(
            width,
            height,
            channels,
            values.iter().map(|&v| quantize(v)).collect(),
        )
    }

    /// Bytes divided by 255.
    pub fn to_features(&self) -> Vec<f64> {
        self.pixels.iter().map(|&b| b as f64 / 255.0).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let channels = match cursor.token()? {
            b"P5" => 1,
            b"P6" => 3,
            other => {
                return Err(Error::ImageFormat(format!(
                    "unsupported magic {:?}",
                    String::from_utf8_lossy(other)
                )))
            }
        };
        let width = cursor.number()?;
        let height = cursor.number()?;
        let maxval = cursor.number()?;
        if maxval != 255 {
            return Err(Error::ImageFormat(format!("unsupported maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cursor.pos) {
            Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
            _ => return Err(Error::ImageFormat("missing whitespace after maxval".into())),
        }
        let raster = &bytes[cursor.pos..];
        let expected = width * height * channels;
        if raster.len() != expected {
            return Err(Error::ImageFormat(format!(
                "raster has {} bytes, expected {expected}",
                raster.len()
            )));
        }
        ImageRecord::new(width, height, channels, raster.to_vec())
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::ImageFormat("truncated header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| {
                Error::ImageFormat(format!(
                    "bad header field {:?}",
                    String::from_utf8_lossy(tok)
                ))
            })
    }
}

pub fn save_image(path: &Path, record: &ImageRecord) -> Result<()> {
    super::write_atomic(path, &record.encode())
}

pub fn load_image(path: &Path) -> Result<ImageRecord> {
    ImageRecord::decode(&std::fs::read(path)?)
}
