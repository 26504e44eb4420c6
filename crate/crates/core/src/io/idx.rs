//! IDX tensors (the MNIST distribution format).
//!
//! A file is a big-endian `u32` magic `0x0000_08NN` (`08` = unsigned bytes,
//! `NN` = rank), one big-endian `u32` per dimension, then the raw bytes.
//! Images are rank 3 (`count x rows x cols`), labels rank 1.

use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{ClassLabel, FeatureVector};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn image(&self, k: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[k * size..(k + 1) * size]
    }
}

/// A dataset loaded from IDX together with its image geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxDataset {
    pub dataset: LabeledDataset,
    pub rows: usize,
    pub cols: usize,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::IdxFormat {
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(offset, "truncated header"))
}

fn parse(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(format_err(
            0,
            format!("magic {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for d in 0..rank {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * rank;
    let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let Some(expected) = expected else {
        return Err(format_err(4, "dimension product overflows"));
    };
    let body = &bytes[header..];
    if body.len() < expected {
        return Err(format_err(
            header + body.len(),
            format!("truncated data: {} of {} bytes", body.len(), expected),
        ));
    }
    if body.len() > expected {
        return Err(format_err(header + expected, "trailing bytes after data"));
    }
    Ok((dims, body))
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let (dims, body) = parse(bytes, IMAGES_MAGIC)?;
    Ok(IdxImages {
        rows: dims[1],
        cols: dims[2],
        pixels: body.to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (_, body) = parse(bytes, LABELS_MAGIC)?;
    Ok(body.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [images.count(), images.rows, images.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Builds a dataset from parsed images and labels. Pixels are divided by 255;
/// the class count is one past the largest label (at least 2).
pub fn to_dataset(images: &IdxImages, labels: &[u8]) -> Result<IdxDataset> {
    if images.count() != labels.len() {
        return Err(format_err(
            4,
            format!("{} images but {} labels", images.count(), labels.len()),
        ));
    }
    let class_count = labels
        .iter()
        .copied()
        .max()
        .map_or(2, |m| (m as usize + 1).max(2));
    let samples = (0..images.count())
        .map(|k| {
            let x = images.image(k).iter().map(|&b| b as f64 / 255.0).collect();
            Ok((FeatureVector::new(x)?, ClassLabel(labels[k] as usize)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IdxDataset {
        dataset: LabeledDataset::new(samples, class_count)?,
        rows: images.rows,
        cols: images.cols,
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxDataset> {
    let images = parse_images(&std::fs::read(images_path)?)?;
    let labels = parse_labels(&std::fs::read(labels_path)?)?;
    to_dataset(&images, &labels)
}

pub fn save_idx(
    images_path: &Path,
    labels_path: &Path,
    images: &IdxImages,
    labels: &[u8],
) -> Result<()> {
    super::write_atomic(images_path, &encode_images(images))?;
    super::write_atomic(labels_path, &encode_labels(labels))
}
