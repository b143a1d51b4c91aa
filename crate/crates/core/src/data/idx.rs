//! MNIST IDX files: big-endian headers followed by raw unsigned bytes.

use std::path::Path;

use super::{DataError, MnistImage};
use crate::models::{IMAGE_PIXELS, IMAGE_SIDE};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, file: &str) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            file: file.to_string(),
            expected: at + 4,
            got: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, file: &str) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, file)?;
    if found != expected {
        return Err(DataError::BadMagic {
            file: file.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, file: &str) -> Result<(), DataError> {
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            file: file.to_string(),
            expected,
            got: bytes.len(),
        });
    }
    Ok(())
}

/// Parses in-memory image and label files.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Vec<MnistImage>, DataError> {
    check_magic(images, IMAGE_MAGIC, "images")?;
    check_magic(labels, LABEL_MAGIC, "labels")?;
    let n_images = be_u32(images, 4, "images")? as usize;
    let rows = be_u32(images, 8, "images")? as usize;
    let cols = be_u32(images, 12, "images")? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(DataError::BadDims { rows, cols });
    }
    let n_labels = be_u32(labels, 4, "labels")? as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    check_len(images, 16 + n_images * IMAGE_PIXELS, "images")?;
    check_len(labels, 8 + n_labels, "labels")?;

    let pixels = &images[16..16 + n_images * IMAGE_PIXELS];
    pixels
        .chunks_exact(IMAGE_PIXELS)
        .zip(&labels[8..8 + n_labels])
        .enumerate()
        .map(|(source_index, (raw, &label))| {
            if label > 9 {
                return Err(DataError::BadLabel {
                    index: source_index,
                    label,
                });
            }
            Ok(MnistImage {
                pixels: raw.iter().map(|&b| f64::from(b) / 255.0).collect(),
                label,
                source_index,
            })
        })
        .collect()
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<MnistImage>, DataError> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| DataError::Io {
            path: p.display().to_string(),
            source,
        })
    };
    parse_idx(&read(images_path)?, &read(labels_path)?)
}

/// Encodes images and labels as IDX byte streams.
pub fn encode_idx(images: &[MnistImage]) -> (Vec<u8>, Vec<u8>) {
    let n = images.len() as u32;
    let mut img = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    for word in [IMAGE_MAGIC, n, IMAGE_SIDE as u32, IMAGE_SIDE as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    let mut lab = Vec::with_capacity(8 + images.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    for im in images {
        img.extend(im.pixels.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
        lab.push(im.label);
    }
    (img, lab)
}
