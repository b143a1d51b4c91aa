//! MNIST loading, synthetic digits and traffic-light pair datasets.

mod idx;
mod synth;
mod traffic;

pub use idx::{encode_idx, load_idx, parse_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use synth::{synth_digits, synth_digits_with_noise, SYNTH_NOISE};
pub use traffic::{
    batch, build_traffic_dataset, config_label, light_on, stack_images, DatasetSizes, Split,
    TrafficDataset, TrafficExample, CONFIG_NAMES, HELD_OUT_FRACTION, VIOLATING_CONFIG,
};

use std::path::Path;

/// A 28x28 grayscale digit with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistImage {
    pub pixels: Vec<f64>,
    pub label: u8,
    /// Position in the file (or generator stream) it came from.
    pub source_index: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{file}: bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { file: String, expected: u32, found: u32 },
    #[error("{file}: truncated (need {expected} bytes, have {got})")]
    Truncated { file: String, expected: usize, got: usize },
    #[error("image file holds {images} images but label file holds {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("images are {rows}x{cols}, expected 28x28")]
    BadDims { rows: usize, cols: usize },
    #[error("label {label} at index {index} is not a digit")]
    BadLabel { index: usize, label: u8 },
    #[error("need at least 2 images of digit {digit}, have {have}")]
    PoolTooSmall { digit: u8, have: usize },
    #[error("pool for digit {expected} contains a {found}")]
    WrongDigit { expected: u8, found: u8 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Standard MNIST file names, test split first.
const MNIST_FILES: [(&str, &str); 2] = [
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
];

/// Loads every `0` and `1` image from the MNIST files found in `dir`.
///
/// Either split may be missing, but not both. Source indices of the
/// training split are offset past the test split so they stay unique.
pub fn load_zero_one_pools(dir: &Path) -> Result<(Vec<MnistImage>, Vec<MnistImage>), DataError> {
    let mut zeros = Vec::new();
    let mut ones = Vec::new();
    let mut offset = 0;
    let mut found = false;
    for (images, labels) in MNIST_FILES {
        let (ip, lp) = (dir.join(images), dir.join(labels));
        if !ip.exists() && !lp.exists() {
            continue;
        }
        found = true;
        let loaded = load_idx(&ip, &lp)?;
        let n = loaded.len();
        for mut im in loaded {
            im.source_index += offset;
            match im.label {
                0 => zeros.push(im),
                1 => ones.push(im),
                _ => {}
            }
        }
        offset += n;
    }
    if !found {
        return Err(DataError::Io {
            path: dir.join(MNIST_FILES[0].0).display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no MNIST files in directory"),
        });
    }
    Ok((zeros, ones))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_from_directory() {
        let (z, o) = synth_digits(6, 2);
        let mut mixed: Vec<MnistImage> = z.into_iter().chain(o).collect();
        mixed[0].label = 7;
        let (img, lab) = encode_idx(&mixed);
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(MNIST_FILES[0].0), &img).unwrap();
        std::fs::write(dir.path().join(MNIST_FILES[0].1), &lab).unwrap();
        let (zeros, ones) = load_zero_one_pools(dir.path()).unwrap();
        assert_eq!((zeros.len(), ones.len()), (5, 6));
        assert_eq!(zeros[0].source_index, 1);
        assert!(load_zero_one_pools(&dir.path().join("missing")).is_err());
    }
}
