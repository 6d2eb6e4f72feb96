use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::idx::{parse_idx_images, parse_idx_labels};
use super::{sha256_hex, DatasetMeta, LabeledBatch};
use crate::error::{Error, Result};
use crate::nn::Shape3;

/// Environment variable naming the MNIST directory.
pub const MNIST_DIR_ENV: &str = "TAYLOR_SOFTMAX_MNIST_DIR";

pub const MNIST_CLASSES: usize = 10;

/// Conventional file names: train images, train labels, test images, test labels.
pub const MNIST_FILES: [&str; 4] =
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"];

/// Published per-digit counts of the official training and test sets.
pub const MNIST_TRAIN_CLASS_COUNTS: [usize; 10] = [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];
pub const MNIST_TEST_CLASS_COUNTS: [usize; 10] = [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009];

/// SHA-256 of the uncompressed official files, in `MNIST_FILES` order.
const OFFICIAL_SHA256: [&str; 4] = [
    "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
    "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
    "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
    "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
];

const FETCH_HINT: &str = "run scripts/fetch_mnist.sh or point TAYLOR_SOFTMAX_MNIST_DIR at a directory holding the four uncompressed MNIST IDX files";

/// `$TAYLOR_SOFTMAX_MNIST_DIR`, falling back to `data/mnist`.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/mnist"))
}

#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: LabeledBatch,
    pub test: LabeledBatch,
    pub meta: DatasetMeta,
    /// Whether every file matched the official checksum.
    pub official: bool,
}

pub fn load_mnist(root: impl AsRef<Path>) -> Result<Mnist> {
    let root = root.as_ref();
    let mut raw = Vec::with_capacity(4);
    for name in MNIST_FILES {
        let path = root.join(name);
        if !path.is_file() {
            return Err(Error::MissingData { path, hint: FETCH_HINT.into() });
        }
        raw.push((std::fs::read(&path).map_err(|e| Error::io(&path, e))?, path));
    }

    let digests: Vec<String> = raw.iter().map(|(b, _)| sha256_hex(&[b])).collect();
    let official = digests.iter().zip(OFFICIAL_SHA256).all(|(d, o)| d == o);
    if !official {
        log::warn!("MNIST files in {} do not match the official checksums", root.display());
    }

    let batch = |images: usize, labels: usize| -> Result<LabeledBatch> {
        let img = parse_idx_images(&raw[images].0, &raw[images].1)?;
        let lab = parse_idx_labels(&raw[labels].0, &raw[labels].1)?;
        if img.count != lab.len() {
            return Err(Error::format(&raw[labels].1, format!("{} labels for {} images", lab.len(), img.count)));
        }
        let shape = Shape3::new(img.rows, img.cols, 1);
        let features =
            Array2::from_shape_vec((img.count, shape.len()), img.pixels).expect("IDX payload matches its header");
        LabeledBatch::new(features, shape, lab, MNIST_CLASSES)
    };
    let train = batch(0, 1)?;
    let test = batch(2, 3)?;

    let digest_refs: Vec<&[u8]> = digests.iter().map(|d| d.as_bytes()).collect();
    let meta = DatasetMeta {
        name: "mnist".into(),
        n_train: train.len(),
        n_test: test.len(),
        classes: MNIST_CLASSES,
        input_shape: train.shape(),
        source_checksum: sha256_hex(&digest_refs),
        normalization: "pixel / 255".into(),
    };
    Ok(Mnist { train, test, meta, official })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_directory_reports_hint() {
        match load_mnist("/nonexistent/mnist") {
            Err(Error::MissingData { path, hint }) => {
                assert!(path.ends_with(MNIST_FILES[0]));
                assert!(hint.contains(MNIST_DIR_ENV));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn published_counts_add_up() {
        assert_eq!(MNIST_TRAIN_CLASS_COUNTS.iter().sum::<usize>(), 60_000);
        assert_eq!(MNIST_TEST_CLASS_COUNTS.iter().sum::<usize>(), 10_000);
    }
}
