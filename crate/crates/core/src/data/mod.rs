//! Datasets: labeled feature matrices, MNIST ingestion, stratified subsets
//! and a Gaussian-blobs generator.

pub mod idx;
mod mnist;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Shape3;

pub use mnist::{
    default_mnist_dir, load_mnist, Mnist, MNIST_CLASSES, MNIST_DIR_ENV, MNIST_FILES, MNIST_TEST_CLASS_COUNTS,
    MNIST_TRAIN_CLASS_COUNTS,
};

/// `N` samples as rows of an `N x D` matrix, plus `N` class labels.
///
/// Image rows are stored height x width x channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    features: Array2<f64>,
    shape: Shape3,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledBatch {
    pub fn new(features: Array2<f64>, shape: Shape3, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Argument("a labeled batch needs at least one sample".into()));
        }
        if features.ncols() != shape.len() {
            return Err(Error::Config(format!(
                "{} feature columns do not match sample shape {shape}",
                features.ncols()
            )));
        }
        if labels.len() != n {
            return Err(Error::Argument(format!("{n} samples but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index { index: bad, classes });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("features must be finite".into()));
        }
        Ok(LabeledBatch { features, shape, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            features: self.features.select(Axis(0), indices),
            shape: self.shape,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub input_shape: Shape3,
    /// SHA-256 over the source files, or over the generator parameters.
    pub source_checksum: String,
    pub normalization: String,
}

/// Stratified sample of `n` rows: each class keeps its share of the batch to
/// within one item. The returned rows are shuffled.
pub fn subset(batch: &LabeledBatch, n: usize, seed: u64) -> Result<LabeledBatch> {
    let total = batch.len();
    if n > total {
        return Err(Error::Argument(format!("cannot take {n} samples from a batch of {total}")));
    }
    if n == 0 {
        return Err(Error::Argument("subset size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); batch.classes()];
    for (i, &l) in batch.labels().iter().enumerate() {
        by_class[l].push(i);
    }

    // Largest-remainder apportionment of n over the class sizes.
    let mut quotas: Vec<usize> = by_class.iter().map(|c| c.len() * n / total).collect();
    let mut short = n - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse((by_class[c].len() * n) % total), c));
    for &c in &order {
        if short == 0 {
            break;
        }
        if quotas[c] < by_class[c].len() {
            quotas[c] += 1;
            short -= 1;
        }
    }

    let mut picked = Vec::with_capacity(n);
    for (members, &q) in by_class.iter_mut().zip(&quotas) {
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..q]);
    }
    picked.shuffle(&mut rng);
    Ok(batch.select(&picked))
}

/// `classes` unit-variance Gaussian clusters whose means are pairwise
/// `separation` apart, split 80/20 per class into train and test.
///
/// Means sit on scaled basis vectors when `dim >= classes`, otherwise on a
/// circle in the first two coordinates (neighbouring means `separation` apart).
pub fn make_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(LabeledBatch, LabeledBatch)> {
    if classes < 2 {
        return Err(Error::Argument(format!("need at least 2 classes, got {classes}")));
    }
    if per_class < 5 || dim == 0 {
        return Err(Error::Argument(format!("need per_class >= 5 and dim >= 1, got {per_class} and {dim}")));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::Argument(format!("separation must be >= 0, got {separation}")));
    }
    if dim < 2 && classes > 2 {
        return Err(Error::Argument("more than 2 blobs need dim >= 2".into()));
    }
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|k| {
            let mut m = vec![0.0; dim];
            if dim >= classes {
                m[k] = separation / std::f64::consts::SQRT_2;
            } else if classes == 2 {
                m[0] = if k == 0 { -0.5 } else { 0.5 } * separation;
            } else {
                let r = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
                let a = 2.0 * std::f64::consts::PI * k as f64 / classes as f64;
                m[0] = r * a.cos();
                m[1] = r * a.sin();
            }
            m
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = per_class * 4 / 5;
    let mut train = (Vec::new(), Vec::new());
    let mut test = (Vec::new(), Vec::new());
    for (k, mean) in means.iter().enumerate() {
        for i in 0..per_class {
            let dst = if i < n_train { &mut train } else { &mut test };
            for &mu in mean {
                let noise: f64 = StandardNormal.sample(&mut rng);
                dst.0.push(mu + noise);
            }
            dst.1.push(k);
        }
    }
    let build = |(x, y): (Vec<f64>, Vec<usize>), rng: &mut ChaCha8Rng| -> Result<LabeledBatch> {
        let rows = y.len();
        let batch = LabeledBatch::new(
            Array2::from_shape_vec((rows, dim), x).expect("blob buffer matches its shape"),
            Shape3::flat(dim),
            y,
            classes,
        )?;
        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(rng);
        Ok(batch.select(&order))
    };
    let train = build(train, &mut rng)?;
    let test = build(test, &mut rng)?;
    Ok((train, test))
}

pub(crate) fn sha256_hex(chunks: &[&[u8]]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
