use std::time::Instant;

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{predict_rows, Gradients, Network};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::losses;

/// Rows per forward pass when measuring accuracy.
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    /// Batch shards processed in parallel per step. Results are reproducible
    /// for a fixed value, not across values.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_threads() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 0,
            lr_decay: 0.95,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.threads == 0 {
            return bad("thread count must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean reported head loss over the epoch's training samples.
    pub train_loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub wall_ms: u64,
}

/// SGD with classical momentum: `v <- momentum * v - lr * g; w <- w + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    velocity: Vec<Option<(Array2<f64>, Array1<f64>)>>,
}

impl Sgd {
    pub fn new(network: &Network, momentum: f64) -> Self {
        let velocity = network
            .layers()
            .iter()
            .map(|l| l.params().map(|p| (Array2::zeros(p.weight.dim()), Array1::zeros(p.bias.len()))))
            .collect();
        Sgd { momentum, velocity }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, network: &mut Network, learning_rate: f64) {
        let mu = self.momentum;
        for (layer, v) in network.layers_mut().iter_mut().zip(&mut self.velocity) {
            if let (Some(p), Some((vw, vb))) = (layer.params_mut(), v.as_mut()) {
                ndarray::Zip::from(&mut p.weight).and(&mut *vw).and(&p.weight_grad).for_each(|w, v, &g| {
                    *v = mu * *v - learning_rate * g;
                    *w += *v;
                });
                ndarray::Zip::from(&mut p.bias).and(&mut *vb).and(&p.bias_grad).for_each(|w, v, &g| {
                    *v = mu * *v - learning_rate * g;
                    *w += *v;
                });
                p.zero_grad();
            }
        }
    }
}

/// Fraction of `batch` classified correctly at inference time.
pub fn accuracy(network: &Network, batch: &LabeledBatch) -> Result<f64> {
    let x = batch.features();
    let mut correct = 0usize;
    for start in (0..batch.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(batch.len());
        let pred = network.predict(x.slice(s![start..end, ..]))?;
        correct += pred.iter().zip(&batch.labels()[start..end]).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / batch.len() as f64)
}

struct ShardResult {
    loss_sum: f64,
    correct: usize,
    grads: Gradients,
}

/// One shard of a minibatch: forward, head gradient scaled to the full
/// minibatch mean, backward.
fn run_shard(
    network: &Network,
    x: ndarray::ArrayView2<'_, f64>,
    labels: &[usize],
    batch_len: usize,
    dropout_seed: u64,
) -> Result<ShardResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let (logits, trace) = network.forward_traced(x, Some(&mut rng))?;
    let mut dlogits = Array2::zeros(logits.dim());
    let mean = losses::mean_loss_grad(network.head(), logits.view(), labels, dlogits.view_mut())?;
    let rows = labels.len() as f64;
    dlogits *= rows / batch_len as f64;
    let correct = predict_rows(network.head(), logits.view()).iter().zip(labels).filter(|(p, l)| p == l).count();
    let grads = network.backward_traced(&trace, dlogits)?;
    Ok(ShardResult { loss_sum: mean * rows, correct, grads })
}

/// Trains with shuffled minibatches and returns one record per epoch.
pub fn train(
    network: &mut Network,
    train_set: &LabeledBatch,
    test_set: &LabeledBatch,
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    train_with_progress(network, train_set, test_set, config, |_| {})
}

pub fn train_with_progress(
    network: &mut Network,
    train_set: &LabeledBatch,
    test_set: &LabeledBatch,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Config("training and test sets must be non-empty".into()));
    }
    for set in [train_set, test_set] {
        if set.classes() != network.classes() {
            return Err(Error::Config(format!(
                "dataset has {} classes, network head has {}",
                set.classes(),
                network.classes()
            )));
        }
        if set.shape() != network.input_shape() {
            return Err(Error::Config(format!(
                "dataset samples are {}, network expects {}",
                set.shape(),
                network.input_shape()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sgd = Sgd::new(network, config.momentum);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(config.epochs);
    let mut lr = config.learning_rate;
    network.zero_grad();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let batch = train_set.select(chunk);
            let step_seed = rng.next_u64();
            let shards = config.threads.min(chunk.len());
            let per = chunk.len().div_ceil(shards);
            let ranges: Vec<(usize, usize)> =
                (0..chunk.len()).step_by(per).map(|s| (s, (s + per).min(chunk.len()))).collect();

            let net: &Network = network;
            let results: Vec<Result<ShardResult>> = if ranges.len() == 1 {
                vec![run_shard(net, batch.features().view(), batch.labels(), chunk.len(), step_seed)]
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = ranges
                        .iter()
                        .enumerate()
                        .map(|(i, &(a, b))| {
                            let x = batch.features().slice(s![a..b, ..]);
                            let labels = &batch.labels()[a..b];
                            let seed = step_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                            scope.spawn(move || run_shard(net, x, labels, chunk.len(), seed))
                        })
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("training shard panicked")).collect()
                })
            };

            // Reduce in shard order so the sum is independent of scheduling.
            for r in results {
                let r = r?;
                loss_sum += r.loss_sum;
                correct += r.correct;
                network.accumulate(&r.grads);
            }
            sgd.step(network, lr);
        }

        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy: accuracy(network, test_set)?,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if !record.train_loss.is_finite() {
            log::warn!("epoch {epoch}: training loss is not finite");
        }
        on_epoch(&record);
        records.push(record);
        lr *= config.lr_decay;
    }
    Ok(records)
}

/// Returns the per-sample mean loss of `network` over `batch` in eval mode,
/// in chunks.
pub fn mean_loss(network: &Network, batch: &LabeledBatch) -> Result<f64> {
    let mut total = 0.0;
    for start in (0..batch.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(batch.len());
        let x = batch.features().slice(s![start..end, ..]);
        total += network.mean_loss(x, &batch.labels()[start..end])? * (end - start) as f64;
    }
    Ok(total / batch.len() as f64)
}
