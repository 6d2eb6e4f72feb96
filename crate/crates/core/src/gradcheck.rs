//! Central-difference gradient oracle.
//!
//! Per coordinate the oracle compares `(L(z + h e_i) - L(z - h e_i)) / 2h`
//! with the analytic value `a_i` using `|a - b| / max(|a|, |b|, 1e-8)`, and
//! reports the worst coordinate.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{LogitVector, VariantConfig};
use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::losses::{self, TargetVector};
use crate::nn::Network;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Parameters perturbed by [`check_network_gradient`] at most.
pub const MAX_NETWORK_PARAMS: usize = 200;

/// Floor of the relative-error denominator.
const DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate (or flat parameter index) with the largest error.
    pub worst_index: usize,
    pub passed: bool,
    pub step: f64,
    pub tolerance: f64,
    /// How many coordinates were compared.
    pub checked: usize,
    /// Network coordinates left out because `x ± step` switched a ReLU or
    /// max-pool branch, where the loss has a kink and central differences
    /// average two different slopes.
    #[serde(default)]
    pub skipped: usize,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DENOMINATOR_FLOOR)
}

fn check_step_and_tolerance(step: f64, tolerance: f64) -> Result<()> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Argument(format!("step must be positive, got {step}")));
    }
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Error::Argument(format!("tolerance must be positive, got {tolerance}")));
    }
    Ok(())
}

struct Worst {
    err: f64,
    index: usize,
    checked: usize,
    skipped: usize,
}

impl Worst {
    fn new() -> Self {
        Worst { err: 0.0, index: 0, checked: 0, skipped: 0 }
    }

    fn update(&mut self, index: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        // NaN compares false, so push it through explicitly.
        if e > self.err || e.is_nan() && !self.err.is_nan() {
            self.err = e;
            self.index = index;
        }
        self.checked += 1;
    }

    fn report(self, step: f64, tolerance: f64) -> GradCheckReport {
        GradCheckReport {
            max_rel_error: self.err,
            worst_index: self.index,
            passed: self.checked > 0 && self.err < tolerance,
            step,
            tolerance,
            checked: self.checked,
            skipped: self.skipped,
        }
    }
}

/// Compares `analytic_grad` with central differences of `loss_fn` at `z`.
pub fn check_loss_gradient(
    mut loss_fn: impl FnMut(&[f64]) -> f64,
    analytic_grad: &[f64],
    z: &LogitVector,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    check_step_and_tolerance(step, tolerance)?;
    if analytic_grad.len() != z.len() {
        return Err(Error::Argument(format!("gradient has {} entries for {} logits", analytic_grad.len(), z.len())));
    }
    let mut x = z.as_slice().to_vec();
    let mut worst = Worst::new();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let up = loss_fn(&x);
        x[i] = orig - step;
        let down = loss_fn(&x);
        x[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteLoss { coordinate: i });
        }
        worst.update(i, analytic_grad[i], (up - down) / (2.0 * step));
    }
    Ok(worst.report(step, tolerance))
}

/// Checks a variant's backward direction against its reported loss. For
/// `taylor_inf` this is expected to fail: its direction is not the loss gradient.
pub fn check_variant(
    variant: &VariantConfig,
    z: &LogitVector,
    target: usize,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let y = TargetVector::class(target);
    let analytic = losses::loss_grad(variant, z, y)?;
    let mut scratch = vec![0.0; z.len()];
    check_loss_gradient(
        |x| losses::loss_value_slice(variant, x, target, &mut scratch),
        &analytic.grad,
        z,
        step,
        tolerance,
    )
}

/// Compares backprop parameter gradients of `network` under `variant` with
/// central differences of the batch-mean loss. Dropout is off throughout. At
/// most [`MAX_NETWORK_PARAMS`] parameters, drawn with `seed`, are perturbed.
/// Coordinates whose perturbation crosses a ReLU or max-pool kink are
/// counted in `skipped` and not compared.
pub fn check_network_gradient(
    network: &Network,
    batch: &LabeledBatch,
    variant: &VariantConfig,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    check_step_and_tolerance(step, tolerance)?;
    if batch.is_empty() {
        return Err(Error::Argument("gradient check needs a non-empty batch".into()));
    }
    let mut net = network.clone();
    net.set_head(*variant);
    net.zero_grad();

    let x = batch.features().view();
    let labels = batch.labels();
    let (logits, trace) = net.forward_traced(x, None)?;
    let mut dlogits = Array2::zeros(logits.dim());
    losses::mean_loss_grad(variant, logits.view(), labels, dlogits.view_mut())?;
    let grads = net.backward_traced(&trace, dlogits)?;
    net.accumulate(&grads);

    let count = net.param_count();
    let mut indices: Vec<usize> = if count <= MAX_NETWORK_PARAMS {
        (0..count).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, count, MAX_NETWORK_PARAMS).into_vec()
    };
    indices.sort_unstable();

    let (_, base) = net.mean_loss_traced(x, labels)?;
    let mut worst = Worst::new();
    for &i in &indices {
        let orig = net.param(i).expect("index sampled below param_count");
        let analytic = net.param_grad(i).expect("index sampled below param_count");
        net.set_param(i, orig + step)?;
        let (up, up_trace) = net.mean_loss_traced(x, labels)?;
        net.set_param(i, orig - step)?;
        let (down, down_trace) = net.mean_loss_traced(x, labels)?;
        net.set_param(i, orig)?;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteLoss { coordinate: i });
        }
        if !(base.same_branches(&up_trace) && base.same_branches(&down_trace)) {
            worst.skipped += 1;
            continue;
        }
        worst.update(i, analytic, (up - down) / (2.0 * step));
    }
    Ok(worst.report(step, tolerance))
}
