//! Cross-entropy losses for every head variant and their gradients with
//! respect to the logits.
//!
//! | variant      | reported loss            | gradient                                  |
//! |--------------|--------------------------|-------------------------------------------|
//! | softmax      | `-log sm(z)_t`           | `sm(z) - y`                               |
//! | taylor       | `-log Tsm(z)_t`          | `f'(z_i)/S - y_i f'(z_i)/f(z_i)` (exact)  |
//! | taylor_inf   | `-log Tsm(z)_t`          | `Tsm(z) - y` (not the loss derivative)    |
//! | sm_softmax   | `-log sm(u)_t`           | `sm(u) - y`                               |
//! | sm_taylor    | `-log Tsm(u)_t`          | exact Taylor gradient evaluated at `u`    |
//!
//! Here `f = f^n`, `f' = f^{n-1}`, `S = sum_j f(z_j)` and `u` is `z` with the
//! margin subtracted from the target entry. Because `u` is a constant shift of
//! `z`, derivatives with respect to `u` and `z` coincide.

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::activations::{self, check_target, LogitVector, Margin, VariantConfig};
use crate::error::{Error, Result};
use crate::taylor_poly::{self, TaylorOrder};

/// A class label, built from an index or a one-hot vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetVector(usize);

impl TargetVector {
    pub fn class(index: usize) -> Self {
        TargetVector(index)
    }

    pub fn from_one_hot(y: &[f64]) -> Result<Self> {
        let mut hot = None;
        for (i, &v) in y.iter().enumerate() {
            if v == 1.0 && hot.is_none() {
                hot = Some(i);
            } else if v != 0.0 {
                return Err(Error::Argument(format!("one-hot target has unexpected entry {v} at index {i}")));
            }
        }
        hot.map(TargetVector).ok_or_else(|| Error::Argument("one-hot target has no entry equal to 1".into()))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn one_hot(self, classes: usize) -> Vec<f64> {
        let mut y = vec![0.0; classes];
        y[self.0] = 1.0;
        y
    }
}

impl From<usize> for TargetVector {
    fn from(i: usize) -> Self {
        TargetVector(i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    /// Cross-entropy in nats.
    pub loss: f64,
    /// Gradient direction with respect to the logits.
    pub grad: Vec<f64>,
}

pub fn ce_loss_softmax(z: &LogitVector, y: TargetVector) -> Result<LossGrad> {
    loss_grad(&VariantConfig::Softmax, z, y)
}

/// Taylor-softmax NLL with its exact gradient.
pub fn ce_loss_taylor_exact(z: &LogitVector, y: TargetVector, n: TaylorOrder) -> Result<LossGrad> {
    loss_grad(&VariantConfig::Taylor { order: n }, z, y)
}

/// Taylor-softmax NLL paired with the softmax-style direction `Tsm(z) - y`.
pub fn ce_loss_taylor_inf(z: &LogitVector, y: TargetVector, n: TaylorOrder) -> Result<LossGrad> {
    loss_grad(&VariantConfig::TaylorInf { order: n }, z, y)
}

pub fn ce_loss_sm(z: &LogitVector, y: TargetVector, m: Margin) -> Result<LossGrad> {
    loss_grad(&VariantConfig::SmSoftmax { margin: m }, z, y)
}

pub fn ce_loss_sm_taylor(z: &LogitVector, y: TargetVector, n: TaylorOrder, m: Margin) -> Result<LossGrad> {
    loss_grad(&VariantConfig::SmTaylor { order: n, margin: m }, z, y)
}

/// Loss and gradient for any variant.
pub fn loss_grad(variant: &VariantConfig, z: &LogitVector, y: TargetVector) -> Result<LossGrad> {
    z.check_target(y.index())?;
    let mut grad = vec![0.0; z.len()];
    let loss = loss_grad_into(variant, z.as_slice(), y.index(), &mut grad);
    Ok(LossGrad { loss, grad })
}

/// Loss only. This is what the finite-difference oracle differentiates.
pub fn loss_value(variant: &VariantConfig, z: &LogitVector, y: TargetVector) -> Result<f64> {
    z.check_target(y.index())?;
    let mut scratch = vec![0.0; z.len()];
    Ok(loss_value_slice(variant, z.as_slice(), y.index(), &mut scratch))
}

/// Elementwise `log(Tsm(z)_i / sm(z)_i)`.
pub fn regularizer(z: &LogitVector, n: TaylorOrder) -> Vec<f64> {
    let z = z.as_slice();
    let mut p = vec![0.0; z.len()];
    let (ln_sum, max) = activations::softmax_into(z, &mut p);
    let log_sum_exp = max + ln_sum;
    let values: Vec<f64> = z.iter().map(|&zi| poly_value(zi, n)).collect();
    let ln_s = values.iter().sum::<f64>().ln();
    z.iter().zip(&values).map(|(&zi, &v)| (v.ln() - ln_s) - (zi - log_sum_exp)).collect()
}

#[inline]
fn poly_value(z: f64, n: TaylorOrder) -> f64 {
    taylor_poly::partial_exp_sum(taylor_poly::clamp_to_safe_range(z, n), n.get())
}

#[inline]
fn poly_derivative(z: f64, n: TaylorOrder) -> f64 {
    let (lo, hi) = taylor_poly::safe_input_range(n);
    if z <= lo || z >= hi {
        // Clamped: the evaluated function is flat here.
        return 0.0;
    }
    taylor_poly::partial_exp_sum(z, n.get() - 1)
}

#[inline]
fn floored_ln(v: f64, n: TaylorOrder) -> f64 {
    v.max(taylor_poly::poly_min_bound(n)).ln()
}

/// Writes the gradient into `grad` and returns the loss. `grad` doubles as
/// scratch, so no allocation happens here.
pub(crate) fn loss_grad_into(variant: &VariantConfig, z: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    debug_assert_eq!(z.len(), grad.len());
    match *variant {
        VariantConfig::Softmax => softmax_ce_into(z, target, grad),
        VariantConfig::SmSoftmax { margin } => {
            grad.copy_from_slice(z);
            grad[target] -= margin.get();
            let (ln_sum, max) = activations::softmax_in_place(grad);
            let loss = max + ln_sum - (z[target] - margin.get());
            grad[target] -= 1.0;
            loss
        }
        VariantConfig::Taylor { order } => taylor_exact_into(z, None, target, order, grad),
        VariantConfig::SmTaylor { order, margin } => taylor_exact_into(z, Some(margin.get()), target, order, grad),
        VariantConfig::TaylorInf { order } => {
            let sum = activations::taylor_softmax_into(z, order, grad);
            let v_t = poly_value(z[target], order);
            let loss = sum.ln() - floored_ln(v_t, order);
            grad[target] -= 1.0;
            loss
        }
    }
}

fn softmax_ce_into(z: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    let (ln_sum, max) = activations::softmax_into(z, grad);
    grad[target] -= 1.0;
    max + ln_sum - z[target]
}

fn taylor_exact_into(z: &[f64], margin: Option<f64>, target: usize, n: TaylorOrder, grad: &mut [f64]) -> f64 {
    let shifted_target = z[target] - margin.unwrap_or(0.0);
    let at = |i: usize| if i == target { shifted_target } else { z[i] };

    let mut sum = 0.0;
    for i in 0..z.len() {
        sum += poly_value(at(i), n);
    }
    let v_t = poly_value(shifted_target, n);
    let inv_sum = 1.0 / sum;
    for (i, g) in grad.iter_mut().enumerate() {
        *g = poly_derivative(at(i), n) * inv_sum;
    }
    grad[target] -= poly_derivative(shifted_target, n) / v_t.max(taylor_poly::poly_min_bound(n));
    sum.ln() - floored_ln(v_t, n)
}

pub(crate) fn loss_value_slice(variant: &VariantConfig, z: &[f64], target: usize, scratch: &mut [f64]) -> f64 {
    match *variant {
        VariantConfig::Softmax | VariantConfig::SmSoftmax { .. } => {
            let m = variant.margin().map_or(0.0, Margin::get);
            scratch.copy_from_slice(z);
            scratch[target] -= m;
            let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = scratch.iter().map(|&u| (u - max).exp()).sum();
            max + sum.ln() - scratch[target]
        }
        VariantConfig::Taylor { order }
        | VariantConfig::TaylorInf { order }
        | VariantConfig::SmTaylor { order, .. } => {
            let m = variant.margin().map_or(0.0, Margin::get);
            let mut sum = 0.0;
            let mut v_t = 0.0;
            for (i, &zi) in z.iter().enumerate() {
                let u = if i == target { zi - m } else { zi };
                let v = poly_value(u, order);
                if i == target {
                    v_t = v;
                }
                sum += v;
            }
            sum.ln() - floored_ln(v_t, order)
        }
    }
}

/// Mean loss over a batch of logit rows; writes the gradient of the mean
/// (per-row gradients divided by the batch size) into `grad`.
pub fn mean_loss_grad(
    variant: &VariantConfig,
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
    mut grad: ArrayViewMut2<'_, f64>,
) -> Result<f64> {
    let (rows, classes) = logits.dim();
    if rows != labels.len() || grad.dim() != logits.dim() {
        return Err(Error::Config(format!(
            "batch of {rows} logit rows with {} labels and gradient {:?}",
            labels.len(),
            grad.dim()
        )));
    }
    if rows == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut z = vec![0.0; classes];
    let mut g = vec![0.0; classes];
    for ((row, mut out), &label) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        check_target(label, classes)?;
        for (dst, &src) in z.iter_mut().zip(row.iter()) {
            *dst = src;
        }
        total += loss_grad_into(variant, &z, label, &mut g);
        for (dst, &src) in out.iter_mut().zip(&g) {
            *dst = src * scale;
        }
    }
    Ok(total * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lv(z: &[f64]) -> LogitVector {
        LogitVector::from_slice(z).unwrap()
    }

    fn order(n: u32) -> TaylorOrder {
        TaylorOrder::new(n).unwrap()
    }

    fn margin(m: f64) -> Margin {
        Margin::new(m).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn target_vector_conversions() {
        assert_eq!(TargetVector::from_one_hot(&[0.0, 1.0, 0.0]).unwrap().index(), 1);
        assert!(TargetVector::from_one_hot(&[0.0, 0.0]).is_err());
        assert!(TargetVector::from_one_hot(&[1.0, 1.0]).is_err());
        assert!(TargetVector::from_one_hot(&[0.5, 0.5]).is_err());
        assert_eq!(TargetVector::class(2).one_hot(3), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn softmax_ce_examples() {
        let lg = ce_loss_softmax(&lv(&[0.0, 0.0]), 0.into()).unwrap();
        assert!((lg.loss - LN2).abs() < 1e-15);
        assert!(close(&lg.grad, &[-0.5, 0.5], 1e-15));

        let lg = ce_loss_softmax(&lv(&[1.0, 2.0, 3.0]), 2.into()).unwrap();
        assert!((lg.loss - 0.407605964444).abs() < 1e-11, "{}", lg.loss);
        assert!(lg.grad.iter().sum::<f64>().abs() < 1e-15);

        assert!(ce_loss_softmax(&lv(&[1.0, 2.0]), 2.into()).is_err());
    }

    #[test]
    fn taylor_exact_examples() {
        let lg = ce_loss_taylor_exact(&lv(&[0.0, 0.0]), 0.into(), order(2)).unwrap();
        assert!((lg.loss - LN2).abs() < 1e-15);
        assert!(close(&lg.grad, &[-0.5, 0.5], 1e-15));

        // f1(1) = 2, f2(1) = 2.5, f1(0) = f2(0) = 1, S = 3.5.
        let lg = ce_loss_taylor_exact(&lv(&[1.0, 0.0]), 0.into(), order(2)).unwrap();
        assert!(close(&lg.grad, &[2.0 / 3.5 - 2.0 / 2.5, 1.0 / 3.5], 1e-15));
        assert!((lg.loss - (3.5f64 / 2.5).ln()).abs() < 1e-15);
        // The exact gradient does not sum to zero.
        let sum: f64 = lg.grad.iter().sum();
        assert!((sum - 0.057142857142857).abs() < 1e-12, "{sum}");
    }

    #[test]
    fn taylor_inf_examples() {
        let lg = ce_loss_taylor_inf(&lv(&[0.0, 0.0]), 0.into(), order(2)).unwrap();
        assert!(close(&lg.grad, &[-0.5, 0.5], 1e-15));

        let z = lv(&[1.0, 0.0]);
        let lg = ce_loss_taylor_inf(&z, 0.into(), order(2)).unwrap();
        assert!(close(&lg.grad, &[5.0 / 7.0 - 1.0, 2.0 / 7.0], 1e-15));
        assert!(lg.grad.iter().sum::<f64>().abs() < 1e-15);
        // Same reported loss as the exact variant.
        let exact = ce_loss_taylor_exact(&z, 0.into(), order(2)).unwrap();
        assert_eq!(lg.loss, exact.loss);
    }

    #[test]
    fn simplified_gradient_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let k = rng.random_range(2..30);
            let z = lv(&(0..k).map(|_| rng.random_range(-10.0..10.0)).collect::<Vec<_>>());
            let t = rng.random_range(0..k);
            let n = order(2 * rng.random_range(1..=15));
            let lg = ce_loss_taylor_inf(&z, t.into(), n).unwrap();
            assert!(lg.grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn taylor_gradients_agree_at_high_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let z = lv(&(0..10).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let t = rng.random_range(0..10);
            let a = ce_loss_taylor_exact(&z, t.into(), order(30)).unwrap();
            let b = ce_loss_taylor_inf(&z, t.into(), order(30)).unwrap();
            assert!(close(&a.grad, &b.grad, 1e-5));
        }
    }

    #[test]
    fn sm_examples() {
        let z = lv(&[1.0, 2.0, 3.0]);
        assert_eq!(ce_loss_sm(&z, 1.into(), Margin::ZERO).unwrap(), ce_loss_softmax(&z, 1.into()).unwrap());
        let lg = ce_loss_sm(&z, 2.into(), margin(0.6)).unwrap();
        assert!((lg.loss - 0.650718171513).abs() < 1e-11, "{}", lg.loss);
        assert!(lg.grad.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn sm_taylor_examples() {
        let z = lv(&[0.3, -1.2, 2.0]);
        assert_eq!(
            ce_loss_sm_taylor(&z, 1.into(), order(4), Margin::ZERO).unwrap(),
            ce_loss_taylor_exact(&z, 1.into(), order(4)).unwrap()
        );
        let lg = ce_loss_sm_taylor(&lv(&[0.0, 0.0]), 0.into(), order(2), margin(1.0)).unwrap();
        assert!((lg.loss - 3f64.ln()).abs() < 1e-15, "{}", lg.loss);
    }

    #[test]
    fn regularizer_examples() {
        for n in [2, 8, 30] {
            assert!(regularizer(&lv(&[0.0, 0.0]), order(n)).iter().all(|r| r.abs() < 1e-15));
        }
        // log((5/7) / (e/(e+1))) and log((2/7) / (1/(e+1))), 50-digit reference.
        let r = regularizer(&lv(&[1.0, 0.0]), order(2));
        assert!(close(&r, &[-0.023210549103, 0.060498719023], 1e-11), "{r:?}");

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let z = lv(&(0..10).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            assert!(regularizer(&z, order(30)).iter().all(|r| r.abs() < 1e-6));
        }
    }

    #[test]
    fn losses_are_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let variants = [
            VariantConfig::Softmax,
            VariantConfig::Taylor { order: order(2) },
            VariantConfig::TaylorInf { order: order(6) },
            VariantConfig::SmSoftmax { margin: margin(0.3) },
            VariantConfig::SmTaylor { order: order(4), margin: margin(0.9) },
        ];
        for _ in 0..500 {
            let k = rng.random_range(2..12);
            let z = lv(&(0..k).map(|_| rng.random_range(-8.0..8.0)).collect::<Vec<_>>());
            let t = rng.random_range(0..k);
            for v in &variants {
                let lg = loss_grad(v, &z, t.into()).unwrap();
                assert!(lg.loss > 0.0, "{v}: {}", lg.loss);
                assert_eq!(lg.loss, loss_value(v, &z, t.into()).unwrap(), "{v}");
            }
        }
    }

    #[test]
    fn mean_loss_grad_scales_by_batch() {
        use ndarray::{array, Array2};
        let logits = array![[1.0, 0.0], [0.0, 0.0]];
        let mut grad = Array2::zeros((2, 2));
        let loss = mean_loss_grad(&VariantConfig::Softmax, logits.view(), &[0, 1], grad.view_mut()).unwrap();
        let l0 = ce_loss_softmax(&lv(&[1.0, 0.0]), 0.into()).unwrap();
        let l1 = ce_loss_softmax(&lv(&[0.0, 0.0]), 1.into()).unwrap();
        assert!((loss - 0.5 * (l0.loss + l1.loss)).abs() < 1e-15);
        assert!((grad[[0, 0]] - 0.5 * l0.grad[0]).abs() < 1e-15);
        assert!((grad[[1, 1]] - 0.5 * l1.grad[1]).abs() < 1e-15);

        assert!(mean_loss_grad(&VariantConfig::Softmax, logits.view(), &[0, 2], grad.view_mut()).is_err());
        assert!(mean_loss_grad(&VariantConfig::Softmax, logits.view(), &[0], grad.view_mut()).is_err());
    }
}
