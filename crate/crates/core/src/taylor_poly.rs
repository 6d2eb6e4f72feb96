//! Truncated Taylor series of the exponential.
//!
//! `f^n(z) = sum_{i=0}^{n} z^i / i!` is strictly positive on the whole real
//! line when `n` is even, which is what makes it usable as a drop-in
//! replacement for `exp` inside a normalized probability map. Odd orders have
//! a real root and are rejected when a [`TaylorOrder`] is constructed.
//!
//! Every even-order polynomial is also strictly convex (`f''` is the even
//! polynomial two orders below), so its single minimum sits at the real root of
//! the odd polynomial `f^{n-1}`. [`poly_min_bound`] exploits that.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_ORDER: u32 = 2;
pub const MAX_ORDER: u32 = 30;

const INV_FACTORIALS: [f64; MAX_ORDER as usize + 1] = {
    let mut out = [1.0; MAX_ORDER as usize + 1];
    let mut fact = 1.0f64;
    let mut i = 1;
    while i <= MAX_ORDER as usize {
        fact *= i as f64;
        out[i] = 1.0 / fact;
        i += 1;
    }
    out
};

/// Headroom left below `f64::MAX` when choosing the clamp range, so that a sum
/// of up to 2^16 polynomial values still cannot overflow.
const SUM_HEADROOM_LOG2: f64 = 16.0;

/// Even polynomial order in `[MIN_ORDER, MAX_ORDER]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct TaylorOrder(u32);

impl TaylorOrder {
    pub fn new(n: u32) -> Result<Self> {
        if !n.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "Taylor order {n} is odd; only even orders give a strictly positive polynomial"
            )));
        }
        if !(MIN_ORDER..=MAX_ORDER).contains(&n) {
            return Err(Error::Config(format!("Taylor order {n} outside supported range {MIN_ORDER}..={MAX_ORDER}")));
        }
        Ok(TaylorOrder(n))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// All supported orders, ascending.
    pub fn all() -> impl Iterator<Item = TaylorOrder> {
        (MIN_ORDER..=MAX_ORDER).step_by(2).map(TaylorOrder)
    }
}

impl TryFrom<u32> for TaylorOrder {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        TaylorOrder::new(n)
    }
}

impl From<TaylorOrder> for u32 {
    fn from(n: TaylorOrder) -> u32 {
        n.0
    }
}

impl fmt::Display for TaylorOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// `f^n(z)` together with its derivative `f^{n-1}(z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyValue {
    pub value: f64,
    pub derivative: f64,
}

/// Horner evaluation of `sum_{i=0}^{degree} z^i / i!` for any degree up to
/// `MAX_ORDER`, odd degrees included.
///
/// # Panics
///
/// Panics if `degree > MAX_ORDER`.
#[inline]
pub fn partial_exp_sum(z: f64, degree: u32) -> f64 {
    let coeffs = &INV_FACTORIALS[..=degree as usize];
    let mut acc = coeffs[degree as usize];
    for &c in coeffs[..degree as usize].iter().rev() {
        acc = acc * z + c;
    }
    acc
}

pub fn eval_poly(z: f64, n: TaylorOrder) -> Result<PolyValue> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("polynomial argument must be finite, got {z}")));
    }
    Ok(eval_unchecked(z, n))
}

#[inline]
pub(crate) fn eval_unchecked(z: f64, n: TaylorOrder) -> PolyValue {
    PolyValue { value: partial_exp_sum(z, n.0), derivative: partial_exp_sum(z, n.0 - 1) }
}

/// Symmetric range `(-hi, hi)` inside which `f^n` and sums of up to 2^16 such
/// values stay finite in double precision.
pub fn safe_input_range(n: TaylorOrder) -> (f64, f64) {
    static RANGES: OnceLock<Vec<f64>> = OnceLock::new();
    let table = RANGES.get_or_init(|| {
        (0..=MAX_ORDER)
            .map(|k| {
                if k == 0 {
                    return f64::MAX;
                }
                let ln_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
                let ln_budget = f64::MAX.ln() - SUM_HEADROOM_LOG2 * std::f64::consts::LN_2 - ((k + 1) as f64).ln();
                ((ln_budget + ln_fact) / k as f64).exp()
            })
            .collect()
    });
    let hi = table[n.0 as usize];
    (-hi, hi)
}

#[inline]
pub fn clamp_to_safe_range(z: f64, n: TaylorOrder) -> f64 {
    let (lo, hi) = safe_input_range(n);
    z.clamp(lo, hi)
}

/// Certified positive lower bound of `f^n` over the clamp range.
///
/// The minimizer is located by a grid scan over `[-(n + 4), 0]` and refined by
/// bisection on the sign of `f^{n-1}`. The returned bound subtracts the Horner
/// rounding-error bound `gamma_{2n+2} * f^n(|z|)` from the computed minimum.
pub fn poly_min_bound(n: TaylorOrder) -> f64 {
    static BOUNDS: OnceLock<Vec<f64>> = OnceLock::new();
    let table = BOUNDS.get_or_init(|| {
        let mut out = vec![f64::NAN; MAX_ORDER as usize + 1];
        for order in TaylorOrder::all() {
            out[order.0 as usize] = compute_min_bound(order);
        }
        out
    });
    table[n.0 as usize]
}

fn compute_min_bound(n: TaylorOrder) -> f64 {
    const GRID_STEP: f64 = 1e-3;
    let lo = -(n.0 as f64 + 4.0);
    let steps = (-lo / GRID_STEP).ceil() as usize;

    let mut best_z = 0.0;
    let mut best = f64::INFINITY;
    for k in 0..=steps {
        let z = lo + k as f64 * GRID_STEP;
        let v = partial_exp_sum(z, n.0);
        if v < best {
            best = v;
            best_z = z;
        }
    }

    // f^{n-1} is increasing, negative left of the minimizer and positive right of it.
    let (mut a, mut b) = (best_z - GRID_STEP, best_z + GRID_STEP);
    while b - a > 1e-12 {
        let mid = 0.5 * (a + b);
        if partial_exp_sum(mid, n.0 - 1) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let z_min = 0.5 * (a + b);
    let value = partial_exp_sum(z_min, n.0).min(best);

    let gamma = {
        let k = (2 * n.0 + 2) as f64 * f64::EPSILON;
        k / (1.0 - k)
    };
    let bound = value - gamma * partial_exp_sum(z_min.abs(), n.0);
    debug_assert!(bound > 0.0, "minimum bound for order {n} is not positive");
    bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn order(n: u32) -> TaylorOrder {
        TaylorOrder::new(n).unwrap()
    }

    #[test]
    fn order_validation() {
        assert!(TaylorOrder::new(2).is_ok());
        assert!(TaylorOrder::new(30).is_ok());
        for bad in [0, 1, 3, 29, 31, 32] {
            assert!(matches!(TaylorOrder::new(bad), Err(Error::Config(_))), "{bad}");
        }
        let msg = TaylorOrder::new(3).unwrap_err().to_string();
        assert!(msg.contains("odd"), "{msg}");
        assert_eq!(TaylorOrder::all().count(), 15);
    }

    #[test]
    fn order_serde_rejects_odd() {
        let n: TaylorOrder = serde_json::from_str("4").unwrap();
        assert_eq!(n.get(), 4);
        assert!(serde_json::from_str::<TaylorOrder>("5").is_err());
    }

    #[test]
    fn eval_examples() {
        let v = eval_poly(0.0, order(2)).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(v.derivative, 1.0);
        assert_eq!(eval_poly(-1.0, order(2)).unwrap().value, 0.5);
        assert_eq!(eval_poly(1.0, order(2)).unwrap().value, 2.5);
        assert_eq!(eval_poly(2.0, order(2)).unwrap().value, 5.0);
        // 1 + 1 + 1/2 + 1/6 + 1/24 = 65/24
        let v4 = eval_poly(1.0, order(4)).unwrap().value;
        assert!((v4 - 65.0 / 24.0).abs() < 1e-15, "{v4}");
    }

    #[test]
    fn eval_rejects_non_finite() {
        for z in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(matches!(eval_poly(z, order(2)), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn min_bound_examples() {
        let b2 = poly_min_bound(order(2));
        assert!(b2 > 0.0 && b2 <= 0.5 && (b2 - 0.5).abs() < 1e-9, "{b2}");

        // Grid oracle independent of the bisection: scan [-50, 0] at 1e-4 then
        // tighten around the best cell.
        for n in [4, 30] {
            let mut best = f64::INFINITY;
            let mut best_z = 0.0;
            let mut z = -50.0;
            while z <= 0.0 {
                let v = partial_exp_sum(z, n);
                if v < best {
                    best = v;
                    best_z = z;
                }
                z += 1e-4;
            }
            let mut z = best_z - 1e-4;
            while z <= best_z + 1e-4 {
                best = best.min(partial_exp_sum(z, n));
                z += 1e-7;
            }
            let bound = poly_min_bound(order(n));
            assert!(bound > 0.0);
            assert!(bound <= best, "order {n}: bound {bound} above grid minimum {best}");
            assert!((best - bound) / best < 1e-6, "order {n}: {bound} vs {best}");
            if n == 4 {
                assert!(bound < 1.0 && best_z < 0.0);
            }
        }
    }

    #[test]
    fn safe_range_examples() {
        let (lo, hi) = safe_input_range(order(2));
        assert!(hi >= 1e150, "{hi}");
        assert_eq!(lo, -hi);
        let (lo, hi) = safe_input_range(order(10));
        assert!(hi >= 1e30, "{hi}");
        assert_eq!(lo, -hi);
        for n in TaylorOrder::all() {
            let (lo, hi) = safe_input_range(n);
            assert_eq!(lo, -hi);
            let top = partial_exp_sum(hi, n.get());
            assert!(top.is_finite() && (top * 65536.0).is_finite(), "order {n}");
            assert!(partial_exp_sum(lo, n.get()).is_finite());
        }
    }

    #[test]
    fn converges_to_exp() {
        let mut z = -3.0;
        while z <= 3.0 {
            let v = eval_poly(z, order(30)).unwrap().value;
            assert!((v - z.exp()).abs() / z.exp() < 1e-12, "z={z}");
            z += 0.01;
        }
    }

    proptest! {
        #[test]
        fn positive_for_even_orders(z in -1e6f64..1e6, k in 1u32..=15) {
            let v = eval_poly(z, order(2 * k)).unwrap().value;
            prop_assert!(v > 0.0);
        }

        #[test]
        fn derivative_is_one_order_lower(z in -50f64..50.0, k in 1u32..=15) {
            let n = order(2 * k);
            let pv = eval_poly(z, n).unwrap();
            let lower = partial_exp_sum(z, n.get() - 1);
            prop_assert!((pv.derivative - lower).abs() <= 1e-14 * lower.abs().max(1e-300));
        }

        #[test]
        fn higher_order_is_larger_for_positive_z(z in 1e-6f64..50.0, k in 1u32..=14) {
            let lo = eval_poly(z, order(2 * k)).unwrap().value;
            let hi = eval_poly(z, order(2 * k + 2)).unwrap().value;
            // The added terms can fall below one ulp for small z.
            prop_assert!(hi >= lo);
            if z >= 1.0 && k <= 5 {
                prop_assert!(hi > lo);
            }
        }
    }
}
