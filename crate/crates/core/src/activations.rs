//! Probability maps from logits: softmax, Taylor softmax, and their
//! soft-margin counterparts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taylor_poly::{self, TaylorOrder};

/// Upper end of the margin range the sweeps cover. Larger margins are allowed
/// but logged.
pub const MARGIN_SWEEP_MAX: f64 = 0.9;

/// Finite logits for `K >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::Domain(format!("need at least 2 logits, got {}", z.len())));
        }
        if let Some((i, v)) = z.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!("logit {i} is not finite ({v})")));
        }
        Ok(LogitVector(z))
    }

    pub fn from_slice(z: &[f64]) -> Result<Self> {
        Self::new(z.to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn check_target(&self, target: usize) -> Result<()> {
        check_target(target, self.len())
    }
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(z: Vec<f64>) -> Result<Self> {
        LogitVector::new(z)
    }
}

pub(crate) fn check_target(target: usize, classes: usize) -> Result<()> {
    if target >= classes {
        return Err(Error::Index { index: target, classes });
    }
    Ok(())
}

/// Output of any of the probability maps. Entries are positive and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl std::ops::Index<usize> for ProbabilityVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Soft margin subtracted from the target logit. Finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Margin(f64);

impl Margin {
    pub const ZERO: Margin = Margin(0.0);

    pub fn new(m: f64) -> Result<Self> {
        if !m.is_finite() || m < 0.0 {
            return Err(Error::Config(format!("margin must be finite and non-negative, got {m}")));
        }
        if m > MARGIN_SWEEP_MAX {
            log::warn!("margin {m} is outside the usual sweep range [0, {MARGIN_SWEEP_MAX}]");
        }
        Ok(Margin(m))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Margin {
    type Error = Error;

    fn try_from(m: f64) -> Result<Self> {
        Margin::new(m)
    }
}

impl From<Margin> for f64 {
    fn from(m: Margin) -> f64 {
        m.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Softmax,
    Taylor,
    TaylorInf,
    SmSoftmax,
    SmTaylor,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::Softmax,
        VariantKind::Taylor,
        VariantKind::TaylorInf,
        VariantKind::SmSoftmax,
        VariantKind::SmTaylor,
    ];

    pub fn label(self) -> &'static str {
        match self {
            VariantKind::Softmax => "softmax",
            VariantKind::Taylor => "taylor",
            VariantKind::TaylorInf => "taylor_inf",
            VariantKind::SmSoftmax => "sm_softmax",
            VariantKind::SmTaylor => "sm_taylor",
        }
    }

    pub fn uses_order(self) -> bool {
        matches!(self, VariantKind::Taylor | VariantKind::TaylorInf | VariantKind::SmTaylor)
    }

    pub fn uses_margin(self) -> bool {
        matches!(self, VariantKind::SmSoftmax | VariantKind::SmTaylor)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        VariantKind::ALL.into_iter().find(|k| k.label() == norm).ok_or_else(|| {
            Error::Config(format!(
                "unknown variant {s:?}; expected one of softmax, taylor, taylor_inf, sm_softmax, sm_taylor"
            ))
        })
    }
}

/// Which probability map sits on top of the network, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariantConfig {
    Softmax,
    Taylor {
        order: TaylorOrder,
    },
    /// Taylor softmax forward, softmax-style `p - y` backward.
    TaylorInf {
        order: TaylorOrder,
    },
    SmSoftmax {
        margin: Margin,
    },
    SmTaylor {
        order: TaylorOrder,
        margin: Margin,
    },
}

impl VariantConfig {
    /// Builds a variant from loosely specified parts, rejecting parameters that
    /// do not belong to the chosen kind.
    pub fn from_parts(kind: VariantKind, order: Option<u32>, margin: Option<f64>) -> Result<Self> {
        if !kind.uses_order() && order.is_some() {
            return Err(Error::Config(format!("variant {kind} takes no order")));
        }
        if !kind.uses_margin() && margin.is_some() {
            return Err(Error::Config(format!("variant {kind} takes no margin")));
        }
        let order = || -> Result<TaylorOrder> {
            TaylorOrder::new(order.ok_or_else(|| Error::Config(format!("variant {kind} requires an even order")))?)
        };
        let margin = || -> Result<Margin> {
            Margin::new(margin.ok_or_else(|| Error::Config(format!("variant {kind} requires a margin")))?)
        };
        Ok(match kind {
            VariantKind::Softmax => VariantConfig::Softmax,
            VariantKind::Taylor => VariantConfig::Taylor { order: order()? },
            VariantKind::TaylorInf => VariantConfig::TaylorInf { order: order()? },
            VariantKind::SmSoftmax => VariantConfig::SmSoftmax { margin: margin()? },
            VariantKind::SmTaylor => VariantConfig::SmTaylor { order: order()?, margin: margin()? },
        })
    }

    pub fn kind(&self) -> VariantKind {
        match self {
            VariantConfig::Softmax => VariantKind::Softmax,
            VariantConfig::Taylor { .. } => VariantKind::Taylor,
            VariantConfig::TaylorInf { .. } => VariantKind::TaylorInf,
            VariantConfig::SmSoftmax { .. } => VariantKind::SmSoftmax,
            VariantConfig::SmTaylor { .. } => VariantKind::SmTaylor,
        }
    }

    pub fn order(&self) -> Option<TaylorOrder> {
        match *self {
            VariantConfig::Taylor { order }
            | VariantConfig::TaylorInf { order }
            | VariantConfig::SmTaylor { order, .. } => Some(order),
            _ => None,
        }
    }

    pub fn margin(&self) -> Option<Margin> {
        match *self {
            VariantConfig::SmSoftmax { margin } | VariantConfig::SmTaylor { margin, .. } => Some(margin),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        self.kind().label()
    }

    /// Training-time probabilities. Margin variants apply the margin to `target`.
    pub fn probabilities(&self, z: &LogitVector, target: usize) -> Result<ProbabilityVector> {
        z.check_target(target)?;
        let mut out = vec![0.0; z.len()];
        self.train_probs_into(z.as_slice(), target, &mut out);
        Ok(ProbabilityVector(out))
    }

    /// Inference-time probabilities: margins are dropped.
    pub fn inference_probabilities(&self, z: &LogitVector) -> ProbabilityVector {
        let mut out = vec![0.0; z.len()];
        self.inference_probs_into(z.as_slice(), &mut out);
        ProbabilityVector(out)
    }

    pub fn predict(&self, z: &LogitVector) -> usize {
        let mut scratch = vec![0.0; z.len()];
        self.predict_slice(z.as_slice(), &mut scratch)
    }

    pub(crate) fn predict_slice(&self, z: &[f64], scratch: &mut [f64]) -> usize {
        self.inference_probs_into(z, scratch);
        argmax(scratch)
    }

    pub(crate) fn inference_probs_into(&self, z: &[f64], out: &mut [f64]) {
        match self.order() {
            None => {
                softmax_into(z, out);
            }
            Some(n) => {
                taylor_softmax_into(z, n, out);
            }
        }
    }

    pub(crate) fn train_probs_into(&self, z: &[f64], target: usize, out: &mut [f64]) {
        match *self {
            VariantConfig::Softmax => {
                softmax_into(z, out);
            }
            VariantConfig::Taylor { order } | VariantConfig::TaylorInf { order } => {
                taylor_softmax_into(z, order, out);
            }
            VariantConfig::SmSoftmax { margin } => {
                out.copy_from_slice(z);
                out[target] -= margin.get();
                softmax_in_place(out);
            }
            VariantConfig::SmTaylor { order, margin } => {
                out.copy_from_slice(z);
                out[target] -= margin.get();
                taylor_softmax_in_place(out, order);
            }
        }
    }
}

impl fmt::Display for VariantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.order(), self.margin()) {
            (None, None) => write!(f, "{}", self.label()),
            (Some(n), None) => write!(f, "{}(n={n})", self.label()),
            (None, Some(m)) => write!(f, "{}(m={})", self.label(), m.get()),
            (Some(n), Some(m)) => write!(f, "{}(n={n}, m={})", self.label(), m.get()),
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &LogitVector) -> ProbabilityVector {
    let mut out = vec![0.0; z.len()];
    softmax_into(z.as_slice(), &mut out);
    ProbabilityVector(out)
}

pub fn taylor_softmax(z: &LogitVector, n: TaylorOrder) -> ProbabilityVector {
    let mut out = vec![0.0; z.len()];
    taylor_softmax_into(z.as_slice(), n, &mut out);
    ProbabilityVector(out)
}

/// Softmax with `m` subtracted from the target logit only.
pub fn sm_softmax(z: &LogitVector, target: usize, m: Margin) -> Result<ProbabilityVector> {
    VariantConfig::SmSoftmax { margin: m }.probabilities(z, target)
}

/// Taylor softmax with `m` subtracted from the target logit only.
pub fn sm_taylor_softmax(z: &LogitVector, target: usize, n: TaylorOrder, m: Margin) -> Result<ProbabilityVector> {
    VariantConfig::SmTaylor { order: n, margin: m }.probabilities(z, target)
}

/// Inference-time class prediction for `variant` (margin dropped).
pub fn predict(z: &LogitVector, variant: &VariantConfig) -> usize {
    variant.predict(z)
}

/// Max-subtracted softmax. Returns `log(sum_j exp(z_j - max))` and `max` so
/// callers can form log-probabilities without a second pass.
pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) -> (f64, f64) {
    out.copy_from_slice(z);
    softmax_in_place(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) -> (f64, f64) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
    (sum.ln(), max)
}

/// Writes `f^n(z_i) / sum_j f^n(z_j)` and returns the denominator.
pub(crate) fn taylor_softmax_into(z: &[f64], n: TaylorOrder, out: &mut [f64]) -> f64 {
    out.copy_from_slice(z);
    taylor_softmax_in_place(out, n)
}

pub(crate) fn taylor_softmax_in_place(v: &mut [f64], n: TaylorOrder) -> f64 {
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = taylor_poly::partial_exp_sum(taylor_poly::clamp_to_safe_range(*x, n), n.get());
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
    sum
}
