use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// (m+1)-way classification over negated distances.
    Cls,
    Contrastive,
    Triplet,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Cls => "cls",
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [LossKind::Cls, LossKind::Contrastive, LossKind::Triplet]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Negatives per episode.
    pub m: usize,
    /// Used by the contrastive and triplet losses only.
    pub margin: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.kind != LossKind::Cls && !(self.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        Ok(())
    }
}

/// Loss value and its derivatives with respect to the positive and
/// negative distances.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub d_pos: T,
    pub d_neg: Vec<T>,
}

/// `-log softmax(-D)[positive]`, written as `log(1 + Σ exp(D⁺ - D⁻_j))`.
pub fn cls_loss<T: Scalar>(pos: T, neg: &[T]) -> LossGrad<T> {
    let z: Vec<T> = neg.iter().map(|&d| pos - d).collect();
    let top = z.iter().copied().fold(T::zero(), T::max);
    let shifted: Vec<T> = z.iter().map(|&v| (v - top).exp()).collect();
    let tail: T = shifted.iter().copied().sum();
    let base = (-top).exp();
    let value = if top == T::zero() { tail.ln_1p() } else { top + (base + tail).ln() };
    let total = base + tail;
    let q: Vec<T> = shifted.iter().map(|&s| s / total).collect();
    LossGrad {
        value,
        d_pos: q.iter().copied().sum(),
        d_neg: q.iter().map(|&v| -v).collect(),
    }
}

/// `D⁺ + mean_j max(0, margin - D⁻_j)`.
pub fn contrastive_loss<T: Scalar>(pos: T, neg: &[T], margin: T) -> LossGrad<T> {
    let m = T::lit(neg.len() as f64);
    let mut value = pos;
    let mut d_neg = vec![T::zero(); neg.len()];
    for (g, &d) in d_neg.iter_mut().zip(neg) {
        let gap = margin - d;
        if gap > T::zero() {
            value = value + gap / m;
            *g = -T::one() / m;
        }
    }
    LossGrad { value, d_pos: T::one(), d_neg }
}

/// `mean_j max(0, D⁺ - D⁻_j + margin)`.
pub fn triplet_loss<T: Scalar>(pos: T, neg: &[T], margin: T) -> LossGrad<T> {
    let m = T::lit(neg.len() as f64);
    let mut value = T::zero();
    let mut d_pos = T::zero();
    let mut d_neg = vec![T::zero(); neg.len()];
    for (g, &d) in d_neg.iter_mut().zip(neg) {
        let h = pos - d + margin;
        if h > T::zero() {
            value = value + h / m;
            d_pos = d_pos + T::one() / m;
            *g = -T::one() / m;
        }
    }
    LossGrad { value, d_pos, d_neg }
}

pub fn loss_from_distances<T: Scalar>(cfg: &LossConfig, pos: T, neg: &[T]) -> Result<LossGrad<T>> {
    if !pos.is_finite() || neg.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("item-to-set distance".into()));
    }
    Ok(match cfg.kind {
        LossKind::Cls => cls_loss(pos, neg),
        LossKind::Contrastive => contrastive_loss(pos, neg, T::lit(cfg.margin)),
        LossKind::Triplet => triplet_loss(pos, neg, T::lit(cfg.margin)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_distances_give_log_m_plus_one() {
        let l = cls_loss(3.0f64, &[3.0, 3.0]);
        assert!((l.value - 3f64.ln()).abs() < 1e-12);
        assert!((l.value - 1.0986122886681098).abs() < 1e-12);
    }

    #[test]
    fn dominant_positive_gives_near_zero() {
        let l = cls_loss(0.0f64, &[40.0; 5]);
        assert!(l.value > 0.0);
        assert!(l.value < 1e-16 * 5.0 + 1e-12);
    }

    #[test]
    fn scalar_cls_value() {
        let l = cls_loss(1.0f64, &[2.0, 3.0]);
        let want = (1.0 + (-1f64).exp() + (-2f64).exp()).ln();
        assert!((l.value - want).abs() < 1e-15);
        assert!((l.value - 0.40761).abs() < 1e-5);
    }

    #[test]
    fn contrastive_values() {
        assert_eq!(contrastive_loss(0.0f64, &[1.0, 2.5], 1.0).value, 0.0);
        assert!((contrastive_loss(0.5f64, &[0.2], 1.0).value - 1.3).abs() < 1e-15);
    }

    #[test]
    fn triplet_values() {
        assert_eq!(triplet_loss(1.0f64, &[2.0, 2.0], 1.0).value, 0.0);
        assert!((triplet_loss(1.0f64, &[1.0, 3.0], 1.0).value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_distance_is_an_error() {
        let cfg = LossConfig { kind: LossKind::Cls, m: 1, margin: 1.0 };
        assert!(loss_from_distances(&cfg, f64::NAN, &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn cls_probabilities_sum_to_one(pos in 0.0f64..20.0, neg in proptest::collection::vec(0.0f64..20.0, 1..30)) {
            let l = cls_loss(pos, &neg);
            let p_pos = (-l.value).exp();
            let p_neg: f64 = l.d_neg.iter().map(|g| -g).sum();
            prop_assert!((p_pos + p_neg - 1.0).abs() < 1e-12);
            prop_assert!((l.d_pos - p_neg).abs() < 1e-12);
            prop_assert!(l.value > 0.0);
        }

        #[test]
        fn cls_is_shift_invariant(pos in 0.0f64..20.0, neg in proptest::collection::vec(0.0f64..20.0, 1..30), c in 0.0f64..100.0) {
            let a = cls_loss(pos, &neg).value;
            let shifted: Vec<f64> = neg.iter().map(|d| d + c).collect();
            let b = cls_loss(pos + c, &shifted).value;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn cls_increases_with_positive_distance(pos in 0.0f64..10.0, delta in 0.01f64..5.0, neg in proptest::collection::vec(0.0f64..10.0, 1..10)) {
            prop_assert!(cls_loss(pos + delta, &neg).value > cls_loss(pos, &neg).value);
        }

        #[test]
        fn baselines_are_non_negative(pos in 0.0f64..10.0, neg in proptest::collection::vec(0.0f64..10.0, 1..10), margin in 0.1f64..3.0) {
            prop_assert!(contrastive_loss(pos, &neg, margin).value >= 0.0);
            prop_assert!(triplet_loss(pos, &neg, margin).value >= 0.0);
        }
    }
}
