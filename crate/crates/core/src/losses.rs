//! Scalar losses on probabilities of the sample's true label.
//!
//! Every gradient returned here is taken with respect to the debiasing model's
//! probability. The biased model's probability enters through [`Detached`], which
//! exposes a value and nothing to differentiate.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_Q: f64 = 0.7;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} probability {p} is outside [0, 1]")))
    }
}

/// A loss value and its derivative with respect to the input probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: f64,
}

/// A probability produced by a model that must not receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Detached(f64);

impl Detached {
    pub fn new(p: f64) -> Self {
        Self(p)
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// Probability of the other class.
    #[inline]
    pub fn complement(self) -> Self {
        Self(1.0 - self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GceConfig {
    q: f64,
}

impl GceConfig {
    pub fn new(q: f64) -> Result<Self> {
        if q > 0.0 && q <= 1.0 {
            Ok(Self { q })
        } else {
            Err(Error::config(format!("GCE q must lie in (0, 1], got {q}")))
        }
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

impl Default for GceConfig {
    fn default() -> Self {
        Self { q: DEFAULT_Q }
    }
}

/// Biased (`c`) and debiasing (`c̃`) probabilities of one sample's true label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredPair {
    biased: Detached,
    debias: f64,
}

impl PredPair {
    pub fn new(biased: Detached, debias: f64) -> Result<Self> {
        check_prob(biased.get(), "biased")?;
        check_prob(debias, "debiasing")?;
        Ok(Self { biased, debias })
    }

    pub fn biased(&self) -> f64 {
        self.biased.get()
    }

    pub fn debias(&self) -> f64 {
        self.debias
    }
}

/// `-ln p`.
pub fn ce_loss(prob: f64) -> Result<LossValue> {
    check_prob(prob, "input")?;
    let p = clamp_prob(prob);
    Ok(LossValue {
        value: -p.ln(),
        grad: -1.0 / p,
    })
}

/// `(1 - p^q) / q`.
pub fn gce_loss(prob: f64, cfg: GceConfig) -> Result<LossValue> {
    check_prob(prob, "input")?;
    let p = clamp_prob(prob);
    let q = cfg.q;
    Ok(LossValue {
        value: (1.0 - p.powf(q)) / q,
        grad: -p.powf(q - 1.0),
    })
}

/// `p^q`: the factor turning the cross-entropy gradient into the GCE gradient.
pub fn gce_gradient_weight(prob: f64, cfg: GceConfig) -> Result<f64> {
    check_prob(prob, "input")?;
    Ok(clamp_prob(prob).powf(cfg.q))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("epsilon must be positive, got {epsilon}")))
    }
}

/// `-ln(c̃(1-c) + c(1-c̃) + ε)`, differentiated in `c̃` only.
pub fn opp_loss(pair: PredPair, epsilon: f64) -> Result<LossValue> {
    check_epsilon(epsilon)?;
    let c = pair.biased();
    let d = pair.debias;
    let inner = d * (1.0 - c) + c * (1.0 - d) + epsilon;
    Ok(LossValue {
        value: -inner.ln(),
        grad: -(1.0 - 2.0 * c) / inner,
    })
}

/// Total adaptive loss with its agreement and (unscaled) disagreement parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveLoss {
    pub total: LossValue,
    /// `c · ce(c̃)`
    pub agreement: f64,
    /// `(1 - c) · opp(c, c̃)`, before multiplying by λ.
    pub disagreement: f64,
}

pub fn adaptive_agreement_loss(pair: PredPair, lambda: f64, epsilon: f64) -> Result<AdaptiveLoss> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(format!("lambda must be non-negative, got {lambda}")));
    }
    let c = pair.biased();
    let ce = ce_loss(pair.debias)?;
    let opp = opp_loss(pair, epsilon)?;
    let agreement = c * ce.value;
    let disagreement = (1.0 - c) * opp.value;
    Ok(AdaptiveLoss {
        total: LossValue {
            value: agreement + lambda * disagreement,
            grad: c * ce.grad + lambda * (1.0 - c) * opp.grad,
        },
        agreement,
        disagreement,
    })
}

/// Probability of `label` given a model's probability of class 1.
#[inline]
pub fn true_label_prob(p_class1: f64, label: u8) -> f64 {
    if label == 1 {
        p_class1
    } else {
        1.0 - p_class1
    }
}

/// Converts `d/d(true-label prob)` into `d/d(class-1 prob)`.
#[inline]
pub fn to_class1_grad(grad: f64, label: u8) -> f64 {
    if label == 1 {
        grad
    } else {
        -grad
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pair(c: f64, d: f64) -> PredPair {
        PredPair::new(Detached::new(c), d).unwrap()
    }

    #[test]
    fn ce_values() {
        assert!(ce_loss(1.0).unwrap().value.abs() < 1e-11);
        assert!((ce_loss(0.5).unwrap().value - std::f64::consts::LN_2).abs() < 1e-15);
        let l = ce_loss(0.1).unwrap();
        assert!((l.value - std::f64::consts::LN_10).abs() < 1e-12);
        assert!((l.grad + 10.0).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_out_of_range() {
        assert!(matches!(ce_loss(1.5), Err(Error::Domain(_))));
        assert!(matches!(ce_loss(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn gce_reduces_to_mae_at_q_one() {
        let cfg = GceConfig::new(1.0).unwrap();
        for p in [0.05, 0.3, 0.5, 0.77, 0.99] {
            assert!((gce_loss(p, cfg).unwrap().value - (1.0 - p)).abs() < 1e-15);
        }
    }

    #[test]
    fn gce_values() {
        for q in [0.1, 0.7, 1.0] {
            let cfg = GceConfig::new(q).unwrap();
            assert!(gce_loss(1.0, cfg).unwrap().value.abs() < 1e-11);
        }
        let cfg = GceConfig::default();
        let expected = (1.0 - 0.5f64.powf(0.7)) / 0.7;
        assert!((gce_loss(0.5, cfg).unwrap().value - expected).abs() < 1e-15);
        // 0.5^0.7 = exp(-0.7 ln 2) = 0.615572...
        assert!((gce_loss(0.5, cfg).unwrap().value - 0.549_182_4).abs() < 1e-6);
    }

    #[test]
    fn gce_q_bounds() {
        assert!(GceConfig::new(0.0).is_err());
        assert!(GceConfig::new(1.01).is_err());
        assert!(GceConfig::new(1.0).is_ok());
    }

    #[test]
    fn gradient_weight_values() {
        let cfg = GceConfig::default();
        assert!((gce_gradient_weight(1.0, cfg).unwrap() - 1.0).abs() < 1e-11);
        let one = GceConfig::new(1.0).unwrap();
        assert_eq!(gce_gradient_weight(0.3, one).unwrap(), 0.3);
    }

    #[test]
    fn opp_extremes() {
        let eps = DEFAULT_EPSILON;
        let l = opp_loss(pair(1.0, 0.0), eps).unwrap();
        assert!((l.value + (1.0 + eps).ln()).abs() < 1e-18);
        let l = opp_loss(pair(1.0, 1.0), eps).unwrap();
        assert!((l.value + eps.ln()).abs() < 1e-12);
        let l = opp_loss(pair(0.5, 0.5), eps).unwrap();
        assert!((l.value + (0.5 + eps).ln()).abs() < 1e-15);
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-7);
    }

    #[test]
    fn opp_requires_positive_epsilon() {
        assert!(matches!(opp_loss(pair(0.5, 0.5), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn adaptive_limits() {
        let eps = DEFAULT_EPSILON;
        for d in [0.1, 0.5, 0.9] {
            let a = adaptive_agreement_loss(pair(1.0, d), 3.0, eps).unwrap();
            assert_eq!(a.total.value, ce_loss(d).unwrap().value);
            assert_eq!(a.total.grad, ce_loss(d).unwrap().grad);
            let a = adaptive_agreement_loss(pair(0.0, d), 3.0, eps).unwrap();
            assert_eq!(a.total.value, 3.0 * opp_loss(pair(0.0, d), eps).unwrap().value);
        }
    }

    #[test]
    fn adaptive_mixed_value() {
        let eps = 1e-8;
        let a = adaptive_agreement_loss(pair(0.5, 0.8), 1.0, eps).unwrap();
        let expected = 0.5 * -(0.8f64).ln() + 0.5 * -(0.8f64 * 0.5 + 0.5 * 0.2 + eps).ln();
        assert!((a.total.value - expected).abs() < 1e-15);
        assert!((a.agreement + a.disagreement - expected).abs() < 1e-15);
    }

    #[test]
    fn adaptive_rejects_negative_lambda() {
        assert!(matches!(
            adaptive_agreement_loss(pair(0.5, 0.5), -1.0, 1e-8),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gce_approaches_ce_for_small_q() {
        let cfg = GceConfig::new(1e-4).unwrap();
        for i in 1..=9 {
            let p = i as f64 / 10.0;
            let gap = (gce_loss(p, cfg).unwrap().value - ce_loss(p).unwrap().value).abs();
            assert!(gap < 1e-3, "p={p}: {gap}");
        }
    }

    #[test]
    fn gce_gradient_identity_on_grid() {
        for q in [0.3, 0.5, 0.7, 0.9, 1.0] {
            let cfg = GceConfig::new(q).unwrap();
            for i in 1..=19 {
                let p = i as f64 * 0.05;
                let g = gce_loss(p, cfg).unwrap().grad;
                let w = gce_gradient_weight(p, cfg).unwrap() * ce_loss(p).unwrap().grad;
                assert!(((g - w) / g).abs() < 1e-12, "q={q} p={p}");
            }
        }
    }

    proptest! {
        #[test]
        fn opp_swap_symmetry(c in 0.0f64..=1.0, d in 0.0f64..=1.0) {
            let a = opp_loss(pair(c, d), 1e-8).unwrap().value;
            let b = opp_loss(pair(1.0 - c, 1.0 - d), 1e-8).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn adaptive_gradient_matches_finite_differences(
            c in 0.0f64..=1.0,
            d in 0.01f64..0.99,
            lambda in 0.0f64..20.0,
        ) {
            let h = 1e-6;
            let f = |x: f64| adaptive_agreement_loss(pair(c, x), lambda, 1e-8).unwrap().total.value;
            let numeric = (f(d + h) - f(d - h)) / (2.0 * h);
            let analytic = adaptive_agreement_loss(pair(c, d), lambda, 1e-8).unwrap().total.grad;
            prop_assert!((numeric - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()),
                "numeric {} analytic {}", numeric, analytic);
        }

        #[test]
        fn losses_bounded_below(c in 0.0f64..=1.0, d in 0.0f64..=1.0, q in 0.01f64..=1.0, eps in 1e-12f64..=1.0) {
            let cfg = GceConfig::new(q).unwrap();
            prop_assert!(ce_loss(d).unwrap().value >= 0.0);
            prop_assert!(gce_loss(d, cfg).unwrap().value >= 0.0);
            // Maximal disagreement gives -ln(1 + ε), the only way below zero.
            let floor = -(1.0 + eps).ln();
            prop_assert!(opp_loss(pair(c, d), eps).unwrap().value >= floor - 1e-15);
            let a = adaptive_agreement_loss(pair(c, d), 2.0, eps).unwrap();
            prop_assert!(a.total.value >= 2.0 * floor - 1e-15);
        }
    }
}
