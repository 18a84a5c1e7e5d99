//! Focal loss on the causal-class probability.
//!
//! ```text
//! y = 1:  −α (1 − ŷ)^β log ŷ
//! y = 0:  −(1 − α) ŷ^β log(1 − ŷ)
//! ```
//!
//! `α` balances the rare causal class against the common non-causal one;
//! `β` shrinks the loss of examples that are already well classified.

use serde::{Deserialize, Serialize};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the
/// logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the causal class, in `(0, 1)`.
    pub alpha: f64,
    /// Focusing exponent, `≥ 0`.
    pub beta: f64,
    /// Coefficient of the `Σθ²` penalty.
    pub l2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            beta: 4.0,
            l2: 3e-4,
        }
    }
}

fn clamp(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

/// Loss of one example given its causal probability `p`.
pub fn focal_loss(p: f64, causal: bool, cfg: &LossConfig) -> f64 {
    let (p, _) = clamp(p);
    if causal {
        -cfg.alpha * libm::pow(1.0 - p, cfg.beta) * libm::log(p)
    } else {
        -(1.0 - cfg.alpha) * libm::pow(p, cfg.beta) * libm::log(1.0 - p)
    }
}

/// `d loss / d p`; zero where the clamp is active.
pub fn focal_loss_grad(p: f64, causal: bool, cfg: &LossConfig) -> f64 {
    let (p, clamped) = clamp(p);
    if clamped {
        return 0.0;
    }
    let b = cfg.beta;
    if causal {
        let q = 1.0 - p;
        let focus = if b == 0.0 { 0.0 } else { b * libm::pow(q, b - 1.0) * libm::log(p) };
        cfg.alpha * (focus - libm::pow(q, b) / p)
    } else {
        let focus = if b == 0.0 { 0.0 } else { b * libm::pow(p, b - 1.0) * libm::log(1.0 - p) };
        -(1.0 - cfg.alpha) * (focus - libm::pow(p, b) / (1.0 - p))
    }
}

/// `1` iff the causal probability is at least one half.
pub fn predict_label(probs: [f64; 2]) -> u8 {
    u8::from(probs[1] >= 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: LossConfig = LossConfig {
        alpha: 0.75,
        beta: 4.0,
        l2: 0.0,
    };

    #[test]
    fn spot_values() {
        assert!(focal_loss(1.0, true, &CFG) < 1e-12);
        let half = focal_loss(0.5, true, &CFG);
        assert!((half - 0.75 * 0.0625 * core::f64::consts::LN_2).abs() < 1e-15);
        assert!((half - 0.032_491).abs() < 1e-6);
        let low = focal_loss(0.1, false, &CFG);
        assert!((low - 2.634e-6).abs() < 1e-9, "{low}");
    }

    #[test]
    fn gradient_matches_central_difference() {
        for &p in &[0.05, 0.3, 0.5, 0.77, 0.95] {
            for &y in &[true, false] {
                let eps = 1e-6;
                let num = (focal_loss(p + eps, y, &CFG) - focal_loss(p - eps, y, &CFG)) / (2.0 * eps);
                let ana = focal_loss_grad(p, y, &CFG);
                assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1e-3), "p={p} y={y}");
            }
        }
    }

    #[test]
    fn clamp_keeps_loss_finite() {
        assert!(focal_loss(0.0, true, &CFG).is_finite());
        assert!(focal_loss(1.0, false, &CFG).is_finite());
        assert_eq!(focal_loss_grad(0.0, true, &CFG), 0.0);
    }

    #[test]
    fn predicted_labels() {
        assert_eq!(predict_label([0.2, 0.8]), 1);
        assert_eq!(predict_label([0.8, 0.2]), 0);
        assert_eq!(predict_label([0.5, 0.5]), 1);
    }
}
