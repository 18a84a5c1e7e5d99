//! Fusion of `h_w` and `h_s` and the two-way softmax classifier.

use super::DropoutCtx;
use crate::autodiff::{Graph, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w3: Var,
    pub b3: Var,
    pub w4: Var,
    pub b4: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Classified {
    /// `h_w ∥ h_s`.
    pub fused: Var,
    /// `[P(non-causal), P(causal)]`.
    pub probs: Var,
}

/// `softmax(ReLU(h_u W₃ + b₃) W₄ + b₄)` with `h_u = h_w ∥ h_s`.
pub fn classify(g: &mut Graph, h_w: Var, h_s: Var, head: &HeadVars, drop: &mut DropoutCtx<'_>) -> Result<Classified> {
    let fused = g.concat_cols(&[h_w, h_s])?;
    let hidden = g.linear(fused, head.w3, head.b3)?;
    let hidden = g.relu(hidden);
    let hidden = drop.apply(g, hidden);
    let logits = g.linear(hidden, head.w4, head.b4)?;
    let probs = g.softmax_rows(logits, None)?;
    Ok(Classified { fused, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_weights_give_even_odds() {
        let mut g = Graph::new();
        let h_w = g.input(Tensor::filled(&[3], 0.4));
        let h_s = g.input(Tensor::filled(&[4], -1.0));
        let head = HeadVars {
            w3: g.zeros(&[7, 2]),
            b3: g.zeros(&[2]),
            w4: g.zeros(&[2, 2]),
            b4: g.zeros(&[2]),
        };
        let c = classify(&mut g, h_w, h_s, &head, &mut DropoutCtx::off()).unwrap();
        assert_eq!(g.value(c.probs).data(), &[0.5, 0.5]);
        assert_eq!(g.value(c.fused).shape(), &[7]);
    }
}
