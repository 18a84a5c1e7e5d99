//! Segment-level relation network producing `h_s`.
//!
//! BL, L and AL are each convolved with shared multi-window kernel banks
//! and max-pooled into objects of width `k`. A stacked bi-GRU reads the
//! whole sentence into a context vector `h_g`. Four ordered object pairs,
//! each suffixed with `h_g`, pass through `g_θ`; their sum passes through
//! `f_φ`.

use alloc::vec::Vec;
use core::ops::Range;

use super::DropoutCtx;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Kernel bank `w×d×c` and bias `c` for one window size.
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub kernels: Var,
    pub bias: Var,
}

/// Input weights `d_in×3d_h`, recurrent weights `d_h×3d_h` and bias
/// `3d_h`; gate column blocks are ordered update, reset, candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
}

/// Forward and backward weights of one bi-GRU layer.
#[derive(Debug, Clone, Copy)]
pub struct BiGruVars {
    pub fwd: GruVars,
    pub bwd: GruVars,
}

/// `g_θ` and `f_φ`, each `affine → ReLU → affine`.
#[derive(Debug, Clone, Copy)]
pub struct RelationVars {
    pub g1_w: Var,
    pub g1_b: Var,
    pub g2_w: Var,
    pub g2_b: Var,
    pub f1_w: Var,
    pub f1_b: Var,
    pub f2_w: Var,
    pub f2_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ObjectSet {
    pub bl: Var,
    pub l: Var,
    pub al: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone)]
pub struct GruOutput {
    /// Hidden states in traversal order.
    pub states: Vec<Var>,
    pub final_state: Var,
}

/// Rows of one segment, padded with zero rows up to `min_len`.
pub fn segment_input(g: &mut Graph, x: Var, rows: Range<usize>, min_len: usize) -> Result<Var> {
    let d = g.value(x).cols();
    let len = rows.len();
    if len == 0 {
        return Ok(g.zeros(&[min_len.max(1), d]));
    }
    let seg = g.slice_rows(x, rows.start, rows.end)?;
    if len >= min_len {
        return Ok(seg);
    }
    let pad = g.zeros(&[min_len - len, d]);
    g.concat_rows(&[seg, pad])
}

/// One object per segment: every window bank is convolved, max-pooled,
/// and the pooled vectors are concatenated in bank order.
pub fn segment_objects(g: &mut Graph, x_bl: Var, x_l: Var, x_al: Var, banks: &[ConvVars]) -> Result<ObjectSet> {
    if banks.is_empty() {
        return Err(Error::Empty("kernel banks"));
    }
    let mut object = |x: Var| -> Result<Var> {
        let pooled = banks
            .iter()
            .map(|b| {
                let c = g.conv1d_same(x, b.kernels, b.bias)?;
                Ok(g.max_over_time(c))
            })
            .collect::<Result<Vec<_>>>()?;
        if pooled.len() == 1 {
            Ok(pooled[0])
        } else {
            g.concat_cols(&pooled)
        }
    };
    Ok(ObjectSet {
        bl: object(x_bl)?,
        l: object(x_l)?,
        al: object(x_al)?,
    })
}

/// Single-direction GRU:
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// ĥ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ ĥ
/// ```
pub fn gru_layer(g: &mut Graph, x: Var, h0: Var, weights: &GruVars, direction: Direction) -> Result<GruOutput> {
    let t_len = g.value(x).rows();
    let dh = g.value(h0).numel();
    if g.value(weights.u).shape() != [dh, 3 * dh] {
        return Err(Error::shape("gru_layer", "recurrent weights must be d_h x 3d_h"));
    }
    let xw = g.linear(x, weights.w, weights.b)?;
    let u_zr = g.slice_cols(weights.u, 0, 2 * dh)?;
    let u_h = g.slice_cols(weights.u, 2 * dh, 3 * dh)?;
    let order: Vec<usize> = match direction {
        Direction::Forward => (0..t_len).collect(),
        Direction::Backward => (0..t_len).rev().collect(),
    };
    let mut h = h0;
    let mut states = Vec::with_capacity(t_len);
    for t in order {
        let row = g.slice_rows(xw, t, t + 1)?;
        let row = g.reshape(row, &[3 * dh])?;
        let x_zr = g.slice_cols(row, 0, 2 * dh)?;
        let x_h = g.slice_cols(row, 2 * dh, 3 * dh)?;
        let h_zr = g.matmul(h, u_zr)?;
        let pre = g.add(x_zr, h_zr)?;
        let zr = g.sigmoid(pre);
        let z = g.slice_cols(zr, 0, dh)?;
        let r = g.slice_cols(zr, dh, 2 * dh)?;
        let rh = g.mul(r, h)?;
        let rh_u = g.matmul(rh, u_h)?;
        let cand_pre = g.add(x_h, rh_u)?;
        let cand = g.tanh(cand_pre);
        let step = g.sub(cand, h)?;
        let step = g.mul(z, step)?;
        h = g.add(h, step)?;
        states.push(h);
    }
    Ok(GruOutput {
        states,
        final_state: h,
    })
}

/// Stacked bi-GRU over the sentence. Returns the last layer's final
/// forward state concatenated with its final backward state. Outputs of
/// every layer but the last go through dropout.
pub fn sentence_context(g: &mut Graph, x: Var, layers: &[BiGruVars], drop: &mut DropoutCtx<'_>) -> Result<Var> {
    let (last, inner) = layers.split_last().ok_or(Error::Empty("bi-GRU layer list"))?;
    let mut input = x;
    for layer in inner {
        let dh = g.value(layer.fwd.u).rows();
        let h0 = g.zeros(&[dh]);
        let f = gru_layer(g, input, h0, &layer.fwd, Direction::Forward)?;
        let b = gru_layer(g, input, h0, &layer.bwd, Direction::Backward)?;
        let f_rows = g.concat_rows(&f.states)?;
        let b_time: Vec<Var> = b.states.iter().rev().copied().collect();
        let b_rows = g.concat_rows(&b_time)?;
        let both = g.concat_cols(&[f_rows, b_rows])?;
        input = drop.apply(g, both);
    }
    let dh = g.value(last.fwd.u).rows();
    let h0 = g.zeros(&[dh]);
    let f = gru_layer(g, input, h0, &last.fwd, Direction::Forward)?;
    let b = gru_layer(g, input, h0, &last.bwd, Direction::Backward)?;
    g.concat_cols(&[f.final_state, b.final_state])
}

/// Object-pair matrix with rows `BL∥L`, `L∥AL`, `BL∥AL`, `AL∥BL`, each
/// followed by `h_g`.
pub fn build_pairs(g: &mut Graph, objects: &ObjectSet, h_g: Var) -> Result<Var> {
    let ObjectSet { bl, l, al } = *objects;
    let rows = [
        g.concat_cols(&[bl, l, h_g])?,
        g.concat_cols(&[l, al, h_g])?,
        g.concat_cols(&[bl, al, h_g])?,
        g.concat_cols(&[al, bl, h_g])?,
    ];
    g.concat_rows(&rows)
}

/// `h_s = f_φ(Σ_rows g_θ(H_P))`.
pub fn relation_reason(g: &mut Graph, pairs: Var, rel: &RelationVars, drop: &mut DropoutCtx<'_>) -> Result<Var> {
    let a = g.linear(pairs, rel.g1_w, rel.g1_b)?;
    let a = g.relu(a);
    let a = drop.apply(g, a);
    let a = g.linear(a, rel.g2_w, rel.g2_b)?;
    let s = g.sum_rows(a);
    let b = g.linear(s, rel.f1_w, rel.f1_b)?;
    let b = g.relu(b);
    let b = drop.apply(g, b);
    g.linear(b, rel.f2_w, rel.f2_b)
}
