//! Word-level Transformer encoder producing `h_w`.
//!
//! Each block is pre-normalized: `x + Dropout(Sublayer(LayerNorm(x)))`
//! for the self-attention and the feed-forward sublayers in turn.

use alloc::vec::Vec;

use super::{DropoutCtx, PoolingKind};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Graph handles for one block. `wq`, `wk` and `wv` are `d×d`; head `i`
/// uses columns `i·d/h .. (i+1)·d/h`.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSettings {
    pub heads: usize,
    pub ln_eps: f64,
}

/// Expands a key mask to one row per query.
fn key_mask_rows(mask: Option<&[bool]>, queries: usize) -> Option<Vec<bool>> {
    mask.map(|m| m.iter().copied().cycle().take(m.len() * queries).collect())
}

/// `softmax(QKᵀ/√d_k)` with masked keys at zero weight.
pub fn attention_weights(g: &mut Graph, q: Var, k: Var, key_mask: Option<&[bool]>) -> Result<Var> {
    let dk = g.value(q).cols();
    if g.value(k).cols() != dk {
        return Err(Error::shape("scaled_attention", "query and key widths differ"));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / libm::sqrt(dk as f64));
    let mask = key_mask_rows(key_mask, g.value(q).rows());
    g.softmax_rows(scaled, mask.as_deref())
}

/// `softmax(QKᵀ/√d_k)·V`.
pub fn scaled_attention(g: &mut Graph, q: Var, k: Var, v: Var, key_mask: Option<&[bool]>) -> Result<Var> {
    let w = attention_weights(g, q, k, key_mask)?;
    g.matmul(w, v)
}

/// Per-head attention over projected queries, keys and values, heads
/// concatenated and mapped through `W^O`.
pub fn multi_head(g: &mut Graph, x: Var, block: &BlockVars, heads: usize, mask: Option<&[bool]>) -> Result<Var> {
    let d = g.value(x).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape("multi_head", alloc::format!("{heads} heads for width {d}")));
    }
    let dh = d / heads;
    let q = g.matmul(x, block.wq)?;
    let k = g.matmul(x, block.wk)?;
    let v = g.matmul(x, block.wv)?;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, a, b)?;
        let kh = g.slice_cols(k, a, b)?;
        let vh = g.slice_cols(v, a, b)?;
        outs.push(scaled_attention(g, qh, kh, vh, mask)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
    g.matmul(cat, block.wo)
}

/// `GELU(x·W₁ + b₁)·W₂ + b₂`.
pub fn position_wise_ffn(g: &mut Graph, x: Var, block: &BlockVars) -> Result<Var> {
    let h = g.linear(x, block.w1, block.b1)?;
    let h = g.gelu(h);
    g.linear(h, block.w2, block.b2)
}

pub fn transformer_block(
    g: &mut Graph,
    x: Var,
    block: &BlockVars,
    settings: BlockSettings,
    mask: Option<&[bool]>,
    drop: &mut DropoutCtx<'_>,
) -> Result<Var> {
    let a = g.layer_norm(x, block.ln1_gain, block.ln1_bias, settings.ln_eps)?;
    let a = multi_head(g, a, block, settings.heads, mask)?;
    let a = drop.apply(g, a);
    let x = g.add(x, a)?;
    let f = g.layer_norm(x, block.ln2_gain, block.ln2_bias, settings.ln_eps)?;
    let f = position_wise_ffn(g, f, block)?;
    let f = drop.apply(g, f);
    g.add(x, f)
}

/// Runs every block, then pools the unmasked token rows into `h_w`.
pub fn encode_word_level(
    g: &mut Graph,
    x: Var,
    blocks: &[BlockVars],
    settings: BlockSettings,
    mask: &[bool],
    pooling: PoolingKind,
    drop: &mut DropoutCtx<'_>,
) -> Result<Var> {
    if blocks.is_empty() {
        return Err(Error::Empty("transformer block list"));
    }
    let mut h = x;
    for b in blocks {
        h = transformer_block(g, h, b, settings, Some(mask), drop)?;
    }
    match pooling {
        PoolingKind::Mean => g.masked_mean_rows(h, mask),
        PoolingKind::Max => {
            let real: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let rows: Vec<Var> = real
                .iter()
                .map(|&i| g.slice_rows(h, i, i + 1))
                .collect::<Result<_>>()?;
            let stacked = g.concat_rows(&rows)?;
            Ok(g.max_over_time(stacked))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
    }

    fn block(g: &mut Graph, d: usize, d_ff: usize, rng: &mut Rng) -> BlockVars {
        BlockVars {
            ln1_gain: g.input(Tensor::filled(&[d], 1.0)),
            ln1_bias: g.input(Tensor::zeros(&[d])),
            wq: g.input(random(&[d, d], rng)),
            wk: g.input(random(&[d, d], rng)),
            wv: g.input(random(&[d, d], rng)),
            wo: g.input(random(&[d, d], rng)),
            ln2_gain: g.input(Tensor::filled(&[d], 1.0)),
            ln2_bias: g.input(Tensor::zeros(&[d])),
            w1: g.input(random(&[d, d_ff], rng)),
            b1: g.input(random(&[d_ff], rng)),
            w2: g.input(random(&[d_ff, d], rng)),
            b2: g.input(random(&[d], rng)),
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut g = Graph::new();
        let q = g.input(m(&[&[0.3, -2.0]]));
        let v = g.input(m(&[&[5.0, 7.0]]));
        let out = scaled_attention(&mut g, q, q, v, None).unwrap();
        assert_eq!(g.value(out).data(), &[5.0, 7.0]);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut g = Graph::new();
        let q = g.input(m(&[&[1.0, 2.0], &[-1.0, 0.5]]));
        let k = g.input(m(&[&[0.4, 0.4], &[0.4, 0.4], &[0.4, 0.4]]));
        let v = g.input(m(&[&[1.0, 0.0], &[2.0, 3.0], &[6.0, 0.0]]));
        let out = scaled_attention(&mut g, q, k, v, None).unwrap();
        for r in 0..2 {
            assert!((g.value(out).at(r, 0) - 3.0).abs() < 1e-12);
            assert!((g.value(out).at(r, 1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_hand_value() {
        let mut g = Graph::new();
        let q = g.input(Tensor::identity(2));
        let v = g.input(m(&[&[1.0, 0.0], &[0.0, 2.0]]));
        let out = scaled_attention(&mut g, q, q, v, None).unwrap();
        let row = g.value(out).row(0);
        let e = libm::exp(1.0 / libm::sqrt(2.0));
        let p = e / (e + 1.0);
        assert!((p - 0.6698).abs() < 1e-4);
        assert!((row[0] - p).abs() < 1e-12 && (row[1] - 2.0 * (1.0 - p)).abs() < 1e-12);
        assert!((row[0] - 0.6698).abs() < 1e-4 && (row[1] - 0.6604).abs() < 1e-4);
    }

    #[test]
    fn zero_output_map_gives_zero() {
        let mut rng = Rng::new(1);
        let mut g = Graph::new();
        let mut b = block(&mut g, 4, 16, &mut rng);
        b.wo = g.input(Tensor::zeros(&[4, 4]));
        let x = g.input(random(&[3, 4], &mut rng));
        let out = multi_head(&mut g, x, &b, 2, None).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_head_with_identity_projections_is_attention() {
        let mut rng = Rng::new(2);
        let mut g = Graph::new();
        let mut b = block(&mut g, 3, 12, &mut rng);
        let id = g.input(Tensor::identity(3));
        (b.wq, b.wk, b.wv, b.wo) = (id, id, id, id);
        let x = g.input(random(&[4, 3], &mut rng));
        let mh = multi_head(&mut g, x, &b, 1, None).unwrap();
        let sa = scaled_attention(&mut g, x, x, x, None).unwrap();
        assert!(g.value(mh).max_abs_diff(g.value(sa)) < 1e-15);
    }

    #[test]
    fn ffn_cases() {
        let mut rng = Rng::new(3);
        let mut g = Graph::new();
        let mut b = block(&mut g, 2, 8, &mut rng);
        b.b1 = g.input(Tensor::zeros(&[8]));
        b.b2 = g.input(Tensor::zeros(&[2]));
        let zero = g.input(Tensor::zeros(&[3, 2]));
        let out = position_wise_ffn(&mut g, zero, &b).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));

        // W₁ selects coordinates, W₂ maps them back: gelu per coordinate
        let mut w1 = Tensor::zeros(&[2, 8]);
        w1.data_mut()[0] = 1.0;
        w1.data_mut()[8 + 1] = 1.0;
        let mut w2 = Tensor::zeros(&[8, 2]);
        w2.data_mut()[0] = 1.0;
        w2.data_mut()[2 + 1] = 1.0;
        b.w1 = g.input(w1);
        b.w2 = g.input(w2);
        let xv = m(&[&[-0.7, 1.3]]);
        let x = g.input(xv.clone());
        let out = position_wise_ffn(&mut g, x, &b).unwrap();
        for j in 0..2 {
            assert!((g.value(out).data()[j] - crate::ops::gelu(xv.data()[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn ffn_matches_straight_line_recomputation() {
        let mut rng = Rng::new(4);
        let (w1, b1, w2, b2) = (
            random(&[3, 12], &mut rng),
            random(&[12], &mut rng),
            random(&[12, 3], &mut rng),
            random(&[3], &mut rng),
        );
        let x = random(&[5, 3], &mut rng);
        let mut g = Graph::new();
        let mut b = block(&mut g, 3, 12, &mut rng);
        b.w1 = g.input(w1.clone());
        b.b1 = g.input(b1.clone());
        b.w2 = g.input(w2.clone());
        b.b2 = g.input(b2.clone());
        let vx = g.input(x.clone());
        let out = position_wise_ffn(&mut g, vx, &b).unwrap();
        for r in 0..5 {
            for c in 0..3 {
                let mut acc = b2.data()[c];
                for h in 0..12 {
                    let pre: f64 = (0..3).map(|i| x.at(r, i) * w1.at(i, h)).sum::<f64>() + b1.data()[h];
                    acc += crate::ops::gelu(pre) * w2.at(h, c);
                }
                assert!((g.value(out).at(r, c) - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_sublayers_are_identity() {
        let mut rng = Rng::new(5);
        let mut g = Graph::new();
        let mut b = block(&mut g, 4, 16, &mut rng);
        b.wo = g.input(Tensor::zeros(&[4, 4]));
        b.w2 = g.input(Tensor::zeros(&[16, 4]));
        b.b2 = g.input(Tensor::zeros(&[4]));
        let xv = random(&[3, 4], &mut rng);
        let x = g.input(xv.clone());
        let settings = BlockSettings { heads: 2, ln_eps: 1e-6 };
        let out = transformer_block(&mut g, x, &b, settings, None, &mut DropoutCtx::off()).unwrap();
        assert_eq!(g.value(out), &xv);
    }

    #[test]
    fn padding_does_not_leak_into_real_rows() {
        let mut rng = Rng::new(6);
        let mut g = Graph::new();
        let b = block(&mut g, 4, 16, &mut rng);
        let real = random(&[3, 4], &mut rng);
        let pad = random(&[2, 4], &mut rng);
        let settings = BlockSettings { heads: 2, ln_eps: 1e-6 };
        let short = g.input(real.clone());
        let mut data = real.data().to_vec();
        data.extend_from_slice(pad.data());
        let long = g.input(Tensor::new(&[5, 4], data).unwrap());
        let a = transformer_block(&mut g, short, &b, settings, Some(&[true; 3]), &mut DropoutCtx::off()).unwrap();
        let mask = [true, true, true, false, false];
        let c = transformer_block(&mut g, long, &b, settings, Some(&mask), &mut DropoutCtx::off()).unwrap();
        for r in 0..3 {
            for j in 0..4 {
                assert!((g.value(a).at(r, j) - g.value(c).at(r, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_identity_blocks_pool_to_token() {
        let mut rng = Rng::new(7);
        let mut g = Graph::new();
        let mut b = block(&mut g, 4, 16, &mut rng);
        b.wo = g.input(Tensor::zeros(&[4, 4]));
        b.w2 = g.input(Tensor::zeros(&[16, 4]));
        b.b2 = g.input(Tensor::zeros(&[4]));
        let xv = random(&[1, 4], &mut rng);
        let x = g.input(xv.clone());
        let settings = BlockSettings { heads: 2, ln_eps: 1e-6 };
        for pooling in [PoolingKind::Mean, PoolingKind::Max] {
            let h = encode_word_level(&mut g, x, &[b, b], settings, &[true], pooling, &mut DropoutCtx::off()).unwrap();
            assert_eq!(g.value(h).shape(), &[4]);
            assert_eq!(g.value(h).data(), xv.data());
        }
        let two = g.input(Tensor::new(&[2, 4], [xv.data(), xv.data()].concat()).unwrap());
        let h = encode_word_level(&mut g, two, &[b], settings, &[true, true], PoolingKind::Mean, &mut DropoutCtx::off()).unwrap();
        assert!(g.value(h).data().iter().zip(xv.data()).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}
