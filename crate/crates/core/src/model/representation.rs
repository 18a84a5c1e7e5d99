//! Summed token embeddings.
//!
//! The word-level encoder reads `word + position + segment`; the relation
//! network reads `word + segment`, since its convolutions see order on
//! their own.

use alloc::vec::Vec;

use super::DropoutCtx;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::text::{Vocabulary, OOV, PAD};

/// Word table with a record of which rows came from pretrained vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub pretrained: Vec<bool>,
}

const INIT_RANGE: f64 = 0.1;

impl EmbeddingTable {
    /// Uniform `±0.1` rows; the PAD row is zero.
    pub fn random(vocab_size: usize, d: usize, rng: &mut Rng) -> Self {
        let mut matrix = Tensor::zeros(&[vocab_size, d]);
        for (i, v) in matrix.data_mut().iter_mut().enumerate() {
            if i / d != PAD {
                *v = rng.uniform_range(-INIT_RANGE, INIT_RANGE);
            }
        }
        Self {
            matrix,
            pretrained: alloc::vec![false; vocab_size],
        }
    }

    /// Rows for tokens found by `lookup` are copied in; the rest (including
    /// the shared OOV row) are random.
    pub fn from_pretrained<'a>(
        vocab: &Vocabulary,
        d: usize,
        lookup: impl Fn(&str) -> Option<&'a [f64]>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut table = Self::random(vocab.len(), d, rng);
        for (id, token) in vocab.tokens().iter().enumerate() {
            if id == PAD || id == OOV {
                continue;
            }
            if let Some(vec) = lookup(token) {
                if vec.len() != d {
                    return Err(Error::shape(
                        "embedding table",
                        alloc::format!("vector for {token:?} has {} values, expected {d}", vec.len()),
                    ));
                }
                table.matrix.data_mut()[id * d..(id + 1) * d].copy_from_slice(vec);
                table.pretrained[id] = true;
            }
        }
        Ok(table)
    }
}

/// Fixed sinusoidal table, `sin` on even and `cos` on odd columns.
pub fn sinusoidal_table(max_len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[max_len, d]);
    for pos in 0..max_len {
        for j in 0..d {
            let rate = libm::pow(10_000.0, (2 * (j / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            t.data_mut()[pos * d + j] = if j % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            };
        }
    }
    t
}

/// Graph handles for the three tables.
#[derive(Debug, Clone, Copy)]
pub struct RepresentationVars {
    pub word: Var,
    pub position: Var,
    pub segment: Var,
}

/// `x_i = word[ids_i] + position[positions_i] + segment[segment_ids_i]`,
/// followed by dropout.
pub fn represent_full(
    g: &mut Graph,
    tables: &RepresentationVars,
    ids: &[usize],
    positions: &[usize],
    segment_ids: &[usize],
    drop: &mut DropoutCtx<'_>,
) -> Result<Var> {
    let w = g.gather(tables.word, ids)?;
    let p = g.gather(tables.position, positions)?;
    let s = g.gather(tables.segment, segment_ids)?;
    let x = g.add_n(&[w, p, s])?;
    Ok(drop.apply(g, x))
}

/// `x_i = word[ids_i] + segment[segment_ids_i]`, followed by dropout.
pub fn represent_scrn(
    g: &mut Graph,
    tables: &RepresentationVars,
    ids: &[usize],
    segment_ids: &[usize],
    drop: &mut DropoutCtx<'_>,
) -> Result<Var> {
    let w = g.gather(tables.word, ids)?;
    let s = g.gather(tables.segment, segment_ids)?;
    let x = g.add(w, s)?;
    Ok(drop.apply(g, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tables(g: &mut Graph, word: Tensor, pos: Tensor, seg: Tensor) -> RepresentationVars {
        RepresentationVars {
            word: g.input(word),
            position: g.input(pos),
            segment: g.input(seg),
        }
    }

    #[test]
    fn zero_tables_give_zero() {
        let mut g = Graph::new();
        let t = tables(&mut g, Tensor::zeros(&[5, 3]), Tensor::zeros(&[4, 3]), Tensor::zeros(&[4, 3]));
        let x = represent_full(&mut g, &t, &[2, 3], &[0, 1], &[0, 1], &mut DropoutCtx::off()).unwrap();
        assert!(g.value(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_tables_sum_rows() {
        // word row i = e_i, position row p = 10·e_p, segment row s = 100·e_s
        let mut word = Tensor::zeros(&[3, 3]);
        let mut pos = Tensor::zeros(&[3, 3]);
        let mut seg = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            word.data_mut()[i * 3 + i] = 1.0;
            pos.data_mut()[i * 3 + i] = 10.0;
            seg.data_mut()[i * 3 + i] = 100.0;
        }
        let mut g = Graph::new();
        let t = tables(&mut g, word, pos, seg);
        let x = represent_full(&mut g, &t, &[1, 2], &[0, 2], &[2, 2], &mut DropoutCtx::off()).unwrap();
        assert_eq!(g.value(x).data(), &[10.0, 1.0, 100.0, 0.0, 0.0, 111.0]);
    }

    #[test]
    fn positions_shift_by_table_difference() {
        let mut rng = Rng::new(3);
        let word = EmbeddingTable::random(4, 2, &mut rng).matrix;
        let pos = EmbeddingTable::random(4, 2, &mut rng).matrix;
        let seg = EmbeddingTable::random(4, 2, &mut rng).matrix;
        let diff: Vec<f64> = (0..2).map(|j| pos.at(3, j) - pos.at(1, j)).collect();
        let mut g = Graph::new();
        let t = tables(&mut g, word, pos, seg);
        let x = represent_full(&mut g, &t, &[2, 2], &[1, 3], &[0, 0], &mut DropoutCtx::off()).unwrap();
        let v = g.value(x);
        for j in 0..2 {
            assert!((v.at(1, j) - v.at(0, j) - diff[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn scrn_variant_ignores_positions() {
        let mut g = Graph::new();
        let t = tables(&mut g, Tensor::zeros(&[3, 2]), Tensor::filled(&[3, 2], 0.5), Tensor::zeros(&[4, 2]));
        let s = represent_scrn(&mut g, &t, &[1, 2], &[0, 1], &mut DropoutCtx::off()).unwrap();
        let f = represent_full(&mut g, &t, &[1, 2], &[0, 1], &[0, 1], &mut DropoutCtx::off()).unwrap();
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
        assert!(g.value(f).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn scrn_is_permutation_equivariant() {
        let mut rng = Rng::new(5);
        let word = EmbeddingTable::random(6, 3, &mut rng).matrix;
        let seg = EmbeddingTable::random(4, 3, &mut rng).matrix;
        let mut g = Graph::new();
        let t = tables(&mut g, word, Tensor::zeros(&[4, 3]), seg);
        let a = represent_scrn(&mut g, &t, &[2, 3, 5], &[0, 1, 2], &mut DropoutCtx::off()).unwrap();
        let b = represent_scrn(&mut g, &t, &[5, 2, 3], &[2, 0, 1], &mut DropoutCtx::off()).unwrap();
        let (va, vb) = (g.value(a), g.value(b));
        for (pa, pb) in [(0, 1), (1, 2), (2, 0)] {
            assert_eq!(va.row(pa), vb.row(pb));
        }
    }

    #[test]
    fn pretrained_rows_copied() {
        let vocab = Vocabulary::from_tokens(vec!["rain".into(), "sun".into()]);
        let rain = [0.25, -0.5];
        let t = EmbeddingTable::from_pretrained(&vocab, 2, |tok| (tok == "rain").then_some(&rain[..]), &mut Rng::new(1)).unwrap();
        assert_eq!(t.matrix.row(2), &rain);
        assert_eq!(t.matrix.row(PAD), &[0.0, 0.0]);
        assert_eq!(t.pretrained, [false, false, true, false]);
    }

    #[test]
    fn sinusoid_first_row() {
        let t = sinusoidal_table(3, 4);
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((t.at(1, 0) - libm::sin(1.0)).abs() < 1e-15);
    }
}
