//! The full network: summed embeddings feed a word-level Transformer
//! (`h_w`) and a segment-level relation network (`h_s`); their
//! concatenation is classified by a small feed-forward head.

mod config;
pub mod head;
pub mod representation;
pub mod scrn;
pub mod word;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use config::{ModelConfig, PoolingKind, PositionKind};
pub use representation::EmbeddingTable;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::gradcheck::{check_params, GradCheckReport};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::text::{EncodedExample, SegmentId, Vocabulary, PAD, SEGMENT_KINDS};

use head::HeadVars;
use representation::RepresentationVars;
use scrn::{BiGruVars, ConvVars, GruVars, ObjectSet, RelationVars};
use word::{BlockSettings, BlockVars};

/// Dropout rate plus the random stream that draws masks; inactive when
/// built with [`DropoutCtx::off`].
#[derive(Debug)]
pub struct DropoutCtx<'a> {
    rate: f64,
    rng: Option<&'a mut Rng>,
}

impl<'a> DropoutCtx<'a> {
    pub fn off() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'a mut Rng) -> Self {
        Self { rate, rng: Some(rng) }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        match self.rng.as_deref_mut() {
            Some(rng) => g.dropout(x, self.rate, rng, true),
            None => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockIds([ParamId; 12]);

#[derive(Debug, Clone, PartialEq)]
struct ParamIds {
    word: ParamId,
    position: ParamId,
    segment: ParamId,
    blocks: Vec<BlockIds>,
    convs: Vec<(ParamId, ParamId)>,
    grus: Vec<[[ParamId; 3]; 2]>,
    relation: [ParamId; 8],
    head: [ParamId; 4],
}

/// Graph handles for every parameter.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub repr: RepresentationVars,
    pub blocks: Vec<BlockVars>,
    pub convs: Vec<ConvVars>,
    pub grus: Vec<BiGruVars>,
    pub relation: RelationVars,
    pub head: HeadVars,
}

/// Intermediate nodes of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub h_w: Var,
    pub objects: ObjectSet,
    pub h_g: Var,
    pub pairs: Var,
    pub h_s: Var,
    pub h_u: Var,
    /// `[P(non-causal), P(causal)]`.
    pub probs: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mcdn {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    ids: ParamIds,
}

fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-limit, limit)).collect();
    Tensor::new(shape, data).expect("nonzero extents")
}

fn matrix(store: &mut ParamStore, name: String, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
    store.add(name, xavier(&[rows, cols], rows, cols, rng))
}

const EMBED_RANGE: f64 = 0.1;

impl Mcdn {
    /// Fresh model. Word vectors come from `embeddings` when given, else
    /// they are drawn at random.
    pub fn new(config: ModelConfig, vocab: Vocabulary, embeddings: Option<EmbeddingTable>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let table = match embeddings {
            Some(t) => t,
            None => EmbeddingTable::random(vocab.len(), d, rng),
        };
        if table.matrix.shape() != [vocab.len(), d] {
            return Err(Error::shape(
                "Mcdn::new",
                format!("embedding table {:?} for {} tokens at d={d}", table.matrix.shape(), vocab.len()),
            ));
        }

        let mut store = ParamStore::new();
        let word = store.add("embed.word", table.matrix);
        let free_rows = table
            .pretrained
            .iter()
            .enumerate()
            .map(|(i, &pre)| i != PAD && !(pre && config.freeze_embeddings))
            .collect();
        store.set_row_mask(word, free_rows);

        let position = match config.positions {
            PositionKind::Learned => {
                let data = (0..config.max_len * d)
                    .map(|_| rng.uniform_range(-EMBED_RANGE, EMBED_RANGE))
                    .collect();
                store.add("embed.position", Tensor::new(&[config.max_len, d], data)?)
            }
            PositionKind::Sinusoidal => {
                let mut t = representation::sinusoidal_table(config.max_len, d);
                t.set_trainable(false);
                store.add("embed.position", t)
            }
        };
        let seg_data = (0..SEGMENT_KINDS * d)
            .map(|_| rng.uniform_range(-EMBED_RANGE, EMBED_RANGE))
            .collect();
        let segment = store.add("embed.segment", Tensor::new(&[SEGMENT_KINDS, d], seg_data)?);

        let d_ff = config.d_ff();
        let blocks = (0..config.n_blocks)
            .map(|i| {
                let p = |s: &str| format!("word.{i}.{s}");
                BlockIds([
                    store.add(p("ln1.gain"), Tensor::filled(&[d], 1.0)),
                    store.add(p("ln1.bias"), Tensor::zeros(&[d])),
                    matrix(&mut store, p("wq"), d, d, rng),
                    matrix(&mut store, p("wk"), d, d, rng),
                    matrix(&mut store, p("wv"), d, d, rng),
                    matrix(&mut store, p("wo"), d, d, rng),
                    store.add(p("ln2.gain"), Tensor::filled(&[d], 1.0)),
                    store.add(p("ln2.bias"), Tensor::zeros(&[d])),
                    matrix(&mut store, p("w1"), d, d_ff, rng),
                    store.add(p("b1"), Tensor::zeros(&[d_ff])),
                    matrix(&mut store, p("w2"), d_ff, d, rng),
                    store.add(p("b2"), Tensor::zeros(&[d])),
                ])
            })
            .collect();

        let convs = config
            .windows
            .iter()
            .zip(config.window_channels())
            .map(|(&w, c)| {
                let k = store.add(format!("scrn.conv{w}.kernels"), xavier(&[w, d, c], w * d, c, rng));
                let b = store.add(format!("scrn.conv{w}.bias"), Tensor::zeros(&[c]));
                (k, b)
            })
            .collect();

        let dg = config.dg;
        let grus = (0..config.gru_layers)
            .map(|l| {
                let d_in = if l == 0 { d } else { 2 * dg };
                ["fwd", "bwd"].map(|dir| {
                    let p = |s: &str| format!("scrn.gru{l}.{dir}.{s}");
                    [
                        store.add(p("w"), xavier(&[d_in, 3 * dg], d_in, dg, rng)),
                        store.add(p("u"), xavier(&[dg, 3 * dg], dg, dg, rng)),
                        store.add(p("b"), Tensor::zeros(&[3 * dg])),
                    ]
                })
            })
            .collect();

        let (pw, rw) = (config.pair_width(), config.relation_width());
        let relation = [
            matrix(&mut store, "scrn.g1.w".into(), pw, rw, rng),
            store.add("scrn.g1.b", Tensor::zeros(&[rw])),
            matrix(&mut store, "scrn.g2.w".into(), rw, rw, rng),
            store.add("scrn.g2.b", Tensor::zeros(&[rw])),
            matrix(&mut store, "scrn.f1.w".into(), rw, rw, rng),
            store.add("scrn.f1.b", Tensor::zeros(&[rw])),
            matrix(&mut store, "scrn.f2.w".into(), rw, rw, rng),
            store.add("scrn.f2.b", Tensor::zeros(&[rw])),
        ];
        let head = [
            matrix(&mut store, "head.w3".into(), config.fused_width(), dg, rng),
            store.add("head.b3", Tensor::zeros(&[dg])),
            matrix(&mut store, "head.w4".into(), dg, 2, rng),
            store.add("head.b4", Tensor::zeros(&[2])),
        ];

        Ok(Self {
            config,
            vocab,
            params: store,
            ids: ParamIds {
                word,
                position,
                segment,
                blocks,
                convs,
                grus,
                relation,
                head,
            },
        })
    }

    /// Rebuilds a model from stored parameter values, matched by name.
    pub fn from_store(config: ModelConfig, vocab: Vocabulary, store: &ParamStore) -> Result<Self> {
        let mut model = Self::new(config, vocab, None, &mut Rng::new(0))?;
        model.params.load_values(store)?;
        Ok(model)
    }

    /// Binds every parameter of `store` (laid out like `self.params`) into
    /// `g`.
    pub fn bind(&self, g: &mut Graph, store: &ParamStore) -> ModelVars {
        let ids = &self.ids;
        let mut p = |id: ParamId| g.param(store, id);
        ModelVars {
            repr: RepresentationVars {
                word: p(ids.word),
                position: p(ids.position),
                segment: p(ids.segment),
            },
            blocks: ids
                .blocks
                .iter()
                .map(|b| {
                    let v = b.0.map(&mut p);
                    BlockVars {
                        ln1_gain: v[0],
                        ln1_bias: v[1],
                        wq: v[2],
                        wk: v[3],
                        wv: v[4],
                        wo: v[5],
                        ln2_gain: v[6],
                        ln2_bias: v[7],
                        w1: v[8],
                        b1: v[9],
                        w2: v[10],
                        b2: v[11],
                    }
                })
                .collect(),
            convs: ids
                .convs
                .iter()
                .map(|&(k, b)| ConvVars {
                    kernels: p(k),
                    bias: p(b),
                })
                .collect(),
            grus: ids
                .grus
                .iter()
                .map(|layer| {
                    let [f, b] = layer.map(|[w, u, b]| GruVars {
                        w: p(w),
                        u: p(u),
                        b: p(b),
                    });
                    BiGruVars { fwd: f, bwd: b }
                })
                .collect(),
            relation: {
                let v = ids.relation.map(&mut p);
                RelationVars {
                    g1_w: v[0],
                    g1_b: v[1],
                    g2_w: v[2],
                    g2_b: v[3],
                    f1_w: v[4],
                    f1_b: v[5],
                    f2_w: v[6],
                    f2_b: v[7],
                }
            },
            head: {
                let v = ids.head.map(&mut p);
                HeadVars {
                    w3: v[0],
                    b3: v[1],
                    w4: v[2],
                    b4: v[3],
                }
            },
        }
    }

    /// One example through both encoders and the head. The word-level path
    /// sees every row under the mask; the relation path sees only the real
    /// tokens.
    pub fn forward(&self, g: &mut Graph, vars: &ModelVars, ex: &EncodedExample, drop: &mut DropoutCtx<'_>) -> Result<Forward> {
        let cfg = &self.config;
        let real = ex.real_len();
        if real == 0 {
            return Err(Error::Empty("example tokens"));
        }
        if ex.mask[..real].iter().any(|&m| !m) {
            return Err(Error::shape("forward", "real tokens must precede padding"));
        }

        let x = representation::represent_full(g, &vars.repr, &ex.ids, &ex.positions, &ex.segment_ids, drop)?;
        let settings = BlockSettings {
            heads: cfg.heads,
            ln_eps: cfg.ln_eps,
        };
        let h_w = word::encode_word_level(g, x, &vars.blocks, settings, &ex.mask, cfg.pooling, drop)?;

        let xs = representation::represent_scrn(g, &vars.repr, &ex.ids[..real], &ex.segment_ids[..real], drop)?;
        let min_len = cfg.max_window();
        let x_bl = scrn::segment_input(g, xs, ex.segment_rows(SegmentId::Before), min_len)?;
        let x_l = scrn::segment_input(g, xs, ex.segment_rows(SegmentId::AltLex), min_len)?;
        let x_al = scrn::segment_input(g, xs, ex.segment_rows(SegmentId::After), min_len)?;
        let objects = scrn::segment_objects(g, x_bl, x_l, x_al, &vars.convs)?;
        let h_g = scrn::sentence_context(g, xs, &vars.grus, drop)?;
        let pairs = scrn::build_pairs(g, &objects, h_g)?;
        let h_s = scrn::relation_reason(g, pairs, &vars.relation, drop)?;

        let c = head::classify(g, h_w, h_s, &vars.head, drop)?;
        Ok(Forward {
            h_w,
            objects,
            h_g,
            pairs,
            h_s,
            h_u: c.fused,
            probs: c.probs,
        })
    }

    /// Mean focal loss over `batch` plus `λ·Σθ²` over every free
    /// coordinate, evaluated with the parameters in `store`.
    pub fn objective_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        batch: &[EncodedExample],
        drop: &mut DropoutCtx<'_>,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let vars = self.bind(g, store);
        let mut losses = Vec::with_capacity(batch.len());
        for (i, ex) in batch.iter().enumerate() {
            let label = ex.label.ok_or(Error::MissingLabel { index: i })?;
            let f = self.forward(g, &vars, ex, drop)?;
            let p = g.select(f.probs, 1)?;
            losses.push(g.focal_loss(p, label == 1, self.config.loss)?);
        }
        let focal = g.mean(&losses)?;
        if self.config.loss.l2 == 0.0 {
            return Ok(focal);
        }
        let mut squares = Vec::new();
        for id in store.ids() {
            let param = store.param(id);
            if !param.tensor.trainable() {
                continue;
            }
            let v = g.param(store, id);
            squares.push(g.sum_squares(v, param.row_mask.clone()));
        }
        let total = g.add_n(&squares)?;
        let penalty = g.scale(total, self.config.loss.l2);
        g.add(focal, penalty)
    }

    pub fn objective(&self, g: &mut Graph, batch: &[EncodedExample], drop: &mut DropoutCtx<'_>) -> Result<Var> {
        self.objective_with(g, &self.params, batch, drop)
    }

    /// Class probabilities with dropout off.
    pub fn predict(&self, ex: &EncodedExample) -> Result<[f64; 2]> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, &self.params);
        let f = self.forward(&mut g, &vars, ex, &mut DropoutCtx::off())?;
        let p = g.value(f.probs).data();
        Ok([p[0], p[1]])
    }

    /// Causal probabilities for many examples, sharing one graph per
    /// `chunk` examples.
    pub fn predict_causal(&self, examples: &[EncodedExample], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(examples.len());
        for part in examples.chunks(chunk.max(1)) {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, &self.params);
            for ex in part {
                let f = self.forward(&mut g, &vars, ex, &mut DropoutCtx::off())?;
                out.push(g.value(f.probs).data()[1]);
            }
        }
        Ok(out)
    }

    /// Compares backpropagated gradients of the objective on `batch`
    /// against central differences at step `eps`, over every free
    /// coordinate. Dropout is off.
    pub fn gradient_check(&self, batch: &[EncodedExample], eps: f64) -> Result<GradCheckReport> {
        let mut store = self.params.clone();
        store.zero_grads();
        let mut g = Graph::new();
        let loss = self.objective_with(&mut g, &store, batch, &mut DropoutCtx::off())?;
        g.backward_into(loss, &mut store)?;
        let ids: Vec<ParamId> = store.ids().collect();
        let mut failure = None;
        let report = check_params(&mut store, ids, eps, |s| {
            let mut g = Graph::new();
            match self.objective_with(&mut g, s, batch, &mut DropoutCtx::off()) {
                Ok(v) => g.scalar(v),
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{encode_example, segment, SegmentedExample};
    use alloc::string::ToString;
    use alloc::vec;

    fn small() -> ModelConfig {
        ModelConfig {
            d: 8,
            n_blocks: 1,
            heads: 2,
            k: 6,
            dg: 4,
            gru_layers: 2,
            max_len: 16,
            ..ModelConfig::default()
        }
    }

    fn example(words: &[&str], l: core::ops::Range<usize>, label: u8) -> SegmentedExample {
        SegmentedExample {
            tokens: words.iter().map(|w| w.to_string()).collect(),
            segments: segment(words.len(), l).unwrap(),
            label: Some(label),
            no_altlex: false,
        }
    }

    fn setup() -> (Mcdn, Vec<EncodedExample>) {
        let exs = [
            example(&["rain", "so", "wet", "ground"], 1..2, 1),
            example(&["he", "came", "then", "left"], 2..3, 0),
        ];
        let vocab = Vocabulary::from_corpus(exs.iter().map(|e| e.tokens.as_slice()));
        let model = Mcdn::new(small(), vocab, None, &mut Rng::new(5)).unwrap();
        let enc = exs.iter().map(|e| encode_example(e, &model.vocab, 16).unwrap()).collect();
        (model, enc)
    }

    #[test]
    fn widths() {
        let (model, enc) = setup();
        let mut g = Graph::new();
        let vars = model.bind(&mut g, &model.params);
        let f = model.forward(&mut g, &vars, &enc[0], &mut DropoutCtx::off()).unwrap();
        assert_eq!(g.shape(f.h_w), &[8]);
        assert_eq!(g.shape(f.objects.bl), &[6]);
        assert_eq!(g.shape(f.h_g), &[8]);
        assert_eq!(g.shape(f.pairs), &[4, 20]);
        assert_eq!(g.shape(f.h_s), &[16]);
        assert_eq!(g.shape(f.h_u), &[24]);
        let p = g.value(f.probs).data();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pad_row_is_frozen_and_zero() {
        let (model, _) = setup();
        let id = model.params.find("embed.word").unwrap();
        let p = model.params.param(id);
        assert!(p.tensor.row(PAD).iter().all(|&v| v == 0.0));
        assert!(!p.is_free(0));
        assert!(p.is_free(model.config.d));
    }

    #[test]
    fn objective_includes_penalty() {
        let (mut model, enc) = setup();
        let mut g = Graph::new();
        let with = model.objective(&mut g, &enc, &mut DropoutCtx::off()).unwrap();
        let with = g.scalar(with);
        model.config.loss.l2 = 0.0;
        let mut g = Graph::new();
        let without = model.objective(&mut g, &enc, &mut DropoutCtx::off()).unwrap();
        let without = g.scalar(without);
        let sq: f64 = model
            .params
            .iter()
            .map(|p| (0..p.tensor.numel()).filter(|&i| p.is_free(i)).map(|i| p.tensor.data()[i].powi(2)).sum::<f64>())
            .sum();
        assert!((with - without - 3e-4 * sq).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, enc) = setup();
        let report = model.gradient_check(&enc, 1e-5).unwrap();
        assert!(report.checked > 1000);
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn from_store_round_trip() {
        let (model, enc) = setup();
        let copy = Mcdn::from_store(model.config.clone(), model.vocab.clone(), &model.params).unwrap();
        assert_eq!(copy.predict(&enc[1]).unwrap(), model.predict(&enc[1]).unwrap());
    }

    #[test]
    fn rejects_bad_table() {
        let vocab = Vocabulary::from_tokens(vec!["a".to_string()]);
        let table = EmbeddingTable::random(vocab.len(), 4, &mut Rng::new(0));
        assert!(Mcdn::new(small(), vocab, Some(table), &mut Rng::new(0)).is_err());
    }
}
