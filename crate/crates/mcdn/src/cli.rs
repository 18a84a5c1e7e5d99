//! `mcdn train | eval | predict | segment | gradcheck`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mcdn_core::model::EmbeddingTable;
use mcdn_core::text::{encode_example, segment_with_lexicon, tokenize, AltLexLexicon, Vocabulary};
use mcdn_core::{evaluate, train, Mcdn, MetricsReport, Rng};
use serde_json::{json, Value};

use crate::config::{parse_config, RunConfig};
use crate::dataset::{encode_all, load_labelled, load_lexicon, load_records, load_sentences, segment_record};
use crate::embeddings::load_word2vec_text;
use crate::error::{exit, Error, ParseError, ParseErrorKind, Result};
use crate::{checkpoint, synthetic};

#[derive(Debug, Parser)]
#[command(name = "mcdn", version, about = "Sentence-level causality detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Score a labelled dataset and write metrics as JSON.
    Eval(EvalArgs),
    /// Classify raw sentences, one per line.
    Predict(PredictArgs),
    /// Write the BL / L / AL spans of each sentence.
    Segment(SegmentArgs),
    /// Compare backpropagated gradients against finite differences on a
    /// small random model.
    Gradcheck(GradcheckArgs),
}

/// Per-field overrides of the configuration file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n_blocks: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dg: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
}

impl Overrides {
    pub fn pairs(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        let mut f = |k, v: Option<f64>| {
            if let Some(v) = v {
                out.push((k, json!(v)));
            }
        };
        f("lr", self.lr);
        f("alpha", self.alpha);
        f("beta", self.beta);
        f("dropout", self.dropout);
        f("l2", self.l2);
        f("clip_norm", self.clip_norm);
        let mut u = |k, v: Option<usize>| {
            if let Some(v) = v {
                out.push((k, json!(v)));
            }
        };
        u("batch", self.batch);
        u("epochs", self.epochs);
        u("d", self.d);
        u("n_blocks", self.n_blocks);
        u("heads", self.heads);
        u("k", self.k);
        u("dg", self.dg);
        u("max_len", self.max_len);
        out
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Also score this labelled set after training.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Marker phrases for records without an `altlex` span.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Pretrained vectors in word2vec text format; their width sets `d`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub model: PathBuf,
    /// Epoch log (JSON Lines); defaults to the checkpoint path with
    /// `.log.jsonl` appended.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent runs with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, visible_alias = "data")]
    pub test: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Plain text, one sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Plain text, one sentence per line.
    #[arg(long, required_unless_present = "data", conflicts_with = "data")]
    pub input: Option<PathBuf>,
    /// JSON Lines dataset; explicit `altlex` spans take precedence.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

/// Parses `argv` and runs the chosen subcommand. Returns the exit status.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                exit::USAGE
            } else {
                let _ = write!(stdout, "{}", e.render());
                exit::OK
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, stdout, stderr),
        Command::Eval(a) => cmd_eval(&a, stdout),
        Command::Predict(a) => cmd_predict(&a, stdout),
        Command::Segment(a) => cmd_segment(&a, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(&a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

/// Writes to `path`, or to `fallback` when absent.
fn sink<'a>(path: Option<&Path>, fallback: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(fallback),
    })
}

fn emit(w: &mut dyn Write, path: Option<&Path>, value: &Value) -> Result<()> {
    writeln!(w, "{value}").map_err(|e| Error::io(path.unwrap_or(Path::new("<stdout>")), e))
}

fn finish(mut w: Box<dyn Write + '_>, path: Option<&Path>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path.unwrap_or(Path::new("<stdout>")), e))
}

fn opt_lexicon(path: Option<&Path>) -> Result<Option<AltLexLexicon>> {
    path.map(load_lexicon).transpose()
}

fn metrics_json(m: &MetricsReport) -> Value {
    serde_json::to_value(m).expect("metrics serialize")
}

/// Merged configuration and the keys that were set explicitly.
fn effective_config(a: &TrainArgs) -> Result<(RunConfig, BTreeSet<String>)> {
    let mut cfg = RunConfig::default();
    let mut explicit = BTreeSet::new();
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let doc = parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        explicit.extend(doc.keys().cloned());
        cfg.merge(doc)?;
    }
    let mut pairs = a.overrides.pairs();
    if let Some(s) = a.seed {
        pairs.push(("seed", json!(s)));
    }
    for (k, v) in pairs {
        explicit.insert(k.to_owned());
        cfg.set(k, v)?;
    }
    Ok((cfg, explicit))
}

fn run_path(base: &Path, run: usize, runs: usize) -> PathBuf {
    if runs == 1 {
        return base.to_owned();
    }
    let mut s = base.as_os_str().to_owned();
    s.push(format!(".run{run}"));
    PathBuf::from(s)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<u8> {
    if a.runs == 0 {
        return Err(Error::Config("--runs must be positive".into()));
    }
    let (mut cfg, explicit) = effective_config(a)?;
    let embeddings = a.embeddings.as_deref().map(load_word2vec_text).transpose()?;
    if let Some(e) = &embeddings {
        if explicit.contains("d") && cfg.model.d != e.dim() {
            return Err(Error::Config(format!(
                "d = {} but the embedding file has {} dimensions",
                cfg.model.d,
                e.dim()
            )));
        }
        cfg.model.d = e.dim();
    }
    cfg.validate()?;

    let lexicon = opt_lexicon(a.lexicon.as_deref())?;
    let train_ex = load_labelled(&a.train, lexicon.as_ref())?;
    let valid_ex = load_labelled(&a.valid, lexicon.as_ref())?;
    let test_ex = a.test.as_deref().map(|p| load_labelled(p, lexicon.as_ref())).transpose()?;

    let corpus = train_ex.iter().map(|e| e.item.tokens.as_slice());
    let vocab = match &embeddings {
        Some(e) => Vocabulary::build(corpus, &e.token_set()),
        None => Vocabulary::from_corpus(corpus),
    };
    let max_len = cfg.model.max_len;
    let train_enc = encode_all(&train_ex, &vocab, max_len, &a.train)?;
    let valid_enc = encode_all(&valid_ex, &vocab, max_len, &a.valid)?;
    let test_enc = match (&test_ex, &a.test) {
        (Some(ex), Some(p)) => Some(encode_all(ex, &vocab, max_len, p)?),
        _ => None,
    };

    let log_path = a.output.clone().unwrap_or_else(|| {
        let mut s = a.model.as_os_str().to_owned();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let mut log = sink(Some(&log_path), stdout)?;
    let lp = Some(log_path.as_path());
    let base_seed = cfg.train.seed;
    let (mut valid_f1s, mut test_f1s) = (Vec::new(), Vec::new());

    for run in 0..a.runs {
        let mut run_cfg = cfg.clone();
        run_cfg.train.seed = base_seed + run as u64;
        let seed = run_cfg.train.seed;
        emit(&mut log, lp, &json!({"run": run, "seed": seed, "config": run_cfg.to_json()}))?;

        let mut init_rng = Rng::new(seed).fork(0);
        let table = match &embeddings {
            Some(e) => Some(EmbeddingTable::from_pretrained(&vocab, e.dim(), |t| e.get(t), &mut init_rng)?),
            None => None,
        };
        let mut model = Mcdn::new(run_cfg.model.clone(), vocab.clone(), table, &mut init_rng)?;
        let mut write_err = None;
        let outcome = train(&mut model, &train_enc, &valid_enc, &run_cfg.train, |entry| {
            let mut row = serde_json::to_value(entry).expect("epoch log serializes");
            row["run"] = json!(run);
            let _ = writeln!(
                stderr,
                "run {run} epoch {}: loss {:.6} valid F1 {:.4} lr {:e}",
                entry.epoch, entry.train_loss, entry.valid_f1, entry.lr
            );
            if let Err(e) = emit(&mut log, lp, &row) {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(e);
        }
        // Score exactly what the checkpoint will hold.
        model.params.round_to_f32();
        let valid = evaluate(&model, &valid_enc)?;
        let test = test_enc.as_deref().map(|t| evaluate(&model, t)).transpose()?;
        let path = run_path(&a.model, run, a.runs);
        checkpoint::save(&model, &run_cfg.train, &path)?;
        valid_f1s.push(valid.f1);
        if let Some(t) = &test {
            test_f1s.push(t.f1);
        }
        emit(
            &mut log,
            lp,
            &json!({
                "run": run,
                "seed": seed,
                "best_epoch": outcome.best_epoch,
                "checkpoint": path.display().to_string(),
                "valid": metrics_json(&valid),
                "test": test.as_ref().map(metrics_json),
            }),
        )?;
    }
    if a.runs > 1 {
        let (vm, vs) = mean_std(&valid_f1s);
        let mut summary = json!({"runs": a.runs, "valid_F1_mean": vm, "valid_F1_std": vs});
        if !test_f1s.is_empty() {
            let (tm, ts) = mean_std(&test_f1s);
            summary["test_F1_mean"] = json!(tm);
            summary["test_F1_std"] = json!(ts);
        }
        emit(&mut log, lp, &json!({"summary": summary}))?;
    }
    finish(log, lp)?;
    Ok(exit::OK)
}

fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<u8> {
    let (model, train_cfg) = checkpoint::load(&a.model)?;
    let lexicon = opt_lexicon(a.lexicon.as_deref())?;
    let data = load_labelled(&a.test, lexicon.as_ref())?;
    let enc = encode_all(&data, &model.vocab, model.config.max_len, &a.test)?;
    let report = evaluate(&model, &enc)?;
    let run = RunConfig {
        model: model.config.clone(),
        train: train_cfg,
    };
    let out = json!({
        "metrics": metrics_json(&report),
        "config": run.to_json(),
        "seed": run.train.seed,
        "model": a.model.display().to_string(),
        "data": a.test.display().to_string(),
    });
    let path = a.output.as_deref();
    let mut w = sink(path, stdout)?;
    let text = serde_json::to_string_pretty(&out).expect("report serializes");
    writeln!(w, "{text}").map_err(|e| Error::io(path.unwrap_or(Path::new("<stdout>")), e))?;
    finish(w, path)?;
    Ok(exit::OK)
}

fn span_json(r: std::ops::Range<usize>) -> Value {
    json!([r.start, r.end])
}

fn cmd_predict(a: &PredictArgs, stdout: &mut dyn Write) -> Result<u8> {
    let (model, train_cfg) = checkpoint::load(&a.model)?;
    let lexicon = opt_lexicon(a.lexicon.as_deref())?;
    let sentences = load_sentences(&a.input)?;
    let data_err = |line, msg: String| Error::Parse(ParseError::new(line, ParseErrorKind::Invalid(msg)).at(&a.input));
    let mut encoded = Vec::with_capacity(sentences.len());
    let mut spans = Vec::with_capacity(sentences.len());
    for s in &sentences {
        let tokens = tokenize(&s.item);
        let ex = segment_with_lexicon(tokens, None, lexicon.as_ref(), None).map_err(|e| data_err(s.line, e.to_string()))?;
        spans.push((ex.no_altlex, ex.segments.l.range()));
        encoded.push(encode_example(&ex, &model.vocab, model.config.max_len).map_err(|e| data_err(s.line, e.to_string()))?);
    }
    let probs = model.predict_causal(&encoded, 64)?;

    let path = a.output.as_deref();
    let mut w = sink(path, stdout)?;
    let run = RunConfig {
        model: model.config.clone(),
        train: train_cfg,
    };
    emit(&mut w, path, &json!({"config": run.to_json(), "seed": run.train.seed}))?;
    for ((s, (no_altlex, l)), p) in sentences.iter().zip(spans).zip(probs) {
        let row = json!({
            "sentence": s.item,
            "altlex": if no_altlex { Value::Null } else { span_json(l) },
            "probability": p,
            "label": mcdn_core::loss::predict_label([1.0 - p, p]),
            "no_altlex": no_altlex,
        });
        emit(&mut w, path, &row)?;
    }
    finish(w, path)?;
    Ok(exit::OK)
}

fn cmd_segment(a: &SegmentArgs, stdout: &mut dyn Write) -> Result<u8> {
    let lexicon = opt_lexicon(a.lexicon.as_deref())?;
    let mut rows = Vec::new();
    if let Some(p) = &a.data {
        for r in load_records(p)? {
            let ex = segment_record(&r, lexicon.as_ref()).map_err(|e| Error::Parse(e.at(p)))?;
            rows.push((r.item.sentence, ex));
        }
    } else if let Some(p) = &a.input {
        for s in load_sentences(p)? {
            let tokens = tokenize(&s.item);
            let ex = segment_with_lexicon(tokens, None, lexicon.as_ref(), None).map_err(|e| {
                Error::Parse(ParseError::new(s.line, ParseErrorKind::Invalid(e.to_string())).at(p))
            })?;
            rows.push((s.item, ex));
        }
    }
    let path = a.output.as_deref();
    let mut w = sink(path, stdout)?;
    let header = json!({
        "config": {
            "lexicon": a.lexicon.as_ref().map(|p| p.display().to_string()),
            "input": a.input.as_ref().or(a.data.as_ref()).map(|p| p.display().to_string()),
        },
        "seed": Value::Null,
    });
    emit(&mut w, path, &header)?;
    for (sentence, ex) in rows {
        let s = ex.segments;
        let row = json!({
            "sentence": sentence,
            "tokens": ex.tokens,
            "bl": span_json(s.bl.range()),
            "l": span_json(s.l.range()),
            "al": span_json(s.al.range()),
            "no_altlex": ex.no_altlex,
        });
        emit(&mut w, path, &row)?;
    }
    finish(w, path)?;
    Ok(exit::OK)
}

fn cmd_gradcheck(a: &GradcheckArgs, stdout: &mut dyn Write) -> Result<u8> {
    if !(a.eps > 0.0) {
        return Err(Error::Config("--eps must be positive".into()));
    }
    let report = synthetic::reduced_gradcheck(a.seed, a.eps)?;
    let pass = report.passes(a.tol);
    let worst = report.worst.as_ref().map(|(name, i, an, nu)| {
        json!({"param": name, "index": i, "analytic": an, "numeric": nu})
    });
    let out = json!({
        "seed": a.seed,
        "eps": a.eps,
        "tol": a.tol,
        "config": synthetic::reduced_config(),
        "checked": report.checked,
        "max_relative_error": report.max_relative_error,
        "worst": worst,
        "pass": pass,
    });
    writeln!(stdout, "{out}").map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(if pass { exit::OK } else { exit::GRADCHECK })
}
