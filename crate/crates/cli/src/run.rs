use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gradual_lstm::corpus::{batchify, read_lines, BatchedStream, Vocabulary};
use gradual_lstm::diagnostics::{write_drift_csv, write_gradnorms_csv, write_histograms_csv};
use gradual_lstm::glsched::{
    run_schedule, EpochRecord, PhaseOutcome, ScheduleOptions, ScheduleStore, TrainingData,
};
use gradual_lstm::net::{evaluate, Checkpoint, Evaluation};
use serde::{Deserialize, Serialize};

use crate::config::LoadedConfig;

pub const METRICS_DIR: &str = "metrics";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CURVE_FILE: &str = "curve.csv";

/// Vocabulary and encoded splits of a run's corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Option<Vec<u32>>,
}

impl Corpus {
    /// Builds the vocabulary from the training split; other splits map
    /// unseen words to the unknown token.
    pub fn load(cfg: &LoadedConfig) -> Result<Self> {
        let c = &cfg.config.corpus;
        let read = |p: &Path| {
            let path = cfg.resolve(p);
            read_lines(&path).with_context(|| format!("reading {}", path.display()))
        };
        let train_lines = read(&c.train)?;
        let vocab = Vocabulary::build(train_lines.iter().map(String::as_str), &c.eos, &c.unk)?;
        let encode = |lines: Vec<String>| vocab.encode_lines(lines.iter().map(String::as_str));
        let train = encode(train_lines.clone());
        let valid = encode(read(&c.valid)?);
        let test = c.test.as_deref().map(read).transpose()?.map(encode);
        Ok(Corpus {
            vocab,
            train,
            valid,
            test,
        })
    }

    pub fn split(&self, name: &str) -> Result<&[u32]> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => self.test.as_deref().context("config has no test split"),
            other => bail!("unknown split {other:?}; expected train, valid or test"),
        }
    }

    pub fn training_data(&self, cfg: &LoadedConfig) -> Result<TrainingData> {
        let t = &cfg.config.training;
        Ok(TrainingData {
            vocab_size: self.vocab.len(),
            train: batchify(&self.train, t.batch_size)?,
            valid: batchify(&self.valid, t.eval_batch_size)?,
        })
    }
}

pub fn metrics_file(phase: usize, kind: &str) -> String {
    format!("phase-{phase}-{kind}.csv")
}

/// Writes gradient norms, activation histograms and drift of one phase.
pub fn write_phase_metrics(dir: &Path, out: &PhaseOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let create = |kind: &str| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(
            dir.join(metrics_file(out.phase, kind)),
        )?))
    };
    write_gradnorms_csv(create("gradnorms")?, &out.grad_norms)?;
    let series: Vec<_> = out.histograms.iter().cloned().collect();
    write_histograms_csv(create("histograms")?, &series)?;
    let drift: Vec<_> = out
        .histograms
        .iter()
        .zip(&out.drift)
        .map(|(h, d)| (h.layer, d.clone()))
        .collect();
    write_drift_csv(create("drift")?, &drift)?;
    Ok(())
}

/// `curve.csv`: one row per phase and epoch.
pub fn write_curve(path: &Path, curves: &[(usize, &[EpochRecord])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["phase", "epoch", "train_loss", "valid_perplexity"])?;
    for (phase, curve) in curves {
        for r in curve.iter() {
            w.write_record([
                phase.to_string(),
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.valid_perplexity.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Where outputs go and what to do on the way.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Base for relative output directories.
    pub output_root: Option<PathBuf>,
    /// Stop after this phase, leaving a resumable run.
    pub stop_after: Option<usize>,
    /// Print progress to stderr.
    pub verbose: bool,
}

impl RunOptions {
    pub fn from_env() -> Self {
        RunOptions {
            output_root: std::env::var_os(crate::config::OUTPUT_ROOT_ENV).map(PathBuf::from),
            ..Default::default()
        }
    }
}

pub struct TrainRun {
    pub run_dir: PathBuf,
    pub corpus: Corpus,
    pub outcomes: Vec<PhaseOutcome>,
}

/// Runs the schedule of `cfg`, resuming any completed phases in its run directory.
pub fn cmd_train(cfg: &LoadedConfig, opts: &RunOptions) -> Result<TrainRun> {
    let run_dir = cfg.run_dir(opts.output_root.as_deref());
    let corpus = Corpus::load(cfg)?;
    let data = corpus.training_data(cfg)?;
    let store = ScheduleStore {
        dir: run_dir.clone(),
        config_hash: cfg.hash()?,
        vocab_fingerprint: Some(corpus.vocab.fingerprint()),
    };
    fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating run directory {}", run_dir.display()))?;
    fs::write(run_dir.join("config.toml"), toml::to_string(&cfg.config)?)?;
    corpus.vocab.write_tsv(&run_dir.join(VOCAB_FILE))?;
    let metrics = run_dir.join(METRICS_DIR);
    let verbose = opts.verbose;
    let mut hook = |out: &PhaseOutcome| -> gradual_lstm::Result<()> {
        if verbose {
            eprintln!(
                "phase {}: best valid perplexity {:.3} at epoch {} ({} updates, {:.1}s)",
                out.phase,
                out.best_valid_perplexity,
                out.best_epoch,
                out.updates,
                out.wall_clock_secs
            );
        }
        write_phase_metrics(&metrics, out)
            .map_err(|e| gradual_lstm::Error::Io(std::io::Error::other(format!("{e:#}"))))
    };
    let outcomes = run_schedule(
        &cfg.config.plan(),
        &cfg.config.training,
        &data,
        ScheduleOptions {
            store: Some(&store),
            stop_after: opts.stop_after,
            on_phase: Some(&mut hook),
        },
    )?;
    let curves: Vec<_> = outcomes
        .iter()
        .map(|o| (o.phase, o.curve.as_slice()))
        .collect();
    write_curve(&metrics.join(CURVE_FILE), &curves)?;
    Ok(TrainRun {
        run_dir,
        corpus,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub tokens: usize,
    /// Total NLL in nats.
    pub nll: f64,
    pub perplexity: f64,
}

impl From<(&str, Evaluation)> for EvalReport {
    fn from((split, e): (&str, Evaluation)) -> Self {
        EvalReport {
            split: split.into(),
            tokens: e.tokens,
            nll: e.nll,
            perplexity: e.perplexity,
        }
    }
}

/// Perplexity of a checkpoint on one split of the config's corpus.
///
/// The report is also written as `eval-<split>.json` beside the checkpoint.
pub fn cmd_eval(
    cfg: &LoadedConfig,
    checkpoint: &Path,
    split: &str,
    bptt: Option<usize>,
) -> Result<EvalReport> {
    let corpus = Corpus::load(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let fp = corpus.vocab.fingerprint();
    match &ckpt.vocab_fingerprint {
        Some(f) if *f != fp => bail!(
            "vocabulary mismatch: checkpoint was trained on vocabulary {f}, corpus gives {fp}"
        ),
        _ => {}
    }
    let params = ckpt.to_params()?;
    if params.vocab() != corpus.vocab.len() {
        bail!(
            "vocabulary mismatch: checkpoint has {} words, corpus has {}",
            params.vocab(),
            corpus.vocab.len()
        );
    }
    let t = &cfg.config.training;
    let stream: BatchedStream = batchify(corpus.split(split)?, t.eval_batch_size)?;
    let report = EvalReport::from((
        split,
        evaluate(&params, &stream, bptt.unwrap_or(t.eval_bptt))?,
    ));
    if let Some(dir) = checkpoint.parent() {
        fs::write(
            dir.join(format!("eval-{split}.json")),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(report)
}
