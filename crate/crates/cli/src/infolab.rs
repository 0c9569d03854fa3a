use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gradual_lstm::clip::ClipPolicy;
use gradual_lstm::corpus::batchify;
use gradual_lstm::glsched::{mask_rng, train_epoch, EpochContext, PhaseConfig, SoftmaxInit};
use gradual_lstm::infolab::{
    ce_decomposition, compose, dpi_chain_check, induced_posterior, network_mi_probe,
    sufficiency_check, Channel, JointTable, ParityTask, Quantizer, INFO_TOLERANCE,
};
use gradual_lstm::net::{KeepProbs, ModelSizes, NetworkParams};
use serde::{Deserialize, Serialize};

pub const PROBE_CSV: &str = "probe.csv";

/// A suite of checks, read from TOML.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfolabSpec {
    /// Where probe CSVs go, relative to the spec file.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(rename = "check")]
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Cross entropy of `model` through `chain` splits into `H(Y|X)` plus
    /// the expected KL, and the induced posterior does no worse.
    CrossEntropy {
        name: String,
        joint: PathBuf,
        model: PathBuf,
        chain: Vec<PathBuf>,
    },
    /// Information about `Y` never grows along the chain.
    DataProcessing {
        name: String,
        joint: PathBuf,
        chain: Vec<PathBuf>,
    },
    /// Whether the last link keeps `p(y|x)`; gaps must vanish if it does
    /// and the last gap must be positive if it does not.
    Sufficiency {
        name: String,
        joint: PathBuf,
        chain: Vec<PathBuf>,
        expect_condition: bool,
    },
    /// Trains a small network on parity and probes each layer every epoch.
    Probe(ProbeSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub name: String,
    pub bits: usize,
    pub embedding: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub max_norm: f64,
    pub seed: u64,
    pub repeats: usize,
    pub batch_size: usize,
    pub bptt: usize,
    #[serde(default = "default_budget")]
    pub symbol_budget: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_budget() -> usize {
    4096
}

fn default_init_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// One row of `probe.csv`; layer 0 stands for the input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub epoch: usize,
    pub layer: usize,
    pub mi_bits: f64,
}

#[derive(Debug, Clone, Default)]
pub struct InfolabReport {
    pub checks: Vec<CheckResult>,
    pub probe_rows: Vec<ProbeRow>,
}

impl InfolabReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn joint(base: &Path, p: &Path) -> Result<JointTable> {
    Ok(JointTable::from_fixture(&base.join(p))?)
}

fn links(base: &Path, ps: &[PathBuf]) -> Result<Vec<Channel>> {
    ps.iter()
        .map(|p| Ok(Channel::from_fixture(&base.join(p))?))
        .collect()
}

fn fmt_seq(v: &[f64]) -> String {
    v.iter()
        .map(|m| format!("{m:.6}"))
        .collect::<Vec<_>>()
        .join(" > ")
}

fn run_check(base: &Path, spec: &CheckSpec, rows: &mut Vec<ProbeRow>) -> Result<CheckResult> {
    Ok(match spec {
        CheckSpec::CrossEntropy {
            name,
            joint: j,
            model,
            chain,
        } => {
            let p = joint(base, j)?;
            let chain = compose(&links(base, chain)?)?;
            let q = Channel::from_fixture(&base.join(model))?;
            let d = ce_decomposition(&p, &q, &chain)?;
            let best = ce_decomposition(&p, &induced_posterior(&p, &chain)?, &chain)?;
            CheckResult {
                name: name.clone(),
                kind: "cross_entropy",
                passed: d.holds() && best.cross_entropy <= d.cross_entropy + 1e-12,
                detail: format!(
                    "CE {:.9} = H(Y|X) {:.9} + KL {:.9} (residual {:.1e}); optimum {:.9}",
                    d.cross_entropy,
                    d.conditional_entropy,
                    d.kl_term,
                    d.residual(),
                    best.cross_entropy
                ),
            }
        }
        CheckSpec::DataProcessing {
            name,
            joint: j,
            chain,
        } => {
            let r = dpi_chain_check(&joint(base, j)?, &links(base, chain)?)?;
            CheckResult {
                name: name.clone(),
                kind: "data_processing",
                passed: r.monotone,
                detail: format!("MI {}", fmt_seq(&r.mi)),
            }
        }
        CheckSpec::Sufficiency {
            name,
            joint: j,
            chain,
            expect_condition,
        } => {
            let r = sufficiency_check(&joint(base, j)?, &links(base, chain)?)?;
            CheckResult {
                name: name.clone(),
                kind: "sufficiency",
                passed: r.consistent()
                    && r.condition_holds == *expect_condition
                    && (*expect_condition || r.gaps.last().is_some_and(|g| *g > INFO_TOLERANCE)),
                detail: format!(
                    "condition {} (expected {}), gaps {:?}",
                    r.condition_holds, expect_condition, r.gaps
                ),
            }
        }
        CheckSpec::Probe(p) => {
            let new_rows = run_probe(p)?;
            let bounded = new_rows
                .chunks(p.hidden.len() + 1)
                .all(|c| c[1..].iter().all(|r| r.mi_bits <= c[0].mi_bits + 1e-10));
            let last: Vec<f64> = new_rows[new_rows.len() - p.hidden.len() - 1..]
                .iter()
                .map(|r| r.mi_bits)
                .collect();
            rows.extend(new_rows);
            CheckResult {
                name: p.name.clone(),
                kind: "probe",
                passed: bounded,
                detail: format!("final epoch MI {}", fmt_seq(&last)),
            }
        }
    })
}

/// Probe rows for epochs `0..=epochs`; epoch 0 is the untrained network.
pub fn run_probe(p: &ProbeSpec) -> Result<Vec<ProbeRow>> {
    let task = ParityTask::new(p.bits)?;
    let sizes = ModelSizes {
        vocab: ParityTask::VOCAB,
        embedding: p.embedding,
        hidden: p.hidden.clone(),
        tied: false,
    };
    let mut params = NetworkParams::init(&sizes, p.seed, p.init_scale)?;
    let phase = PhaseConfig {
        layer_count: p.hidden.len(),
        hidden_size: *p.hidden.last().context("probe needs at least one layer")?,
        epochs: p.epochs,
        learning_rate: p.learning_rate,
        clip: ClipPolicy::Global {
            max_norm: p.max_norm,
        },
        dropout: KeepProbs::NONE,
        softmax_init: SoftmaxInit::Auto,
        seed: p.seed,
        patience: 1,
        average_from_epoch: None,
    };
    let probes = task.probe_set();
    let mut rng = mask_rng(p.seed);
    let mut rows = Vec::new();
    let mut step = 0;
    for epoch in 0..=p.epochs {
        if epoch > 0 {
            let stream = batchify(&task.stream(p.repeats, p.seed + epoch as u64), p.batch_size)?;
            let at = EpochContext {
                phase: 1,
                epoch,
                first_step: step,
            };
            step += train_epoch(&mut params, &stream, p.bptt, &phase, &mut rng, at, |_| {
                Ok(())
            })?
            .updates;
        }
        let report = network_mi_probe(&params, &Quantizer::sign(), &probes, p.symbol_budget)?;
        rows.extend(report.mi.iter().enumerate().map(|(layer, &m)| ProbeRow {
            epoch,
            layer,
            mi_bits: m,
        }));
    }
    Ok(rows)
}

/// Runs every check of the suite at `spec_path`.
///
/// Probe results are written as CSV under the spec's output directory, or
/// under `output_root` when given.
pub fn cmd_infolab(spec_path: &Path, output_root: Option<&Path>) -> Result<InfolabReport> {
    let text = fs::read_to_string(spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: InfolabSpec =
        toml::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let mut report = InfolabReport::default();
    for c in &spec.checks {
        let r = run_check(base, c, &mut report.probe_rows)?;
        report.checks.push(r);
    }
    if !report.probe_rows.is_empty() {
        let out = spec
            .output_dir
            .as_deref()
            .unwrap_or(Path::new("infolab-out"));
        let dir = match output_root {
            Some(root) if out.is_relative() => root.join(out),
            _ => base.join(out),
        };
        fs::create_dir_all(&dir)?;
        let mut w = csv::Writer::from_path(dir.join(PROBE_CSV))?;
        for r in &report.probe_rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(report)
}
