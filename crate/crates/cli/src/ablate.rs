use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gradual_lstm::corpus::batchify;
use gradual_lstm::glsched::{
    checkpoint_file, run_phase, run_schedule, sha256_hex, PhaseConfig, PhaseOutcome, PhasePlan,
    ScheduleOptions, ScheduleStore,
};
use gradual_lstm::net::{evaluate, Checkpoint, NetworkParams};
use serde::{Deserialize, Serialize};

use crate::config::{Arm, LoadedConfig};
use crate::run::{write_curve, write_phase_metrics, Corpus, RunOptions, CURVE_FILE, METRICS_DIR};

pub const ABLATION_DIR: &str = "ablate";
pub const ABLATION_REPORT: &str = "ablation.csv";

/// Phases of an arm that grows the network gradually.
pub fn arm_plan(cfg: &LoadedConfig, arm: Arm) -> PhasePlan {
    let mut plan = cfg.config.plan();
    if arm == Arm::NoLwgc {
        for p in &mut plan.phases {
            p.clip = p.clip.to_global_equivalent();
        }
    }
    plan
}

/// The single phase of the full-depth arm: last phase's settings, every
/// layer from the start, and the summed epoch budget unless overridden.
pub fn no_gl_phase(cfg: &LoadedConfig) -> PhaseConfig {
    let c = &cfg.config;
    let mut p = c
        .phases
        .last()
        .expect("validated plan is non-empty")
        .clone();
    p.epochs = c
        .ablation
        .no_gl_epochs
        .unwrap_or_else(|| c.phases.iter().map(|p| p.epochs).sum());
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub layers: usize,
    pub epochs: usize,
    pub best_valid_perplexity: f64,
    pub test_perplexity: Option<f64>,
    /// Mean activation drift of the newest layer in the last phase.
    pub last_phase_drift: Option<f64>,
}

pub struct ArmRun {
    pub result: ArmResult,
    pub dir: PathBuf,
    pub outcomes: Vec<PhaseOutcome>,
}

pub struct AblationReport {
    pub run_dir: PathBuf,
    pub arms: Vec<ArmRun>,
}

impl AblationReport {
    pub fn arm(&self, arm: Arm) -> Option<&ArmRun> {
        self.arms.iter().find(|a| a.result.arm == arm)
    }

    /// Side-by-side text table.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>6} {:>6} {:>12} {:>12} {:>10}\n",
            "arm", "layers", "epochs", "valid ppl", "test ppl", "drift"
        );
        for a in &self.arms {
            let r = &a.result;
            let opt = |v: Option<f64>, p: usize| {
                v.map_or("-".into(), |v| format!("{v:.prec$}", prec = p))
            };
            s.push_str(&format!(
                "{:<8} {:>6} {:>6} {:>12.3} {:>12} {:>10}\n",
                r.arm.name(),
                r.layers,
                r.epochs,
                r.best_valid_perplexity,
                opt(r.test_perplexity, 3),
                opt(r.last_phase_drift, 5),
            ));
        }
        s
    }
}

fn run_arm(cfg: &LoadedConfig, corpus: &Corpus, arm: Arm, dir: &Path) -> Result<ArmRun> {
    let data = corpus.training_data(cfg)?;
    let settings = &cfg.config.training;
    let metrics = dir.join(METRICS_DIR);
    fs::create_dir_all(&metrics)?;
    let outcomes = match arm {
        Arm::Full | Arm::NoLwgc => {
            let plan = arm_plan(cfg, arm);
            let store = ScheduleStore {
                dir: dir.to_path_buf(),
                config_hash: sha256_hex(format!("{}:{}", cfg.hash()?, arm.name()).as_bytes()),
                vocab_fingerprint: Some(corpus.vocab.fingerprint()),
            };
            let mut hook = |out: &PhaseOutcome| -> gradual_lstm::Result<()> {
                write_phase_metrics(&metrics, out)
                    .map_err(|e| gradual_lstm::Error::Io(std::io::Error::other(format!("{e:#}"))))
            };
            run_schedule(
                &plan,
                settings,
                &data,
                ScheduleOptions {
                    store: Some(&store),
                    stop_after: None,
                    on_phase: Some(&mut hook),
                },
            )?
        }
        Arm::NoGl => {
            let phase = no_gl_phase(cfg);
            let plan = cfg.config.plan();
            let depth = plan.phases.len();
            let start = NetworkParams::init(
                &plan.sizes_at(depth, corpus.vocab.len(), settings),
                phase.seed,
                settings.init_scale,
            )?;
            let out = run_phase(start, depth, &phase, settings, &data)?;
            Checkpoint::from_params(
                &out.params,
                depth,
                vec![phase.seed],
                Some(corpus.vocab.fingerprint()),
            )
            .save(&dir.join(checkpoint_file(depth)))?;
            write_phase_metrics(&metrics, &out)?;
            vec![out]
        }
    };
    let curves: Vec<_> = outcomes
        .iter()
        .map(|o| (o.phase, o.curve.as_slice()))
        .collect();
    write_curve(&metrics.join(CURVE_FILE), &curves)?;

    let last = outcomes.last().expect("at least one phase");
    let test_perplexity = corpus
        .test
        .as_deref()
        .map(|ids| -> Result<f64> {
            let stream = batchify(ids, settings.eval_batch_size)?;
            Ok(evaluate(&last.params, &stream, settings.eval_bptt)?.perplexity)
        })
        .transpose()?;
    let result = ArmResult {
        arm,
        layers: last.params.num_layers(),
        epochs: outcomes.iter().map(|o| o.curve.len()).sum(),
        best_valid_perplexity: last.best_valid_perplexity,
        test_perplexity,
        last_phase_drift: last.drift.as_ref().map(|d| d.mean),
    };
    Ok(ArmRun {
        result,
        dir: dir.to_path_buf(),
        outcomes,
    })
}

/// Trains every configured arm with shared seeds and tabulates the results.
pub fn cmd_ablate(cfg: &LoadedConfig, opts: &RunOptions) -> Result<AblationReport> {
    let run_dir = cfg.run_dir(opts.output_root.as_deref());
    let root = run_dir.join(ABLATION_DIR);
    let corpus = Corpus::load(cfg)?;
    let arms = &cfg.config.ablation.arms;
    let go = |arm: Arm| {
        let dir = root.join(arm.name());
        run_arm(cfg, &corpus, arm, &dir).with_context(|| format!("ablation arm {}", arm.name()))
    };
    let runs: Vec<ArmRun> = if cfg.config.ablation.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = arms.iter().map(|&a| s.spawn(move || go(a))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation arm panicked"))
                .collect::<Result<_>>()
        })?
    } else {
        arms.iter().map(|&a| go(a)).collect::<Result<_>>()?
    };

    let mut w = csv::Writer::from_path(root.join(ABLATION_REPORT))?;
    w.write_record([
        "arm",
        "layers",
        "epochs",
        "best_valid_perplexity",
        "test_perplexity",
        "last_phase_drift",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in runs.iter().map(|a| &a.result) {
        w.write_record([
            r.arm.name().to_string(),
            r.layers.to_string(),
            r.epochs.to_string(),
            r.best_valid_perplexity.to_string(),
            opt(r.test_perplexity),
            opt(r.last_phase_drift),
        ])?;
    }
    w.flush()?;
    Ok(AblationReport {
        run_dir,
        arms: runs,
    })
}
