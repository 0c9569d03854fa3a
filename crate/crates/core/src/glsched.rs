//! Gradual learning: train a stack of `L` layers in `L` phases, adding one
//! freshly initialized layer on top of the previous phase's best weights.
//!
//! Every phase trains all parameters; shallower layers are never frozen.
//! With a [`ScheduleStore`], each phase's best parameters land in
//! `phase-<k>-best.json` next to a manifest, and a rerun resumes after the
//! last completed phase.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clip::{ClipPolicy, ClipReport};
use crate::corpus::BatchedStream;
use crate::diagnostics::{
    drift_metric, log_group_norms, record_activations, uniform_edges, ActivationHistogram,
    DriftReport, GradNormRow, HistogramSeries, DEFAULT_BINS, DEFAULT_HORIZON, DEFAULT_WINDOW,
};
use crate::error::{Error, Result};
use crate::net::{
    backward, check_scale, evaluate, forward, sgd_step, uniform_matrix, Checkpoint, DropoutMasks,
    ForwardTrace, KeepProbs, LstmLayerParams, LstmState, MaskShape, ModelSizes, NetworkParams,
    ParamAverage,
};

pub const DEFAULT_PATIENCE: usize = 5;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "gradual-lstm-schedule/1";

/// ChaCha stream used for dropout masks; stream 0 is reserved for weights.
const MASK_STREAM: u64 = 1;

/// How the softmax head of a grown network is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxInit {
    /// Copy the previous head; the new top layer must match its width.
    Inherit,
    /// Fresh uniform weights and zero bias.
    Random,
    /// Inherit when the widths match, otherwise random.
    #[default]
    Auto,
}

/// Name of the best checkpoint of phase `k` (1-based).
pub fn checkpoint_file(phase: usize) -> String {
    format!("phase-{phase}-best.json")
}

/// Adds a layer of width `hidden` on top of `params`.
///
/// Existing layers are copied bit for bit. The new layer, and a random head
/// when one is needed, are drawn from `seed`. A tied head is the embedding,
/// so for tied models `Random` only resets the softmax bias.
pub fn grow(
    params: &NetworkParams,
    hidden: usize,
    softmax_init: SoftmaxInit,
    seed: u64,
    init_scale: f64,
) -> Result<NetworkParams> {
    params.validate()?;
    check_scale(init_scale)?;
    if hidden == 0 {
        return Err(Error::InvalidValue(
            "new layer must have at least one unit".into(),
        ));
    }
    let top = params.sizes().top();
    if params.is_tied() && hidden != params.embedding.ncols() {
        return Err(Error::TyingSizeMismatch {
            embedding: params.embedding.ncols(),
            hidden,
        });
    }
    let inherit = match softmax_init {
        SoftmaxInit::Inherit if hidden != top => {
            return Err(Error::SoftmaxInheritanceMismatch {
                previous: top,
                new: hidden,
            })
        }
        SoftmaxInit::Inherit => true,
        SoftmaxInit::Random => false,
        SoftmaxInit::Auto => hidden == top,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grown = params.clone();
    grown
        .layers
        .push(LstmLayerParams::init(top, hidden, init_scale, &mut rng));
    if !inherit {
        if !grown.is_tied() {
            grown.softmax_weight =
                Some(uniform_matrix(params.vocab(), hidden, init_scale, &mut rng));
        }
        grown.softmax_bias.fill(0.0);
    }
    grown.validate()?;
    Ok(grown)
}

/// Hyper-parameters of one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    /// Layers trained in this phase.
    pub layer_count: usize,
    /// Width of the layer added in this phase.
    pub hidden_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub clip: ClipPolicy,
    #[serde(default)]
    pub dropout: KeepProbs,
    #[serde(default)]
    pub softmax_init: SoftmaxInit,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// First epoch (1-based) whose updates enter a running parameter mean;
    /// validation and the best checkpoint then use the mean.
    #[serde(default)]
    pub average_from_epoch: Option<usize>,
}

fn default_patience() -> usize {
    DEFAULT_PATIENCE
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_count == 0 || self.hidden_size == 0 {
            return Err(Error::InvalidValue(
                "phase needs at least one layer of one unit".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidValue(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidValue("patience must be at least 1".into()));
        }
        if self.average_from_epoch == Some(0) {
            return Err(Error::InvalidValue("average_from_epoch is 1-based".into()));
        }
        self.clip.validate()?;
        self.dropout.validate()
    }
}

/// Histogram settings for the activation-drift diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSettings {
    /// 1-based layer to histogram; `None` picks the newest layer.
    pub histogram_layer: Option<usize>,
    pub bins: usize,
    pub window: usize,
    pub horizon: usize,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        DiagnosticsSettings {
            histogram_layer: None,
            bins: DEFAULT_BINS,
            window: DEFAULT_WINDOW,
            horizon: DEFAULT_HORIZON,
        }
    }
}

/// Settings shared by every phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub embedding_size: usize,
    #[serde(default)]
    pub tied: bool,
    pub batch_size: usize,
    pub bptt: usize,
    pub eval_batch_size: usize,
    pub eval_bptt: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub diagnostics: DiagnosticsSettings,
}

fn default_init_scale() -> f64 {
    crate::net::DEFAULT_INIT_SCALE
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_size == 0
            || self.batch_size == 0
            || self.bptt == 0
            || self.eval_batch_size == 0
            || self.eval_bptt == 0
        {
            return Err(Error::InvalidValue(
                "embedding size, batch sizes and bptt lengths must be positive".into(),
            ));
        }
        check_scale(self.init_scale)?;
        let d = &self.diagnostics;
        if d.bins == 0 || d.window == 0 {
            return Err(Error::InvalidValue(
                "histogram bins and window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Ordered phases; phase `k` trains `k` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhasePlan {
    pub phases: Vec<PhaseConfig>,
}

impl PhasePlan {
    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.phases.iter().map(|p| p.hidden_size).collect()
    }

    /// Architecture after phase `k` (1-based).
    pub fn sizes_at(&self, k: usize, vocab: usize, settings: &TrainSettings) -> ModelSizes {
        ModelSizes {
            vocab,
            embedding: settings.embedding_size,
            hidden: self.hidden_sizes()[..k].to_vec(),
            tied: settings.tied,
        }
    }

    pub fn validate(&self, settings: &TrainSettings) -> Result<()> {
        settings.validate()?;
        if self.phases.is_empty() {
            return Err(Error::InvalidValue("phase plan is empty".into()));
        }
        for (k, p) in self.phases.iter().enumerate() {
            let phase = k + 1;
            p.validate()
                .map_err(|e| Error::InvalidValue(format!("phase {phase}: {e}")))?;
            if p.layer_count != phase {
                return Err(Error::InvalidValue(format!(
                    "phase {phase} has layer_count {}, expected {phase}",
                    p.layer_count
                )));
            }
            let sizes = self.sizes_at(phase, 1, settings);
            sizes.validate()?;
            p.clip.check_groups(&sizes.group_names())?;
            if k > 0 && p.softmax_init == SoftmaxInit::Inherit {
                let previous = self.phases[k - 1].hidden_size;
                if previous != p.hidden_size {
                    return Err(Error::SoftmaxInheritanceMismatch {
                        previous,
                        new: p.hidden_size,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Training and validation streams.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub vocab_size: usize,
    pub train: BatchedStream,
    pub valid: BatchedStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training NLL (nats) over the epoch, with dropout.
    pub train_loss: f64,
    pub valid_perplexity: f64,
}

/// Result of one phase.
#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    /// 1-based.
    pub phase: usize,
    /// Parameters the phase started from; `None` when resumed from disk.
    pub initial_params: Option<NetworkParams>,
    /// Best-validation parameters, handed to the next phase.
    pub params: NetworkParams,
    pub initial_valid_perplexity: f64,
    pub best_valid_perplexity: f64,
    /// 0 when no epoch beat the starting point.
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub updates: usize,
    pub grad_norms: Vec<GradNormRow>,
    pub histograms: Option<HistogramSeries>,
    pub drift: Option<DriftReport>,
    pub wall_clock_secs: f64,
    pub resumed: bool,
}

fn with_context(phase: usize, epoch: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Training { source, .. } => Error::Training {
            phase,
            epoch,
            step,
            source,
        },
        other => Error::Training {
            phase,
            epoch,
            step,
            source: Box::new(other),
        },
    }
}

/// Dropout-mask generator for a phase seed.
pub fn mask_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MASK_STREAM);
    rng
}

/// Where an epoch sits in a run, for step numbering and error context.
#[derive(Debug, Clone, Copy)]
pub struct EpochContext {
    pub phase: usize,
    pub epoch: usize,
    /// Global index of the epoch's first update.
    pub first_step: usize,
}

/// State visible to an observer after each update.
pub struct Update<'a> {
    pub step: usize,
    /// Forward pass that produced the gradient.
    pub trace: &'a ForwardTrace,
    pub clip: &'a ClipReport,
    /// Parameters after the update.
    pub params: &'a NetworkParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean training NLL in nats, with dropout.
    pub mean_loss: f64,
    pub updates: usize,
}

/// One pass over `train`: per window sample masks, forward, backward, clip
/// and take an SGD step. The recurrent state carries across windows.
pub fn train_epoch(
    params: &mut NetworkParams,
    train: &BatchedStream,
    bptt: usize,
    cfg: &PhaseConfig,
    rng: &mut ChaCha8Rng,
    at: EpochContext,
    mut observe: impl FnMut(Update<'_>) -> Result<()>,
) -> Result<EpochStats> {
    let sizes = params.sizes();
    let shape = MaskShape {
        batch: train.batch_size(),
        vocab: sizes.vocab,
        embedding: sizes.embedding,
        hidden: sizes.hidden.clone(),
    };
    let mut state = LstmState::zeros(&sizes.hidden, train.batch_size());
    let mut nll = 0.0;
    let mut positions = 0;
    let mut updates = 0;
    for window in train.windows(bptt) {
        let step = at.first_step + updates;
        let ctx = with_context(at.phase, at.epoch, step);
        let masks = DropoutMasks::sample(&shape, &cfg.dropout, rng).map_err(&ctx)?;
        let (trace, _) = forward(params, &window, &state, &masks).map_err(&ctx)?;
        let mut grads = backward(params, &trace).map_err(&ctx)?;
        let clip = cfg.clip.apply(&mut grads).map_err(&ctx)?;
        sgd_step(params, &grads, cfg.learning_rate).map_err(&ctx)?;
        observe(Update {
            step,
            trace: &trace,
            clip: &clip,
            params,
        })
        .map_err(&ctx)?;
        nll += trace.total_nll;
        positions += trace.positions();
        state = trace.final_state();
        updates += 1;
    }
    Ok(EpochStats {
        mean_loss: nll / positions.max(1) as f64,
        updates,
    })
}

/// Trains `params` for one phase and keeps the best-validation parameters.
///
/// The best candidate includes the starting point, so a phase never hands
/// on parameters worse on validation than those it received.
pub fn run_phase(
    params: NetworkParams,
    phase: usize,
    cfg: &PhaseConfig,
    settings: &TrainSettings,
    data: &TrainingData,
) -> Result<PhaseOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    settings.validate()?;
    params.validate()?;
    if params.num_layers() != cfg.layer_count {
        return Err(Error::InvalidValue(format!(
            "phase {phase} expects {} layers, params have {}",
            cfg.layer_count,
            params.num_layers()
        )));
    }
    if params.vocab() != data.vocab_size {
        return Err(Error::Shape(format!(
            "model vocabulary {} differs from corpus vocabulary {}",
            params.vocab(),
            data.vocab_size
        )));
    }
    let sizes = params.sizes();
    cfg.clip.check_groups(&sizes.group_names())?;

    let initial_valid = evaluate(&params, &data.valid, settings.eval_bptt)
        .map_err(with_context(phase, 0, 0))?
        .perplexity;

    let diag = &settings.diagnostics;
    let hist_layer = diag.histogram_layer.unwrap_or(cfg.layer_count);
    let mut hist = (hist_layer >= 1 && hist_layer <= cfg.layer_count)
        .then(|| {
            ActivationHistogram::new(
                hist_layer,
                uniform_edges(diag.bins, -1.0, 1.0),
                diag.window,
                diag.horizon,
            )
        })
        .transpose()?;

    let mut rng = mask_rng(cfg.seed);
    let initial_params = params.clone();
    let mut params = params;
    let mut best = params.clone();
    let mut best_ppl = initial_valid;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut average: Option<ParamAverage> = None;
    let mut curve = Vec::new();
    let mut grad_norms = Vec::new();
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        let averaging = cfg.average_from_epoch.is_some_and(|a| epoch >= a);
        let stats = train_epoch(
            &mut params,
            &data.train,
            settings.bptt,
            cfg,
            &mut rng,
            EpochContext {
                phase,
                epoch,
                first_step: step,
            },
            |u| {
                if let Some(h) = hist.as_mut() {
                    record_activations(u.trace, hist_layer, h)?;
                }
                log_group_norms(u.step, u.clip, &mut grad_norms)?;
                if averaging {
                    match average.as_mut() {
                        Some(a) => a.update(u.params),
                        None => average = Some(ParamAverage::new(u.params)),
                    }
                }
                Ok(())
            },
        )?;
        step += stats.updates;

        let candidate = average.as_ref().map_or(&params, |a| a.mean());
        let valid = evaluate(candidate, &data.valid, settings.eval_bptt)
            .map_err(with_context(phase, epoch, step))?
            .perplexity;
        curve.push(EpochRecord {
            epoch,
            train_loss: stats.mean_loss,
            valid_perplexity: valid,
        });
        if valid < best_ppl {
            best = candidate.clone();
            best_ppl = valid;
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience && epoch < cfg.epochs {
                stopped_early = true;
                break;
            }
        }
    }

    let histograms = hist.map(ActivationHistogram::finish);
    let drift = histograms
        .as_ref()
        .filter(|s| s.windows.len() >= 2)
        .map(drift_metric)
        .transpose()?;
    Ok(PhaseOutcome {
        phase,
        initial_params: Some(initial_params),
        params: best,
        initial_valid_perplexity: initial_valid,
        best_valid_perplexity: best_ppl,
        best_epoch,
        curve,
        stopped_early,
        updates: step,
        grad_norms,
        histograms,
        drift,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        resumed: false,
    })
}

/// Where a schedule persists checkpoints and its manifest.
#[derive(Debug, Clone)]
pub struct ScheduleStore {
    pub dir: PathBuf,
    /// Identifies the configuration; a mismatch on resume is an error.
    pub config_hash: String,
    pub vocab_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: usize,
    pub layer_count: usize,
    pub checkpoint: String,
    pub sha256: String,
    pub initial_valid_perplexity: f64,
    pub best_valid_perplexity: f64,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub updates: usize,
    pub curve: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleManifest {
    pub format: String,
    pub config_hash: String,
    pub vocab_fingerprint: Option<String>,
    pub phases: Vec<PhaseRecord>,
}

impl ScheduleManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: ScheduleManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown manifest format {:?}",
                m.format
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Callback invoked after each newly trained phase is checkpointed.
pub type PhaseHook<'a> = &'a mut dyn FnMut(&PhaseOutcome) -> Result<()>;

#[derive(Default)]
pub struct ScheduleOptions<'a> {
    pub store: Option<&'a ScheduleStore>,
    /// Stop after this phase, as if the process were killed there.
    pub stop_after: Option<usize>,
    pub on_phase: Option<PhaseHook<'a>>,
}

fn open_manifest(store: &ScheduleStore) -> Result<ScheduleManifest> {
    fs::create_dir_all(&store.dir)?;
    let path = store.dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(ScheduleManifest {
            format: MANIFEST_FORMAT.into(),
            config_hash: store.config_hash.clone(),
            vocab_fingerprint: store.vocab_fingerprint.clone(),
            phases: Vec::new(),
        });
    }
    let m = ScheduleManifest::load(&path)?;
    if m.config_hash != store.config_hash {
        return Err(Error::Checkpoint(format!(
            "{} was written by config {}, current config is {}",
            store.dir.display(),
            m.config_hash,
            store.config_hash
        )));
    }
    if m.vocab_fingerprint != store.vocab_fingerprint {
        return Err(Error::Checkpoint(
            "vocabulary differs from the resumed run".into(),
        ));
    }
    Ok(m)
}

fn resume_phase(store: &ScheduleStore, rec: &PhaseRecord) -> Result<PhaseOutcome> {
    let path = store.dir.join(&rec.checkpoint);
    let text = fs::read(&path)?;
    if sha256_hex(&text) != rec.sha256 {
        return Err(Error::Checkpoint(format!(
            "{} does not match the hash in the manifest",
            path.display()
        )));
    }
    let ckpt: Checkpoint = serde_json::from_slice(&text)?;
    let params = ckpt.to_params()?;
    Ok(PhaseOutcome {
        phase: rec.phase,
        initial_params: None,
        params,
        initial_valid_perplexity: rec.initial_valid_perplexity,
        best_valid_perplexity: rec.best_valid_perplexity,
        best_epoch: rec.best_epoch,
        curve: rec.curve.clone(),
        stopped_early: rec.stopped_early,
        updates: rec.updates,
        grad_norms: Vec::new(),
        histograms: None,
        drift: None,
        wall_clock_secs: rec.wall_clock_secs,
        resumed: true,
    })
}

/// Initial parameters of phase `k` given the previous phase's best.
pub fn phase_start(
    plan: &PhasePlan,
    k: usize,
    previous: Option<&NetworkParams>,
    vocab: usize,
    settings: &TrainSettings,
) -> Result<NetworkParams> {
    let cfg = &plan.phases[k - 1];
    match previous {
        None if k == 1 => NetworkParams::init(
            &plan.sizes_at(1, vocab, settings),
            cfg.seed,
            settings.init_scale,
        ),
        None => Err(Error::InvalidValue(format!(
            "phase {k} needs phase {} params",
            k - 1
        ))),
        Some(p) => grow(
            p,
            cfg.hidden_size,
            cfg.softmax_init,
            cfg.seed,
            settings.init_scale,
        ),
    }
}

/// Runs every phase in order, each starting from the previous phase's best.
pub fn run_schedule(
    plan: &PhasePlan,
    settings: &TrainSettings,
    data: &TrainingData,
    mut opts: ScheduleOptions<'_>,
) -> Result<Vec<PhaseOutcome>> {
    plan.validate(settings)?;
    let mut manifest = opts.store.map(open_manifest).transpose()?;
    let mut outcomes: Vec<PhaseOutcome> = Vec::new();
    let mut seeds = Vec::new();

    for (i, cfg) in plan.phases.iter().enumerate() {
        let k = i + 1;
        seeds.push(cfg.seed);
        let done = manifest.as_ref().and_then(|m| m.phases.get(i));
        let outcome = if let (Some(store), Some(rec)) = (opts.store, done) {
            resume_phase(store, rec)?
        } else {
            let start = phase_start(
                plan,
                k,
                outcomes.last().map(|o| &o.params),
                data.vocab_size,
                settings,
            )?;
            let out = run_phase(start, k, cfg, settings, data)?;
            if let (Some(store), Some(m)) = (opts.store, manifest.as_mut()) {
                let file = checkpoint_file(k);
                let json = Checkpoint::from_params(
                    &out.params,
                    k,
                    seeds.clone(),
                    store.vocab_fingerprint.clone(),
                )
                .to_json()?;
                fs::write(store.dir.join(&file), &json)?;
                if let Some(hook) = opts.on_phase.as_mut() {
                    hook(&out)?;
                }
                m.phases.push(PhaseRecord {
                    phase: k,
                    layer_count: cfg.layer_count,
                    checkpoint: file,
                    sha256: sha256_hex(json.as_bytes()),
                    initial_valid_perplexity: out.initial_valid_perplexity,
                    best_valid_perplexity: out.best_valid_perplexity,
                    best_epoch: out.best_epoch,
                    stopped_early: out.stopped_early,
                    updates: out.updates,
                    curve: out.curve.clone(),
                    wall_clock_secs: out.wall_clock_secs,
                });
                m.save(&store.dir.join(MANIFEST_FILE))?;
            } else if let Some(hook) = opts.on_phase.as_mut() {
                hook(&out)?;
            }
            out
        };
        outcomes.push(outcome);
        if opts.stop_after == Some(k) {
            break;
        }
    }
    Ok(outcomes)
}
