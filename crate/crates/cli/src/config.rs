use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gradual_lstm::corpus::{DEFAULT_EOS, DEFAULT_UNK};
use gradual_lstm::glsched::{sha256_hex, PhaseConfig, PhasePlan, TrainSettings};
use serde::{Deserialize, Serialize};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "GRADUAL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_eos")]
    pub eos: String,
    #[serde(default = "default_unk")]
    pub unk: String,
}

fn default_eos() -> String {
    DEFAULT_EOS.into()
}

fn default_unk() -> String {
    DEFAULT_UNK.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Gradual growth with layer-wise clipping.
    Full,
    /// Gradual growth with a global clip at the equivalent norm.
    NoLwgc,
    /// Full depth from the first update with the last phase's settings.
    NoGl,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoLwgc => "no_lwgc",
            Arm::NoGl => "no_gl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSettings {
    pub arms: Vec<Arm>,
    /// Epoch budget of the full-depth arm; defaults to the sum over phases.
    pub no_gl_epochs: Option<usize>,
    /// Train arms on separate threads.
    pub parallel: bool,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            arms: vec![Arm::Full, Arm::NoLwgc, Arm::NoGl],
            no_gl_epochs: None,
            parallel: true,
        }
    }
}

/// A run, as read from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub corpus: CorpusPaths,
    pub training: TrainSettings,
    #[serde(rename = "phase")]
    pub phases: Vec<PhaseConfig>,
    #[serde(default)]
    pub ablation: AblationSettings,
}

impl RunConfig {
    pub fn plan(&self) -> PhasePlan {
        PhasePlan {
            phases: self.phases.clone(),
        }
    }
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::from_str(&text, base_dir).with_context(|| format!("in config {}", path.display()))
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        let loaded = LoadedConfig { config, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Cross-field checks that must pass before any work starts.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        if c.name.trim().is_empty() {
            bail!("config name is empty");
        }
        c.plan().validate(&c.training)?;
        if c.ablation.arms.is_empty() {
            bail!("ablation lists no arms");
        }
        if c.ablation.no_gl_epochs == Some(0) {
            bail!("ablation.no_gl_epochs must be positive");
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Run directory; a relative `output_dir` sits under `output_root` when given.
    pub fn run_dir(&self, output_root: Option<&Path>) -> PathBuf {
        let out = &self.config.output_dir;
        match output_root {
            Some(root) if out.is_relative() => root.join(out),
            _ => self.resolve(out),
        }
    }

    /// Hash of everything that determines training, corpus contents included.
    pub fn hash(&self) -> Result<String> {
        let c = &self.config;
        let mut material =
            serde_json::to_string(&(&c.training, &c.phases, &c.corpus.eos, &c.corpus.unk))?;
        for p in [&c.corpus.train, &c.corpus.valid] {
            let bytes = fs::read(self.resolve(p))
                .with_context(|| format!("reading corpus {}", p.display()))?;
            material.push_str(&sha256_hex(&bytes));
        }
        Ok(sha256_hex(material.as_bytes()))
    }
}
