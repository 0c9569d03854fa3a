use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gradual_lstm::glsched::{checkpoint_file, MANIFEST_FILE};
use gradual_lstm::net::{Checkpoint, ModelSizes, NetworkParams};
use gradual_lstm_cli::config::OUTPUT_ROOT_ENV;
use gradual_lstm_cli::infolab::PROBE_CSV;
use gradual_lstm_cli::run::{Corpus, METRICS_DIR};
use gradual_lstm_cli::{cmd_eval, cmd_infolab, cmd_train, LoadedConfig, RunOptions};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

const SMALL: &str = r#"
name = "small"
output_dir = "run"

[corpus]
train = "train.txt"
valid = "valid.txt"
test = "valid.txt"

[training]
embedding_size = 6
batch_size = 4
bptt = 8
eval_batch_size = 2
eval_bptt = 16
init_scale = 0.3

[[phase]]
layer_count = 1
hidden_size = 6
epochs = 3
learning_rate = 5.0
seed = 1
clip = { mode = "layerwise", norms = { embedding = 0.05, layer_1 = 0.15, softmax = 0.17 } }

[[phase]]
layer_count = 2
hidden_size = 6
epochs = 2
learning_rate = 5.0
seed = 2
clip = { mode = "layerwise", norms = { embedding = 0.05, layer_1 = 0.12, layer_2 = 0.15, softmax = 0.17 } }
"#;

/// A config over a small repetitive corpus in a fresh directory.
fn small_config(dir: &Path, text: &str) -> LoadedConfig {
    let line = "the cat sat on the mat and the dog ran to the cat\n";
    fs::write(dir.join("train.txt"), line.repeat(40)).unwrap();
    fs::write(dir.join("valid.txt"), line.repeat(5)).unwrap();
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    LoadedConfig::from_file(&path).unwrap()
}

#[test]
fn bundled_configs_validate() {
    for name in ["toy-2phase.toml", "toy-3phase.toml", "ptb-3x960.toml"] {
        let cfg = LoadedConfig::from_file(&repo().join("configs").join(name)).unwrap();
        assert!(!cfg.config.phases.is_empty(), "{name}");
    }
    let ptb = LoadedConfig::from_file(&repo().join("configs/ptb-3x960.toml")).unwrap();
    assert_eq!(ptb.config.phases.len(), 3);
    assert!(ptb.config.phases.iter().all(|p| p.hidden_size == 960));
}

#[test]
fn train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let run = cmd_train(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(run.run_dir, dir.path().join("run"));
    for f in [checkpoint_file(1), checkpoint_file(2), MANIFEST_FILE.into()] {
        assert!(run.run_dir.join(&f).exists(), "{f}");
    }
    let metrics = run.run_dir.join(METRICS_DIR);
    for f in ["phase-1-gradnorms.csv", "phase-2-drift.csv", "curve.csv"] {
        assert!(metrics.join(f).exists(), "{f}");
    }
    // Best validation perplexity never worsens as phases are added.
    assert!(run.outcomes[1].best_valid_perplexity <= run.outcomes[0].best_valid_perplexity);
}

#[test]
fn rejected_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), SMALL);
    let bad = SMALL.replace(
        "layer_1 = 0.15, softmax",
        "layer_1 = 0.15, layer_3 = 0.1, softmax",
    );
    let path = dir.path().join("bad.toml");
    fs::write(&path, bad).unwrap();
    let err = LoadedConfig::from_file(&path).unwrap_err();
    assert!(format!("{err:#}").contains("layer_3"), "{err:#}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn eval_of_uniform_model_is_vocabulary_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let corpus = Corpus::load(&cfg).unwrap();
    let v = corpus.vocab.len();
    let sizes = ModelSizes {
        vocab: v,
        embedding: 6,
        hidden: vec![6],
        tied: false,
    };
    let mut p = NetworkParams::init(&sizes, 3, 0.3).unwrap();
    p.softmax_weight.as_mut().unwrap().fill(0.0);
    p.softmax_bias.fill(0.0);
    let path = dir.path().join("uniform.json");
    Checkpoint::from_params(&p, 1, vec![3], Some(corpus.vocab.fingerprint()))
        .save(&path)
        .unwrap();
    let r = cmd_eval(&cfg, &path, "valid", None).unwrap();
    assert!(
        (r.perplexity - v as f64).abs() < 1e-9 * v as f64,
        "{}",
        r.perplexity
    );
    assert!((r.nll - r.tokens as f64 * (v as f64).ln()).abs() < 1e-8 * r.nll);
    assert!(dir.path().join("eval-valid.json").exists());

    Checkpoint::from_params(&p, 1, vec![3], Some("0".repeat(64)))
        .save(&path)
        .unwrap();
    let err = cmd_eval(&cfg, &path, "valid", None).unwrap_err();
    assert!(
        format!("{err:#}").contains("vocabulary mismatch"),
        "{err:#}"
    );
}

#[test]
fn trained_model_beats_uniform_on_held_out_text() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), SMALL);
    let run = cmd_train(&cfg, &RunOptions::default()).unwrap();
    let ckpt = run.run_dir.join(checkpoint_file(2));
    let r = cmd_eval(&cfg, &ckpt, "test", Some(5)).unwrap();
    assert!(
        r.perplexity < run.corpus.vocab.len() as f64 / 2.0,
        "{}",
        r.perplexity
    );
    assert!(cmd_eval(&cfg, &ckpt, "bogus", None).is_err());
}

#[test]
fn infolab_suite_passes_and_writes_probe_csv() {
    let out = tempfile::tempdir().unwrap();
    let report = cmd_infolab(
        &repo().join("fixtures/infolab/suite.toml"),
        Some(out.path()),
    )
    .unwrap();
    assert!(report.all_passed(), "{:?}", report.checks);
    assert_eq!(report.checks.len(), 8);
    let csv = fs::read_to_string(out.path().join("infolab-out").join(PROBE_CSV)).unwrap();
    // Header plus (epochs + 1) x (layers + 1) rows.
    assert_eq!(csv.lines().count(), 1 + 31 * 3);
}

#[test]
fn corrupted_channel_reports_line() {
    let err = cmd_infolab(&repo().join("fixtures/infolab/corrupt/suite.toml"), None).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("channel.txt:4"), "{msg}");
}

#[test]
fn binary_exit_codes_and_output_root() {
    let bin = env!("CARGO_BIN_EXE_gradual");
    let out = tempfile::tempdir().unwrap();

    let ok = Command::new(bin)
        .args(["infolab"])
        .arg(repo().join("fixtures/infolab/suite.toml"))
        .env(OUTPUT_ROOT_ENV, out.path())
        .output()
        .unwrap();
    assert!(ok.status.success());
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 8);

    let bad = Command::new(bin)
        .args(["infolab"])
        .arg(repo().join("fixtures/infolab/corrupt/suite.toml"))
        .output()
        .unwrap();
    assert!(!bad.status.success());

    let dir = tempfile::tempdir().unwrap();
    small_config(dir.path(), &SMALL.replace("epochs = 3", "epochs = 1"));
    let train = Command::new(bin)
        .args(["train", "--stop-after", "1"])
        .arg(dir.path().join("run.toml"))
        .env(OUTPUT_ROOT_ENV, out.path())
        .output()
        .unwrap();
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    assert!(out.path().join("run").join(checkpoint_file(1)).exists());
    assert!(!dir.path().join("run").exists());
}
