//! Commands behind the `gradual` binary. Each takes a parsed config and
//! writes only under its run directory.

pub mod ablate;
pub mod config;
pub mod infolab;
pub mod run;

pub use ablate::{cmd_ablate, AblationReport};
pub use config::{LoadedConfig, RunConfig};
pub use infolab::{cmd_infolab, InfolabReport};
pub use run::{cmd_eval, cmd_train, EvalReport, RunOptions, TrainRun};
