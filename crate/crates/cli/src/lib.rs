//! Experiment orchestration for the `mfc` command: corpus generation, auxiliary
//! pretraining, base training, adaptation, evaluation and the ablation matrix.
//!
//! Every artifact lives under one output directory and records the hashes of
//! the configuration and of the artifacts it was derived from, so later stages
//! can refuse stale inputs.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::{variant_name, ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
pub use pipeline::{
    cmd_ablate, cmd_adapt, cmd_eval, cmd_gen_corpus, cmd_pretrain, cmd_train_base, eval_stem,
    threads_from_env, Context,
};
pub use report::{AblationReport, EvalReport, Summary};
