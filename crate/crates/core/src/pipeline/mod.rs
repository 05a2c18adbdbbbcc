//! Orchestration: run configuration, dataset directory I/O, the
//! subcommand implementations, and evaluation reports.

pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod eval;

pub use commands::{
    cmd_ablate_kl, cmd_bench, cmd_eval, cmd_refine, cmd_synth, cmd_train_ddpm, cmd_train_vae,
    RunContext,
};
pub use config::RunConfig;
pub use dataset_io::LoadedDataset;
pub use eval::{stratify, summarize, CaseRow, EvalSummary, Stratum};
