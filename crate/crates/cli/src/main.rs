//! CLI for the point-cloud refinement pipeline.
//!
//! The demo recipe:
//!
//! ```text
//! pointrefine synth     --config demo.cfg --out out
//! pointrefine train-vae --config demo.cfg --out out
//! pointrefine train-ddpm --config demo.cfg --out out
//! pointrefine refine    --config demo.cfg --out out
//! pointrefine eval      --config demo.cfg --out out --svg
//! ```

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use pointrefine::pipeline::{self, RunConfig, RunContext};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "pointrefine", version, about = "Latent point-diffusion shape refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file (key = value sections); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for artifacts and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Number of synthetic cases; overrides the config value.
    #[arg(long)]
    cases: Option<usize>,

    /// Execution threads (recorded in the resolved config; execution is
    /// single-threaded so outputs stay bitwise reproducible).
    #[arg(long)]
    device_threads: Option<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic paired dataset.
    Synth(Common),
    /// Train the hierarchical VAE on the training split.
    TrainVae(Common),
    /// Train both conditional denoisers against the frozen VAE.
    TrainDdpm(Common),
    /// Refine the test split and write raw + post-processed clouds.
    Refine(Common),
    /// Metrics, strata, and statistical tests over refined outputs.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Also emit a CD before/after scatter as a static SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Sweep VAE checkpoints: reconstruction F1 + refinement CD/HD.
    AblateKl(Common),
    /// Wall-clock timing table per pipeline stage (informational).
    Bench(Common),
}

fn context(common: &Common) -> anyhow::Result<RunContext> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(cases) = common.cases {
        cfg.cases = cases;
    }
    if let Some(threads) = common.device_threads {
        cfg.threads = threads;
    }
    Ok(RunContext::new(cfg, common.out.clone()))
}

fn finish(ctx: RunContext) {
    for line in &ctx.log {
        println!("{line}");
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(common) => {
            let mut ctx = context(&common)?;
            pipeline::cmd_synth(&mut ctx)?;
            finish(ctx);
        }
        Command::TrainVae(common) => {
            let mut ctx = context(&common)?;
            pipeline::cmd_train_vae(&mut ctx)?;
            finish(ctx);
        }
        Command::TrainDdpm(common) => {
            let mut ctx = context(&common)?;
            pipeline::cmd_train_ddpm(&mut ctx)?;
            finish(ctx);
        }
        Command::Refine(common) => {
            let mut ctx = context(&common)?;
            pipeline::cmd_refine(&mut ctx)?;
            finish(ctx);
        }
        Command::Eval { common, svg } => {
            let mut ctx = context(&common)?;
            pipeline::cmd_eval(&mut ctx, svg)?;
            finish(ctx);
        }
        Command::AblateKl(common) => {
            let mut ctx = context(&common)?;
            pipeline::cmd_ablate_kl(&mut ctx)?;
            finish(ctx);
        }
        Command::Bench(common) => {
            let mut ctx = context(&common)?;
            pipeline::cmd_bench(&mut ctx)?;
            finish(ctx);
        }
    }
    Ok(())
}
