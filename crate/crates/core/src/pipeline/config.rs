//! Run configuration: every hyperparameter of every stage, serialized as
//! flat `key = value` text under `[section]` headers. Values round-trip
//! losslessly (floats are written in shortest-exact form).

use crate::diffusion::{DdpmTrainConfig, GlobalDenoiserConfig, LocalDenoiserConfig};
use crate::error::{Error, Result};
use crate::postprocess::PostprocessConfig;
use crate::synthdata::{DatasetConfig, SeverityMix};
use crate::vae::{KlAnnealSchedule, VaeConfig, VaeTrainConfig};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // [run]
    /// Master seed; every subsystem derives named streams from it.
    pub seed: u64,
    /// Dataset directory (written by `synth`, read by the rest).
    pub dataset_dir: String,
    /// Execution threads. Present for interface compatibility; execution
    /// is single-threaded so results are bitwise reproducible.
    pub threads: u32,

    // [dataset]
    pub cases: usize,
    pub points: usize,
    pub spacing_mm: f64,
    pub closing_radius: usize,
    pub mix_mild: f64,
    pub mix_moderate: f64,
    pub mix_severe: f64,
    /// Explicit split counts; all zero selects the 405:61:112 rule.
    pub split_train: usize,
    pub split_val: usize,
    pub split_test: usize,

    // [vae]
    pub d_z: usize,
    pub d_h: usize,
    pub vae_hidden: usize,
    pub logvar_bound: f64,
    /// Std of the fixed-variance reconstruction likelihood (standardized
    /// units); the ELBO data term is MSE / (2 * recon_sigma^2).
    pub recon_sigma: f64,
    pub lambda_z: f64,
    pub lambda_h: f64,
    /// KL warmup length; 0 selects half the VAE epochs.
    pub warmup_epochs: u32,
    pub vae_epochs: u32,
    pub vae_lr: f64,
    pub vae_batch: usize,
    /// Extra checkpoint epochs for the KL ablation sweep.
    pub snapshot_epochs: Vec<u32>,

    // [ddpm]
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub ddpm_epochs: u32,
    pub ddpm_lr: f64,
    pub ddpm_batch: usize,
    pub ddpm_width: usize,
    pub se_blocks: usize,
    pub se_bottleneck: usize,
    pub time_dim: usize,
    pub cond_dim: usize,

    // [postprocess]
    pub mls_radius_mm: f64,
    pub densify_gap_mm: f64,
    pub densify_neighborhood: usize,
    pub outlier_min_neighbors: usize,
    pub outlier_radius_mm: f64,

    // [eval]
    pub strata_threshold_mm: f64,
    pub f1_tau_percent: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            dataset_dir: "data".into(),
            threads: 1,
            cases: 150,
            points: 256,
            spacing_mm: 2.0,
            closing_radius: 1,
            mix_mild: 0.4,
            mix_moderate: 0.3,
            mix_severe: 0.3,
            split_train: 0,
            split_val: 0,
            split_test: 0,
            d_z: 32,
            d_h: 4,
            vae_hidden: 128,
            logvar_bound: 10.0,
            recon_sigma: 0.025,
            lambda_z: 0.4,
            lambda_h: 0.4,
            warmup_epochs: 0,
            vae_epochs: 200,
            vae_lr: 1e-3,
            vae_batch: 8,
            snapshot_epochs: Vec::new(),
            t_steps: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            ddpm_epochs: 300,
            ddpm_lr: 2e-4,
            ddpm_batch: 10,
            ddpm_width: 128,
            se_blocks: 4,
            se_bottleneck: 32,
            time_dim: 64,
            cond_dim: 64,
            mls_radius_mm: 10.0,
            densify_gap_mm: 10.0,
            densify_neighborhood: 10,
            outlier_min_neighbors: 5,
            outlier_radius_mm: 15.0,
            strata_threshold_mm: 10.0,
            f1_tau_percent: 1.0,
        }
    }
}

impl RunConfig {
    pub fn resolved_warmup(&self) -> u32 {
        if self.warmup_epochs == 0 {
            (self.vae_epochs / 2).max(1)
        } else {
            self.warmup_epochs
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            n_cases: self.cases,
            n_points: self.points,
            spacing_mm: self.spacing_mm,
            closing_radius: self.closing_radius,
            mix: SeverityMix {
                mild: self.mix_mild,
                moderate: self.mix_moderate,
                severe: self.mix_severe,
            },
            split_override: (self.split_train + self.split_val + self.split_test > 0)
                .then_some((self.split_train, self.split_val, self.split_test)),
        }
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            n_points: self.points,
            d_z: self.d_z,
            d_h: self.d_h,
            hidden: self.vae_hidden,
            logvar_bound: self.logvar_bound,
            recon_sigma: self.recon_sigma,
        }
    }

    pub fn vae_train_config(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            model: self.vae_config(),
            schedule: KlAnnealSchedule {
                warmup_epochs: self.resolved_warmup(),
                max_lambda_z: self.lambda_z,
                max_lambda_h: self.lambda_h,
            },
            epochs: self.vae_epochs,
            lr: self.vae_lr,
            batch_size: self.vae_batch,
            snapshot_epochs: self.snapshot_epochs.clone(),
        }
    }

    pub fn ddpm_train_config(&self) -> DdpmTrainConfig {
        DdpmTrainConfig {
            t_steps: self.t_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            epochs: self.ddpm_epochs,
            lr: self.ddpm_lr,
            batch_size: self.ddpm_batch,
            global: GlobalDenoiserConfig {
                d_z: self.d_z,
                width: self.ddpm_width,
                se_blocks: self.se_blocks,
                bottleneck: self.se_bottleneck,
                time_dim: self.time_dim,
                cond_dim: self.cond_dim,
            },
            local: LocalDenoiserConfig {
                d_local: 3 + self.d_h,
                d_z: self.d_z,
                width: self.ddpm_width,
                time_dim: self.time_dim,
            },
        }
    }

    pub fn postprocess_config(&self) -> PostprocessConfig {
        PostprocessConfig {
            mls_radius_mm: self.mls_radius_mm,
            densify_gap_mm: self.densify_gap_mm,
            densify_neighborhood: self.densify_neighborhood,
            outlier_min_neighbors: self.outlier_min_neighbors,
            outlier_radius_mm: self.outlier_radius_mm,
        }
    }

    /// Canonical `key = value` text. Parsing this text reproduces the
    /// config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let snapshots =
            self.snapshot_epochs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",");
        let _ = write!(
            s,
            "[run]\n\
             seed = {}\n\
             dataset_dir = {}\n\
             threads = {}\n\
             \n\
             [dataset]\n\
             cases = {}\n\
             points = {}\n\
             spacing_mm = {}\n\
             closing_radius = {}\n\
             mix_mild = {}\n\
             mix_moderate = {}\n\
             mix_severe = {}\n\
             split_train = {}\n\
             split_val = {}\n\
             split_test = {}\n\
             \n\
             [vae]\n\
             d_z = {}\n\
             d_h = {}\n\
             hidden = {}\n\
             logvar_bound = {}\n\
             recon_sigma = {}\n\
             lambda_z = {}\n\
             lambda_h = {}\n\
             warmup_epochs = {}\n\
             epochs = {}\n\
             lr = {}\n\
             batch_size = {}\n\
             snapshot_epochs = {}\n\
             \n\
             [ddpm]\n\
             t_steps = {}\n\
             beta_start = {}\n\
             beta_end = {}\n\
             epochs = {}\n\
             lr = {}\n\
             batch_size = {}\n\
             width = {}\n\
             se_blocks = {}\n\
             se_bottleneck = {}\n\
             time_dim = {}\n\
             cond_dim = {}\n\
             \n\
             [postprocess]\n\
             mls_radius_mm = {}\n\
             densify_gap_mm = {}\n\
             densify_neighborhood = {}\n\
             outlier_min_neighbors = {}\n\
             outlier_radius_mm = {}\n\
             \n\
             [eval]\n\
             strata_threshold_mm = {}\n\
             f1_tau_percent = {}\n",
            self.seed,
            self.dataset_dir,
            self.threads,
            self.cases,
            self.points,
            self.spacing_mm,
            self.closing_radius,
            self.mix_mild,
            self.mix_moderate,
            self.mix_severe,
            self.split_train,
            self.split_val,
            self.split_test,
            self.d_z,
            self.d_h,
            self.vae_hidden,
            self.logvar_bound,
            self.recon_sigma,
            self.lambda_z,
            self.lambda_h,
            self.warmup_epochs,
            self.vae_epochs,
            self.vae_lr,
            self.vae_batch,
            snapshots,
            self.t_steps,
            self.beta_start,
            self.beta_end,
            self.ddpm_epochs,
            self.ddpm_lr,
            self.ddpm_batch,
            self.ddpm_width,
            self.se_blocks,
            self.se_bottleneck,
            self.time_dim,
            self.cond_dim,
            self.mls_radius_mm,
            self.densify_gap_mm,
            self.densify_neighborhood,
            self.outlier_min_neighbors,
            self.outlier_radius_mm,
            self.strata_threshold_mm,
            self.f1_tau_percent,
        );
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                match section.as_str() {
                    "run" | "dataset" | "vae" | "ddpm" | "postprocess" | "eval" => {}
                    other => {
                        return Err(Error::Config(format!(
                            "line {}: unknown section [{other}]",
                            lineno + 1
                        )))
                    }
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value).map_err(|e| {
                Error::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match (section, key) {
            ("run", "seed") => self.seed = parse(key, value)?,
            ("run", "dataset_dir") => self.dataset_dir = value.to_string(),
            ("run", "threads") => self.threads = parse(key, value)?,
            ("dataset", "cases") => self.cases = parse(key, value)?,
            ("dataset", "points") => self.points = parse(key, value)?,
            ("dataset", "spacing_mm") => self.spacing_mm = parse(key, value)?,
            ("dataset", "closing_radius") => self.closing_radius = parse(key, value)?,
            ("dataset", "mix_mild") => self.mix_mild = parse(key, value)?,
            ("dataset", "mix_moderate") => self.mix_moderate = parse(key, value)?,
            ("dataset", "mix_severe") => self.mix_severe = parse(key, value)?,
            ("dataset", "split_train") => self.split_train = parse(key, value)?,
            ("dataset", "split_val") => self.split_val = parse(key, value)?,
            ("dataset", "split_test") => self.split_test = parse(key, value)?,
            ("vae", "d_z") => self.d_z = parse(key, value)?,
            ("vae", "d_h") => self.d_h = parse(key, value)?,
            ("vae", "hidden") => self.vae_hidden = parse(key, value)?,
            ("vae", "logvar_bound") => self.logvar_bound = parse(key, value)?,
            ("vae", "recon_sigma") => self.recon_sigma = parse(key, value)?,
            ("vae", "lambda_z") => self.lambda_z = parse(key, value)?,
            ("vae", "lambda_h") => self.lambda_h = parse(key, value)?,
            ("vae", "warmup_epochs") => self.warmup_epochs = parse(key, value)?,
            ("vae", "epochs") => self.vae_epochs = parse(key, value)?,
            ("vae", "lr") => self.vae_lr = parse(key, value)?,
            ("vae", "batch_size") => self.vae_batch = parse(key, value)?,
            ("vae", "snapshot_epochs") => {
                self.snapshot_epochs = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse("snapshot_epochs", v.trim()))
                        .collect::<Result<_>>()?
                };
            }
            ("ddpm", "t_steps") => self.t_steps = parse(key, value)?,
            ("ddpm", "beta_start") => self.beta_start = parse(key, value)?,
            ("ddpm", "beta_end") => self.beta_end = parse(key, value)?,
            ("ddpm", "epochs") => self.ddpm_epochs = parse(key, value)?,
            ("ddpm", "lr") => self.ddpm_lr = parse(key, value)?,
            ("ddpm", "batch_size") => self.ddpm_batch = parse(key, value)?,
            ("ddpm", "width") => self.ddpm_width = parse(key, value)?,
            ("ddpm", "se_blocks") => self.se_blocks = parse(key, value)?,
            ("ddpm", "se_bottleneck") => self.se_bottleneck = parse(key, value)?,
            ("ddpm", "time_dim") => self.time_dim = parse(key, value)?,
            ("ddpm", "cond_dim") => self.cond_dim = parse(key, value)?,
            ("postprocess", "mls_radius_mm") => self.mls_radius_mm = parse(key, value)?,
            ("postprocess", "densify_gap_mm") => self.densify_gap_mm = parse(key, value)?,
            ("postprocess", "densify_neighborhood") => {
                self.densify_neighborhood = parse(key, value)?
            }
            ("postprocess", "outlier_min_neighbors") => {
                self.outlier_min_neighbors = parse(key, value)?
            }
            ("postprocess", "outlier_radius_mm") => self.outlier_radius_mm = parse(key, value)?,
            ("eval", "strata_threshold_mm") => self.strata_threshold_mm = parse(key, value)?,
            ("eval", "f1_tau_percent") => self.f1_tau_percent = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!("unknown key {key:?} in section [{section}]")))
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let mix = self.mix_mild + self.mix_moderate + self.mix_severe;
        if (mix - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("severity mix sums to {mix}, expected 1")));
        }
        if self.points == 0 || self.d_z == 0 || self.t_steps == 0 {
            return Err(Error::Config("points, d_z, and t_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
