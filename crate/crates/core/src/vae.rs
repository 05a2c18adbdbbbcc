//! Hierarchical VAE over point clouds.
//!
//! Two encoders and one decoder, all per-point MLPs. The global encoder
//! pools per-point features into a latent vector z (permutation invariant);
//! the local encoder maps each point, conditioned on z, to a latent row of
//! 3 spatial channels plus `d_h` features (permutation equivariant); the
//! decoder reconstructs coordinates from (h, z) with an identity skip from
//! h's spatial channels.

use crate::error::{Error, Result};
use crate::geometry::{Frame, PointCloud};
use crate::io::{Checkpoint, CheckpointKind};
use crate::nets::{add_mlp, mlp_forward, split_cols_half, take_cols, MlpHandle, ParamSet};
use crate::numerics::{AdamParams, AdamState, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

/// Model dimensions. Desk-scale defaults; paper-scale values remain valid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeConfig {
    pub n_points: usize,
    pub d_z: usize,
    pub d_h: usize,
    pub hidden: usize,
    /// log-variances are soft-clamped to (-bound, bound)
    pub logvar_bound: f64,
    /// Std of the fixed-variance Gaussian reconstruction likelihood, in
    /// standardized units. The ELBO's data term is MSE / (2 * recon_sigma^2);
    /// the value sets how much posterior noise the KL weights can buy.
    pub recon_sigma: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { n_points: 256, d_z: 32, d_h: 4, hidden: 128, logvar_bound: 10.0, recon_sigma: 0.025 }
    }
}

impl VaeConfig {
    /// Local latent row width: 3 spatial channels + d_h features.
    pub fn local_dim(&self) -> usize {
        3 + self.d_h
    }
}

/// KL weight annealing: linear ramp from 0 to the maxima over
/// `warmup_epochs`, then constant.
#[derive(Clone, Copy, Debug)]
pub struct KlAnnealSchedule {
    pub warmup_epochs: u32,
    pub max_lambda_z: f64,
    pub max_lambda_h: f64,
}

impl Default for KlAnnealSchedule {
    fn default() -> Self {
        Self { warmup_epochs: 1, max_lambda_z: 0.4, max_lambda_h: 0.4 }
    }
}

pub fn anneal_kl(epoch: u32, schedule: &KlAnnealSchedule) -> (f64, f64) {
    let ramp = (epoch as f64 / schedule.warmup_epochs.max(1) as f64).min(1.0);
    (schedule.max_lambda_z * ramp, schedule.max_lambda_h * ramp)
}

/// Global latent vector [1, d_z] plus local latent point cloud
/// [n, 3 + d_h] for one shape.
#[derive(Clone, Debug)]
pub struct LatentPair {
    pub z: Tensor,
    pub h: Tensor,
}

/// ELBO pieces, minimization form:
/// total = recon / (2 * recon_sigma^2) + lz*kl_z + lh*kl_h.
/// `recon` is the raw mean squared error over N x 3; each KL term is the
/// per-dimension mean of the closed-form diagonal-Gaussian KL to N(0, I).
#[derive(Clone, Copy, Debug, Default)]
pub struct ElboTerms {
    pub total: f64,
    pub recon: f64,
    pub kl_z: f64,
    pub kl_h: f64,
}

pub struct Vae {
    pub cfg: VaeConfig,
    pub params: ParamSet,
    enc_point: MlpHandle,
    enc_head: MlpHandle,
    enc_local: MlpHandle,
    dec: MlpHandle,
}

impl Vae {
    pub fn new<R: Rng>(cfg: VaeConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let h = cfg.hidden;
        let f = cfg.local_dim();
        let enc_point = add_mlp(&mut params, "enc_g.point", &[3, h, h], rng);
        let enc_head = add_mlp(&mut params, "enc_g.head", &[h, h, 2 * cfg.d_z], rng);
        let enc_local = add_mlp(&mut params, "enc_l", &[3 + cfg.d_z, h, h, 2 * f], rng);
        let dec = add_mlp(&mut params, "dec", &[f + cfg.d_z, h, h, 3], rng);
        Self { cfg, params, enc_point, enc_head, enc_local, dec }
    }

    fn check_input(&self, s: &PointCloud) -> Result<()> {
        if s.frame() != Frame::Standardized {
            return Err(Error::FrameMismatch {
                expected: Frame::Standardized.name(),
                got: s.frame().name(),
            });
        }
        if s.len() != self.cfg.n_points {
            return Err(Error::ShapeMismatch(format!(
                "cloud has {} points, model expects {}",
                s.len(),
                self.cfg.n_points
            )));
        }
        Ok(())
    }

    fn cloud_tensor(s: &PointCloud) -> Tensor {
        let data: Vec<f64> = s.points().iter().flatten().copied().collect();
        Tensor::from_parts(vec![s.len(), 3], data)
    }

    // ---- tape-level graph builders ----

    /// Per-point features, symmetric max-pool, head: (mu_z, logvar_z),
    /// both [1, d_z], logvar soft-clamped.
    fn encode_global_t(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let feats = mlp_forward(tape, vars, self.enc_point, x, true)?;
        let pooled = tape.max_pool_rows(feats)?;
        let head = mlp_forward(tape, vars, self.enc_head, pooled, false)?;
        let (mu, logvar_raw) = split_cols_half(tape, head)?;
        let logvar = tape.soft_clamp(logvar_raw, self.cfg.logvar_bound)?;
        Ok((mu, logvar))
    }

    /// Per-point network with z broadcast onto every row:
    /// (mu_h, logvar_h), both [n, 3 + d_h].
    fn encode_local_t(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        z: Var,
    ) -> Result<(Var, Var)> {
        let n = tape.shape(x)[0];
        let zb = tape.broadcast_rows(z, n)?;
        let input = tape.concat_cols(&[x, zb])?;
        let out = mlp_forward(tape, vars, self.enc_local, input, false)?;
        let (mu, logvar_raw) = split_cols_half(tape, out)?;
        let logvar = tape.soft_clamp(logvar_raw, self.cfg.logvar_bound)?;
        Ok((mu, logvar))
    }

    /// Coordinates from (h, z): per-point MLP plus identity skip from h's
    /// 3 spatial channels.
    fn decode_t(&self, tape: &mut Tape, vars: &[Var], h: Var, z: Var) -> Result<Var> {
        let n = tape.shape(h)[0];
        let zb = tape.broadcast_rows(z, n)?;
        let input = tape.concat_cols(&[h, zb])?;
        let delta = mlp_forward(tape, vars, self.dec, input, false)?;
        let spatial = take_cols(tape, h, 3)?;
        tape.add(spatial, delta)
    }

    /// mu + exp(0.5 * logvar) * eps.
    fn reparam_t(tape: &mut Tape, mu: Var, logvar: Var, eps: &Tensor) -> Result<Var> {
        let half = tape.scale(logvar, 0.5)?;
        let sigma = tape.exp(half)?;
        let e = tape.constant(eps.clone());
        let noise = tape.mul(sigma, e)?;
        tape.add(mu, noise)
    }

    /// Per-dimension mean of 0.5 * (mu^2 + e^lv - 1 - lv).
    fn kl_t(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
        let mu2 = tape.mul(mu, mu)?;
        let ev = tape.exp(logvar)?;
        let s1 = tape.add(mu2, ev)?;
        let s2 = tape.add_scalar(s1, -1.0)?;
        let s3 = tape.sub(s2, logvar)?;
        let half = tape.scale(s3, 0.5)?;
        tape.mean(half)
    }

    // ---- public operations ----

    /// (mu_z, logvar_z, sampled z), each [1, d_z].
    pub fn encode_global<R: Rng>(
        &self,
        s: &PointCloud,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_input(s)?;
        let mut tape = Tape::new();
        let vars = self.constant_leaves(&mut tape);
        let x = tape.constant(Self::cloud_tensor(s));
        let (mu, logvar) = self.encode_global_t(&mut tape, &vars, x)?;
        let eps = Tensor::randn(vec![1, self.cfg.d_z], rng);
        let z = Self::reparam_t(&mut tape, mu, logvar, &eps)?;
        Ok((tape.value_tensor(mu), tape.value_tensor(logvar), tape.value_tensor(z)))
    }

    /// (mu_h, logvar_h, sampled h), each [n, 3 + d_h].
    pub fn encode_local<R: Rng>(
        &self,
        s: &PointCloud,
        z: &Tensor,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        self.check_input(s)?;
        if z.shape() != [1, self.cfg.d_z] {
            return Err(Error::ShapeMismatch(format!(
                "z has shape {:?}, model expects [1, {}]",
                z.shape(),
                self.cfg.d_z
            )));
        }
        let mut tape = Tape::new();
        let vars = self.constant_leaves(&mut tape);
        let x = tape.constant(Self::cloud_tensor(s));
        let zv = tape.constant(z.clone());
        let (mu, logvar) = self.encode_local_t(&mut tape, &vars, x, zv)?;
        let eps = Tensor::randn(vec![s.len(), self.cfg.local_dim()], rng);
        let h = Self::reparam_t(&mut tape, mu, logvar, &eps)?;
        Ok((tape.value_tensor(mu), tape.value_tensor(logvar), tape.value_tensor(h)))
    }

    /// Decode latents to a standardized-frame cloud.
    pub fn decode(&self, z: &Tensor, h: &Tensor) -> Result<PointCloud> {
        if z.shape() != [1, self.cfg.d_z] || h.shape().len() != 2
            || h.shape()[1] != self.cfg.local_dim()
        {
            return Err(Error::ShapeMismatch(format!(
                "latents z {:?} / h {:?}, model expects [1, {}] / [n, {}]",
                z.shape(),
                h.shape(),
                self.cfg.d_z,
                self.cfg.local_dim()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.constant_leaves(&mut tape);
        let zv = tape.constant(z.clone());
        let hv = tape.constant(h.clone());
        let y = self.decode_t(&mut tape, &vars, hv, zv)?;
        let points = tape.value(y).chunks(3).map(|p| [p[0], p[1], p[2]]).collect();
        PointCloud::new(points, Frame::Standardized)
    }

    /// Posterior means (z from mu_z, h from mu_h given mu_z). This is the
    /// conditioning path: deterministic and noise-free.
    pub fn encode_mean(&self, s: &PointCloud) -> Result<LatentPair> {
        self.check_input(s)?;
        let mut tape = Tape::new();
        let vars = self.constant_leaves(&mut tape);
        let x = tape.constant(Self::cloud_tensor(s));
        let (mu_z, _) = self.encode_global_t(&mut tape, &vars, x)?;
        let (mu_h, _) = self.encode_local_t(&mut tape, &vars, x, mu_z)?;
        Ok(LatentPair { z: tape.value_tensor(mu_z), h: tape.value_tensor(mu_h) })
    }

    /// Fresh posterior samples (the diffusion training targets).
    pub fn encode_sample<R: Rng>(&self, s: &PointCloud, rng: &mut R) -> Result<LatentPair> {
        self.check_input(s)?;
        let mut tape = Tape::new();
        let vars = self.constant_leaves(&mut tape);
        let x = tape.constant(Self::cloud_tensor(s));
        let (mu_z, lv_z) = self.encode_global_t(&mut tape, &vars, x)?;
        let eps_z = Tensor::randn(vec![1, self.cfg.d_z], rng);
        let z = Self::reparam_t(&mut tape, mu_z, lv_z, &eps_z)?;
        let (mu_h, lv_h) = self.encode_local_t(&mut tape, &vars, x, z)?;
        let eps_h = Tensor::randn(vec![s.len(), self.cfg.local_dim()], rng);
        let h = Self::reparam_t(&mut tape, mu_h, lv_h, &eps_h)?;
        Ok(LatentPair { z: tape.value_tensor(z), h: tape.value_tensor(h) })
    }

    /// Reconstruction through posterior means.
    pub fn reconstruct(&self, s: &PointCloud) -> Result<PointCloud> {
        let latents = self.encode_mean(s)?;
        self.decode(&latents.z, &latents.h)
    }

    /// Forward ELBO with fresh reparameterization noise from `rng`.
    pub fn elbo_loss<R: Rng>(
        &self,
        s: &PointCloud,
        lambda_z: f64,
        lambda_h: f64,
        rng: &mut R,
    ) -> Result<ElboTerms> {
        self.check_input(s)?;
        let eps_z = Tensor::randn(vec![1, self.cfg.d_z], rng);
        let eps_h = Tensor::randn(vec![s.len(), self.cfg.local_dim()], rng);
        let (terms, ..) = self.elbo_graph(s, lambda_z, lambda_h, &eps_z, &eps_h, false)?;
        Ok(terms)
    }

    /// ELBO plus parameter gradients, with the reparameterization noise
    /// supplied explicitly (shared-noise evaluation is what makes
    /// finite-difference checks well-posed).
    pub fn elbo_grads(
        &self,
        s: &PointCloud,
        lambda_z: f64,
        lambda_h: f64,
        eps_z: &Tensor,
        eps_h: &Tensor,
    ) -> Result<(ElboTerms, Vec<Tensor>)> {
        let (terms, tape, loss, vars) =
            self.elbo_graph(s, lambda_z, lambda_h, eps_z, eps_h, true)?;
        let grads = tape.backward(loss)?;
        Ok((terms, vars.iter().map(|&v| grads.wrt(v)).collect()))
    }

    #[allow(clippy::type_complexity)]
    fn elbo_graph(
        &self,
        s: &PointCloud,
        lambda_z: f64,
        lambda_h: f64,
        eps_z: &Tensor,
        eps_h: &Tensor,
        with_grads: bool,
    ) -> Result<(ElboTerms, Tape, Var, Vec<Var>)> {
        self.check_input(s)?;
        let mut tape = Tape::new();
        let vars = if with_grads {
            self.params.leaves(&mut tape)
        } else {
            self.constant_leaves(&mut tape)
        };
        let x = tape.constant(Self::cloud_tensor(s));

        let (mu_z, lv_z) = self.encode_global_t(&mut tape, &vars, x)?;
        let z = Self::reparam_t(&mut tape, mu_z, lv_z, eps_z)?;
        let (mu_h, lv_h) = self.encode_local_t(&mut tape, &vars, x, z)?;
        let h = Self::reparam_t(&mut tape, mu_h, lv_h, eps_h)?;
        let decoded = self.decode_t(&mut tape, &vars, h, z)?;

        let recon = tape.mse(decoded, x)?;
        let nll = tape.scale(recon, 1.0 / (2.0 * self.cfg.recon_sigma * self.cfg.recon_sigma))?;
        let kl_z = Self::kl_t(&mut tape, mu_z, lv_z)?;
        let kl_h = Self::kl_t(&mut tape, mu_h, lv_h)?;
        let wz = tape.scale(kl_z, lambda_z)?;
        let wh = tape.scale(kl_h, lambda_h)?;
        let partial = tape.add(nll, wz)?;
        let total = tape.add(partial, wh)?;

        let terms = ElboTerms {
            total: tape.value(total)[0],
            recon: tape.value(recon)[0],
            kl_z: tape.value(kl_z)[0],
            kl_h: tape.value(kl_h)[0],
        };
        Ok((terms, tape, total, vars))
    }

    /// Leaves without gradient tracking, for inference-only passes.
    fn constant_leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors().iter().map(|t| tape.constant(t.clone())).collect()
    }

    fn config_echo(&self) -> String {
        format!(
            "model = vae\nn_points = {}\nd_z = {}\nd_h = {}\nhidden = {}\nlogvar_bound = {}\nrecon_sigma = {}\n",
            self.cfg.n_points,
            self.cfg.d_z,
            self.cfg.d_h,
            self.cfg.hidden,
            self.cfg.logvar_bound,
            self.cfg.recon_sigma
        )
    }

    pub fn to_checkpoint(&self, epochs: u32, final_losses: Vec<f64>) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Vae,
            config_echo: self.config_echo(),
            epochs,
            final_losses,
            params: self.params.named().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::Vae {
            return Err(Error::CheckpointMismatch(format!(
                "expected VAE checkpoint, got {}",
                ckpt.kind.name()
            )));
        }
        let get = |k: &str| -> Result<f64> {
            ckpt.config_value(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::CheckpointMismatch(format!("missing config key {k}")))
        };
        let cfg = VaeConfig {
            n_points: get("n_points")? as usize,
            d_z: get("d_z")? as usize,
            d_h: get("d_h")? as usize,
            hidden: get("hidden")? as usize,
            logvar_bound: get("logvar_bound")?,
            recon_sigma: get("recon_sigma")?,
        };
        let mut rng = crate::rng::stream(0, "vae-load");
        let mut vae = Self::new(cfg, &mut rng);
        vae.params.load_named(&ckpt.params)?;
        Ok(vae)
    }
}

/// Training hyperparameters for [`train_vae`].
#[derive(Clone, Debug)]
pub struct VaeTrainConfig {
    pub model: VaeConfig,
    pub schedule: KlAnnealSchedule,
    pub epochs: u32,
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs at which to capture extra checkpoints (ablation sweeps).
    pub snapshot_epochs: Vec<u32>,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            model: VaeConfig::default(),
            schedule: KlAnnealSchedule { warmup_epochs: 100, ..Default::default() },
            epochs: 200,
            lr: 1e-3,
            batch_size: 8,
            snapshot_epochs: Vec::new(),
        }
    }
}

/// Training output: the model, per-epoch loss means, and any requested
/// snapshot checkpoints.
pub struct VaeTrainOutput {
    pub vae: Vae,
    pub history: Vec<ElboTerms>,
    pub snapshots: Vec<(u32, Checkpoint)>,
}

/// Minimize the ELBO over every shape in `shapes` (both members of each
/// reference/corrupted pair count as independent samples). Deterministic
/// given `seed`.
pub fn train_vae(shapes: &[PointCloud], cfg: &VaeTrainConfig, seed: u64) -> Result<VaeTrainOutput> {
    if shapes.is_empty() {
        return Err(Error::EmptyInput("vae training set".into()));
    }
    let mut init_rng = crate::rng::stream(seed, "vae/init");
    let mut vae = Vae::new(cfg.model, &mut init_rng);
    let mut adam = AdamState::for_params(vae.params.tensors(), AdamParams::with_lr(cfg.lr));
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    let mut snapshots = Vec::new();

    let n = shapes.len();
    let f = cfg.model.local_dim();
    for epoch in 0..cfg.epochs {
        let mut rng = crate::rng::substream(seed, "vae/epoch", epoch as u64);
        let (lambda_z, lambda_h) = anneal_kl(epoch, &cfg.schedule);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);

        let mut epoch_terms = ElboTerms::default();
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut acc: Vec<Tensor> =
                vae.params.tensors().iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
            let mut batch_terms = ElboTerms::default();
            for &i in batch {
                let s = &shapes[i];
                let eps_z = Tensor::randn(vec![1, cfg.model.d_z], &mut rng);
                let eps_h = Tensor::randn(vec![s.len(), f], &mut rng);
                let (terms, grads) = vae.elbo_grads(s, lambda_z, lambda_h, &eps_z, &eps_h)?;
                if !terms.total.is_finite() {
                    return Err(Error::Diverged(format!(
                        "epoch {epoch}: non-finite ELBO on sample {i}"
                    )));
                }
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                        *av += gv;
                    }
                }
                batch_terms.total += terms.total;
                batch_terms.recon += terms.recon;
                batch_terms.kl_z += terms.kl_z;
                batch_terms.kl_h += terms.kl_h;
            }
            let scale = 1.0 / batch.len() as f64;
            for a in &mut acc {
                for v in a.data_mut() {
                    *v *= scale;
                }
            }
            adam.step(vae.params.tensors_mut(), &acc)?;
            epoch_terms.total += batch_terms.total;
            epoch_terms.recon += batch_terms.recon;
            epoch_terms.kl_z += batch_terms.kl_z;
            epoch_terms.kl_h += batch_terms.kl_h;
        }
        let inv = 1.0 / n as f64;
        history.push(ElboTerms {
            total: epoch_terms.total * inv,
            recon: epoch_terms.recon * inv,
            kl_z: epoch_terms.kl_z * inv,
            kl_h: epoch_terms.kl_h * inv,
        });
        if cfg.snapshot_epochs.contains(&(epoch + 1)) {
            let last = history.last().unwrap();
            snapshots.push((
                epoch + 1,
                vae.to_checkpoint(epoch + 1, vec![last.total, last.recon, last.kl_z, last.kl_h]),
            ));
        }
    }
    Ok(VaeTrainOutput { vae, history, snapshots })
}
