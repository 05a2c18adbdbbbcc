//! Subcommand implementations. Each one echoes the resolved config and
//! seed, writes its artifacts under the output directory, and is bitwise
//! reproducible from (config, seed).

use crate::diffusion::{self, GlobalDenoiser, LocalDenoiser, NoiseSchedule};
use crate::error::{Error, Result, StageExt};
use crate::geometry::{destandardize, marching_cubes, poisson_disk_sample, standardize, PointCloud};
use crate::io;
use crate::metrics::{chamfer, f1_at_tau, hausdorff};
use crate::pipeline::config::RunConfig;
use crate::pipeline::dataset_io::{write_dataset, LoadedDataset};
use crate::pipeline::eval::{
    render_summary, stratify, summarize, write_per_case_csv, write_scatter_svg,
    write_summary_csv, CaseRow, EvalSummary,
};
use crate::synthdata::{make_dataset, Split};
use crate::vae::{train_vae, Vae};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct RunContext {
    pub cfg: RunConfig,
    pub out: PathBuf,
    /// Collects human-readable progress lines; the CLI prints them.
    pub log: Vec<String>,
}

impl RunContext {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Self {
        Self { cfg, out, log: Vec::new() }
    }

    fn log(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    /// Echo the resolved config + seed into the output directory.
    fn echo(&mut self, command: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        self.cfg.save(&self.out.join("config.resolved"))?;
        self.log(format!(
            "{command}: seed = {}, resolved config -> {}",
            self.cfg.seed,
            self.out.join("config.resolved").display()
        ));
        Ok(())
    }

    fn dataset_dir(&self) -> PathBuf {
        PathBuf::from(&self.cfg.dataset_dir)
    }

    pub fn vae_ckpt_path(&self) -> PathBuf {
        self.out.join("vae.ckpt")
    }

    pub fn global_ckpt_path(&self) -> PathBuf {
        self.out.join("ddpm_global.ckpt")
    }

    pub fn local_ckpt_path(&self) -> PathBuf {
        self.out.join("ddpm_local.ckpt")
    }
}

/// Build the synthetic dataset and write it to the dataset directory.
pub fn cmd_synth(ctx: &mut RunContext) -> Result<()> {
    ctx.echo("synth")?;
    let ds = make_dataset(&ctx.cfg.dataset_config(), ctx.cfg.seed).stage("synth")?;
    let dir = ctx.dataset_dir();
    std::fs::create_dir_all(&dir)?;
    write_dataset(&dir, &ds).stage("synth/write")?;
    let (tr, va, te) =
        (ds.indices_of(Split::Train).len(), ds.indices_of(Split::Val).len(), ds.indices_of(Split::Test).len());
    ctx.log(format!(
        "synth: {} cases ({tr} train / {va} val / {te} test) -> {}",
        ds.cases.len(),
        dir.display()
    ));
    Ok(())
}

fn load_standardized_split(
    ds: &LoadedDataset,
    split: Split,
    stats_both: bool,
) -> Result<Vec<PointCloud>> {
    let mut out = Vec::new();
    for i in ds.indices_of(split) {
        out.push(standardize(&ds.ref_cloud(i)?, &ds.stats)?.sorted());
        if stats_both {
            out.push(standardize(&ds.sub_cloud(i)?, &ds.stats)?.sorted());
        }
    }
    Ok(out)
}

/// Train the VAE on both members of every training pair.
pub fn cmd_train_vae(ctx: &mut RunContext) -> Result<()> {
    ctx.echo("train-vae")?;
    let ds = LoadedDataset::open(&ctx.dataset_dir()).stage("train-vae/dataset")?;
    let shapes = load_standardized_split(&ds, Split::Train, true)?;
    ctx.log(format!("train-vae: {} shapes, {} epochs", shapes.len(), ctx.cfg.vae_epochs));
    let t0 = Instant::now();
    let out = train_vae(&shapes, &ctx.cfg.vae_train_config(), ctx.cfg.seed)?;
    let last = out.history.last().expect("nonzero epochs");
    io::write_checkpoint(
        &ctx.vae_ckpt_path(),
        &out.vae.to_checkpoint(
            ctx.cfg.vae_epochs,
            vec![last.total, last.recon, last.kl_z, last.kl_h],
        ),
    )?;
    for (epoch, ckpt) in &out.snapshots {
        io::write_checkpoint(&ctx.out.join(format!("vae_epoch_{epoch}.ckpt")), ckpt)?;
    }
    ctx.log(format!(
        "train-vae: done in {:.1}s, final total {:.5} (recon {:.5}, kl_z {:.4}, kl_h {:.4}) -> {}",
        t0.elapsed().as_secs_f64(),
        last.total,
        last.recon,
        last.kl_z,
        last.kl_h,
        ctx.vae_ckpt_path().display()
    ));
    Ok(())
}

fn load_vae_checked(ctx: &RunContext, path: &Path) -> Result<Vae> {
    let ckpt = io::read_checkpoint(path)?;
    let vae = Vae::from_checkpoint(&ckpt)?;
    if vae.cfg.d_z != ctx.cfg.d_z {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint d_z = {}, config d_z = {}",
            vae.cfg.d_z, ctx.cfg.d_z
        )));
    }
    if vae.cfg.n_points != ctx.cfg.points {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint n_points = {}, config points = {}",
            vae.cfg.n_points, ctx.cfg.points
        )));
    }
    Ok(vae)
}

/// Standardized, sorted (reference, corrupted) pairs of a split.
fn load_pairs(
    ds: &LoadedDataset,
    stats: &crate::geometry::StandardizationStats,
    split: Split,
) -> Result<Vec<(PointCloud, PointCloud)>> {
    let mut pairs = Vec::new();
    for i in ds.indices_of(split) {
        pairs.push((
            standardize(&ds.ref_cloud(i)?, stats)?.sorted(),
            standardize(&ds.sub_cloud(i)?, stats)?.sorted(),
        ));
    }
    Ok(pairs)
}

/// Train both denoisers against the frozen VAE checkpoint.
pub fn cmd_train_ddpm(ctx: &mut RunContext) -> Result<()> {
    ctx.echo("train-ddpm")?;
    let ds = LoadedDataset::open(&ctx.dataset_dir()).stage("train-ddpm/dataset")?;
    let vae = load_vae_checked(ctx, &ctx.vae_ckpt_path()).stage("train-ddpm/vae")?;
    let pairs = load_pairs(&ds, &ds.stats, Split::Train)?;
    ctx.log(format!(
        "train-ddpm: {} pairs, {} epochs, T = {}",
        pairs.len(),
        ctx.cfg.ddpm_epochs,
        ctx.cfg.t_steps
    ));
    let t0 = Instant::now();
    let out = diffusion::train_ddpms(&pairs, &vae, &ctx.cfg.ddpm_train_config(), ctx.cfg.seed)?;
    let g_last = *out.global_history.last().expect("nonzero epochs");
    let l_last = *out.local_history.last().expect("nonzero epochs");
    io::write_checkpoint(
        &ctx.global_ckpt_path(),
        &out.global.to_checkpoint(&out.schedule, ctx.cfg.ddpm_epochs, vec![g_last]),
    )?;
    io::write_checkpoint(
        &ctx.local_ckpt_path(),
        &out.local.to_checkpoint(&out.schedule, ctx.cfg.ddpm_epochs, vec![l_last]),
    )?;
    ctx.log(format!(
        "train-ddpm: done in {:.1}s, final losses global {g_last:.3} local {l_last:.3}",
        t0.elapsed().as_secs_f64()
    ));
    Ok(())
}

fn load_models(ctx: &RunContext) -> Result<(Vae, GlobalDenoiser, LocalDenoiser, NoiseSchedule)> {
    let vae = load_vae_checked(ctx, &ctx.vae_ckpt_path())?;
    let (global, schedule) =
        GlobalDenoiser::from_checkpoint(&io::read_checkpoint(&ctx.global_ckpt_path())?)?;
    let (local, schedule_l) =
        LocalDenoiser::from_checkpoint(&io::read_checkpoint(&ctx.local_ckpt_path())?)?;
    if schedule.len() != schedule_l.len() {
        return Err(Error::CheckpointMismatch(format!(
            "global schedule T = {}, local T = {}",
            schedule.len(),
            schedule_l.len()
        )));
    }
    if global.cfg.d_z != ctx.cfg.d_z {
        return Err(Error::CheckpointMismatch(format!(
            "global denoiser d_z = {}, config d_z = {}",
            global.cfg.d_z, ctx.cfg.d_z
        )));
    }
    Ok((vae, global, local, schedule))
}

/// Post-process a refined cloud; when filtering empties it (possible for
/// badly scattered outputs of under-trained models), keep the unfiltered
/// world-mm cloud so downstream evaluation stays meaningful.
fn postprocess_or_raw(
    cloud: &PointCloud,
    stats: &crate::geometry::StandardizationStats,
    pp: &crate::postprocess::PostprocessConfig,
) -> Result<(PointCloud, bool)> {
    let post = crate::postprocess::postprocess(cloud, stats, pp)?;
    if post.is_empty() {
        return Ok((destandardize(cloud, stats)?, true));
    }
    Ok((post, false))
}

/// Batch inference over the test split: write raw (standardized) and
/// post-processed (world-mm) refined clouds.
pub fn cmd_refine(ctx: &mut RunContext) -> Result<()> {
    ctx.echo("refine")?;
    let ds = LoadedDataset::open(&ctx.dataset_dir()).stage("refine/dataset")?;
    let (vae, global, local, schedule) = load_models(ctx).stage("refine/models")?;
    let raw_dir = ctx.out.join("refined_raw");
    let out_dir = ctx.out.join("refined");
    std::fs::create_dir_all(&raw_dir)?;
    std::fs::create_dir_all(&out_dir)?;
    let pp = ctx.cfg.postprocess_config();
    let t0 = Instant::now();
    let test = ds.indices_of(Split::Test);
    let n = test.len();
    for i in test {
        let sub = standardize(&ds.sub_cloud(i)?, &ds.stats)?.sorted();
        let mut rng = crate::rng::substream(ctx.cfg.seed, "refine/case", i as u64);
        let refined = diffusion::refine(&sub, &vae, &global, &local, &schedule, &mut rng)?;
        io::write_point_cloud(&raw_dir.join(format!("{}.pcld", ds.ids[i])), &refined)?;
        let (post, fell_back) = postprocess_or_raw(&refined, &ds.stats, &pp)?;
        if fell_back {
            ctx.log(format!(
                "refine: postprocess emptied {}, keeping unfiltered cloud",
                ds.ids[i]
            ));
        }
        io::write_point_cloud(&out_dir.join(format!("{}.pcld", ds.ids[i])), &post)?;
    }
    ctx.log(format!(
        "refine: {n} test cases in {:.1}s -> {}",
        t0.elapsed().as_secs_f64(),
        out_dir.display()
    ));
    Ok(())
}

/// Metrics + strata + Wilcoxon over the refined test split.
pub fn cmd_eval(ctx: &mut RunContext, svg: bool) -> Result<EvalSummary> {
    ctx.echo("eval")?;
    let ds = LoadedDataset::open(&ctx.dataset_dir()).stage("eval/dataset")?;
    let refined_dir = ctx.out.join("refined");
    let mut rows = Vec::new();
    for i in ds.indices_of(Split::Test) {
        let reference = ds.ref_cloud(i)?;
        let init = ds.sub_cloud(i)?;
        let refined = io::read_point_cloud(&refined_dir.join(format!("{}.pcld", ds.ids[i])))
            .stage("eval/refined")?;
        let init_cd = chamfer(&init, &reference)?;
        let refined_cd = chamfer(&refined, &reference)?;
        let init_hd = hausdorff(&init, &reference)?;
        let refined_hd = hausdorff(&refined, &reference)?;
        rows.push(CaseRow {
            case_id: ds.ids[i].clone(),
            split: Split::Test.name().into(),
            init_cd,
            refined_cd,
            init_hd,
            refined_hd,
            stratum: stratify(init_cd, ctx.cfg.strata_threshold_mm),
        });
    }
    rows.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let summary = summarize(&rows)?;
    write_per_case_csv(&ctx.out.join("per_case.csv"), &rows)?;
    write_summary_csv(&ctx.out.join("summary.csv"), &summary)?;
    if svg {
        write_scatter_svg(&ctx.out.join("scatter.svg"), &rows)?;
    }
    ctx.log(render_summary(&summary));
    Ok(summary)
}

/// Ablation sweep over VAE checkpoints: reconstruction F1 on the test
/// split plus refinement CD / HD of denoisers trained on each checkpoint.
pub fn cmd_ablate_kl(ctx: &mut RunContext) -> Result<Vec<(u32, f64, f64, f64)>> {
    ctx.echo("ablate-kl")?;
    if ctx.cfg.snapshot_epochs.is_empty() {
        return Err(Error::Config(
            "ablate-kl needs [vae] snapshot_epochs (e.g. 100,200,300)".into(),
        ));
    }
    let ds = LoadedDataset::open(&ctx.dataset_dir()).stage("ablate/dataset")?;
    let shapes = load_standardized_split(&ds, Split::Train, true)?;
    let mut vae_cfg = ctx.cfg.vae_train_config();
    vae_cfg.epochs = vae_cfg.epochs.max(*ctx.cfg.snapshot_epochs.iter().max().unwrap());
    let trained = train_vae(&shapes, &vae_cfg, ctx.cfg.seed)?;
    if trained.snapshots.len() != ctx.cfg.snapshot_epochs.len() {
        return Err(Error::Config(format!(
            "snapshot epochs {:?} exceed training epochs {}",
            ctx.cfg.snapshot_epochs, vae_cfg.epochs
        )));
    }

    let train_pairs = load_pairs(&ds, &ds.stats, Split::Train)?;
    let test_idx = ds.indices_of(Split::Test);
    let mut table = Vec::new();
    for (epoch, ckpt) in &trained.snapshots {
        let vae = Vae::from_checkpoint(ckpt)?;
        // reconstruction F1 over the test split
        let mut f1_sum = 0.0;
        for &i in &test_idx {
            let reference = ds.ref_cloud(i)?;
            let std_ref = standardize(&reference, &ds.stats)?.sorted();
            let recon = vae.reconstruct(&std_ref)?;
            let recon_world = destandardize(&recon, &ds.stats)?;
            let tau = ctx.cfg.f1_tau_percent / 100.0 * reference.bbox_diagonal();
            f1_sum += f1_at_tau(&recon_world, &reference, tau)?;
        }
        let f1 = f1_sum / test_idx.len() as f64;

        // denoisers trained against this checkpoint, then refinement metrics
        let ddpm = diffusion::train_ddpms(
            &train_pairs,
            &vae,
            &ctx.cfg.ddpm_train_config(),
            ctx.cfg.seed ^ u64::from(*epoch),
        )?;
        let pp = ctx.cfg.postprocess_config();
        let mut cds = Vec::new();
        let mut hds = Vec::new();
        for &i in &test_idx {
            let sub = standardize(&ds.sub_cloud(i)?, &ds.stats)?.sorted();
            let mut rng = crate::rng::substream(ctx.cfg.seed ^ u64::from(*epoch), "ablate/case", i as u64);
            let refined =
                diffusion::refine(&sub, &vae, &ddpm.global, &ddpm.local, &ddpm.schedule, &mut rng)?;
            let (post, _) = postprocess_or_raw(&refined, &ds.stats, &pp)?;
            let reference = ds.ref_cloud(i)?;
            cds.push(chamfer(&post, &reference)?);
            hds.push(hausdorff(&post, &reference)?);
        }
        let cd = cds.iter().sum::<f64>() / cds.len() as f64;
        let hd = hds.iter().sum::<f64>() / hds.len() as f64;
        table.push((*epoch, f1, cd, hd));
    }

    let mut text = String::from("epochs,f1_percent,cd_mm,hd_mm\n");
    let mut pretty = format!(
        "{:>8} {:>10} {:>10} {:>10}\n",
        "epochs", "F1 (%)", "CD (mm)", "HD (mm)"
    );
    for (epoch, f1, cd, hd) in &table {
        text.push_str(&format!("{epoch},{f1},{cd},{hd}\n"));
        pretty.push_str(&format!("{epoch:>8} {f1:>10.1} {cd:>10.2} {hd:>10.2}\n"));
    }
    std::fs::write(ctx.out.join("ablate.csv"), text)?;
    ctx.log(pretty);
    Ok(table)
}

/// Wall-clock timings per pipeline stage. Informational only; no
/// thresholds. Uses trained checkpoints when present, otherwise fresh
/// random-weight models (identical cost profile).
pub fn cmd_bench(ctx: &mut RunContext) -> Result<()> {
    ctx.echo("bench")?;
    let ds = LoadedDataset::open(&ctx.dataset_dir()).stage("bench/dataset")?;
    let (vae, global, local, schedule) = match load_models(ctx) {
        Ok(m) => m,
        Err(_) => {
            ctx.log("bench: no checkpoints found, timing randomly initialized models");
            let mut rng = crate::rng::stream(ctx.cfg.seed, "bench/init");
            let vae = Vae::new(ctx.cfg.vae_config(), &mut rng);
            let tc = ctx.cfg.ddpm_train_config();
            let global = GlobalDenoiser::new(tc.global, &mut rng);
            let local = LocalDenoiser::new(tc.local, &mut rng);
            let schedule = diffusion::make_schedule(tc.t_steps, tc.beta_start, tc.beta_end)?;
            (vae, global, local, schedule)
        }
    };
    let pp = ctx.cfg.postprocess_config();
    let cases: Vec<usize> = ds.indices_of(Split::Test).into_iter().take(3).collect();
    let cases = if cases.is_empty() { vec![0] } else { cases };

    let mut t_mc = Vec::new();
    let mut t_pd = Vec::new();
    let mut t_inf = Vec::new();
    let mut t_pp = Vec::new();
    for &i in &cases {
        let grid = ds.ref_grid(i)?;
        let t0 = Instant::now();
        let mesh = marching_cubes(&grid, 0.5)?;
        t_mc.push(t0.elapsed().as_secs_f64());

        let mut rng = crate::rng::substream(ctx.cfg.seed, "bench/case", i as u64);
        let t0 = Instant::now();
        let _cloud = poisson_disk_sample(&mesh, ctx.cfg.points, &mut rng)?;
        t_pd.push(t0.elapsed().as_secs_f64());

        let sub = standardize(&ds.sub_cloud(i)?, &ds.stats)?.sorted();
        let t0 = Instant::now();
        let refined = diffusion::refine(&sub, &vae, &global, &local, &schedule, &mut rng)?;
        t_inf.push(t0.elapsed().as_secs_f64());

        let t0 = Instant::now();
        let _post = postprocess_or_raw(&refined, &ds.stats, &pp)?;
        t_pp.push(t0.elapsed().as_secs_f64());
    }
    let stats = |v: &[f64]| -> (f64, f64) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt();
        (m, sd)
    };
    let rows = [
        ("Marching cubes", stats(&t_mc)),
        ("Poisson disk sampling", stats(&t_pd)),
        ("VAE+DDPM inference", stats(&t_inf)),
        ("Post-processing", stats(&t_pp)),
    ];
    let total: f64 = rows.iter().map(|(_, (m, _))| m).sum();
    let mut pretty = format!("{:<24} {:>14}\n", "Process", "Time (s)");
    let mut csv = String::from("process,mean_s,std_s\n");
    for (name, (m, sd)) in rows {
        pretty.push_str(&format!("{name:<24} {m:>8.3} +- {sd:.3}\n"));
        csv.push_str(&format!("{name},{m},{sd}\n"));
    }
    pretty.push_str(&format!("{:<24} {total:>8.3}\n", "Complete pipeline"));
    csv.push_str(&format!("Complete pipeline,{total},\n"));
    std::fs::write(ctx.out.join("bench.csv"), csv)?;
    ctx.log(pretty);
    Ok(())
}
