//! End-to-end command flow at tiny dimensions: every subcommand runs, the
//! documented artifacts appear, the degenerate evaluation case is flagged
//! rather than fatal, and the ablation table has one row per checkpoint.

use pointrefine::pipeline::{self, RunConfig, RunContext};
use pointrefine::synthdata::Split;

fn tiny_config(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        seed: 13,
        dataset_dir: dir.join("data").to_string_lossy().into_owned(),
        cases: 12,
        points: 48,
        split_train: 8,
        split_val: 2,
        split_test: 2,
        d_z: 8,
        d_h: 2,
        vae_hidden: 32,
        vae_epochs: 40,
        warmup_epochs: 20,
        vae_batch: 4,
        snapshot_epochs: vec![20, 30, 40],
        t_steps: 10,
        beta_start: 0.01,
        beta_end: 0.3,
        ddpm_epochs: 40,
        ddpm_batch: 4,
        ddpm_width: 32,
        se_blocks: 2,
        se_bottleneck: 8,
        time_dim: 16,
        cond_dim: 16,
        ..Default::default()
    }
}

#[test]
fn full_command_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = tiny_config(tmp.path());

    let mut ctx = RunContext::new(cfg.clone(), out.clone());
    pipeline::cmd_synth(&mut ctx).unwrap();
    let data = tmp.path().join("data");
    assert!(data.join("splits.csv").is_file());
    assert!(data.join("stats.bin").is_file());
    assert!(data.join("cases/case_0000/ref.vgrd").is_file());
    assert!(data.join("cases/case_0000/sub.pcld").is_file());

    // degenerate evaluation: refined == init must flag, not fail
    let ds = pipeline::LoadedDataset::open(&data).unwrap();
    std::fs::create_dir_all(out.join("refined")).unwrap();
    for i in ds.indices_of(Split::Test) {
        std::fs::copy(
            data.join("cases").join(&ds.ids[i]).join("sub.pcld"),
            out.join("refined").join(format!("{}.pcld", ds.ids[i])),
        )
        .unwrap();
    }
    let summary = pipeline::cmd_eval(&mut ctx, false).unwrap();
    assert!(summary.overall().p_cd.is_none(), "identical clouds must be degenerate");
    let overall = summary.overall();
    assert_eq!(overall.init_cd.0, overall.refined_cd.0, "improvement must be zero");
    assert!(std::fs::read_to_string(out.join("summary.csv")).unwrap().contains("degenerate"));

    pipeline::cmd_train_vae(&mut ctx).unwrap();
    assert!(out.join("vae.ckpt").is_file());
    assert!(out.join("vae_epoch_20.ckpt").is_file());
    assert!(out.join("vae_epoch_40.ckpt").is_file());

    pipeline::cmd_train_ddpm(&mut ctx).unwrap();
    assert!(out.join("ddpm_global.ckpt").is_file());
    assert!(out.join("ddpm_local.ckpt").is_file());

    pipeline::cmd_refine(&mut ctx).unwrap();
    for i in ds.indices_of(Split::Test) {
        assert!(out.join("refined").join(format!("{}.pcld", ds.ids[i])).is_file());
        assert!(out.join("refined_raw").join(format!("{}.pcld", ds.ids[i])).is_file());
    }

    let summary = pipeline::cmd_eval(&mut ctx, true).unwrap();
    assert_eq!(summary.overall().count, 2);
    assert!(out.join("per_case.csv").is_file());
    assert!(out.join("summary.csv").is_file());
    assert!(out.join("scatter.svg").is_file());
    assert!(out.join("config.resolved").is_file());

    // resolved config round-trips
    let resolved = RunConfig::load(&out.join("config.resolved")).unwrap();
    assert_eq!(resolved, cfg);

    pipeline::cmd_bench(&mut ctx).unwrap();
    assert!(out.join("bench.csv").is_file());
}

#[test]
fn ablate_kl_emits_one_row_per_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut cfg = tiny_config(tmp.path());
    cfg.ddpm_epochs = 10;

    let mut ctx = RunContext::new(cfg, out.clone());
    pipeline::cmd_synth(&mut ctx).unwrap();
    let table = pipeline::cmd_ablate_kl(&mut ctx).unwrap();
    assert_eq!(table.len(), 3, "one row per VAE checkpoint");
    let text = std::fs::read_to_string(out.join("ablate.csv")).unwrap();
    assert_eq!(text.lines().count(), 4, "header + 3 rows");
    assert!(text.starts_with("epochs,f1_percent,cd_mm,hd_mm"));
    for (epoch, f1, cd, hd) in table {
        assert!([20, 30, 40].contains(&epoch));
        assert!((0.0..=100.0).contains(&f1));
        assert!(cd > 0.0 && hd > 0.0);
    }

    // missing snapshot config is a clear error
    let mut cfg2 = tiny_config(tmp.path());
    cfg2.snapshot_epochs = vec![];
    let mut ctx2 = RunContext::new(cfg2, tmp.path().join("out2"));
    assert!(pipeline::cmd_ablate_kl(&mut ctx2).is_err());
}
