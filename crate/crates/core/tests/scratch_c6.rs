use pointrefine::io::read_point_cloud;
use pointrefine::metrics::hausdorff;
use pointrefine::pipeline::eval::median;
use pointrefine::pipeline::{self, RunConfig, RunContext};
use pointrefine::geometry::destandardize;
use std::time::Instant;

#[test]
fn criterion6_dry_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = RunConfig {
        seed: 60,
        dataset_dir: tmp.path().join("data").to_string_lossy().into_owned(),
        cases: 150,
        split_train: 105,
        split_val: 11,
        split_test: 34,
        vae_epochs: 200,
        ddpm_epochs: 300,
        ..Default::default()
    };

    let mut ctx = RunContext::new(cfg.clone(), out.clone());
    let t = Instant::now();
    pipeline::cmd_synth(&mut ctx).unwrap();
    eprintln!("synth: {:.0}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    pipeline::cmd_train_vae(&mut ctx).unwrap();
    eprintln!("train-vae: {:.0}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    pipeline::cmd_train_ddpm(&mut ctx).unwrap();
    eprintln!("train-ddpm: {:.0}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    pipeline::cmd_refine(&mut ctx).unwrap();
    eprintln!("refine: {:.0}s", t.elapsed().as_secs_f64());
    let summary = pipeline::cmd_eval(&mut ctx, true).unwrap();
    for line in &ctx.log {
        eprintln!("{line}");
    }

    // criterion-6 quantities
    let rows = pipeline::eval::read_per_case_csv(&out.join("per_case.csv")).unwrap();
    let init_cd: Vec<f64> = rows.iter().map(|r| r.init_cd).collect();
    let ref_cd: Vec<f64> = rows.iter().map(|r| r.refined_cd).collect();
    let init_hd: Vec<f64> = rows.iter().map(|r| r.init_hd).collect();
    let ref_hd: Vec<f64> = rows.iter().map(|r| r.refined_hd).collect();
    eprintln!(
        "median CD: init {:.2} refined {:.2} (ratio {:.3})",
        median(&init_cd),
        median(&ref_cd),
        median(&ref_cd) / median(&init_cd)
    );
    eprintln!(
        "median HD: init {:.2} refined {:.2} (ratio {:.3})",
        median(&init_hd),
        median(&ref_hd),
        median(&ref_hd) / median(&init_hd)
    );
    eprintln!("p_cd = {:?}", summary.overall().p_cd);

    // criterion-7 quantities: HD raw vs postprocessed
    let ds = pipeline::LoadedDataset::open(&tmp.path().join("data")).unwrap();
    let mut improved = 0;
    let mut total = 0;
    for i in ds.indices_of(pointrefine::synthdata::Split::Test) {
        let reference = ds.ref_cloud(i).unwrap();
        let raw_std = read_point_cloud(&out.join("refined_raw").join(format!("{}.pcld", ds.ids[i]))).unwrap();
        let raw_world = destandardize(&raw_std, &ds.stats).unwrap();
        let post = read_point_cloud(&out.join("refined").join(format!("{}.pcld", ds.ids[i]))).unwrap();
        let hd_raw = hausdorff(&raw_world, &reference).unwrap();
        let hd_post = hausdorff(&post, &reference).unwrap();
        if hd_post <= hd_raw {
            improved += 1;
        }
        total += 1;
    }
    eprintln!("criterion 7: HD post <= raw on {improved}/{total}");
}
