use std::fs;
use std::path::PathBuf;

use hsi_core::harness::{
    build_tables, render_outputs, replay, run_scenario, BandSelection, CropSpec, DatasetSource, Manifest, MethodConfig,
    RunOptions, ScenarioConfig, Status, NOISY_COLUMN,
};
use hsi_core::net::NetworkConfig;
use hsi_core::noise::NoiseSpec;
use hsi_core::phantom::PhantomConfig;
use hsi_core::{load_cube, save_cube, HsiError, LossKind};

fn tiny(name: &str) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(name, DatasetSource::Phantom(PhantomConfig::new(20, 18, 6, 1)), NoiseSpec::gaussian(5.0, 3));
    cfg.crop = Some(CropSpec { row: 2, col: 1, height: Some(16), width: Some(16), bands: Some(BandSelection::Count(4)) });
    cfg.network = NetworkConfig::uniform(2, 4, 4, 2);
    cfg.train.iterations = 20;
    cfg.train.eval_every = 10;
    cfg.seeds = vec![0, 1];
    cfg
}

fn options(dir: &tempfile::TempDir, sub: &str, jobs: usize) -> RunOptions {
    RunOptions { jobs, out: Some(dir.path().join(sub)) }
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&tiny("smoke"), &options(&dir, "run", 2)).unwrap();
    let manifest = Manifest::load(&out).unwrap();
    assert_eq!(manifest.shape, (16, 16, 4));
    assert_eq!(manifest.seeds.len(), 2);
    assert!(out.join("clean.json").exists());
    for seed in &manifest.seeds {
        assert_eq!(seed.status, Status::Ok);
        assert!(seed.sigma_estimate > 0.0 && seed.sigma_oracle > 0.0);
        let sd = out.join(format!("seed-{}", seed.seed));
        assert!(sd.join("noisy.raw").exists() && sd.join("sigma.json").exists());
        assert_eq!(seed.methods.len(), 4);
        for m in &seed.methods {
            assert_eq!(m.status, Status::Ok, "{}: {:?}", m.name, m.error);
            assert!(m.dir.join("trace.csv").exists() && m.dir.join("metrics.json").exists());
            assert_eq!(load_cube(m.dir.join("estimate")).unwrap().shape(), (16, 16, 4));
            assert_eq!(m.train.seed, seed.seed);
        }
        let proposed = seed.methods.iter().find(|m| m.name == "Proposed").unwrap();
        assert!(proposed.train.optimize_input);
        assert_eq!(proposed.train.loss.sigma, seed.sigma_estimate);
        assert!(!seed.methods.iter().find(|m| m.name == "SURE-DHIP").unwrap().train.optimize_input);
    }
}

#[test]
fn replay_and_job_count_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny("replay");
    cfg.noise = NoiseSpec::gaussian(10.0, 4).with_sparse(0.05);
    let a = run_scenario(&cfg, &options(&dir, "a", 1)).unwrap();
    let b = replay(&a, dir.path().join("b"), 3).unwrap();
    let (ma, mb) = (Manifest::load(&a).unwrap(), Manifest::load(&b).unwrap());
    for (sa, sb) in ma.seeds.iter().zip(&mb.seeds) {
        assert_eq!(sa.sigma_estimate.to_bits(), sb.sigma_estimate.to_bits());
        for (x, y) in sa.methods.iter().zip(&sb.methods) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.metrics, y.metrics);
            assert_eq!(fs::read(x.dir.join("trace.csv")).unwrap(), fs::read(y.dir.join("trace.csv")).unwrap());
        }
    }
}

#[test]
fn invalid_crop_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny("bad-crop");
    cfg.crop = Some(CropSpec { row: 10, col: 0, height: Some(16), width: Some(16), bands: None });
    let out = dir.path().join("never");
    let err = run_scenario(&cfg, &RunOptions { jobs: 1, out: Some(out.clone()) }).unwrap_err();
    assert!(matches!(err, HsiError::Config(_)), "{err}");
    assert!(!out.exists());

    cfg.crop = None;
    cfg.seeds.clear();
    assert!(run_scenario(&cfg, &RunOptions { jobs: 1, out: Some(out.clone()) }).is_err());
    assert!(!out.exists());
}

#[test]
fn failed_method_is_recorded_and_others_survive() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny("partial");
    cfg.seeds = vec![0];
    let mut broken = MethodConfig::new("Broken", LossKind::Sure);
    broken.sigma = Some(0.0);
    cfg.methods = vec![MethodConfig::new("L2", LossKind::L2), broken];
    let out = run_scenario(&cfg, &options(&dir, "run", 1)).unwrap();
    let m = Manifest::load(&out).unwrap();
    let recs = &m.seeds[0].methods;
    assert_eq!(recs[0].status, Status::Ok);
    assert_eq!(recs[1].status, Status::Failed);
    assert!(recs[1].error.as_deref().unwrap().contains("sigma"));

    let table = build_tables(&[out]);
    assert_eq!(table.rows.len(), 1);
    let row = &table.rows[0];
    assert!(row.cells["Broken"].failed());
    assert!(row.cells["L2"].best_mpsnr);
    assert!(table.to_text().contains("failed"));
}

#[test]
fn tables_flag_best_and_link_sources() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scenario(&tiny("table"), &options(&dir, "run", 1)).unwrap();
    let missing = dir.path().join("missing");
    let table = build_tables(&[out.clone(), missing]);
    assert_eq!(table.methods[0], NOISY_COLUMN);
    assert_eq!(table.methods.len(), 5);
    assert_eq!(table.rows.len(), 2);
    let row = &table.rows[0];
    assert_eq!(row.snr_db, Some(5.0));
    assert_eq!(row.cells.values().filter(|c| c.best_mpsnr).count(), 1);
    assert!(!row.cells[NOISY_COLUMN].best_mpsnr);
    for m in &table.methods[1..] {
        let c = &row.cells[m];
        assert_eq!(c.seeds_ok, 2);
        assert!(c.traces.iter().all(|p| p.exists()));
        assert_eq!(c.manifest, out.join("manifest.json"));
    }
    assert!(table.rows[1].cells.values().all(|c| c.failed()));
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    assert!(csv.lines().next().unwrap().starts_with("scenario,snr_db,method,mpsnr,mssim"));
}

#[test]
fn render_writes_composites_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny("render");
    cfg.seeds = vec![0];
    cfg.train.iterations = 10;
    let out = run_scenario(&cfg, &options(&dir, "run", 1)).unwrap();
    let files = render_outputs(&out).unwrap();
    let pngs = files.iter().filter(|p| p.extension().unwrap() == "png").count();
    assert_eq!(pngs, 1 + 1 + 4);
    let svg = fs::read_to_string(out.join("seed-0/mpsnr.svg")).unwrap();
    // A single evaluation point per method is drawn as markers.
    assert_eq!(svg.matches("<circle").count(), 4);
    assert!(out.join("seed-0/nmse.svg").exists());
}

#[test]
fn render_rejects_out_of_range_bands() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny("rgb");
    cfg.rgb_bands = Some([56, 26, 16]);
    assert!(matches!(run_scenario(&cfg, &options(&dir, "run", 1)), Err(HsiError::Config(_))));
}

#[test]
fn dataset_paths_resolve_against_root() {
    let dir = tempfile::tempdir().unwrap();
    let cube = hsi_core::phantom::generate(&PhantomConfig::new(16, 16, 3, 2)).unwrap();
    save_cube(&cube, dir.path().join("scene")).unwrap();
    let mut cfg = tiny("file");
    cfg.dataset = DatasetSource::Path(dir.path().join("scene.json"));
    cfg.crop = None;
    cfg.seeds = vec![0];
    cfg.methods = vec![MethodConfig::new("L2", LossKind::L2)];
    let out = run_scenario(&cfg, &options(&dir, "run", 1)).unwrap();
    assert_eq!(Manifest::load(&out).unwrap().shape, (16, 16, 3));

    cfg.dataset = DatasetSource::Path(PathBuf::from("does/not/exist.json"));
    assert!(matches!(run_scenario(&cfg, &options(&dir, "run2", 1)), Err(HsiError::MissingFile(_))));
}

#[test]
fn scenario_json_uses_desk_defaults() {
    let json = r#"{
        "name": "gaussian-5db",
        "dataset": {"path": "dc_mall.json"},
        "crop": {"row": 0, "col": 0, "height": 64, "width": 64, "bands": 16},
        "noise": {"gaussian_snr_db": 5, "seed": 0}
    }"#;
    let cfg: ScenarioConfig = serde_json::from_str(json).unwrap();
    assert_eq!(cfg.seeds, vec![0, 1, 2]);
    assert_eq!(cfg.train.iterations, 1500);
    assert_eq!(cfg.methods.len(), 4);
    assert_eq!(cfg.output_dir(), PathBuf::from("runs/gaussian-5db"));
    assert!(cfg.validate().is_ok());

    // The input-fixed / input-optimized ablation is plain configuration.
    let m: MethodConfig =
        serde_json::from_str(r#"{"name": "SURE + z", "loss": "sure", "optimize_input": true, "sigma_source": "oracle"}"#).unwrap();
    assert_eq!(m.slug(), "sure---z");
    let tc = m.train_config(&cfg.train, 7, 0.1, 0.2);
    assert!(tc.optimize_input);
    assert_eq!(tc.loss.sigma, 0.2);
}
