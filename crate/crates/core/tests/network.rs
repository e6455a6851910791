use hsi_core::net::{cube_to_chw, chw_to_cube, DhipModel, NetworkConfig, OutputActivation};
use hsi_core::phantom::{generate, PhantomConfig};
use hsi_core::train::{train, TrainConfig};
use hsi_core::{HsiCube, LossKind, LossMode};

#[test]
fn shape_preserved_and_init_deterministic() {
    let cfg = NetworkConfig::uniform(1, 4, 4, 2);
    let a = DhipModel::<f32>::new(cfg.clone(), (8, 8, 2), 3).unwrap();
    let b = DhipModel::<f32>::new(cfg.clone(), (8, 8, 2), 3).unwrap();
    let c = DhipModel::<f32>::new(cfg, (8, 8, 2), 4).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    let z = generate(&PhantomConfig::new(8, 8, 2, 1)).unwrap();
    let out = a.forward(&z).unwrap();
    assert_eq!(out.shape(), (8, 8, 2));
    assert_eq!(out, a.forward(&z).unwrap());
}

#[test]
fn default_config_output_in_unit_interval() {
    let model = DhipModel::<f32>::new(NetworkConfig::default(), (64, 64, 16), 0).unwrap();
    let z = generate(&PhantomConfig::new(64, 64, 16, 5)).unwrap();
    let out = model.forward(&z).unwrap();
    let (lo, hi) = out.min_max();
    assert!(lo > 0.0 && hi < 1.0, "range [{lo}, {hi}]");
}

#[test]
fn single_voxel_perturbation_changes_output() {
    let model = DhipModel::<f32>::new(NetworkConfig::uniform(2, 8, 8, 2), (16, 16, 3), 1).unwrap();
    let z = generate(&PhantomConfig::new(16, 16, 3, 2)).unwrap();
    let mut chw = cube_to_chw(&z);
    let base = model.forward_chw(&chw).unwrap();
    chw[3 * 16 + 7] += 0.5;
    let moved = model.forward_chw(&chw).unwrap();
    assert!(base.iter().zip(&moved).any(|(a, b)| a != b));
}

#[test]
fn indivisible_shapes_need_padding() {
    let cfg = NetworkConfig::uniform(2, 4, 4, 2);
    assert!(DhipModel::<f32>::new(cfg.clone(), (10, 12, 2), 0).is_err());
    let padded = DhipModel::<f32>::new(NetworkConfig { pad_input: true, ..cfg }, (10, 13, 2), 0).unwrap();
    let z = HsiCube::from_fn(10, 13, 2, |r, c, b| ((r + c + b) % 5) as f32 / 5.0).unwrap();
    assert_eq!(padded.forward(&z).unwrap().shape(), (10, 13, 2));
}

#[test]
fn invalid_configs_rejected() {
    let good = NetworkConfig::uniform(2, 4, 4, 2);
    assert!(NetworkConfig { depth: 0, ..good.clone() }.validate().is_err());
    assert!(NetworkConfig { kernel_size: 4, ..good.clone() }.validate().is_err());
    assert!(NetworkConfig { channels_up: vec![4], ..good.clone() }.validate().is_err());
    assert!(good.validate().is_ok());
}

#[test]
fn config_json_defaults() {
    let cfg: NetworkConfig = serde_json::from_str(r#"{"depth": 3, "channels_down": [8,8,8], "channels_up": [8,8,8], "channels_skip": [0,0,0]}"#).unwrap();
    assert_eq!(cfg.kernel_size, 3);
    assert_eq!(cfg.output, OutputActivation::Sigmoid);
    assert!(cfg.validate().is_ok());
    let d = NetworkConfig::default();
    assert_eq!((d.depth, d.channels_down[0], d.channels_skip[0]), (5, 128, 4));
}

#[test]
fn checkpoint_round_trip() {
    let model = DhipModel::<f32>::new(NetworkConfig::uniform(2, 4, 4, 2), (8, 8, 3), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save_checkpoint(&path).unwrap();
    let back = DhipModel::<f32>::load_checkpoint(&path).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.config(), model.config());
    std::fs::write(&path, b"garbage").unwrap();
    assert!(DhipModel::<f32>::load_checkpoint(&path).is_err());
}

#[test]
fn chw_round_trip() {
    let z = generate(&PhantomConfig::new(4, 6, 3, 0)).unwrap();
    let back = chw_to_cube(&cube_to_chw(&z), z.shape()).unwrap();
    assert_eq!(back.as_slice(), z.as_slice());
}

#[test]
fn shallow_model_fits_clean_image() {
    let clean = generate(&PhantomConfig::new(16, 16, 3, 4)).unwrap();
    let mut model = DhipModel::<f32>::new(NetworkConfig::uniform(1, 16, 16, 4), (16, 16, 3), 0).unwrap();
    let mut cfg = TrainConfig::for_loss(LossMode::new(LossKind::L2, 0.0));
    cfg.iterations = 2000;
    cfg.eval_every = 500;
    let out = train(&mut model, &clean, &cfg, None).unwrap();
    let rms = (clean.as_slice().iter().zip(out.estimate.as_slice()).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>()
        / clean.len() as f64)
        .sqrt();
    assert!(rms < 1e-2, "rms reconstruction error {rms}");
}
