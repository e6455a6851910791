use hsi_core::net::{cube_to_chw, DhipModel, NetworkConfig};
use hsi_core::noise::{self, NoiseSpec};
use hsi_core::phantom::{generate, PhantomConfig};
use hsi_core::train::{train, train_observed, InputInit, Observer, TraceRecord, TrainConfig, TrainingTrace};
use hsi_core::{HsiCube, HsiError, LossKind, LossMode};

fn setup() -> (HsiCube, HsiCube, DhipModel<f32>) {
    let clean = generate(&PhantomConfig::new(16, 16, 4, 1)).unwrap();
    let (noisy, _) = noise::apply_spec(&clean, &NoiseSpec::gaussian(10.0, 2)).unwrap();
    let model = DhipModel::<f32>::new(NetworkConfig::uniform(2, 8, 8, 2), (16, 16, 4), 3).unwrap();
    (clean, noisy, model)
}

fn config(kind: LossKind, iterations: usize) -> TrainConfig {
    let mut cfg = TrainConfig::for_loss(LossMode::new(kind, 0.1));
    cfg.iterations = iterations;
    cfg.eval_every = 5;
    cfg
}

#[test]
fn zero_iterations_returns_untrained_forward() {
    let (clean, noisy, mut model) = setup();
    let expected = model.forward(&noisy).unwrap();
    let out = train(&mut model, &noisy, &config(LossKind::Unified, 0), Some(&clean)).unwrap();
    assert!(out.trace.records.is_empty());
    assert_eq!(out.estimate, expected);
}

#[test]
fn runs_are_bit_identical() {
    for kind in LossKind::ALL {
        let (clean, noisy, model) = setup();
        let cfg = config(kind, 12);
        let (mut a, mut b) = (model.clone(), model.clone());
        let ra = train(&mut a, &noisy, &cfg, Some(&clean)).unwrap();
        let rb = train(&mut b, &noisy, &cfg, Some(&clean)).unwrap();
        assert_eq!(ra.trace, rb.trace, "{kind}");
        assert_eq!(ra.estimate, rb.estimate);
        assert_eq!(a.params(), b.params());
    }
}

#[test]
fn trace_records_are_ordered_and_complete() {
    let (clean, noisy, mut model) = setup();
    let out = train(&mut model, &noisy, &config(LossKind::L2, 12), Some(&clean)).unwrap();
    let its: Vec<usize> = out.trace.records.iter().map(|r| r.iteration).collect();
    assert_eq!(its, vec![5, 10, 12]);
    assert!(out.trace.records.iter().all(|r| r.mpsnr.is_some() && r.nmse.is_some()));
    let peak = out.trace.peak().unwrap().mpsnr.unwrap();
    assert!(peak >= out.trace.last().unwrap().mpsnr.unwrap());
    assert!(out.trace.peak_drop_db().unwrap() >= 0.0);

    let csv = out.trace.to_csv();
    assert!(csv.starts_with("iteration,loss,mpsnr,mssim,nmse\n"));
    assert_eq!(TrainingTrace::from_csv(&csv).unwrap(), out.trace);
}

#[test]
fn no_reference_means_loss_only_trace() {
    let (_, noisy, mut model) = setup();
    let out = train(&mut model, &noisy, &config(LossKind::SmoothL1, 10), None).unwrap();
    assert!(out.trace.records.iter().all(|r| r.mpsnr.is_none() && r.loss.is_finite()));
}

#[test]
fn sure_ignores_input_learning_rate() {
    let (clean, noisy, model) = setup();
    let mut cfg = config(LossKind::Sure, 8);
    let (mut a, mut b) = (model.clone(), model);
    let ra = train(&mut a, &noisy, &cfg, Some(&clean)).unwrap();
    cfg.learning_rate_z = 0.5;
    let rb = train(&mut b, &noisy, &cfg, Some(&clean)).unwrap();
    assert_eq!(ra.trace, rb.trace);
    assert_eq!(ra.input, cube_to_chw(&noisy));
}

#[test]
fn unified_moves_the_input() {
    let (clean, noisy, mut model) = setup();
    let out = train(&mut model, &noisy, &config(LossKind::Unified, 5), Some(&clean)).unwrap();
    assert_ne!(out.input, cube_to_chw(&noisy));
}

#[test]
fn gaussian_input_init() {
    let (clean, noisy, mut model) = setup();
    let mut cfg = config(LossKind::L2, 5);
    cfg.input_init = InputInit::Gaussian;
    let out = train(&mut model, &noisy, &cfg, Some(&clean)).unwrap();
    let z = out.input;
    let std = (z.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
    assert!((std - 0.1).abs() < 0.02);

    let mut sure = config(LossKind::Sure, 5);
    sure.input_init = InputInit::Gaussian;
    assert!(matches!(sure.validate(), Err(HsiError::Config(_))));
}

#[test]
fn config_validation() {
    let mut cfg = config(LossKind::L2, 4);
    assert!(cfg.validate().is_err());
    cfg.eval_every = 2;
    assert!(cfg.validate().is_ok());
    cfg.learning_rate_theta = 0.0;
    assert!(cfg.validate().is_err());
    let sure = TrainConfig::for_loss(LossMode::new(LossKind::Sure, 0.0));
    assert!(sure.validate().is_err());
    assert!(TrainConfig::for_loss(LossMode::new(LossKind::Unified, 0.1)).optimize_input);
    assert!(!TrainConfig::for_loss(LossMode::new(LossKind::SmoothL1, 0.1)).optimize_input);
}

#[test]
fn shape_mismatch_rejected() {
    let (_, _, mut model) = setup();
    let wrong = HsiCube::zeros(8, 8, 4).unwrap();
    assert!(train(&mut model, &wrong, &config(LossKind::L2, 5), None).is_err());
}

#[test]
fn non_finite_loss_aborts_with_iteration() {
    let (_, noisy, mut model) = setup();
    let mut cfg = config(LossKind::L2, 50);
    cfg.learning_rate_theta = 1e30;
    match train(&mut model, &noisy, &cfg, None) {
        Err(HsiError::NonFiniteLoss { iteration, .. }) => assert!(iteration > 0),
        other => panic!("expected non-finite loss, got {:?}", other.map(|o| o.trace.records.len())),
    }
}

struct Count(usize, usize);

impl Observer for Count {
    fn on_record(&mut self, _: &TraceRecord) {
        self.0 += 1;
    }

    fn on_step(&mut self, _: usize, _: &DhipModel<f32>) {
        self.1 += 1;
    }
}

#[test]
fn observer_sees_every_record_and_step() {
    let (clean, noisy, mut model) = setup();
    let mut obs = Count(0, 0);
    let out = train_observed(&mut model, &noisy, &config(LossKind::L2, 10), Some(&clean), &mut obs).unwrap();
    assert_eq!(obs.0, out.trace.records.len());
    assert_eq!(obs.1, 10);
}
