//! The optimization loop: Adam on the network parameters and, when enabled,
//! on the network input, with periodic quality tracing against a reference.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{HsiError, Result};
use crate::losses::{self, LossEval, LossKind, LossMode};
use crate::metrics;
use crate::net::{chw_to_cube, cube_to_chw, DhipModel, Real};
use crate::rng::{derive_seed, rng_for};

/// Standard deviation of a Gaussian-initialized input.
pub const GAUSSIAN_INPUT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputInit {
    #[default]
    NoisyY,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate_theta: f64,
    pub learning_rate_z: f64,
    pub optimize_input: bool,
    pub eval_every: usize,
    pub seed: u64,
    pub loss: LossMode,
    pub input_init: InputInit,
}

impl TrainConfig {
    /// Defaults for a loss kind: 4000 iterations, lr 0.01, input optimized
    /// only for the unified loss.
    pub fn for_loss(loss: LossMode) -> Self {
        Self {
            iterations: 4000,
            learning_rate_theta: 0.01,
            learning_rate_z: 0.01,
            optimize_input: loss.kind == LossKind::Unified,
            eval_every: 10,
            seed: 0,
            loss,
            input_init: InputInit::NoisyY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.eval_every == 0 {
            return Err(HsiError::Config("eval_every must be positive".into()));
        }
        if self.iterations > 0 && self.eval_every > self.iterations {
            return Err(HsiError::Config(format!(
                "eval_every {} exceeds iterations {}",
                self.eval_every, self.iterations
            )));
        }
        for (name, lr) in [("learning_rate_theta", self.learning_rate_theta), ("learning_rate_z", self.learning_rate_z)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(HsiError::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.loss.kind == LossKind::Sure && self.input_init != InputInit::NoisyY {
            return Err(HsiError::Config("SURE evaluates the network at the observation; input_init must be noisy_y".into()));
        }
        Ok(())
    }
}

/// Adam with the usual moment decay constants.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grads: &[T]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g.as_f64();
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            *p = T::lit(p.as_f64() - update);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loss: f64,
    pub mpsnr: Option<f64>,
    pub mssim: Option<f64>,
    pub nmse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    /// Record with the highest MPSNR (earliest on ties).
    pub fn peak(&self) -> Option<&TraceRecord> {
        self.records
            .iter()
            .filter(|r| r.mpsnr.is_some())
            .fold(None, |best: Option<&TraceRecord>, r| match best {
                Some(b) if b.mpsnr >= r.mpsnr => Some(b),
                _ => Some(r),
            })
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// Peak minus final MPSNR, when the trace carries MPSNR.
    pub fn peak_drop_db(&self) -> Option<f64> {
        Some(self.peak()?.mpsnr? - self.last()?.mpsnr?)
    }

    /// `iteration,loss,mpsnr,mssim,nmse`; absent metrics are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from("iteration,loss,mpsnr,mssim,nmse\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{}", r.iteration, r.loss, opt(r.mpsnr), opt(r.mssim), opt(r.nmse));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let parse_opt = |f: &str| -> Result<Option<f64>> {
            if f.is_empty() {
                Ok(None)
            } else {
                f.parse().map(Some).map_err(|_| HsiError::Header(format!("bad trace field {f:?}")))
            }
        };
        let mut records = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(HsiError::Header(format!("trace line has {} fields: {line:?}", f.len())));
            }
            records.push(TraceRecord {
                iteration: f[0].parse().map_err(|_| HsiError::Header(format!("bad iteration {:?}", f[0])))?,
                loss: f[1].parse().map_err(|_| HsiError::Header(format!("bad loss {:?}", f[1])))?,
                mpsnr: parse_opt(f[2])?,
                mssim: parse_opt(f[3])?,
                nmse: parse_opt(f[4])?,
            });
        }
        Ok(Self { records })
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// `f_θ(z)` after the last update.
    pub estimate: HsiCube,
    pub trace: TrainingTrace,
    /// Final network input.
    pub input: Vec<f32>,
}

/// Progress callbacks. `on_record` sees every trace record as it is produced.
pub trait Observer {
    fn on_record(&mut self, _record: &TraceRecord) {}
    fn on_step(&mut self, _iteration: usize, _model: &DhipModel<f32>) {}
}

impl Observer for () {}

/// One loss evaluation with gradients for θ and z (see [`losses::evaluate`]).
pub fn run_loss_step<T: Real>(
    model: &DhipModel<T>,
    z: &[T],
    y: &[T],
    mode: &LossMode,
    step_seed: u64,
) -> Result<LossEval<T>> {
    losses::evaluate(model, z, y, mode, step_seed)
}

/// Probe seed for iteration `i` of a run seeded with `seed`.
pub fn step_seed(seed: u64, iteration: usize) -> u64 {
    derive_seed(seed, "train/probe", iteration as u64)
}

pub fn initial_input(y: &[f32], cfg: &TrainConfig) -> Vec<f32> {
    match cfg.input_init {
        InputInit::NoisyY => y.to_vec(),
        InputInit::Gaussian => {
            let mut rng = rng_for(cfg.seed, "train/input", 0);
            (0..y.len()).map(|_| (GAUSSIAN_INPUT_STD * rng.sample::<f64, _>(StandardNormal)) as f32).collect()
        }
    }
}

fn make_record(
    iteration: usize,
    eval: &LossEval<f32>,
    reference: Option<&HsiCube>,
    shape: (usize, usize, usize),
) -> Result<TraceRecord> {
    let (mpsnr, mssim, nmse) = match reference {
        Some(r) => {
            let est = chw_to_cube(&eval.output, shape)?;
            let m = metrics::evaluate(r, &est)?;
            (Some(m.mpsnr), m.mssim.is_finite().then_some(m.mssim), Some(m.nmse))
        }
        None => (None, None, None),
    };
    Ok(TraceRecord { iteration, loss: eval.reported, mpsnr, mssim, nmse })
}

pub fn train(
    model: &mut DhipModel<f32>,
    y: &HsiCube,
    cfg: &TrainConfig,
    reference: Option<&HsiCube>,
) -> Result<TrainOutcome> {
    train_observed(model, y, cfg, reference, &mut ())
}

/// Runs `cfg.iterations` Adam steps. Trace records are taken after every
/// `eval_every`-th update and after the last one.
pub fn train_observed(
    model: &mut DhipModel<f32>,
    y: &HsiCube,
    cfg: &TrainConfig,
    reference: Option<&HsiCube>,
    observer: &mut dyn Observer,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if y.shape() != model.shape() {
        return Err(HsiError::ShapeMismatch(format!(
            "observation {:?} does not match model {:?}",
            y.shape(),
            model.shape()
        )));
    }
    if let Some(r) = reference {
        if r.shape() != y.shape() {
            return Err(HsiError::ShapeMismatch(format!("reference {:?} vs observation {:?}", r.shape(), y.shape())));
        }
    }
    let shape = y.shape();
    let target = cube_to_chw(y);
    let mut z = initial_input(&target, cfg);
    let mut adam_theta = Adam::new(model.param_count(), cfg.learning_rate_theta);
    let mut adam_z = Adam::new(z.len(), cfg.learning_rate_z);
    let mut trace = TrainingTrace::default();

    for i in 0..cfg.iterations {
        let eval = run_loss_step(model, &z, &target, &cfg.loss, step_seed(cfg.seed, i))?;
        if !eval.objective.is_finite() {
            return Err(HsiError::NonFiniteLoss { iteration: i, value: eval.objective });
        }
        if i > 0 && i % cfg.eval_every == 0 {
            let rec = make_record(i, &eval, reference, shape)?;
            observer.on_record(&rec);
            trace.records.push(rec);
        }
        adam_theta.step(model.params_mut(), &eval.grad_params);
        if cfg.optimize_input {
            adam_z.step(&mut z, &eval.grad_input);
        }
        observer.on_step(i + 1, model);
    }

    let estimate = if cfg.iterations > 0 {
        let eval = run_loss_step(model, &z, &target, &cfg.loss, step_seed(cfg.seed, cfg.iterations))?;
        if !eval.objective.is_finite() {
            return Err(HsiError::NonFiniteLoss { iteration: cfg.iterations, value: eval.objective });
        }
        let rec = make_record(cfg.iterations, &eval, reference, shape)?;
        observer.on_record(&rec);
        trace.records.push(rec);
        chw_to_cube(&eval.output, shape)?
    } else {
        chw_to_cube(&model.forward_chw(&z)?, shape)?
    };
    Ok(TrainOutcome { estimate, trace, input: z })
}
