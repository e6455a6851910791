//! Training objectives: mean-squared error, Smooth-ℓ1, SURE and the unified
//! Smooth-ℓ1 + divergence loss, plus the Monte Carlo divergence estimator.
//!
//! Data terms are means over the `n` elements. The divergence is estimated
//! with a single Gaussian probe `b` as `bᵀ(f(z + εb) − f(z)) / ε`; both forward
//! passes are differentiated, with `b` held fixed.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HsiError, Result};
use crate::net::{DhipModel, Real, Tape};
use crate::rng::rng_for;

pub const DEFAULT_BETA: f64 = 1e-3;
pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L2,
    Sure,
    SmoothL1,
    Unified,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::L2, LossKind::Sure, LossKind::SmoothL1, LossKind::Unified];

    pub fn needs_sigma(self) -> bool {
        matches!(self, LossKind::Sure | LossKind::Unified)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::Sure => "sure",
            LossKind::SmoothL1 => "smooth_l1",
            LossKind::Unified => "unified",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A training objective with its parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossMode {
    pub kind: LossKind,
    pub beta: f64,
    pub epsilon: f64,
    pub sigma: f64,
}

impl LossMode {
    pub fn new(kind: LossKind, sigma: f64) -> Self {
        Self { kind, beta: DEFAULT_BETA, epsilon: DEFAULT_EPSILON, sigma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(HsiError::InvalidParameter(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(HsiError::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.kind.needs_sigma() && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(HsiError::InvalidParameter(format!(
                "{} loss needs sigma > 0, got {}",
                self.kind, self.sigma
            )));
        }
        Ok(())
    }

    /// Weight `2σ²/n` of the divergence term.
    pub fn divergence_weight(&self, n: usize) -> f64 {
        2.0 * self.sigma * self.sigma / n as f64
    }
}

fn check_lengths<T>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(HsiError::LengthMismatch { expected: target.len(), actual: pred.len() });
    }
    if pred.is_empty() {
        return Err(HsiError::InvalidParameter("loss over zero elements".into()));
    }
    Ok(())
}

/// `(1/n) ‖pred − target‖²`.
pub fn l2_loss<T: Real>(pred: &[T], target: &[T]) -> Result<f64> {
    check_lengths(pred, target)?;
    let sum: f64 = pred.iter().zip(target).map(|(&p, &t)| (p - t).as_f64().powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

/// Smooth-ℓ1 (Huber / Moreau envelope of |·|) of a single residual.
#[inline]
pub fn smooth_l1_elem(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a <= beta {
        d * d / (2.0 * beta)
    } else {
        a - beta / 2.0
    }
}

/// Derivative of [`smooth_l1_elem`] with respect to `d`.
#[inline]
pub fn smooth_l1_elem_grad(d: f64, beta: f64) -> f64 {
    if d.abs() <= beta {
        d / beta
    } else {
        d.signum()
    }
}

/// Mean Smooth-ℓ1 over elements.
pub fn smooth_l1<T: Real>(pred: &[T], target: &[T], beta: f64) -> Result<f64> {
    check_lengths(pred, target)?;
    if !(beta > 0.0) {
        return Err(HsiError::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let sum: f64 = pred.iter().zip(target).map(|(&p, &t)| smooth_l1_elem((p - t).as_f64(), beta)).sum();
    Ok(sum / pred.len() as f64)
}

/// A map `Rⁿ → Rⁿ` with parameters that supports reverse-mode differentiation.
pub trait Differentiable<T: Real> {
    type Tape;

    fn input_len(&self) -> usize;

    fn param_count(&self) -> usize;

    fn eval(&self, z: &[T]) -> Result<(Vec<T>, Self::Tape)>;

    /// Accumulates `∂(gᵀf)/∂θ` into `grads`, returns `∂(gᵀf)/∂z`.
    fn pullback(&self, tape: &Self::Tape, grad_out: &[T], grads: &mut [T]) -> Vec<T>;
}

impl<T: Real> Differentiable<T> for DhipModel<T> {
    type Tape = Tape<T>;

    fn input_len(&self) -> usize {
        DhipModel::input_len(self)
    }

    fn param_count(&self) -> usize {
        DhipModel::param_count(self)
    }

    fn eval(&self, z: &[T]) -> Result<(Vec<T>, Tape<T>)> {
        self.forward_with_tape(z)
    }

    fn pullback(&self, tape: &Tape<T>, grad_out: &[T], grads: &mut [T]) -> Vec<T> {
        self.backward(tape, grad_out, grads)
    }
}

/// Standard normal probe vector of length `n` for a given seed.
pub fn probe<T: Real>(n: usize, seed: u64) -> Vec<T> {
    let mut rng = rng_for(seed, "loss/probe", 0);
    (0..n).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Monte Carlo divergence estimate `bᵀ(f(z + εb) − f(z)) / ε`.
pub fn mc_divergence<T: Real, M: Differentiable<T>>(model: &M, z: &[T], epsilon: f64, seed: u64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(HsiError::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
    }
    let b = probe::<T>(z.len(), seed);
    let (fz, _) = model.eval(z)?;
    let (fp, _) = model.eval(&perturb(z, &b, epsilon))?;
    Ok(divergence_from(&b, &fp, &fz, epsilon))
}

fn perturb<T: Real>(z: &[T], b: &[T], epsilon: f64) -> Vec<T> {
    let e = T::lit(epsilon);
    z.iter().zip(b).map(|(&v, &p)| v + e * p).collect()
}

fn divergence_from<T: Real>(b: &[T], perturbed: &[T], base: &[T], epsilon: f64) -> f64 {
    let dot: f64 = b.iter().zip(perturbed.iter().zip(base)).map(|(&p, (&a, &c))| p.as_f64() * (a - c).as_f64()).sum();
    dot / epsilon
}

/// Value and gradients of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossEval<T> {
    /// Quantity whose gradient is returned (SURE without its `−σ²` constant).
    pub objective: f64,
    /// Value for logs; for SURE this includes the `−σ²` term.
    pub reported: f64,
    pub data_term: f64,
    pub divergence: Option<f64>,
    /// `f_θ(z)`.
    pub output: Vec<T>,
    pub grad_params: Vec<T>,
    /// Gradient with respect to the input `z`.
    pub grad_input: Vec<T>,
}

/// Evaluates `mode` at input `z` against target `y` and backpropagates.
///
/// The divergence term (SURE, unified) uses a probe drawn from `probe_seed`.
/// For SURE the caller is expected to pass `z = y`.
pub fn evaluate<T: Real, M: Differentiable<T>>(
    model: &M,
    z: &[T],
    y: &[T],
    mode: &LossMode,
    probe_seed: u64,
) -> Result<LossEval<T>> {
    mode.validate()?;
    let n = model.input_len();
    if z.len() != n {
        return Err(HsiError::LengthMismatch { expected: n, actual: z.len() });
    }
    check_lengths(z, y)?;
    let (fz, tape) = model.eval(z)?;
    let inv_n = 1.0 / n as f64;

    let (data_term, mut grad_out): (f64, Vec<T>) = match mode.kind {
        LossKind::L2 | LossKind::Sure => {
            let g = fz.iter().zip(y).map(|(&f, &t)| (T::lit(2.0 * inv_n)) * (f - t)).collect();
            (l2_loss(&fz, y)?, g)
        }
        LossKind::SmoothL1 | LossKind::Unified => {
            let g = fz
                .iter()
                .zip(y)
                .map(|(&f, &t)| T::lit(smooth_l1_elem_grad((f - t).as_f64(), mode.beta) * inv_n))
                .collect();
            (smooth_l1(&fz, y, mode.beta)?, g)
        }
    };

    let mut grad_params = vec![T::zero(); model.param_count()];
    let (divergence, grad_input) = if mode.kind.needs_sigma() {
        let b = probe::<T>(n, probe_seed);
        let (fp, tape_p) = model.eval(&perturb(z, &b, mode.epsilon))?;
        let div = divergence_from(&b, &fp, &fz, mode.epsilon);
        // d/df [w bᵀ(f(z+εb) − f(z))/ε]: +c·b on the perturbed pass, −c·b on the base pass.
        let c = T::lit(mode.divergence_weight(n) / mode.epsilon);
        let g_perturbed: Vec<T> = b.iter().map(|&v| c * v).collect();
        grad_out.iter_mut().zip(&g_perturbed).for_each(|(g, &p)| *g -= p);
        let mut gz = model.pullback(&tape_p, &g_perturbed, &mut grad_params);
        let gz_base = model.pullback(&tape, &grad_out, &mut grad_params);
        gz.iter_mut().zip(gz_base).for_each(|(a, b)| *a += b);
        (Some(div), gz)
    } else {
        (None, model.pullback(&tape, &grad_out, &mut grad_params))
    };

    let penalty = divergence.map_or(0.0, |d| mode.divergence_weight(n) * d);
    let objective = data_term + penalty;
    let reported = if mode.kind == LossKind::Sure { objective - mode.sigma * mode.sigma } else { objective };
    Ok(LossEval { objective, reported, data_term, divergence, output: fz, grad_params, grad_input })
}

/// SURE objective with the input pinned to the observation `y`.
pub fn sure_loss<T: Real, M: Differentiable<T>>(
    model: &M,
    y: &[T],
    sigma: f64,
    epsilon: f64,
    seed: u64,
) -> Result<LossEval<T>> {
    let mode = LossMode { kind: LossKind::Sure, beta: DEFAULT_BETA, epsilon, sigma };
    evaluate(model, y, y, &mode, seed)
}

/// Smooth-ℓ1 data fidelity plus `2σ²/n` times the divergence at the current input `z`.
#[allow(clippy::too_many_arguments)]
pub fn unified_loss<T: Real, M: Differentiable<T>>(
    model: &M,
    z: &[T],
    y: &[T],
    sigma: f64,
    beta: f64,
    epsilon: f64,
    seed: u64,
) -> Result<LossEval<T>> {
    let mode = LossMode { kind: LossKind::Unified, beta, epsilon, sigma };
    evaluate(model, z, y, &mode, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_examples() {
        assert_eq!(l2_loss(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l2_loss(&[2.0f64; 4], &[0.0; 4]).unwrap(), 4.0);
        assert_eq!(l2_loss(&[3.0f64], &[0.0]).unwrap(), 9.0);
        assert!(l2_loss(&[1.0f64], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn smooth_l1_examples() {
        let beta = 1e-3;
        assert_eq!(smooth_l1(&[0.5f64], &[0.5], beta).unwrap(), 0.0);
        assert!((smooth_l1_elem(beta, beta) - beta / 2.0).abs() < 1e-18);
        assert!((smooth_l1_elem(2e-3, beta) - 1.5e-3).abs() < 1e-15);
        assert!(smooth_l1(&[0.0f64], &[1.0], 0.0).is_err());
        assert!(smooth_l1(&[0.0f64, 1.0], &[1.0], 1.0).is_err());
    }

    #[test]
    fn mode_validation() {
        assert!(LossMode::new(LossKind::Unified, 0.0).validate().is_err());
        assert!(LossMode::new(LossKind::Sure, -1.0).validate().is_err());
        assert!(LossMode::new(LossKind::L2, 0.0).validate().is_ok());
        let mut m = LossMode::new(LossKind::SmoothL1, 0.0);
        m.beta = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn kind_serde_names() {
        assert_eq!(serde_json::to_string(&LossKind::SmoothL1).unwrap(), "\"smooth_l1\"");
        let k: LossKind = serde_json::from_str("\"unified\"").unwrap();
        assert_eq!(k, LossKind::Unified);
    }

    #[test]
    fn probe_is_seeded() {
        assert_eq!(probe::<f64>(8, 3), probe::<f64>(8, 3));
        assert_ne!(probe::<f64>(8, 3), probe::<f64>(8, 4));
    }
}
