//! Synthetic hyperspectral scenes for tests and desk-scale experiments when no
//! real dataset is at hand.
//!
//! A scene is a linear mixture of a few smooth endmember spectra weighted by
//! piecewise-smooth abundance maps: seeded Voronoi regions with soft borders,
//! a few bright rectangular structures, low-frequency shading and mild
//! texture. The result is min-max normalized.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cube::{normalize, HsiCube};
use crate::error::{HsiError, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    #[serde(default = "default_endmembers")]
    pub endmembers: usize,
    #[serde(default = "default_regions")]
    pub regions: usize,
    #[serde(default = "default_structures")]
    pub structures: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_endmembers() -> usize {
    5
}

fn default_regions() -> usize {
    9
}

fn default_structures() -> usize {
    6
}

impl PhantomConfig {
    pub fn new(height: usize, width: usize, bands: usize, seed: u64) -> Self {
        Self { height, width, bands, endmembers: default_endmembers(), regions: default_regions(), structures: default_structures(), seed }
    }
}

fn spectrum(rng: &mut impl rand::Rng, bands: usize) -> Vec<f64> {
    let base = rng.random_range(0.1..0.5);
    let slope = rng.random_range(-0.3..0.5);
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.05..0.25), rng.random_range(-0.25..0.45)))
        .collect();
    (0..bands)
        .map(|b| {
            let t = if bands > 1 { b as f64 / (bands - 1) as f64 } else { 0.5 };
            let bump: f64 = bumps.iter().map(|&(c, w, a)| a * (-((t - c) / w).powi(2)).exp()).sum();
            (base + slope * t + bump).max(0.02)
        })
        .collect()
}

/// Generates a normalized synthetic scene.
pub fn generate(cfg: &PhantomConfig) -> Result<HsiCube> {
    if cfg.height == 0 || cfg.width == 0 || cfg.bands == 0 {
        return Err(HsiError::InvalidParameter(format!(
            "phantom dimensions must be positive, got {}x{}x{}",
            cfg.height, cfg.width, cfg.bands
        )));
    }
    let mut rng = rng_for(cfg.seed, "phantom", 0);
    let (h, w, b) = (cfg.height, cfg.width, cfg.bands);
    let k = cfg.endmembers.max(1);
    let spectra: Vec<Vec<f64>> = (0..k).map(|_| spectrum(&mut rng, b)).collect();

    let centres: Vec<(f64, f64, usize)> = (0..cfg.regions.max(1))
        .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64), rng.random_range(0..k)))
        .collect();
    let structures: Vec<(f64, f64, f64, f64, usize)> = (0..cfg.structures)
        .map(|_| {
            let r0 = rng.random_range(0.0..h as f64);
            let c0 = rng.random_range(0.0..w as f64);
            let rh = rng.random_range(2.0..(h as f64 / 5.0).max(3.0));
            let cw = rng.random_range(2.0..(w as f64 / 5.0).max(3.0));
            (r0, c0, rh, cw, rng.random_range(0..k))
        })
        .collect();
    let shading: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();

    let softness = 1.5;
    let mut data = Vec::with_capacity(h * w * b);
    let mut weights = vec![0.0f64; k];
    for r in 0..h {
        for c in 0..w {
            let (rf, cf) = (r as f64, c as f64);
            weights.iter_mut().for_each(|v| *v = 0.0);
            // Soft Voronoi membership.
            let dists: Vec<f64> = centres.iter().map(|&(cr, cc, _)| ((rf - cr).powi(2) + (cf - cc).powi(2)).sqrt()).collect();
            let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
            let mut total = 0.0;
            for (&d, &(_, _, e)) in dists.iter().zip(&centres) {
                let m = (-(d - dmin) / softness).exp();
                weights[e] += m;
                total += m;
            }
            weights.iter_mut().for_each(|v| *v /= total);
            for &(r0, c0, rh, cw, e) in &structures {
                if (rf - r0).abs() < rh && (cf - c0).abs() < cw {
                    weights.iter_mut().for_each(|v| *v *= 0.2);
                    weights[e] += 0.8;
                }
            }
            let shade = 1.0
                + 0.15
                    * shading
                        .iter()
                        .map(|&(fr, fc, ph)| (fr * rf / h as f64 * std::f64::consts::TAU + fc * cf / w as f64 * 2.0 + ph).sin())
                        .sum::<f64>()
                    / shading.len() as f64;
            let texture = 1.0 + 0.04 * ((rf * 1.7).sin() * (cf * 1.3).cos() + (rf * 0.9 + cf * 2.1).sin());
            for band in 0..b {
                let v: f64 = weights.iter().zip(&spectra).map(|(wt, s)| wt * s[band]).sum();
                data.push((v * shade * texture) as f32);
            }
        }
    }
    Ok(normalize(&HsiCube::from_vec(h, w, b, data)?))
}
