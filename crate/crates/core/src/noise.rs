//! Seeded corruption of clean cubes: additive Gaussian noise at a target SNR,
//! column stripes confined to a subset of bands, and salt-and-pepper impulses.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{HsiError, Result};
use crate::rng::rng_for;

pub const DEFAULT_STRIPE_COLUMN_FRACTION: f64 = 0.2;
pub const DEFAULT_STRIPE_AMPLITUDE: f64 = 0.25;

fn default_column_fraction() -> f64 {
    DEFAULT_STRIPE_COLUMN_FRACTION
}

fn default_amplitude() -> f64 {
    DEFAULT_STRIPE_AMPLITUDE
}

/// Declarative composite corruption. Components are applied in the order
/// Gaussian, stripe, sparse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stripe_band_count: Option<usize>,
    #[serde(default = "default_column_fraction")]
    pub stripe_column_fraction: f64,
    #[serde(default = "default_amplitude")]
    pub stripe_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(snr_db: f64, seed: u64) -> Self {
        Self {
            gaussian_snr_db: Some(snr_db),
            sparse_fraction: None,
            stripe_band_count: None,
            stripe_column_fraction: DEFAULT_STRIPE_COLUMN_FRACTION,
            stripe_amplitude: DEFAULT_STRIPE_AMPLITUDE,
            seed,
        }
    }

    pub fn with_sparse(mut self, fraction: f64) -> Self {
        self.sparse_fraction = Some(fraction);
        self
    }

    pub fn with_stripes(mut self, band_count: usize) -> Self {
        self.stripe_band_count = Some(band_count);
        self
    }

    pub fn validate(&self, bands: usize) -> Result<()> {
        if self.gaussian_snr_db.is_none() && self.sparse_fraction.is_none() && self.stripe_band_count.is_none() {
            return Err(HsiError::InvalidParameter("noise spec has no components".into()));
        }
        if let Some(snr) = self.gaussian_snr_db {
            if snr.is_nan() {
                return Err(HsiError::InvalidParameter("gaussian_snr_db is NaN".into()));
            }
        }
        if let Some(f) = self.sparse_fraction {
            check_fraction("sparse_fraction", f)?;
        }
        if let Some(k) = self.stripe_band_count {
            if k > bands {
                return Err(HsiError::InvalidParameter(format!(
                    "stripe_band_count {k} exceeds {bands} bands"
                )));
            }
            check_fraction("stripe_column_fraction", self.stripe_column_fraction)?;
            if !(self.stripe_amplitude > 0.0 && self.stripe_amplitude.is_finite()) {
                return Err(HsiError::InvalidParameter(format!(
                    "stripe_amplitude must be positive, got {}",
                    self.stripe_amplitude
                )));
            }
        }
        Ok(())
    }
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(HsiError::InvalidParameter(format!("{name} must lie in [0, 1], got {f}")))
    }
}

/// Noise standard deviation that yields `snr_db` for a signal of mean power
/// `‖x‖²/n`.
pub fn sigma_for_snr(cube: &HsiCube, snr_db: f64) -> f64 {
    let power = cube.as_slice().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / cube.len() as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Adds i.i.d. `N(0, σ²)` noise with σ chosen from the target SNR. The output
/// is not clamped. Returns the σ used.
pub fn add_gaussian_snr(cube: &HsiCube, snr_db: f64, seed: u64) -> Result<(HsiCube, f64)> {
    let sigma = sigma_for_snr(cube, snr_db);
    if sigma == 0.0 {
        return Ok((cube.clone().with_normalized_flag(false), 0.0));
    }
    let mut rng = rng_for(seed, "noise/gaussian", 0);
    let data = cube
        .as_slice()
        .iter()
        .map(|&v| {
            let w: f64 = rng.sample(StandardNormal);
            (v as f64 + sigma * w) as f32
        })
        .collect();
    let (h, w, b) = cube.shape();
    Ok((HsiCube::from_vec(h, w, b, data)?, sigma))
}

/// Sets exactly `round(fraction * n)` distinct voxels to 0 or 1 (equal odds).
/// A chosen voxel already at 0 or 1 is flipped to the other extreme, so the
/// number of altered voxels is exact.
pub fn add_sparse(cube: &HsiCube, fraction: f64, seed: u64) -> Result<HsiCube> {
    check_fraction("sparse fraction", fraction)?;
    let n = cube.len();
    let count = (fraction * n as f64).round() as usize;
    let mut rng = rng_for(seed, "noise/sparse", 0);
    let mut data = cube.as_slice().to_vec();
    for i in index::sample(&mut rng, n, count.min(n)) {
        let coin = rng.random_bool(0.5);
        data[i] = match data[i] {
            0.0 => 1.0,
            1.0 => 0.0,
            _ if coin => 1.0,
            _ => 0.0,
        };
    }
    let (h, w, b) = cube.shape();
    HsiCube::from_vec(h, w, b, data)
}

/// Adds column-constant offsets in `band_count` randomly chosen bands.
///
/// In each chosen band, `round(column_fraction * width)` distinct columns get
/// an offset drawn uniformly from `[-amplitude, amplitude]`.
pub fn add_stripes(
    cube: &HsiCube,
    band_count: usize,
    column_fraction: f64,
    amplitude: f64,
    seed: u64,
) -> Result<HsiCube> {
    let (h, w, b) = cube.shape();
    if band_count > b {
        return Err(HsiError::InvalidParameter(format!("stripe band count {band_count} exceeds {b} bands")));
    }
    check_fraction("stripe column fraction", column_fraction)?;
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(HsiError::InvalidParameter(format!("stripe amplitude must be positive, got {amplitude}")));
    }
    let columns = ((column_fraction * w as f64).round() as usize).min(w);
    let mut rng = rng_for(seed, "noise/stripe", 0);
    let mut data = cube.as_slice().to_vec();
    let mut bands: Vec<usize> = index::sample(&mut rng, b, band_count).into_vec();
    bands.sort_unstable();
    for band in bands {
        let mut cols: Vec<usize> = index::sample(&mut rng, w, columns).into_vec();
        cols.sort_unstable();
        for col in cols {
            let offset = rng.random_range(-amplitude..=amplitude) as f32;
            for row in 0..h {
                data[(row * w + col) * b + band] += offset;
            }
        }
    }
    HsiCube::from_vec(h, w, b, data)
}

/// Applies every component of `spec` (Gaussian, then stripes, then sparse).
/// Returns the noisy cube and the Gaussian σ (0 when there is no Gaussian part).
pub fn apply_spec(cube: &HsiCube, spec: &NoiseSpec) -> Result<(HsiCube, f64)> {
    spec.validate(cube.bands())?;
    let (mut noisy, sigma) = match spec.gaussian_snr_db {
        Some(snr) => add_gaussian_snr(cube, snr, spec.seed)?,
        None => (cube.clone().with_normalized_flag(false), 0.0),
    };
    if let Some(k) = spec.stripe_band_count {
        noisy = add_stripes(&noisy, k, spec.stripe_column_fraction, spec.stripe_amplitude, spec.seed)?;
    }
    if let Some(f) = spec.sparse_fraction {
        noisy = add_sparse(&noisy, f, spec.seed)?;
    }
    Ok((noisy, sigma))
}
