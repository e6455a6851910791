//! Band-averaged PSNR and SSIM, and the normalized mean squared error.

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{HsiError, Result};

/// Peak intensity of normalized cubes.
pub const PEAK: f64 = 1.0;
/// PSNR reported for a band reconstructed without error.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpsnr: f64,
    pub mssim: f64,
    pub nmse: f64,
    pub per_band_psnr: Vec<f64>,
    pub per_band_ssim: Vec<f64>,
}

fn check_shapes(reference: &HsiCube, estimate: &HsiCube) -> Result<()> {
    if reference.shape() != estimate.shape() {
        return Err(HsiError::ShapeMismatch(format!(
            "reference {:?} vs estimate {:?}",
            reference.shape(),
            estimate.shape()
        )));
    }
    Ok(())
}

/// `‖est − ref‖² / ‖ref‖²`.
pub fn nmse(reference: &HsiCube, estimate: &HsiCube) -> Result<f64> {
    check_shapes(reference, estimate)?;
    let (num, den) = reference.as_slice().iter().zip(estimate.as_slice()).fold((0.0, 0.0), |(n, d), (&r, &e)| {
        let (r, e) = (r as f64, e as f64);
        (n + (e - r) * (e - r), d + r * r)
    });
    if den == 0.0 {
        return Err(HsiError::InvalidParameter("NMSE undefined for an all-zero reference".into()));
    }
    Ok(num / den)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (PEAK * PEAK / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Mean over bands of `10 log10(1 / MSE_band)`; also returns the per-band values.
pub fn mpsnr(reference: &HsiCube, estimate: &HsiCube) -> Result<(f64, Vec<f64>)> {
    check_shapes(reference, estimate)?;
    let b = reference.bands();
    let mut sq = vec![0.0f64; b];
    for (px_r, px_e) in reference.as_slice().chunks_exact(b).zip(estimate.as_slice().chunks_exact(b)) {
        for (acc, (&r, &e)) in sq.iter_mut().zip(px_r.iter().zip(px_e)) {
            *acc += (e as f64 - r as f64).powi(2);
        }
    }
    let pixels = (reference.height() * reference.width()) as f64;
    let per_band: Vec<f64> = sq.into_iter().map(|s| psnr_from_mse(s / pixels)).collect();
    Ok((per_band.iter().sum::<f64>() / b as f64, per_band))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a row-major plane.
fn filter_valid(plane: &[f64], height: usize, width: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (height - k + 1, width - k + 1);
    let mut rows = vec![0.0; height * ow];
    for r in 0..height {
        let src = &plane[r * width..(r + 1) * width];
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().zip(&src[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-band planes (Gaussian 11x11 window, σ = 1.5).
pub fn ssim_plane(reference: &[f32], estimate: &[f32], height: usize, width: usize) -> Result<f64> {
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(HsiError::ShapeMismatch(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {height}x{width}"
        )));
    }
    let taps = gaussian_window();
    let x: Vec<f64> = reference.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = estimate.iter().map(|&v| v as f64).collect();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, height, width, &taps);
    let mu_y = filter_valid(&y, height, width, &taps);
    let exx = filter_valid(&prod(&x, &x), height, width, &taps);
    let eyy = filter_valid(&prod(&y, &y), height, width, &taps);
    let exy = filter_valid(&prod(&x, &y), height, width, &taps);
    let (c1, c2) = ((K1 * PEAK).powi(2), (K2 * PEAK).powi(2));
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = exx[i] - mx * mx;
            let vy = eyy[i] - my * my;
            let cxy = exy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}

/// Mean over bands of the per-band mean SSIM.
pub fn mssim(reference: &HsiCube, estimate: &HsiCube) -> Result<(f64, Vec<f64>)> {
    check_shapes(reference, estimate)?;
    let (h, w, b) = reference.shape();
    let per_band = (0..b)
        .map(|band| ssim_plane(&reference.band_plane(band), &estimate.band_plane(band), h, w))
        .collect::<Result<Vec<_>>>()?;
    Ok((per_band.iter().sum::<f64>() / b as f64, per_band))
}

/// All three metrics. SSIM is skipped (NaN) when the cube is smaller than the window.
pub fn evaluate(reference: &HsiCube, estimate: &HsiCube) -> Result<MetricsReport> {
    let (mpsnr, per_band_psnr) = mpsnr(reference, estimate)?;
    let (mssim, per_band_ssim) = if reference.height() >= SSIM_WINDOW && reference.width() >= SSIM_WINDOW {
        mssim(reference, estimate)?
    } else {
        (f64::NAN, Vec::new())
    };
    let nmse = nmse(reference, estimate)?;
    Ok(MetricsReport { mpsnr, mssim, nmse, per_band_psnr, per_band_ssim })
}
