//! Blind Gaussian noise-level estimation from the finest diagonal Haar subband.

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{HsiError, Result};

/// Gaussian consistency constant of the median absolute deviation.
pub const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub per_band: Vec<f64>,
    /// Mean of `per_band`.
    pub pooled: f64,
}

/// Single-level orthonormal Haar HH subband of a row-major image.
///
/// For the 2x2 block `{a, b; c, d}` at `(2i, 2j)` the coefficient is
/// `(a - b - c + d) / 2`. A trailing odd row or column is dropped.
pub fn dwt_hh(image: &[f32], height: usize, width: usize) -> Result<Vec<f64>> {
    if image.len() != height * width {
        return Err(HsiError::LengthMismatch { expected: height * width, actual: image.len() });
    }
    if height < 2 || width < 2 {
        return Err(HsiError::ShapeMismatch(format!("Haar transform needs at least 2x2, got {height}x{width}")));
    }
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        let top = &image[2 * i * width..];
        let bottom = &image[(2 * i + 1) * width..];
        for j in 0..ow {
            let (a, b) = (top[2 * j] as f64, top[2 * j + 1] as f64);
            let (c, d) = (bottom[2 * j] as f64, bottom[2 * j + 1] as f64);
            out.push((a - b - c + d) / 2.0);
        }
    }
    Ok(out)
}

/// Median; even lengths average the two middle order statistics.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let n = values.len();
    let mid = n / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Per-band `median(|HH|) / 0.6745`, pooled by the mean over bands.
pub fn estimate_sigma(cube: &HsiCube) -> Result<SigmaEstimate> {
    let (h, w, b) = cube.shape();
    let per_band = (0..b)
        .map(|band| {
            let mut hh = dwt_hh(&cube.band_plane(band), h, w)?;
            hh.iter_mut().for_each(|v| *v = v.abs());
            Ok(median(&mut hh) / MAD_SCALE)
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = per_band.iter().sum::<f64>() / b as f64;
    Ok(SigmaEstimate { per_band, pooled })
}
