//! Brute-force references for the test suite. Nothing here calls into the
//! code paths it is used to check.
#![allow(dead_code)]

use std::collections::BTreeSet;

/// Divergence of `y -> A y`: the trace of the row-major `n x n` matrix `A`.
pub fn linear_divergence(a: &[f64], n: usize) -> Result<f64, String> {
    if a.len() != n * n {
        return Err(format!("matrix with {} entries is not {n}x{n}", a.len()));
    }
    Ok((0..n).map(|i| a[i * n + i]).sum())
}

/// Central differences `(g(p + h e_i) - g(p - h e_i)) / 2h`.
pub fn fd_gradient(mut g: impl FnMut(&[f64]) -> f64, p: &[f64], h: f64) -> Result<Vec<f64>, String> {
    if !(h > 0.0) {
        return Err(format!("step must be positive, got {h}"));
    }
    let mut x = p.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        x[i] = p[i] + h;
        let plus = g(&x);
        x[i] = p[i] - h;
        let minus = g(&x);
        x[i] = p[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(format!("non-finite evaluation at coordinate {i}"));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseStats {
    /// `+inf` when the cubes are identical.
    pub realized_snr_db: f64,
    pub altered_voxel_count: usize,
    pub striped_band_set: BTreeSet<usize>,
}

/// Direct elementwise comparison of `(row, col, band)`-ordered samples.
pub fn empirical_noise_stats(clean: &[f32], noisy: &[f32], bands: usize) -> Result<NoiseStats, String> {
    if clean.len() != noisy.len() {
        return Err(format!("length {} vs {}", clean.len(), noisy.len()));
    }
    let mut signal = 0.0f64;
    let mut noise = 0.0f64;
    let mut altered = 0usize;
    let mut striped = BTreeSet::new();
    for (i, (&x, &y)) in clean.iter().zip(noisy).enumerate() {
        signal += (x as f64).powi(2);
        noise += (y as f64 - x as f64).powi(2);
        if x != y {
            altered += 1;
            striped.insert(i % bands);
        }
    }
    let realized_snr_db = if noise == 0.0 { f64::INFINITY } else { 10.0 * (signal / noise).log10() };
    Ok(NoiseStats { realized_snr_db, altered_voxel_count: altered, striped_band_set: striped })
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn trace_examples() {
        let mut eye = vec![0.0; 25];
        (0..5).for_each(|i| eye[i * 6] = 1.0);
        assert_eq!(linear_divergence(&eye, 5).unwrap(), 5.0);
        assert_eq!(linear_divergence(&[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0], 3).unwrap(), 6.0);
        assert!(linear_divergence(&[1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn fd_on_quadratic() {
        let g = fd_gradient(|p| p.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        assert!(fd_gradient(|_| f64::NAN, &[0.0], 1e-3).is_err());
        assert!(fd_gradient(|_| 0.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn identical_cubes() {
        let s = empirical_noise_stats(&[0.1, 0.2], &[0.1, 0.2], 1).unwrap();
        assert!(s.realized_snr_db.is_infinite());
        assert_eq!(s.altered_voxel_count, 0);
        assert!(s.striped_band_set.is_empty());
    }
}
