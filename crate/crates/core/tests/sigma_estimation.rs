use hsi_core::sigma::{dwt_hh, estimate_sigma, median, MAD_SCALE};
use hsi_core::HsiCube;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise_cube(h: usize, w: usize, b: usize, sigma: f64, seed: u64) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HsiCube::from_fn(h, w, b, |_, _, _| (sigma * rng.sample::<f64, _>(StandardNormal)) as f32).unwrap()
}

#[test]
fn hand_evaluated_block() {
    assert_eq!(dwt_hh(&[1.0, 0.0, 0.0, 1.0], 2, 2).unwrap(), vec![1.0]);
    assert_eq!(dwt_hh(&[0.0, 1.0, 1.0, 0.0], 2, 2).unwrap(), vec![-1.0]);
    assert!(dwt_hh(&[1.0; 3], 1, 3).is_err());
    assert!(dwt_hh(&[1.0; 4], 2, 3).is_err());
}

#[test]
fn odd_sizes_drop_trailing_edge() {
    let img: Vec<f32> = (0..15).map(|v| v as f32).collect();
    assert_eq!(dwt_hh(&img, 3, 5).unwrap().len(), 2);
}

#[test]
fn hh_of_white_noise_keeps_variance() {
    let sigma = 0.2;
    let cube = noise_cube(256, 256, 1, sigma, 5);
    let hh = dwt_hh(&cube.band_plane(0), 256, 256).unwrap();
    let var = hh.iter().map(|v| v * v).sum::<f64>() / hh.len() as f64;
    assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "variance ratio {}", var / (sigma * sigma));
}

#[test]
fn median_conventions() {
    assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    assert_eq!(median(&mut [7.0]), 7.0);
    assert_eq!(MAD_SCALE, 0.6745);
}

#[test]
fn constant_cube_has_zero_sigma() {
    let est = estimate_sigma(&HsiCube::from_vec(4, 4, 2, vec![0.3; 32]).unwrap()).unwrap();
    assert_eq!(est.pooled, 0.0);
    assert_eq!(est.per_band, vec![0.0, 0.0]);
}

#[test]
fn recovers_injected_sigma() {
    for sigma in [0.02, 0.05, 0.2] {
        let est = estimate_sigma(&noise_cube(128, 128, 8, sigma, 1)).unwrap();
        assert!((est.pooled / sigma - 1.0).abs() < 0.05);
        assert_eq!(est.per_band.len(), 8);
    }
}

#[test]
fn smooth_signal_barely_biases_estimate() {
    let sigma = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cube = HsiCube::from_fn(128, 128, 4, |r, c, b| {
        let s = 0.5 + 0.3 * ((r as f64) * 0.05 + (c as f64) * 0.03 + b as f64).sin();
        (s + sigma * rng.sample::<f64, _>(StandardNormal)) as f32
    })
    .unwrap();
    assert!((estimate_sigma(&cube).unwrap().pooled / sigma - 1.0).abs() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scale_equivariant_shift_invariant(seed in 0u64..1000, k in 0.25f32..4.0, shift in -2.0f32..2.0) {
        let cube = noise_cube(16, 16, 3, 0.1, seed);
        let base = estimate_sigma(&cube).unwrap().pooled;
        let scaled = estimate_sigma(&cube.map(|v| v * k).unwrap()).unwrap().pooled;
        let shifted = estimate_sigma(&cube.map(|v| v + shift).unwrap()).unwrap().pooled;
        prop_assert!((scaled - k as f64 * base).abs() <= 1e-5 * (1.0 + scaled));
        prop_assert!((shifted - base).abs() <= 1e-5);
    }
}
