//! Unsupervised hyperspectral denoising with a deep image prior.
//!
//! An untrained encoder-decoder network is fitted to a single noisy cube. Four
//! objectives are available ([`losses::LossKind`]): plain MSE, SURE, Smooth-ℓ1,
//! and the unified Smooth-ℓ1 + Monte Carlo divergence loss trained jointly over
//! the network parameters and its input. The crate also carries the noise
//! synthesis, blind σ estimation, quality metrics and the experiment harness.

pub mod cube;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod noise;
pub mod phantom;
pub mod render;
pub mod rng;
pub mod sigma;
pub mod train;

pub use cube::{load_cube, normalize, save_cube, CubeHeader, HsiCube};
pub use error::{HsiError, Result};
pub use losses::{LossKind, LossMode};
pub use metrics::MetricsReport;
pub use net::{DhipModel, NetworkConfig};
pub use noise::NoiseSpec;
pub use sigma::SigmaEstimate;
pub use train::{TrainConfig, TrainingTrace};
