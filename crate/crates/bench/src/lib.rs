//! Fixtures shared by the benchmarks.

use belstable_core::{
    bel::EstimatorConfig, DiffusionMatrix, DriftModel, SpectralModel, StableParams,
};
use belstable_core::stable::Clock;

/// OU drift, identity noise, `alpha = 1.2`.
pub fn ou_config(dim: usize, steps: usize, n_paths: usize) -> EstimatorConfig {
    let mut h = vec![0.0; dim];
    h[0] = 1.0;
    EstimatorConfig {
        drift: DriftModel::ou(dim, 1.0).expect("valid drift"),
        diff: DiffusionMatrix::identity(dim).expect("valid diffusion"),
        x0: vec![0.5; dim],
        h,
        t: 1.0,
        params: StableParams::new(1.2).expect("valid alpha"),
        steps,
        n_paths,
        seed: 7,
    }
}

pub fn heat_model(n: usize) -> SpectralModel {
    SpectralModel::heat(n, 1.0, Clock::Stable(StableParams::new(1.5).expect("valid alpha")))
        .expect("valid model")
}
