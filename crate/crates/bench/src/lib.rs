//! Fixtures shared by the benchmarks.

use abds_core::score::MlpConfig;
use abds_core::{MlpEpsModel, NoiseSchedule, ScoreModel};

/// Side of the square benchmark images.
pub const SIDE: usize = 16;

/// An untrained network of the benchmark's size; timing does not depend on
/// the weights.
pub fn mlp_model() -> ScoreModel {
    let cfg = MlpConfig {
        hidden: vec![256; 3],
        ..Default::default()
    };
    ScoreModel::Mlp(MlpEpsModel::new(SIDE * SIDE, &cfg).expect("valid network"))
}

pub fn schedule() -> NoiseSchedule {
    NoiseSchedule::default_linear()
}

/// A smooth input row in model space.
pub fn input_row() -> Vec<f64> {
    (0..SIDE * SIDE)
        .map(|i| (i as f64 * 0.21).sin() * 0.8)
        .collect()
}
