//! Shared inputs for the criterion benches.

use trajrisk_core::data::Sample;
use trajrisk_core::predictor::{Ablation, ModelConfig, Predictor};
use trajrisk_core::scene::{obb_at, Dims, Obb, Pose};
use trajrisk_core::synthetic::interaction_samples;

/// Two overlapping boxes at an angle, the common SAT case.
pub fn box_pair() -> (Obb, Obb) {
    let dims = Dims::default();
    let a = obb_at(Pose { x: 0.0, y: 0.0, heading: 0.0 }, dims).expect("finite pose");
    let b = obb_at(Pose { x: 3.0, y: 1.0, heading: 0.4 }, dims).expect("finite pose");
    (a, b)
}

pub fn samples(n: usize) -> Vec<Sample> {
    interaction_samples(11, n).expect("synthetic samples")
}

/// A predictor at desk-scale dimensions.
pub fn predictor() -> Predictor {
    Predictor::new(ModelConfig::uniform(16), Ablation::default(), 0).expect("valid config")
}

/// `n` points of a smooth path sampled every 0.2 s.
pub fn path(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let t = k as f64 * 0.2;
            [25.0 * t + 0.3 * t * t, 2.0 * (0.4 * t).sin()]
        })
        .collect()
}
