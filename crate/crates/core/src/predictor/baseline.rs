use serde::{Deserialize, Serialize};

use crate::data::{Sample, FUTURE_LEN, STEP};

/// Physics extrapolations from the OV state at `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Constant velocity.
    Cv,
    /// Constant acceleration.
    Ca,
}

impl std::str::FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cv" => Ok(Baseline::Cv),
            "ca" => Ok(Baseline::Ca),
            _ => Err(format!("unknown baseline `{s}` (expected cv or ca)")),
        }
    }
}

/// The 25 future positions predicted by `model`.
pub fn baseline_predict(sample: &Sample, model: Baseline) -> Vec<[f64; 2]> {
    let s = sample.ov_current();
    let (ax, ay) = match model {
        Baseline::Cv => (0.0, 0.0),
        Baseline::Ca => (s.ax, s.ay),
    };
    (1..=FUTURE_LEN)
        .map(|k| {
            let t = k as f64 * STEP;
            [s.x + s.vx * t + 0.5 * ax * t * t, s.y + s.vy * t + 0.5 * ay * t * t]
        })
        .collect()
}
