//! Deterministic synthetic traffic used by tests, benches and demos.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{extract_windows, DataError, RawRecording, Sample, Source, WindowConfig, FUTURE_LEN, HISTORY_LEN, STEP};
use crate::plan::{eval_quintic, quintic_lateral};
use crate::scene::{ContextGrid, Dims, LaneGeometry, MotionState, Track, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HighwayConfig {
    pub lanes: usize,
    pub lane_width: f64,
    pub vehicles: usize,
    /// Recording length (s).
    pub duration: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Mean longitudinal gap between consecutive vehicles in a lane (m).
    pub spacing: f64,
    pub lane_change_prob: f64,
    /// Peak of the sinusoidal acceleration profile (m/s²).
    pub max_accel: f64,
    /// Sampling rate (Hz).
    pub rate: f64,
}

impl Default for HighwayConfig {
    fn default() -> Self {
        Self {
            lanes: 3,
            lane_width: 3.75,
            vehicles: 12,
            duration: 20.0,
            min_speed: 22.0,
            max_speed: 30.0,
            spacing: 30.0,
            lane_change_prob: 0.4,
            max_accel: 0.8,
            rate: 1.0 / STEP,
        }
    }
}

struct Plan {
    x0: f64,
    v0: f64,
    amp: f64,
    period: f64,
    y0: f64,
    change: Option<(f64, [f64; 6])>,
}

const CHANGE_TIME: f64 = 4.0;

impl Plan {
    fn state(&self, t: f64) -> MotionState {
        let w = TAU / self.period;
        let ax = self.amp * (w * t).sin();
        let vx = self.v0 + self.amp / w * (1.0 - (w * t).cos());
        let x = self.x0 + self.v0 * t + self.amp / w * (t - (w * t).sin() / w);
        let (y, vy, ay) = match self.change {
            Some((start, c)) if t > start => {
                let tau = (t - start).min(CHANGE_TIME);
                let (y, vy, ay) = eval_quintic(&c, tau);
                if t - start >= CHANGE_TIME { (y, 0.0, 0.0) } else { (y, vy, ay) }
            }
            _ => (self.y0, 0.0, 0.0),
        };
        MotionState { t, x, y, vx, vy, ax, ay }
    }
}

/// A multi-lane recording with smoothly varying speeds and occasional
/// quintic lane changes.
pub fn highway(seed: u64, cfg: &HighwayConfig) -> Result<RawRecording, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..cfg.lanes).map(|i| cfg.lane_width * (i as f64 + 0.5)).collect();
    let lanes = LaneGeometry::new(centers.clone(), cfg.lane_width)?;
    let steps = (cfg.duration * cfg.rate).round() as usize + 1;
    let mut next_x = vec![0.0; cfg.lanes];
    let mut tracks = Vec::with_capacity(cfg.vehicles);
    for id in 0..cfg.vehicles {
        let lane = id % cfg.lanes;
        let x0 = next_x[lane] + rng.random_range(0.6..1.4) * cfg.spacing;
        next_x[lane] = x0;
        let change = (cfg.lanes > 1 && rng.random_bool(cfg.lane_change_prob)).then(|| {
            let target = if lane == 0 {
                1
            } else if lane + 1 == cfg.lanes || rng.random_bool(0.5) {
                lane - 1
            } else {
                lane + 1
            };
            let start = rng.random_range(1.0..(cfg.duration - CHANGE_TIME).max(1.5));
            (start, quintic_lateral(centers[lane], 0.0, 0.0, centers[target], CHANGE_TIME).expect("positive horizon"))
        });
        let plan = Plan {
            x0,
            v0: rng.random_range(cfg.min_speed..=cfg.max_speed),
            amp: rng.random_range(-cfg.max_accel..=cfg.max_accel),
            period: rng.random_range(6.0..14.0),
            y0: centers[lane],
            change,
        };
        let states = (0..steps).map(|k| plan.state(k as f64 / cfg.rate)).collect();
        let length = rng.random_range(4.2..5.4);
        tracks.push(Track::new(VehicleId(id as u64 + 1), length, 1.9, states)?);
    }
    Ok(RawRecording {
        name: format!("synthetic{seed}"),
        source: Source::Highd,
        native_rate: cfg.rate,
        tracks,
        lanes,
    })
}

/// `n` windows with surrounding vehicles, drawn from synthetic recordings.
pub fn interaction_samples(seed: u64, n: usize) -> Result<Vec<Sample>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::new();
    let mut rec_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    while pool.len() < n {
        let rec = highway(rec_seed, &HighwayConfig::default())?;
        pool.extend(extract_windows(&rec, &WindowConfig::default())?.into_iter().filter(|s| !s.svs.is_empty()));
        rec_seed = rec_seed.wrapping_add(1);
    }
    pool.shuffle(&mut rng);
    pool.truncate(n);
    Ok(pool)
}

/// A sample without neighbours whose OV follows `x(t) = p + v t + a t²/2`
/// exactly, with `t = 0` at the last history step.
pub fn kinematic_sample(id: &str, p: [f64; 2], v: [f64; 2], a: [f64; 2]) -> Sample {
    let at = |t: f64| MotionState {
        t,
        x: p[0] + v[0] * t + 0.5 * a[0] * t * t,
        y: p[1] + v[1] * t + 0.5 * a[1] * t * t,
        vx: v[0] + a[0] * t,
        vy: v[1] + a[1] * t,
        ax: a[0],
        ay: a[1],
    };
    let ov_history = (0..HISTORY_LEN).map(|k| at((k as f64 - (HISTORY_LEN - 1) as f64) * STEP)).collect();
    let ov_future = (1..=FUTURE_LEN)
        .map(|k| {
            let s = at(k as f64 * STEP);
            [s.x, s.y]
        })
        .collect();
    Sample {
        id: id.to_owned(),
        ov_id: VehicleId(1),
        t0: 0.0,
        ov_dims: Dims::default(),
        ov_history,
        ov_future,
        grid: ContextGrid::empty(VehicleId(1)),
        svs: Vec::new(),
    }
}

/// `n` constant-acceleration samples with random positions and velocities.
pub fn kinematic_samples(seed: u64, n: usize, a: [f64; 2]) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let p = [rng.random_range(0.0..500.0), rng.random_range(0.0..12.0)];
            let v = [rng.random_range(10.0..35.0), rng.random_range(-0.5..0.5)];
            kinematic_sample(&format!("kin:{i}"), p, v, a)
        })
        .collect()
}
