//! Ego candidate trajectories and time-continuous trajectories through
//! predicted points.

mod quintic;
mod spline;

pub use quintic::{eval_quintic, quintic_lateral, Quintic};
pub use spline::{eval_segment, spline_fit, CubicSpline, Segment, SplineEnd, SplineTrajectory};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{heading_from_velocity, LaneGeometry, MotionState, Pose};

/// Admissible longitudinal acceleration range (m/s²).
pub const AX_LIMIT: f64 = 5.0;
/// Slack on horizon bounds when evaluating.
const HORIZON_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid horizon {0}")]
    InvalidHorizon(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("spline: {0}")]
    Spline(String),
    #[error("t = {t} outside horizon [{start}, {end}]")]
    OutOfHorizon { t: f64, start: f64, end: f64 },
    #[error("csv: {0}")]
    Csv(String),
}

/// A trajectory evaluable on `[t0, t0 + horizon]`.
pub trait Trajectory {
    fn t0(&self) -> f64;
    fn horizon(&self) -> f64;
    /// Position and velocity; callers guarantee `t` is within the horizon.
    fn state_unchecked(&self, t: f64) -> ([f64; 2], [f64; 2]);

    fn state(&self, t: f64) -> Result<([f64; 2], [f64; 2]), PlanError> {
        let (start, end) = (self.t0(), self.t0() + self.horizon());
        if !(t >= start - HORIZON_TOL && t <= end + HORIZON_TOL) {
            return Err(PlanError::OutOfHorizon { t, start, end });
        }
        Ok(self.state_unchecked(t.clamp(start, end)))
    }
}

/// Position and heading at `t`; heading follows the velocity tangent with the
/// low-speed fallback to the road axis.
pub fn eval_pose(traj: &impl Trajectory, t: f64, lanes: &LaneGeometry) -> Result<Pose, PlanError> {
    let ([x, y], [vx, vy]) = traj.state(t)?;
    Ok(Pose::new(x, y, heading_from_velocity(vx, vy, lanes)))
}

/// Ego motion hypothesis: constant longitudinal acceleration (never reversing)
/// plus a quintic lateral move to `lateral_target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrajectory {
    pub a_x: f64,
    pub lateral_target: f64,
    pub coeffs: Quintic,
    pub t0: f64,
    pub x0: f64,
    pub vx0: f64,
    pub y0: f64,
    pub vy0: f64,
    pub ay0: f64,
    pub tf: f64,
}

impl CandidateTrajectory {
    pub fn new(av: &MotionState, a_x: f64, lateral_target: f64, tf: f64) -> Result<Self, PlanError> {
        if a_x.is_nan() || a_x.abs() > AX_LIMIT {
            return Err(PlanError::InvalidInput(format!("a_x {a_x} outside [-{AX_LIMIT}, {AX_LIMIT}]")));
        }
        if !av.is_finite() {
            return Err(PlanError::InvalidInput("non-finite ego state".into()));
        }
        let coeffs = quintic_lateral(av.y, av.vy, av.ay, lateral_target, tf)?;
        Ok(Self {
            a_x,
            lateral_target,
            coeffs,
            t0: av.t,
            x0: av.x,
            vx0: av.vx,
            y0: av.y,
            vy0: av.vy,
            ay0: av.ay,
            tf,
        })
    }

    /// Longitudinal position and speed at local time `tau`, with speed floored at zero.
    pub fn longitudinal(&self, tau: f64) -> (f64, f64) {
        let (v0, a) = (self.vx0, self.a_x);
        let dist = if a == 0.0 {
            v0.max(0.0) * tau
        } else {
            let r = -v0 / a;
            if a > 0.0 {
                if r <= 0.0 {
                    v0 * tau + 0.5 * a * tau * tau
                } else if tau <= r {
                    0.0
                } else {
                    0.5 * a * (tau - r).powi(2)
                }
            } else if r <= 0.0 {
                0.0
            } else if tau <= r {
                v0 * tau + 0.5 * a * tau * tau
            } else {
                v0 * r + 0.5 * a * r * r
            }
        };
        (self.x0 + dist, (v0 + a * tau).max(0.0))
    }

    /// `(y, ẏ, ÿ)` at local time `tau`.
    pub fn lateral(&self, tau: f64) -> (f64, f64, f64) {
        eval_quintic(&self.coeffs, tau)
    }
}

impl Trajectory for CandidateTrajectory {
    fn t0(&self) -> f64 {
        self.t0
    }

    fn horizon(&self) -> f64 {
        self.tf
    }

    fn state_unchecked(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let tau = t - self.t0;
        let (x, vx) = self.longitudinal(tau);
        let (y, vy, _) = self.lateral(tau);
        ([x, y], [vx, vy])
    }
}

/// `-5, -4.5, …, 5` m/s².
pub fn default_ax_grid() -> Vec<f64> {
    ax_grid(0.5)
}

/// Symmetric acceleration grid over `[-5, 5]` with the given step.
pub fn ax_grid(step: f64) -> Vec<f64> {
    let n = (2.0 * AX_LIMIT / step).round() as i64;
    (0..=n).map(|k| -AX_LIMIT + k as f64 * step).collect()
}

/// Current-lane and adjacent-lane centers reachable from the ego position.
pub fn lateral_targets(av: &MotionState, lanes: &LaneGeometry) -> Vec<f64> {
    match lanes.lane_of(av.y) {
        Some(lane) => lanes.reachable_centers(lane),
        None => Vec::new(),
    }
}

/// Cartesian product of accelerations and lateral targets, acceleration-major.
/// Targets off the lane map are skipped.
pub fn candidates(av: &MotionState, ax_grid: &[f64], targets: &[f64], lanes: &LaneGeometry, tf: f64) -> Result<Vec<CandidateTrajectory>, PlanError> {
    let valid: Vec<f64> = targets
        .iter()
        .copied()
        .filter(|&y| {
            let ok = lanes.covers(y);
            if !ok {
                log::warn!("lateral target {y} is off the lane map; skipped");
            }
            ok
        })
        .collect();
    let mut out = Vec::with_capacity(ax_grid.len() * valid.len());
    for &a in ax_grid {
        for &y in &valid {
            out.push(CandidateTrajectory::new(av, a, y, tf)?);
        }
    }
    Ok(out)
}

/// Writes `t,x,y,heading` rows sampled every `dt` over the horizon.
pub fn write_pose_csv<W: Write>(out: W, traj: &impl Trajectory, dt: f64, lanes: &LaneGeometry) -> Result<(), PlanError> {
    let csv_err = |e: csv::Error| PlanError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "x", "y", "heading"]).map_err(csv_err)?;
    let steps = (traj.horizon() / dt).round() as usize;
    for k in 0..=steps {
        let t = traj.t0() + k as f64 * dt;
        let p = eval_pose(traj, t, lanes)?;
        w.serialize((t, p.x, p.y, p.heading)).map_err(csv_err)?;
    }
    w.flush().map_err(|e| PlanError::Csv(e.to_string()))
}
