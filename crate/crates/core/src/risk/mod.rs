//! Collision metrics between ego candidates and predicted object-vehicle
//! trajectories, and the fused time-continuous risk over the candidate grid.

mod geometry;
mod map;

pub use geometry::{distance_margin, mdm, mdm_along, sat_overlap, separation, Mdm};
pub use map::{ov_spline_from_means, risk_map, CandidateGrid, OvTrack, RiskMap, RiskMapEntry, RiskMapHeader};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{eval_pose, CandidateTrajectory, PlanError, SplineTrajectory, Trajectory};
use crate::scene::{obb_at, Dims, LaneGeometry, SceneError, VehicleId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("axis {0:?} is not a unit vector")]
    InvalidAxis([f64; 2]),
    #[error("invalid risk parameters: {0}")]
    InvalidParams(String),
    #[error("time grid mismatch: {0}")]
    GridError(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("export: {0}")]
    Export(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskParams {
    /// Temporal scale of the TTC term (s).
    pub sigma1: f64,
    /// Width of the temporal kernel around TTC (s).
    pub sigma2: f64,
    /// Longitudinal margin scale (m).
    pub sigma3: f64,
    /// Lateral margin scale (m).
    pub sigma4: f64,
    pub w_ttc: f64,
    pub w_mdm: f64,
    /// Sampling step for overlap checks and risk series (s).
    pub check_step: f64,
    /// Use `TTC²` instead of `TTC` in the first exponent.
    pub squared_ttc: bool,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            sigma1: 2.04,
            sigma2: 2.04,
            sigma3: 45.0,
            sigma4: 1.6,
            w_ttc: 0.6,
            w_mdm: 0.4,
            check_step: 0.05,
            squared_ttc: false,
        }
    }
}

impl RiskParams {
    pub fn validate(&self) -> Result<(), RiskError> {
        let sig = [self.sigma1, self.sigma2, self.sigma3, self.sigma4];
        if !sig.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(RiskError::InvalidParams(format!("sigmas must be positive, got {sig:?}")));
        }
        if !(self.w_ttc >= 0.0 && self.w_mdm >= 0.0 && (self.w_ttc + self.w_mdm - 1.0).abs() < 1e-12) {
            return Err(RiskError::InvalidParams(format!("weights {} + {} must sum to 1", self.w_ttc, self.w_mdm)));
        }
        if !(self.check_step > 0.0 && self.check_step.is_finite()) {
            return Err(RiskError::InvalidParams(format!("check_step {}", self.check_step)));
        }
        Ok(())
    }

    /// Number of check steps covering `tf`; errors unless the step divides it.
    pub fn steps(&self, tf: f64) -> Result<usize, RiskError> {
        self.validate()?;
        let n = tf / self.check_step;
        if tf.is_nan() || tf <= 0.0 || (n - n.round()).abs() > 1e-9 {
            return Err(RiskError::InvalidParams(format!("check_step {} does not divide horizon {tf}", self.check_step)));
        }
        Ok(n.round() as usize)
    }
}

/// Risk at relative time `tau` for a pair with the given TTC and road-axis margins.
pub fn risk_value(ttc: f64, tau: f64, mdm_x: f64, mdm_y: f64, p: &RiskParams) -> f64 {
    let ttc_term = if p.squared_ttc { ttc * ttc } else { ttc };
    let temporal = (-ttc_term / (2.0 * p.sigma1 * p.sigma1)).exp() * (-(tau - ttc).powi(2) / (2.0 * p.sigma2 * p.sigma2)).exp();
    let spatial = (-mdm_x * mdm_x / (2.0 * p.sigma3 * p.sigma3)).exp() * (-mdm_y * mdm_y / (2.0 * p.sigma4 * p.sigma4)).exp();
    (p.w_ttc * temporal + p.w_mdm * spatial).clamp(0.0, 1.0)
}

/// Risk series of one ego candidate against one object vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub ov_id: VehicleId,
    pub ttc: f64,
    pub times: Vec<f64>,
    pub risk: Vec<f64>,
    pub mdm_x: Vec<f64>,
    pub mdm_y: Vec<f64>,
}

/// Footprints of the two vehicles in a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDims {
    pub av: Dims,
    pub ov: Dims,
}

fn check_grid(t0: f64, tf: f64, p: &RiskParams) -> Result<Vec<f64>, RiskError> {
    let n = p.steps(tf)?;
    Ok((0..=n).map(|k| t0 + k as f64 * p.check_step).collect())
}

fn boxes_at(av: &CandidateTrajectory, ov: &SplineTrajectory, t: f64, dims: PairDims, lanes: &LaneGeometry) -> Result<(crate::scene::Obb, crate::scene::Obb), RiskError> {
    let a = obb_at(eval_pose(av, t, lanes)?, dims.av)?;
    let b = obb_at(eval_pose(ov, t, lanes)?, dims.ov)?;
    Ok((a, b))
}

/// Earliest sampled time (relative to the candidate start) at which the boxes
/// overlap, or the horizon length if they never do.
pub fn ttc(av: &CandidateTrajectory, ov: &SplineTrajectory, dims: PairDims, lanes: &LaneGeometry, params: &RiskParams) -> Result<f64, RiskError> {
    let times = check_grid(av.t0(), av.horizon(), params)?;
    for (k, &t) in times.iter().enumerate() {
        let (a, b) = boxes_at(av, ov, t, dims, lanes)?;
        if sat_overlap(&a, &b) {
            return Ok(k as f64 * params.check_step);
        }
    }
    Ok(av.horizon())
}

pub fn pair_risk(
    av: &CandidateTrajectory,
    ov_id: VehicleId,
    ov: &SplineTrajectory,
    dims: PairDims,
    lanes: &LaneGeometry,
    params: &RiskParams,
) -> Result<RiskProfile, RiskError> {
    let times = check_grid(av.t0(), av.horizon(), params)?;
    let mut ttc = None;
    let mut mdm_x = Vec::with_capacity(times.len());
    let mut mdm_y = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let (a, b) = boxes_at(av, ov, t, dims, lanes)?;
        if ttc.is_none() && sat_overlap(&a, &b) {
            ttc = Some(k as f64 * params.check_step);
        }
        let m = mdm_along(&a, &b, lanes.longitudinal_axis, lanes.lateral_axis)?;
        mdm_x.push(m.mdm_x);
        mdm_y.push(m.mdm_y);
    }
    let ttc = ttc.unwrap_or(av.horizon());
    let risk = times
        .iter()
        .zip(mdm_x.iter().zip(&mdm_y))
        .map(|(&t, (&mx, &my))| risk_value(ttc, t - av.t0(), mx, my, params))
        .collect();
    Ok(RiskProfile {
        ov_id,
        ttc,
        times,
        risk,
        mdm_x,
        mdm_y,
    })
}

/// Probabilistic union `1 - Π(1 - r_i)` per time step, accumulated as
/// `u ← u + r·(1 - u)` so a single profile passes through unchanged.
pub fn aggregate_risk(profiles: &[RiskProfile], times: &[f64]) -> Result<Vec<f64>, RiskError> {
    let mut union = vec![0.0; times.len()];
    for p in profiles {
        if p.times.len() != times.len() || p.times.iter().zip(times).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(RiskError::GridError(format!("profile for vehicle {} has a different time grid", p.ov_id)));
        }
        for (u, r) in union.iter_mut().zip(&p.risk) {
            *u += r * (1.0 - *u);
        }
    }
    Ok(union)
}
