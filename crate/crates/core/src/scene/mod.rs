//! Vehicles, road geometry, local traffic context and oriented boxes.
//!
//! Coordinates are road-aligned: `x` runs along the direction of travel and
//! `y` across the road. Lane indices grow with `y`.

mod grid;
mod obb;

pub use grid::{assign_context_grid, Column, ContextGrid, FrameVehicle, GridConfig, Rank, Slot, SV_SLOTS};
pub use obb::{heading_from_velocity, obb_at, Obb, Pose, LOW_SPEED};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the uniform sampling step of a [`Track`].
pub const STEP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("vehicle {0} is not present in the frame")]
    MissingVehicle(VehicleId),
    #[error("vehicle {0} is off the lane map")]
    OffLaneMap(VehicleId),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid dimensions: length {length}, width {width}")]
    InvalidDimensions { length: f64, width: f64 },
    #[error("invalid track {id}: {reason}")]
    InvalidTrack { id: VehicleId, reason: String },
    #[error("invalid lane geometry: {0}")]
    InvalidLanes(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Kinematic state at time `t` (s): position (m), velocity (m/s), acceleration (m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
}

impl MotionState {
    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite()) && self.t.is_finite()
    }

    /// `[x, y, vx, vy, ax, ay]`.
    pub fn as_array(&self) -> [f64; 6] {
        [self.x, self.y, self.vx, self.vy, self.ax, self.ay]
    }
}

/// Vehicle footprint in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dims {
    pub length: f64,
    pub width: f64,
}

impl Dims {
    pub fn new(length: f64, width: f64) -> Result<Self, SceneError> {
        if !(length > 0.0 && width > 0.0 && length.is_finite() && width.is_finite()) {
            return Err(SceneError::InvalidDimensions { length, width });
        }
        Ok(Self { length, width })
    }
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            length: 5.21,
            width: 2.04,
        }
    }
}

/// Uniformly sampled state history of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub vehicle_id: VehicleId,
    pub length: f64,
    pub width: f64,
    states: Vec<MotionState>,
}

impl Track {
    pub fn new(vehicle_id: VehicleId, length: f64, width: f64, states: Vec<MotionState>) -> Result<Self, SceneError> {
        let invalid = |reason: String| SceneError::InvalidTrack { id: vehicle_id, reason };
        Dims::new(length, width).map_err(|e| invalid(e.to_string()))?;
        if let Some(bad) = states.iter().position(|s| !s.is_finite()) {
            return Err(invalid(format!("non-finite state at index {bad}")));
        }
        if states.len() >= 2 {
            let step = states[1].t - states[0].t;
            if step <= 0.0 {
                return Err(invalid("timestamps not strictly increasing".into()));
            }
            for (k, w) in states.windows(2).enumerate() {
                if ((w[1].t - w[0].t) - step).abs() > STEP_TOLERANCE {
                    return Err(invalid(format!("non-uniform step at index {}", k + 1)));
                }
            }
        }
        Ok(Self {
            vehicle_id,
            length,
            width,
            states,
        })
    }

    pub fn states(&self) -> &[MotionState] {
        &self.states
    }

    pub fn dims(&self) -> Dims {
        Dims {
            length: self.length,
            width: self.width,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Sampling step, if the track has at least two states.
    pub fn step(&self) -> Option<f64> {
        (self.states.len() >= 2).then(|| self.states[1].t - self.states[0].t)
    }

    pub fn start_time(&self) -> Option<f64> {
        self.states.first().map(|s| s.t)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.states.last().map(|s| s.t)
    }

    pub fn duration(&self) -> f64 {
        match (self.start_time(), self.end_time()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Index of the state sampled at `t` (within `tol`).
    pub fn index_at(&self, t: f64, tol: f64) -> Option<usize> {
        let t0 = self.start_time()?;
        let step = self.step().unwrap_or(1.0);
        let k = ((t - t0) / step).round();
        if k < 0.0 || k as usize >= self.states.len() {
            return None;
        }
        let k = k as usize;
        ((self.states[k].t - t).abs() <= tol).then_some(k)
    }

    pub fn state_at(&self, t: f64, tol: f64) -> Option<&MotionState> {
        self.index_at(t, tol).map(|k| &self.states[k])
    }
}

/// Straight multi-lane road section in curvilinear coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    lane_centers: Vec<f64>,
    pub lane_width: f64,
    pub longitudinal_axis: [f64; 2],
    pub lateral_axis: [f64; 2],
}

impl LaneGeometry {
    /// Road-aligned axes `(1, 0)` / `(0, 1)`; centers must increase strictly.
    pub fn new(lane_centers: Vec<f64>, lane_width: f64) -> Result<Self, SceneError> {
        Self::with_axes(lane_centers, lane_width, [1.0, 0.0], [0.0, 1.0])
    }

    pub fn with_axes(lane_centers: Vec<f64>, lane_width: f64, longitudinal: [f64; 2], lateral: [f64; 2]) -> Result<Self, SceneError> {
        if lane_centers.is_empty() || lane_centers.iter().any(|c| !c.is_finite()) {
            return Err(SceneError::InvalidLanes("need at least one finite lane center".into()));
        }
        if lane_centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SceneError::InvalidLanes("lane centers must be strictly increasing".into()));
        }
        if !(lane_width > 0.0 && lane_width.is_finite()) {
            return Err(SceneError::InvalidLanes(format!("lane width {lane_width}")));
        }
        let norm = |a: [f64; 2]| a[0].hypot(a[1]);
        let dot = longitudinal[0] * lateral[0] + longitudinal[1] * lateral[1];
        if (norm(longitudinal) - 1.0).abs() > 1e-9 || (norm(lateral) - 1.0).abs() > 1e-9 || dot.abs() > 1e-9 {
            return Err(SceneError::InvalidLanes("axes must be orthonormal".into()));
        }
        Ok(Self {
            lane_centers,
            lane_width,
            longitudinal_axis: longitudinal,
            lateral_axis: lateral,
        })
    }

    pub fn lane_centers(&self) -> &[f64] {
        &self.lane_centers
    }

    pub fn lane_count(&self) -> usize {
        self.lane_centers.len()
    }

    /// Lane whose center is nearest `y`, if `y` lies within half a lane width of it.
    pub fn lane_of(&self, y: f64) -> Option<usize> {
        let (idx, dist) = self
            .lane_centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, (y - c).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        (dist <= 0.5 * self.lane_width + 1e-9).then_some(idx)
    }

    /// Lanes `a` and `b` belong to one contiguous carriageway (no median between them).
    pub fn contiguous(&self, a: usize, b: usize) -> bool {
        let (lo, hi) = (a.min(b), a.max(b));
        hi < self.lane_centers.len() && self.lane_centers[lo..=hi].windows(2).all(|w| w[1] - w[0] <= 1.5 * self.lane_width)
    }

    /// Signed lane offset from `from` to `to`, when both lie on one carriageway.
    pub fn lane_offset(&self, from: usize, to: usize) -> Option<i64> {
        self.contiguous(from, to).then(|| to as i64 - from as i64)
    }

    /// Centers of `lane` and its contiguous neighbors, in increasing order.
    pub fn reachable_centers(&self, lane: usize) -> Vec<f64> {
        let lo = lane.saturating_sub(1);
        let hi = (lane + 1).min(self.lane_centers.len() - 1);
        (lo..=hi).filter(|&k| self.contiguous(lane, k)).map(|k| self.lane_centers[k]).collect()
    }

    /// `y` lies on the mapped road surface.
    pub fn covers(&self, y: f64) -> bool {
        self.lane_of(y).is_some()
    }

    pub fn road_heading(&self) -> f64 {
        self.longitudinal_axis[1].atan2(self.longitudinal_axis[0])
    }
}
