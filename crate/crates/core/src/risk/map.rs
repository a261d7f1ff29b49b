use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_risk, pair_risk, PairDims, RiskError, RiskParams};
use crate::plan::{candidates, default_ax_grid, lateral_targets, spline_fit, SplineEnd, SplineTrajectory};
use crate::scene::{Dims, LaneGeometry, MotionState, VehicleId};

/// Ego behavior grid: accelerations × lateral targets over horizon `tf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateGrid {
    pub ax: Vec<f64>,
    /// Explicit lateral targets; reachable lane centers when `None`.
    pub targets: Option<Vec<f64>>,
    pub tf: f64,
}

impl Default for CandidateGrid {
    fn default() -> Self {
        Self {
            ax: default_ax_grid(),
            targets: None,
            tf: 5.0,
        }
    }
}

/// Predicted object-vehicle trajectory fed to the risk engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvTrack {
    pub id: VehicleId,
    pub dims: Dims,
    pub trajectory: SplineTrajectory,
}

/// Spline through the current position followed by predicted mean positions
/// every `dt`, clamped to the current velocity.
pub fn ov_spline_from_means(current: &MotionState, means: &[[f64; 2]], dt: f64) -> Result<SplineTrajectory, RiskError> {
    let mut pts = Vec::with_capacity(means.len() + 1);
    pts.push([current.x, current.y]);
    pts.extend_from_slice(means);
    Ok(spline_fit(current.t, dt, &pts, [current.vx, current.vy], [current.ax, current.ay], SplineEnd::NotAKnot)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMapEntry {
    pub a_x: f64,
    pub lateral_target: f64,
    /// Aggregated risk over all object vehicles, one value per time.
    pub risk: Vec<f64>,
    /// TTC against each object vehicle, in `ov_ids` order.
    pub ttc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMapHeader {
    pub scenario_id: Option<String>,
    pub t0: f64,
    pub tf: f64,
    pub params: RiskParams,
    pub ax_grid: Vec<f64>,
    pub targets: Vec<f64>,
    pub ov_ids: Vec<VehicleId>,
}

/// Aggregated risk over the candidate grid, acceleration-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskMap {
    pub header: RiskMapHeader,
    pub times: Vec<f64>,
    pub entries: Vec<RiskMapEntry>,
}

impl RiskMap {
    /// `(accelerations, targets, times)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.header.ax_grid.len(), self.header.targets.len(), self.times.len())
    }

    pub fn entry(&self, ax_index: usize, target_index: usize) -> Option<&RiskMapEntry> {
        let n_targets = self.header.targets.len();
        (target_index < n_targets).then(|| self.entries.get(ax_index * n_targets + target_index)).flatten()
    }

    /// Rows `a_x,lateral_target,t,risk`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), RiskError> {
        let err = |e: csv::Error| RiskError::Export(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a_x", "lateral_target", "t", "risk"]).map_err(err)?;
        for e in &self.entries {
            for (t, r) in self.times.iter().zip(&e.risk) {
                w.serialize((e.a_x, e.lateral_target, t, r)).map_err(err)?;
            }
        }
        w.flush().map_err(|e| RiskError::Export(e.to_string()))
    }

    /// Header plus per-candidate TTCs as JSON.
    pub fn header_json(&self) -> Result<String, RiskError> {
        #[derive(Serialize)]
        struct Ttc<'a> {
            a_x: f64,
            lateral_target: f64,
            ttc: &'a [f64],
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            #[serde(flatten)]
            header: &'a RiskMapHeader,
            ttc: Vec<Ttc<'a>>,
        }
        let doc = Doc {
            header: &self.header,
            ttc: self
                .entries
                .iter()
                .map(|e| Ttc {
                    a_x: e.a_x,
                    lateral_target: e.lateral_target,
                    ttc: &e.ttc,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).map_err(|e| RiskError::Export(e.to_string()))
    }
}

/// Scores every ego candidate against all object vehicles. Candidates are
/// evaluated in parallel; output order is deterministic.
pub fn risk_map(
    av: &MotionState,
    av_dims: Dims,
    ovs: &[OvTrack],
    lanes: &LaneGeometry,
    params: &RiskParams,
    grid: &CandidateGrid,
    scenario_id: Option<&str>,
) -> Result<RiskMap, RiskError> {
    let n = params.steps(grid.tf)?;
    let times: Vec<f64> = (0..=n).map(|k| av.t + k as f64 * params.check_step).collect();
    let requested = grid.targets.clone().unwrap_or_else(|| lateral_targets(av, lanes));
    let cands = candidates(av, &grid.ax, &requested, lanes, grid.tf)?;
    let targets: Vec<f64> = requested.into_iter().filter(|&y| lanes.covers(y)).collect();

    let entries = cands
        .par_iter()
        .map(|c| {
            let profiles = ovs
                .iter()
                .map(|ov| pair_risk(c, ov.id, &ov.trajectory, PairDims { av: av_dims, ov: ov.dims }, lanes, params))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(RiskMapEntry {
                a_x: c.a_x,
                lateral_target: c.lateral_target,
                risk: aggregate_risk(&profiles, &times)?,
                ttc: profiles.iter().map(|p| p.ttc).collect(),
            })
        })
        .collect::<Result<Vec<_>, RiskError>>()?;

    Ok(RiskMap {
        header: RiskMapHeader {
            scenario_id: scenario_id.map(str::to_owned),
            t0: av.t,
            tf: grid.tf,
            params: *params,
            ax_grid: grid.ax.clone(),
            targets,
            ov_ids: ovs.iter().map(|o| o.id).collect(),
        },
        times,
        entries,
    })
}
