use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, RawRecording};
use crate::scene::{assign_context_grid, ContextGrid, Dims, FrameVehicle, GridConfig, LaneGeometry, MotionState, Slot, Track, VehicleId};

pub const HISTORY_LEN: usize = 16;
pub const FUTURE_LEN: usize = 25;
pub const STEP: f64 = 0.2;

/// Keeps the states whose timestamps are multiples of `dt`, snapping them exactly.
pub fn resample(track: &Track, dt: f64) -> Result<Track, DataError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DataError::Resample(format!("target step {dt}")));
    }
    if let Some(step) = track.step() {
        let ratio = dt / step;
        if ratio < 1.0 - 1e-9 || (ratio - ratio.round()).abs() > 1e-6 {
            return Err(DataError::Resample(format!("native step {step} s does not divide {dt} s")));
        }
    }
    let states = track
        .states()
        .iter()
        .filter_map(|s| {
            let k = (s.t / dt).round();
            ((s.t - k * dt).abs() <= 1e-6).then_some(MotionState { t: k * dt, ..*s })
        })
        .collect();
    Ok(Track::new(track.vehicle_id, track.length, track.width, states)?)
}

/// Surrounding vehicle history aligned with the OV history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvHistory {
    pub slot: Slot,
    pub vehicle_id: VehicleId,
    pub dims: Dims,
    pub states: Vec<MotionState>,
    /// `[Δx, Δy, Δẋ, Δẏ, Δẍ, Δÿ]` of this vehicle minus the OV, per step.
    pub relative: Vec<[f64; 6]>,
}

impl SvHistory {
    pub fn new(slot: Slot, vehicle_id: VehicleId, dims: Dims, states: Vec<MotionState>, ov: &[MotionState]) -> Self {
        let relative = states
            .iter()
            .zip(ov)
            .map(|(s, o)| {
                let (a, b) = (s.as_array(), o.as_array());
                std::array::from_fn(|i| a[i] - b[i])
            })
            .collect();
        Self {
            slot,
            vehicle_id,
            dims,
            states,
            relative,
        }
    }
}

/// One training example: 3 s of history up to and including `t0`, 5 s of
/// future positions after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub ov_id: VehicleId,
    pub t0: f64,
    pub ov_dims: Dims,
    pub ov_history: Vec<MotionState>,
    pub ov_future: Vec<[f64; 2]>,
    pub grid: ContextGrid,
    /// Occupied slots in row-major slot order.
    pub svs: Vec<SvHistory>,
}

impl Sample {
    pub fn ov_current(&self) -> &MotionState {
        self.ov_history.last().expect("history is never empty")
    }

    pub fn sv(&self, slot: Slot) -> Option<&SvHistory> {
        self.svs.iter().find(|s| s.slot == slot)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidSample { id: self.id.clone(), msg });
        if self.ov_history.len() != HISTORY_LEN || self.ov_future.len() != FUTURE_LEN {
            return bad(format!("history {} / future {}", self.ov_history.len(), self.ov_future.len()));
        }
        for sv in &self.svs {
            if sv.states.len() != HISTORY_LEN || sv.relative.len() != HISTORY_LEN {
                return bad(format!("slot {:?} history length {}", sv.slot, sv.states.len()));
            }
            if self.grid.get(sv.slot) != Some(sv.vehicle_id) {
                return bad(format!("slot {:?} disagrees with the grid", sv.slot));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub history_len: usize,
    pub future_len: usize,
    /// Window start spacing (s).
    pub stride: f64,
    pub grid: GridConfig,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            history_len: HISTORY_LEN,
            future_len: FUTURE_LEN,
            stride: 1.0,
            grid: GridConfig::default(),
        }
    }
}

fn step_index(t: f64) -> i64 {
    (t / STEP).round() as i64
}

/// Window of `ov` whose history ends at its state `k0`. `others` yields each
/// other vehicle with the index of its state at the same time. Futures shorter
/// than `future_len` are kept as they are.
fn build_sample<'a>(
    id: String,
    ov: &Track,
    k0: usize,
    others: impl Iterator<Item = (&'a Track, usize)>,
    lanes: &LaneGeometry,
    config: &WindowConfig,
) -> Result<Sample, DataError> {
    let hl = config.history_len;
    let ov_hist = &ov.states()[k0 + 1 - hl..=k0];
    let mut frame = vec![FrameVehicle { id: ov.vehicle_id, state: ov.states()[k0] }];
    let mut sources: HashMap<VehicleId, (&Track, usize)> = HashMap::new();
    for (tr, end) in others {
        if end + 1 < hl {
            continue;
        }
        frame.push(FrameVehicle { id: tr.vehicle_id, state: tr.states()[end] });
        sources.insert(tr.vehicle_id, (tr, end + 1 - hl));
    }
    let grid = assign_context_grid(&frame, ov.vehicle_id, lanes, &config.grid)?;
    let svs = grid
        .occupied()
        .map(|(slot, id)| {
            let (tr, from) = sources[&id];
            SvHistory::new(slot, id, tr.dims(), tr.states()[from..from + hl].to_vec(), ov_hist)
        })
        .collect();
    let future_end = (k0 + 1 + config.future_len).min(ov.len());
    Ok(Sample {
        id,
        ov_id: ov.vehicle_id,
        t0: ov.states()[k0].t,
        ov_dims: ov.dims(),
        ov_history: ov_hist.to_vec(),
        ov_future: ov.states()[k0 + 1..future_end].iter().map(|s| [s.x, s.y]).collect(),
        grid,
        svs,
    })
}

/// Window of `tracks[ov]` ending at `t0`, with whatever future the track has
/// (possibly none). Tracks must be sampled every [`STEP`].
pub fn sample_at(name: &str, tracks: &[Track], lanes: &LaneGeometry, ov: usize, t0: f64, config: &WindowConfig) -> Result<Sample, DataError> {
    let tr = tracks.get(ov).ok_or_else(|| DataError::InvalidParameter(format!("no track at index {ov}")))?;
    let s0 = step_index(t0);
    let index_of = |tr: &Track| {
        let k = s0 - step_index(tr.states().first()?.t);
        (k >= 0 && (k as usize) < tr.len()).then_some(k as usize)
    };
    let k0 = index_of(tr).ok_or_else(|| DataError::InsufficientData(format!("vehicle {} has no state at t = {t0}", tr.vehicle_id)))?;
    if k0 + 1 < config.history_len {
        return Err(DataError::InsufficientData(format!(
            "vehicle {} has {:.1} s of history at t = {t0}, need {:.1} s",
            tr.vehicle_id,
            k0 as f64 * STEP,
            (config.history_len - 1) as f64 * STEP
        )));
    }
    let others = tracks
        .iter()
        .enumerate()
        .filter(|&(i, t)| i != ov && t.vehicle_id != tr.vehicle_id)
        .filter_map(|(_, t)| index_of(t).map(|k| (t, k)));
    build_sample(format!("{name}:{}:{s0}", tr.vehicle_id), tr, k0, others, lanes, config)
}

/// Cuts every track of a 0.2 s recording into sliding windows. Surrounding
/// vehicles are eligible for the grid only when their full history is
/// available. Output is ordered by (vehicle id, window start).
pub fn extract_windows(rec: &RawRecording, config: &WindowConfig) -> Result<Vec<Sample>, DataError> {
    for tr in &rec.tracks {
        if let Some(step) = tr.step() {
            if (step - STEP).abs() > 1e-6 {
                return Err(DataError::Resample(format!("track {} has step {step} s; resample first", tr.vehicle_id)));
            }
        }
    }
    let stride_steps = (config.stride / STEP).round().max(1.0) as usize;
    let (hl, fl) = (config.history_len, config.future_len);

    // step index -> tracks with a state there
    let mut by_step: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, tr) in rec.tracks.iter().enumerate() {
        for s in tr.states() {
            by_step.entry(step_index(s.t)).or_default().push(i);
        }
    }
    let first_step = |tr: &Track| step_index(tr.states()[0].t);

    let mut order: Vec<usize> = (0..rec.tracks.len()).collect();
    order.sort_by_key(|&i| (rec.tracks[i].vehicle_id, rec.tracks[i].start_time().map(step_index)));

    let per_track: Vec<Vec<Sample>> = order
        .par_iter()
        .map(|&oi| {
            let ov = &rec.tracks[oi];
            let mut out = Vec::new();
            if ov.len() < hl + fl {
                return out;
            }
            let ov_first = first_step(ov);
            let mut start = 0;
            while start + hl + fl <= ov.len() {
                let k0 = start + hl - 1;
                let s0 = ov_first + k0 as i64;
                let others = by_step.get(&s0).into_iter().flatten().filter_map(|&ti| {
                    let tr = &rec.tracks[ti];
                    let end = (s0 - first_step(tr)) as usize;
                    (ti != oi && tr.vehicle_id != ov.vehicle_id).then_some((tr, end))
                });
                let id = format!("{}:{}:{}", rec.name, ov.vehicle_id, s0);
                match build_sample(id, ov, k0, others, &rec.lanes, config) {
                    Ok(sample) => out.push(sample),
                    Err(e) => log::debug!("window skipped: {e}"),
                }
                start += stride_steps;
            }
            out
        })
        .collect();
    Ok(per_track.into_iter().flatten().collect())
}
