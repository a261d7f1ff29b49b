//! Assessment scenarios: an ego vehicle and object vehicles on a lane map,
//! scored by predicting every object vehicle and evaluating the ego
//! candidate grid against the predictions.
//!
//! File format: `#`-prefixed `key = value` header lines (`id`, `lanes`,
//! `lane_width`, `av`, `t0`), then CSV rows
//! `vehicle_id,t,x,y,vx,vy,ax,ay,length,width`. Tracks are sampled every
//! 0.2 s, or at a rate that divides it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{resample, sample_at, DataError, Sample, WindowConfig, STEP};
use crate::predictor::{baseline_predict, Baseline, GaussianTrajectory, PredictError, Predictor};
use crate::risk::{ov_spline_from_means, risk_map, CandidateGrid, OvTrack, RiskError, RiskMap, RiskParams};
use crate::scene::{Dims, LaneGeometry, MotionState, SceneError, Track, VehicleId};

pub const CSV_COLUMNS: [&str; 10] = ["vehicle_id", "t", "x", "y", "vx", "vy", "ax", "ay", "length", "width"];
const TIME_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scenario: {0}")]
    Format(String),
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub lanes: LaneGeometry,
    pub av: VehicleId,
    /// Assessment time (s).
    pub t0: f64,
    pub tracks: Vec<Track>,
}

fn header_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ScenarioError> {
    v.trim()
        .parse()
        .map_err(|_| ScenarioError::Parse { line, msg: format!("bad value `{}` for `{key}`", v.trim()) })
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let (mut id, mut lanes, mut width, mut av, mut t0) = (None, None, None, None, None);
        let mut body = String::new();
        let mut body_start = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let Some(rest) = raw.trim_start().strip_prefix('#') else {
                if !raw.trim().is_empty() {
                    body_start.get_or_insert(line);
                    body.push_str(raw);
                    body.push('\n');
                }
                continue;
            };
            let Some((key, value)) = rest.split_once('=') else { continue };
            match key.trim() {
                "id" => id = Some(value.trim().to_owned()),
                "lanes" => {
                    let centers = value
                        .split(',')
                        .map(|c| header_value::<f64>(line, "lanes", c))
                        .collect::<Result<Vec<_>, _>>()?;
                    lanes = Some(centers);
                }
                "lane_width" => width = Some(header_value::<f64>(line, "lane_width", value)?),
                "av" => av = Some(VehicleId(header_value(line, "av", value)?)),
                "t0" => t0 = Some(header_value::<f64>(line, "t0", value)?),
                other => return Err(ScenarioError::Parse { line, msg: format!("unknown header key `{other}`") }),
            }
        }
        let missing = |k: &str| ScenarioError::Format(format!("missing header `{k}`"));
        let lanes = LaneGeometry::new(lanes.ok_or_else(|| missing("lanes"))?, width.ok_or_else(|| missing("lane_width"))?)?;
        let (av, t0) = (av.ok_or_else(|| missing("av"))?, t0.ok_or_else(|| missing("t0"))?);
        let offset = body_start.unwrap_or(1);

        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let headers = reader.headers().map_err(|e| ScenarioError::Parse { line: offset, msg: e.to_string() })?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_COLUMNS {
            return Err(ScenarioError::Parse { line: offset, msg: format!("expected columns {}", CSV_COLUMNS.join(",")) });
        }
        let mut rows: BTreeMap<u64, (Dims, Vec<MotionState>)> = BTreeMap::new();
        for (i, rec) in reader.records().enumerate() {
            let line = offset + 1 + i;
            let rec = rec.map_err(|e| ScenarioError::Parse { line, msg: e.to_string() })?;
            let num = |k: usize| -> Result<f64, ScenarioError> {
                let v: f64 = header_value(line, CSV_COLUMNS[k], &rec[k])?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(ScenarioError::Parse { line, msg: format!("non-finite `{}`", CSV_COLUMNS[k]) })
                }
            };
            let vid: u64 = header_value(line, "vehicle_id", &rec[0])?;
            let state = MotionState { t: num(1)?, x: num(2)?, y: num(3)?, vx: num(4)?, vy: num(5)?, ax: num(6)?, ay: num(7)? };
            let dims = Dims::new(num(8)?, num(9)?).map_err(|e| ScenarioError::Parse { line, msg: e.to_string() })?;
            let entry = rows.entry(vid).or_insert((dims, Vec::new()));
            if entry.0 != dims {
                return Err(ScenarioError::Parse { line, msg: format!("vehicle {vid} changes dimensions") });
            }
            entry.1.push(state);
        }
        let mut tracks = Vec::with_capacity(rows.len());
        for (vid, (dims, mut states)) in rows {
            states.sort_by(|a, b| a.t.total_cmp(&b.t));
            let track = Track::new(VehicleId(vid), dims.length, dims.width, states)?;
            tracks.push(if track.len() > 1 { resample(&track, STEP)? } else { track });
        }
        let scenario = Self { id: id.unwrap_or_default(), lanes, av, t0, tracks };
        scenario.av_state()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), ScenarioError> {
        let io = |e: std::io::Error| ScenarioError::Io(e.to_string());
        let centers: Vec<String> = self.lanes.lane_centers().iter().map(f64::to_string).collect();
        writeln!(out, "# id = {}", self.id).map_err(io)?;
        writeln!(out, "# lanes = {}", centers.join(", ")).map_err(io)?;
        writeln!(out, "# lane_width = {}", self.lanes.lane_width).map_err(io)?;
        writeln!(out, "# av = {}", self.av).map_err(io)?;
        writeln!(out, "# t0 = {}", self.t0).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| ScenarioError::Io(e.to_string());
        w.write_record(CSV_COLUMNS).map_err(err)?;
        for tr in &self.tracks {
            for s in tr.states() {
                w.serialize((tr.vehicle_id.0, s.t, s.x, s.y, s.vx, s.vy, s.ax, s.ay, tr.length, tr.width)).map_err(err)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8")
    }

    pub fn av_track(&self) -> Result<&Track, ScenarioError> {
        self.tracks
            .iter()
            .find(|t| t.vehicle_id == self.av)
            .ok_or_else(|| ScenarioError::Format(format!("ego vehicle {} has no track", self.av)))
    }

    pub fn av_state(&self) -> Result<MotionState, ScenarioError> {
        let tr = self.av_track()?;
        tr.state_at(self.t0, TIME_TOL)
            .copied()
            .ok_or_else(|| ScenarioError::Format(format!("ego vehicle {} has no state at t0 = {}", self.av, self.t0)))
    }

    /// Indices of the non-ego tracks present at `t0`.
    pub fn object_vehicles(&self) -> Vec<usize> {
        (0..self.tracks.len())
            .filter(|&i| self.tracks[i].vehicle_id != self.av && self.tracks[i].state_at(self.t0, TIME_TOL).is_some())
            .collect()
    }
}

/// How object-vehicle futures are predicted.
#[derive(Debug, Clone, Copy)]
pub enum OvModel<'a> {
    Network(&'a Predictor),
    Baseline(Baseline),
}

impl OvModel<'_> {
    pub fn label(&self) -> String {
        match self {
            OvModel::Network(p) => format!("{}/{}", p.ablation.channels.label(), p.ablation.features),
            OvModel::Baseline(Baseline::Cv) => "cv".into(),
            OvModel::Baseline(Baseline::Ca) => "ca".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssessConfig {
    pub risk: RiskParams,
    pub candidates: CandidateGrid,
}

/// One object vehicle's predicted future and, when the scenario has it, the
/// recorded one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvPrediction {
    pub id: VehicleId,
    pub dims: Dims,
    pub current: MotionState,
    pub means: Vec<[f64; 2]>,
    /// Full Gaussian output for network predictions.
    pub gaussian: Option<GaussianTrajectory>,
    pub truth: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub model: String,
    /// Center of the ego's lane at `t0`.
    pub ego_lane_center: Option<f64>,
    pub predictions: Vec<OvPrediction>,
    pub map: RiskMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvSummary {
    pub id: VehicleId,
    /// Smallest TTC over all candidates (s).
    pub min_ttc: f64,
    /// TTC of the constant-speed, keep-lane candidate, when it is on the grid.
    pub lane_keep_ttc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub a_x: f64,
    pub lateral_target: f64,
    pub peak_risk: f64,
    pub horizon_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessSummary {
    pub scenario: String,
    pub model: String,
    pub t0: f64,
    pub object_vehicles: Vec<OvSummary>,
    pub candidates: Vec<CandidateSummary>,
}

fn predict_ov(sample: &Sample, model: OvModel) -> Result<(Vec<[f64; 2]>, Option<GaussianTrajectory>), ScenarioError> {
    Ok(match model {
        OvModel::Baseline(b) => (baseline_predict(sample, b), None),
        OvModel::Network(p) => {
            let g = p.predict(sample)?;
            (g.means(), Some(g))
        }
    })
}

/// Predicts every object vehicle and scores the ego candidate grid.
pub fn assess(scenario: &Scenario, model: OvModel, config: &AssessConfig) -> Result<Assessment, ScenarioError> {
    let av = scenario.av_state()?;
    let av_dims = scenario.av_track()?.dims();
    let window = WindowConfig::default();
    let mut predictions = Vec::new();
    for i in scenario.object_vehicles() {
        let sample = sample_at(&scenario.id, &scenario.tracks, &scenario.lanes, i, scenario.t0, &window).map_err(|e| match e {
            DataError::InsufficientData(m) => ScenarioError::InsufficientHistory(m),
            other => other.into(),
        })?;
        let (means, gaussian) = predict_ov(&sample, model)?;
        predictions.push(OvPrediction {
            id: sample.ov_id,
            dims: sample.ov_dims,
            current: *sample.ov_current(),
            means,
            gaussian,
            truth: sample.ov_future.clone(),
        });
    }
    let tracks = predictions
        .iter()
        .map(|p| {
            Ok(OvTrack {
                id: p.id,
                dims: p.dims,
                trajectory: ov_spline_from_means(&p.current, &p.means, STEP)?,
            })
        })
        .collect::<Result<Vec<_>, RiskError>>()?;
    let map = risk_map(&av, av_dims, &tracks, &scenario.lanes, &config.risk, &config.candidates, Some(&scenario.id))?;
    let ego_lane_center = scenario.lanes.lane_of(av.y).map(|l| scenario.lanes.lane_centers()[l]);
    Ok(Assessment { model: model.label(), ego_lane_center, predictions, map })
}

impl Assessment {
    pub fn summary(&self) -> AssessSummary {
        let map = &self.map;
        let lane_keep_target = self.ego_lane_center;
        let object_vehicles = map
            .header
            .ov_ids
            .iter()
            .enumerate()
            .map(|(k, &id)| OvSummary {
                id,
                min_ttc: map.entries.iter().map(|e| e.ttc[k]).fold(f64::INFINITY, f64::min),
                lane_keep_ttc: map
                    .entries
                    .iter()
                    .find(|e| e.a_x == 0.0 && Some(e.lateral_target) == lane_keep_target)
                    .map(|e| e.ttc[k]),
            })
            .collect();
        let candidates = map
            .entries
            .iter()
            .map(|e| CandidateSummary {
                a_x: e.a_x,
                lateral_target: e.lateral_target,
                peak_risk: e.risk.iter().copied().fold(0.0, f64::max),
                horizon_risk: e.risk.last().copied().unwrap_or(0.0),
            })
            .collect();
        AssessSummary {
            scenario: map.header.scenario_id.clone().unwrap_or_default(),
            model: self.model.clone(),
            t0: map.header.t0,
            object_vehicles,
            candidates,
        }
    }

    /// Rows `vehicle_id,t,pred_x,pred_y,sigma_x,sigma_y,rho,true_x,true_y`;
    /// empty cells where a quantity is unavailable.
    pub fn write_overlay<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let err = |e: csv::Error| ScenarioError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["vehicle_id", "t", "pred_x", "pred_y", "sigma_x", "sigma_y", "rho", "true_x", "true_y"]).map_err(err)?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for p in &self.predictions {
            for (k, m) in p.means.iter().enumerate() {
                let t = p.current.t + (k + 1) as f64 * STEP;
                let g = p.gaussian.as_ref().map(|g| g.steps[k]);
                let truth = p.truth.get(k);
                w.write_record([
                    p.id.to_string(),
                    t.to_string(),
                    m[0].to_string(),
                    m[1].to_string(),
                    opt(g.map(|g| g.sigma_x)),
                    opt(g.map(|g| g.sigma_y)),
                    opt(g.map(|g| g.rho)),
                    opt(truth.map(|p| p[0])),
                    opt(truth.map(|p| p[1])),
                ])
                .map_err(err)?;
            }
        }
        w.flush().map_err(|e| ScenarioError::Io(e.to_string()))
    }
}

/// In-repository assessment fixtures on a four-lane map (two carriageways,
/// lane centers 2, 6, 14.4 and 18.4 m, 4 m lanes). Every track runs from 0 to
/// 8 s so object vehicles have 3 s of history and 5 s of recorded future at
/// `t0 = 3 s`.
pub mod fixtures {
    use super::*;

    pub const LANES: [f64; 4] = [2.0, 6.0, 14.4, 18.4];
    pub const LANE_WIDTH: f64 = 4.0;
    pub const T0: f64 = 3.0;
    const END: f64 = 8.0;

    fn lanes() -> LaneGeometry {
        LaneGeometry::new(LANES.to_vec(), LANE_WIDTH).expect("fixture lanes")
    }

    /// Samples `f(t) -> (x, y, vx, vy, ax, ay)` every 0.2 s over `[0, 8]`.
    fn track(id: u64, f: impl Fn(f64) -> [f64; 6]) -> Track {
        let n = (END / STEP).round() as usize;
        let states = (0..=n)
            .map(|k| {
                let t = k as f64 * STEP;
                let [x, y, vx, vy, ax, ay] = f(t);
                MotionState { t, x, y, vx, vy, ax, ay }
            })
            .collect();
        let d = Dims::default();
        Track::new(VehicleId(id), d.length, d.width, states).expect("fixture track")
    }

    fn cruise(id: u64, x0: f64, y: f64, v: f64) -> Track {
        track(id, |t| [x0 + v * t, y, v, 0.0, 0.0, 0.0])
    }

    fn scenario(id: &str, tracks: Vec<Track>) -> Scenario {
        Scenario { id: id.into(), lanes: lanes(), av: VehicleId(0), t0: T0, tracks }
    }

    /// Ego at 25 m/s behind a 20 m/s lead in the same lane, 75 m bumper gap
    /// at `t0`.
    pub fn car_following() -> Scenario {
        let (v_av, v_ov) = (25.0, 20.0);
        let gap = 75.0 + Dims::default().length;
        scenario(
            "car_following",
            vec![cruise(0, 0.0 - v_av * T0, 6.0, v_av), cruise(1, gap - v_ov * T0, 6.0, v_ov)],
        )
    }

    /// A slower vehicle in the adjacent lane moves into the ego lane ahead of
    /// the ego: a 4 s quintic lane change already 1 s under way at `t0`.
    /// Oncoming traffic occupies the far carriageway.
    pub fn cut_in() -> Scenario {
        let (v_av, v_ov) = (25.0, 21.0);
        let x_ov = 18.0;
        let start = T0 - 1.0;
        let change = move |t: f64| -> (f64, f64, f64) {
            let s = ((t - start) / 4.0).clamp(0.0, 1.0);
            let inside = t > start && t < start + 4.0;
            let (p, dp, ddp) = (
                10.0 * s.powi(3) - 15.0 * s.powi(4) + 6.0 * s.powi(5),
                (30.0 * s.powi(2) - 60.0 * s.powi(3) + 30.0 * s.powi(4)) / 4.0,
                (60.0 * s - 180.0 * s.powi(2) + 120.0 * s.powi(3)) / 16.0,
            );
            let dy = 4.0;
            (2.0 + dy * p, if inside { dy * dp } else { 0.0 }, if inside { dy * ddp } else { 0.0 })
        };
        scenario(
            "cut_in",
            vec![
                cruise(0, -v_av * T0, 6.0, v_av),
                track(1, move |t| {
                    let (y, vy, ay) = change(t);
                    [x_ov + v_ov * (t - T0), y, v_ov, vy, 0.0, ay]
                }),
                cruise(2, 150.0 + 28.0 * T0, 14.4, -28.0),
            ],
        )
    }

    /// The ego alone on the road.
    pub fn empty_road() -> Scenario {
        scenario("empty_road", vec![cruise(0, -25.0 * T0, 6.0, 25.0)])
    }

    pub fn all() -> [Scenario; 3] {
        [car_following(), cut_in(), empty_road()]
    }
}
