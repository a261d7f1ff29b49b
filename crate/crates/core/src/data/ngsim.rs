use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::{finite_differences, header_index, split_runs, DataError, RawRecording, Source, FEET};
use crate::scene::{LaneGeometry, MotionState, Track, VehicleId};

pub const NGSIM_RATE: f64 = 10.0;
/// Standard US lane width (12 ft), used when only one lane is observed.
const DEFAULT_LANE_WIDTH: f64 = 12.0 * FEET;

struct Row {
    frame: i64,
    x: f64,
    y: f64,
    v: f64,
    a: f64,
    length: f64,
    width: f64,
    lane: i64,
}

pub fn parse_ngsim(path: &Path) -> Result<RawRecording, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_ngsim_reader(file, &name)
}

/// Parses the NGSIM trajectory layout (columns located by header name).
/// Feet become meters; `x` is `Local_Y` (along the road), `y` is `Local_X`.
/// Lateral velocity and acceleration are not published and are derived by
/// finite differences.
pub fn parse_ngsim_reader<R: Read>(reader: R, name: &str) -> Result<RawRecording, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?.clone();
    let col = |name: &str| header_index(&headers, name);
    let (c_id, c_frame, c_lx, c_ly) = (col("Vehicle_ID")?, col("Frame_ID")?, col("Local_X")?, col("Local_Y")?);
    let (c_len, c_wid, c_vel, c_acc, c_lane) = (col("v_Length")?, col("v_Width")?, col("v_Vel")?, col("v_Acc")?, col("Lane_ID")?);

    let mut rows: BTreeMap<u64, Vec<Row>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, what: &str| -> Result<f64, DataError> {
            let raw = rec.get(i).ok_or_else(|| DataError::Parse { line, msg: format!("missing {what}") })?;
            raw.parse::<f64>().map_err(|_| DataError::Parse { line, msg: format!("bad {what} `{raw}`") })
        };
        let meters = |i: usize, what: &str| -> Result<f64, DataError> {
            let v = field(i, what)? * FEET;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(DataError::InvalidValue { line, msg: format!("{what} overflows after unit conversion") })
            }
        };
        let id = field(c_id, "Vehicle_ID")?;
        let frame = field(c_frame, "Frame_ID")?;
        if id < 0.0 || id.fract() != 0.0 || frame.fract() != 0.0 {
            return Err(DataError::Parse { line, msg: "vehicle and frame ids must be integers".into() });
        }
        let row = Row {
            frame: frame as i64,
            x: meters(c_ly, "Local_Y")?,
            y: meters(c_lx, "Local_X")?,
            v: meters(c_vel, "v_Vel")?,
            a: meters(c_acc, "v_Acc")?,
            length: meters(c_len, "v_Length")?,
            width: meters(c_wid, "v_Width")?,
            lane: field(c_lane, "Lane_ID")? as i64,
        };
        if !(row.length > 0.0 && row.width > 0.0) {
            return Err(DataError::InvalidValue { line, msg: "vehicle dimensions must be positive".into() });
        }
        rows.entry(id as u64).or_default().push(row);
    }

    let dt = 1.0 / NGSIM_RATE;
    let mut tracks = Vec::new();
    let mut lane_sum: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for (id, mut vrows) in rows {
        vrows.sort_by_key(|r| r.frame);
        vrows.dedup_by_key(|r| r.frame);
        for r in &vrows {
            let e = lane_sum.entry(r.lane).or_insert((0.0, 0));
            e.0 += r.y;
            e.1 += 1;
        }
        let frames: Vec<i64> = vrows.iter().map(|r| r.frame).collect();
        for run in split_runs(&frames) {
            let seg = &vrows[run];
            let ys: Vec<f64> = seg.iter().map(|r| r.y).collect();
            let vy = finite_differences(&ys, dt);
            let ay = finite_differences(&vy, dt);
            let states = seg
                .iter()
                .enumerate()
                .map(|(i, r)| MotionState {
                    t: r.frame as f64 * dt,
                    x: r.x,
                    y: r.y,
                    vx: r.v,
                    vy: vy[i],
                    ax: r.a,
                    ay: ay[i],
                })
                .collect();
            tracks.push(Track::new(VehicleId(id), seg[0].length, seg[0].width, states)?);
        }
    }

    let mut centers: Vec<f64> = lane_sum.values().map(|(s, n)| s / *n as f64).collect();
    centers.sort_by(f64::total_cmp);
    centers.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    if centers.is_empty() {
        return Err(DataError::InsufficientData("recording has no rows".into()));
    }
    let mut gaps: Vec<f64> = centers.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let width = if gaps.is_empty() { DEFAULT_LANE_WIDTH } else { gaps[gaps.len() / 2] };
    let lanes = LaneGeometry::new(centers, width)?;

    Ok(RawRecording {
        name: name.to_owned(),
        source: Source::Ngsim,
        native_rate: NGSIM_RATE,
        tracks,
        lanes,
    })
}
