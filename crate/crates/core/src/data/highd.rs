use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{header_index, split_runs, DataError, RawRecording, Source};
use crate::scene::{LaneGeometry, MotionState, Track, VehicleId};

pub const HIGHD_RATE: f64 = 25.0;

struct Row {
    frame: i64,
    state: MotionState,
    length: f64,
    width: f64,
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|e| DataError::Io(format!("{}: {e}", path.display())))
}

pub fn parse_highd(tracks_path: &Path, meta_path: &Path) -> Result<RawRecording, DataError> {
    let name = tracks_path
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches("_tracks").to_owned())
        .unwrap_or_default();
    parse_highd_reader(open(tracks_path)?, open(meta_path)?, &name)
}

fn parse_markings(raw: &str, line: u64) -> Result<Vec<f64>, DataError> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| DataError::Parse { line, msg: format!("bad lane marking `{s}`") }))
        .collect()
}

fn midpoints(markings: &[f64]) -> Vec<f64> {
    markings.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Parses a highD tracks/recording-meta pair. Box corners become centers and
/// vehicles driving toward decreasing `x` (the upper carriageway) are rotated
/// by 180° so every vehicle travels toward increasing `x`; their lanes end up
/// at negative lateral positions.
pub fn parse_highd_reader<R1: Read, R2: Read>(tracks: R1, meta: R2, name: &str) -> Result<RawRecording, DataError> {
    let mut mrdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(meta);
    let mh = mrdr.headers().map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?.clone();
    let (c_rate, c_up, c_low) = (
        header_index(&mh, "frameRate")?,
        header_index(&mh, "upperLaneMarkings")?,
        header_index(&mh, "lowerLaneMarkings")?,
    );
    let mrec = mrdr
        .records()
        .next()
        .ok_or_else(|| DataError::Format("recording meta has no data row".into()))?
        .map_err(|e| DataError::Parse { line: 2, msg: e.to_string() })?;
    let rate: f64 = mrec[c_rate]
        .parse()
        .map_err(|_| DataError::Parse { line: 2, msg: format!("bad frameRate `{}`", &mrec[c_rate]) })?;
    if (rate - HIGHD_RATE).abs() > 1e-9 {
        return Err(DataError::Format(format!("frame rate {rate} Hz, expected {HIGHD_RATE}")));
    }
    let upper = parse_markings(&mrec[c_up], 2)?;
    let lower = parse_markings(&mrec[c_low], 2)?;

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(tracks);
    let h = rdr.headers().map_err(|e| DataError::Parse { line: 1, msg: e.to_string() })?.clone();
    let cols = ["frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity", "xAcceleration", "yAcceleration"]
        .map(|c| header_index(&h, c));
    let mut idx = [0usize; 10];
    for (i, c) in cols.into_iter().enumerate() {
        idx[i] = c?;
    }
    let mut rows: BTreeMap<u64, Vec<Row>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut v = [0.0f64; 10];
        for (k, &i) in idx.iter().enumerate() {
            let raw = rec.get(i).ok_or_else(|| DataError::Parse { line, msg: "short row".into() })?;
            v[k] = raw.parse().map_err(|_| DataError::Parse { line, msg: format!("bad value `{raw}`") })?;
            if !v[k].is_finite() {
                return Err(DataError::InvalidValue { line, msg: format!("non-finite value `{raw}`") });
            }
        }
        let [frame, id, x, y, length, width, vx, vy, ax, ay] = v;
        if !(length > 0.0 && width > 0.0) {
            return Err(DataError::InvalidValue { line, msg: "vehicle dimensions must be positive".into() });
        }
        rows.entry(id as u64).or_default().push(Row {
            frame: frame as i64,
            state: MotionState {
                t: frame / rate,
                x: x + 0.5 * length,
                y: y + 0.5 * width,
                vx,
                vy,
                ax,
                ay,
            },
            length,
            width,
        });
    }

    let mut tracks = Vec::new();
    for (id, mut vrows) in rows {
        vrows.sort_by_key(|r| r.frame);
        vrows.dedup_by_key(|r| r.frame);
        let mean_vx = vrows.iter().map(|r| r.state.vx).sum::<f64>() / vrows.len() as f64;
        if mean_vx < 0.0 {
            for r in &mut vrows {
                rotate(&mut r.state);
            }
        }
        let frames: Vec<i64> = vrows.iter().map(|r| r.frame).collect();
        for run in split_runs(&frames) {
            let seg = &vrows[run];
            let states = seg.iter().map(|r| r.state).collect();
            tracks.push(Track::new(VehicleId(id), seg[0].length, seg[0].width, states)?);
        }
    }

    let mut centers: Vec<f64> = midpoints(&upper).into_iter().map(|c| -c).collect();
    centers.extend(midpoints(&lower));
    centers.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = upper.windows(2).chain(lower.windows(2)).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let width = gaps.get(gaps.len() / 2).copied().ok_or_else(|| DataError::Format("need at least two lane markings".into()))?;
    let lanes = LaneGeometry::new(centers, width)?;

    Ok(RawRecording {
        name: name.to_owned(),
        source: Source::Highd,
        native_rate: rate,
        tracks,
        lanes,
    })
}

fn rotate(s: &mut MotionState) {
    s.x = -s.x;
    s.y = -s.y;
    s.vx = -s.vx;
    s.vy = -s.vy;
    s.ax = -s.ax;
    s.ay = -s.ay;
}

/// Writes a recording back to the highD layout. Tracks and lanes at negative
/// lateral positions are taken to be the rotated upper carriageway.
pub fn write_highd(rec: &RawRecording, tracks_path: &Path, meta_path: &Path) -> Result<(), DataError> {
    let create = |p: &Path| std::fs::File::create(p).map_err(|e| DataError::Io(format!("{}: {e}", p.display())));
    write_highd_writer(rec, create(tracks_path)?, create(meta_path)?)
}

pub fn write_highd_writer<W1: Write, W2: Write>(rec: &RawRecording, tracks: W1, meta: W2) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io(e.to_string());
    let w = rec.lanes.lane_width;
    let markings = |centers: &[f64]| -> String {
        if centers.is_empty() {
            return String::new();
        }
        let mut m = vec![centers[0] - 0.5 * w];
        for &c in centers {
            let last = *m.last().unwrap();
            m.push(2.0 * c - last);
        }
        m.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
    };
    let mut upper: Vec<f64> = rec.lanes.lane_centers().iter().filter(|&&c| c < 0.0).map(|c| -c).collect();
    upper.sort_by(f64::total_cmp);
    let lower: Vec<f64> = rec.lanes.lane_centers().iter().copied().filter(|&c| c >= 0.0).collect();

    let mut mw = csv::Writer::from_writer(meta);
    mw.write_record(["id", "frameRate", "upperLaneMarkings", "lowerLaneMarkings"]).map_err(io)?;
    mw.write_record(["1".to_string(), rec.native_rate.to_string(), markings(&upper), markings(&lower)])
        .map_err(io)?;
    mw.flush().map_err(|e| DataError::Io(e.to_string()))?;

    let mut tw = csv::Writer::from_writer(tracks);
    tw.write_record(["frame", "id", "x", "y", "width", "height", "xVelocity", "yVelocity", "xAcceleration", "yAcceleration"])
        .map_err(io)?;
    for tr in &rec.tracks {
        let upper_track = tr.states().first().is_some_and(|s| s.y < 0.0);
        for s in tr.states() {
            let mut s = *s;
            if upper_track {
                rotate(&mut s);
            }
            let frame = (s.t * rec.native_rate).round() as i64;
            tw.serialize((frame, tr.vehicle_id.0, s.x - 0.5 * tr.length, s.y - 0.5 * tr.width, tr.length, tr.width, s.vx, s.vy, s.ax, s.ay))
                .map_err(io)?;
        }
    }
    tw.flush().map_err(|e| DataError::Io(e.to_string()))
}
