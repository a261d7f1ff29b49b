//! Dataset ingestion (NGSIM, highD), smoothing, resampling, windowing into
//! samples, train/validation/test splitting and the JSON-lines sample store.

mod filter;
mod highd;
mod ngsim;
mod split;
mod store;
mod windows;

pub use filter::{butterworth_coefficients, butterworth_forward, butterworth_lowpass, filter_track};
pub use highd::{parse_highd, parse_highd_reader, write_highd, write_highd_writer, HIGHD_RATE};
pub use ngsim::{parse_ngsim, parse_ngsim_reader, NGSIM_RATE};
pub use split::{split_dataset, split_sizes, SplitManifest, SplitUnit};
pub use store::{read_manifest, read_split, write_store, Split, StoreManifest, MANIFEST_FILE};
pub use windows::{extract_windows, resample, sample_at, Sample, SvHistory, WindowConfig, FUTURE_LEN, HISTORY_LEN, STEP};

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{LaneGeometry, SceneError, Track};

/// Meters per foot.
pub const FEET: f64 = 0.3048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: {msg}")]
    InvalidValue { line: u64, msg: String },
    #[error("format: {0}")]
    Format(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("resample: {0}")]
    Resample(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("sample {id}: {msg}")]
    InvalidSample { id: String, msg: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Ngsim,
    Highd,
}

/// Tracks of one recording with its lane layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecording {
    pub name: String,
    pub source: Source,
    /// Sampling rate of `tracks` (Hz).
    pub native_rate: f64,
    pub tracks: Vec<Track>,
    pub lanes: LaneGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Low-pass cutoff (Hz).
    pub cutoff_hz: f64,
    pub filter_ngsim: bool,
    pub filter_highd: bool,
    pub windows: WindowConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cutoff_hz: 1.0,
            filter_ngsim: true,
            filter_highd: false,
            windows: WindowConfig::default(),
        }
    }
}

/// Optional smoothing at the native rate, then decimation to 0.2 s.
pub fn preprocess(rec: &RawRecording, config: &PreprocessConfig) -> Result<RawRecording, DataError> {
    let filter = match rec.source {
        Source::Ngsim => config.filter_ngsim,
        Source::Highd => config.filter_highd,
    };
    let mut tracks = Vec::with_capacity(rec.tracks.len());
    for tr in &rec.tracks {
        let smoothed = if filter { filter_track(tr, config.cutoff_hz, rec.native_rate)? } else { tr.clone() };
        let r = resample(&smoothed, STEP)?;
        if !r.is_empty() {
            tracks.push(r);
        }
    }
    Ok(RawRecording {
        name: rec.name.clone(),
        source: rec.source,
        native_rate: 1.0 / STEP,
        tracks,
        lanes: rec.lanes.clone(),
    })
}

/// Column position by case-insensitive header name.
pub(crate) fn header_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| DataError::Format(format!("missing column `{name}`")))
}

/// Maximal runs of consecutive frame numbers.
pub(crate) fn split_runs(frames: &[i64]) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=frames.len() {
        if i == frames.len() || frames[i] != frames[i - 1] + 1 {
            if i > start {
                runs.push(start..i);
            }
            start = i;
        }
    }
    runs
}

/// Central differences with one-sided ends; zeros for a single value.
pub(crate) fn finite_differences(v: &[f64], dt: f64) -> Vec<f64> {
    let n = v.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| match i {
            0 => (v[1] - v[0]) / dt,
            _ if i == n - 1 => (v[n - 1] - v[n - 2]) / dt,
            _ => (v[i + 1] - v[i - 1]) / (2.0 * dt),
        })
        .collect()
}
