use super::DataError;
use crate::scene::{MotionState, Track};

/// First-order low-pass coefficients `(b0, b1, a1)` from the bilinear
/// transform with frequency prewarping.
pub fn butterworth_coefficients(fc: f64, fs: f64) -> Result<(f64, f64, f64), DataError> {
    if !(fc > 0.0 && fs > 0.0 && fc.is_finite() && fs.is_finite()) {
        return Err(DataError::InvalidParameter(format!("cutoff {fc} Hz, sampling {fs} Hz")));
    }
    if fs <= 2.0 * fc {
        return Err(DataError::InvalidParameter(format!("sampling rate {fs} Hz must exceed twice the cutoff {fc} Hz")));
    }
    let k = (std::f64::consts::PI * fc / fs).tan();
    let b = k / (1.0 + k);
    Ok((b, b, (k - 1.0) / (k + 1.0)))
}

/// Single causal pass, initialized at steady state for the first sample.
pub fn butterworth_forward(series: &[f64], fc: f64, fs: f64) -> Result<Vec<f64>, DataError> {
    let (b0, b1, a1) = butterworth_coefficients(fc, fs)?;
    if series.len() < 2 {
        return Err(DataError::InvalidParameter(format!("series of length {} is too short to filter", series.len())));
    }
    let mut out = Vec::with_capacity(series.len());
    let (mut x_prev, mut y_prev) = (series[0], series[0]);
    for &x in series {
        let y = b0 * x + b1 * x_prev - a1 * y_prev;
        out.push(y);
        x_prev = x;
        y_prev = y;
    }
    Ok(out)
}

/// Zero-phase filtering: forward pass, then a pass over the reversed output.
pub fn butterworth_lowpass(series: &[f64], fc: f64, fs: f64) -> Result<Vec<f64>, DataError> {
    let mut fwd = butterworth_forward(series, fc, fs)?;
    fwd.reverse();
    let mut back = butterworth_forward(&fwd, fc, fs)?;
    back.reverse();
    Ok(back)
}

/// Zero-phase filters position, velocity and acceleration channels of a track.
/// Tracks shorter than two states are returned unchanged.
pub fn filter_track(track: &Track, fc: f64, fs: f64) -> Result<Track, DataError> {
    butterworth_coefficients(fc, fs)?;
    let states = track.states();
    if states.len() < 2 {
        return Ok(track.clone());
    }
    let channel = |f: fn(&MotionState) -> f64| -> Result<Vec<f64>, DataError> {
        butterworth_lowpass(&states.iter().map(f).collect::<Vec<_>>(), fc, fs)
    };
    let x = channel(|s| s.x)?;
    let y = channel(|s| s.y)?;
    let vx = channel(|s| s.vx)?;
    let vy = channel(|s| s.vy)?;
    let ax = channel(|s| s.ax)?;
    let ay = channel(|s| s.ay)?;
    let filtered = states
        .iter()
        .enumerate()
        .map(|(i, s)| MotionState {
            t: s.t,
            x: x[i],
            y: y[i],
            vx: vx[i],
            vy: vy[i],
            ax: ax[i],
            ay: ay[i],
        })
        .collect();
    Ok(Track::new(track.vehicle_id, track.length, track.width, filtered)?)
}
