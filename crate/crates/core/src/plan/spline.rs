use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{PlanError, Trajectory};

/// Second free condition of the piecewise-cubic system (the first is always
/// the initial velocity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplineEnd {
    /// Third derivative continuous at the last interior knot.
    #[default]
    NotAKnot,
    /// Initial acceleration clamped as well. Both conditions then sit at the
    /// first knot and the system is solved as an initial-value recursion,
    /// which amplifies rounding by roughly 3.7× per segment; only usable for
    /// a handful of segments.
    InitialAcceleration,
}

/// Cubic `a + bτ + cτ² + dτ³` on one knot interval, `τ` measured from its left knot.
pub type Segment = [f64; 4];

/// One axis of a uniform-knot cubic spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    pub t0: f64,
    pub dt: f64,
    pub segments: Vec<Segment>,
}

impl CubicSpline {
    pub fn fit(t0: f64, dt: f64, values: &[f64], v0: f64, a0: f64, end: SplineEnd) -> Result<Self, PlanError> {
        if values.len() < 2 {
            return Err(PlanError::Spline(format!("need at least 2 points, got {}", values.len())));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(PlanError::Spline(format!("knot step {dt}")));
        }
        if !values.iter().chain([&v0, &a0, &t0]).all(|v| v.is_finite()) {
            return Err(PlanError::Spline("non-finite input".into()));
        }
        let n = values.len() - 1;
        let end = if n == 1 { SplineEnd::InitialAcceleration } else { end };
        let h = dt;
        // unknowns per segment: (a, b·h, c·h², d·h³)
        let dim = 4 * n;
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        let mut row = 0;
        for k in 0..n {
            let j = 4 * k;
            m[(row, j)] = 1.0;
            rhs[row] = values[k];
            row += 1;
            for q in 0..4 {
                m[(row, j + q)] = 1.0;
            }
            rhs[row] = values[k + 1];
            row += 1;
        }
        for k in 1..n {
            let (p, j) = (4 * (k - 1), 4 * k);
            m[(row, p + 1)] = 1.0;
            m[(row, p + 2)] = 2.0;
            m[(row, p + 3)] = 3.0;
            m[(row, j + 1)] = -1.0;
            row += 1;
            m[(row, p + 2)] = 2.0;
            m[(row, p + 3)] = 6.0;
            m[(row, j + 2)] = -2.0;
            row += 1;
        }
        m[(row, 1)] = 1.0;
        rhs[row] = v0 * h;
        row += 1;
        match end {
            SplineEnd::NotAKnot => {
                m[(row, 4 * (n - 2) + 3)] = 1.0;
                m[(row, 4 * (n - 1) + 3)] = -1.0;
            }
            SplineEnd::InitialAcceleration => {
                m[(row, 2)] = 2.0;
                rhs[row] = a0 * h * h;
            }
        }
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| PlanError::Spline("singular spline system".into()))?;
        if !sol.iter().all(|v| v.is_finite()) {
            return Err(PlanError::Spline("non-finite spline solution".into()));
        }
        let segments = (0..n)
            .map(|k| {
                let j = 4 * k;
                [sol[j], sol[j + 1] / h, sol[j + 2] / (h * h), sol[j + 3] / (h * h * h)]
            })
            .collect();
        Ok(Self { t0, dt, segments })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.segments.len() as f64
    }

    /// Segment index and local time for `t`; the right endpoint belongs to the last segment.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.segments.len();
        let k = (((t - self.t0) / self.dt).floor().max(0.0) as usize).min(n - 1);
        (k, t - (self.t0 + k as f64 * self.dt))
    }

    /// Value and first two derivatives at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (k, tau) = self.locate(t);
        eval_segment(&self.segments[k], tau)
    }
}

pub fn eval_segment(s: &Segment, tau: f64) -> (f64, f64, f64) {
    let [a, b, c, d] = *s;
    (
        a + tau * (b + tau * (c + tau * d)),
        b + tau * (2.0 * c + tau * 3.0 * d),
        2.0 * c + 6.0 * d * tau,
    )
}

/// Time-continuous 2-D trajectory through uniformly spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineTrajectory {
    pub x: CubicSpline,
    pub y: CubicSpline,
    pub v0: [f64; 2],
    pub a0: [f64; 2],
}

/// Fits both axes through `points` (the first at `t0`, then every `dt`).
pub fn spline_fit(t0: f64, dt: f64, points: &[[f64; 2]], v0: [f64; 2], a0: [f64; 2], end: SplineEnd) -> Result<SplineTrajectory, PlanError> {
    let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
    Ok(SplineTrajectory {
        x: CubicSpline::fit(t0, dt, &xs, v0[0], a0[0], end)?,
        y: CubicSpline::fit(t0, dt, &ys, v0[1], a0[1], end)?,
        v0,
        a0,
    })
}

impl Trajectory for SplineTrajectory {
    fn t0(&self) -> f64 {
        self.x.t0
    }

    fn horizon(&self) -> f64 {
        self.x.horizon()
    }

    fn state_unchecked(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let (x, vx, _) = self.x.eval(t);
        let (y, vy, _) = self.y.eval(t);
        ([x, y], [vx, vy])
    }
}
