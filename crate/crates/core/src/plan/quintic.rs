use nalgebra::{Matrix3, Vector3};

use super::PlanError;

/// Coefficients `c0..c5` of `y(τ) = Σ c_k τ^k`, `τ = t - t0`.
pub type Quintic = [f64; 6];

/// Quintic with the given start state and a rest-to-rest arrival at `y_f`
/// after `tf` seconds (zero final velocity and acceleration).
pub fn quintic_lateral(y0: f64, v0: f64, a0: f64, y_f: f64, tf: f64) -> Result<Quintic, PlanError> {
    if !(tf > 0.0 && tf.is_finite()) {
        return Err(PlanError::InvalidHorizon(tf));
    }
    if ![y0, v0, a0, y_f].iter().all(|v| v.is_finite()) {
        return Err(PlanError::InvalidInput("non-finite boundary condition".into()));
    }
    let (c0, c1, c2) = (y0, v0, 0.5 * a0);
    // unknowns scaled as c_k·tf^k keep the system O(1)
    let m = Matrix3::new(1.0, 1.0, 1.0, 3.0, 4.0, 5.0, 6.0, 12.0, 20.0);
    let rhs = Vector3::new(
        y_f - (c0 + c1 * tf + c2 * tf * tf),
        -(c1 + 2.0 * c2 * tf) * tf,
        -2.0 * c2 * tf * tf,
    );
    let s = m.lu().solve(&rhs).ok_or(PlanError::InvalidHorizon(tf))?;
    Ok([c0, c1, c2, s[0] / tf.powi(3), s[1] / tf.powi(4), s[2] / tf.powi(5)])
}

/// `(y, ẏ, ÿ)` at local time `tau`.
pub fn eval_quintic(c: &Quintic, tau: f64) -> (f64, f64, f64) {
    let y = c[0] + tau * (c[1] + tau * (c[2] + tau * (c[3] + tau * (c[4] + tau * c[5]))));
    let v = c[1] + tau * (2.0 * c[2] + tau * (3.0 * c[3] + tau * (4.0 * c[4] + tau * 5.0 * c[5])));
    let a = 2.0 * c[2] + tau * (6.0 * c[3] + tau * (12.0 * c[4] + tau * 20.0 * c[5]));
    (y, v, a)
}
