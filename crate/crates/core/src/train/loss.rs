use std::f64::consts::PI;

use super::TrainError;
use crate::predictor::{Forward, GaussianParams, GaussianTrajectory};
use crate::tensor::{Tape, TensorError, Var};

/// Square root of the mean squared error over all steps and both coordinates.
pub fn rmse_loss(predicted: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64, TrainError> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(TrainError::Shape(crate::tensor::shape_err("rmse_loss", &[predicted.len(), 2], &[truth.len(), 2])));
    }
    let sq: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum();
    Ok((sq / (2 * predicted.len()) as f64).sqrt())
}

/// Negative log-density of `p` under one step's bivariate Gaussian.
pub fn step_nll(g: &GaussianParams, p: [f64; 2]) -> f64 {
    let zx = (p[0] - g.mu_x) / g.sigma_x;
    let zy = (p[1] - g.mu_y) / g.sigma_y;
    let one_m = 1.0 - g.rho * g.rho;
    let q = zx * zx + zy * zy - 2.0 * g.rho * zx * zy;
    (2.0 * PI).ln() + g.sigma_x.ln() + g.sigma_y.ln() + 0.5 * one_m.ln() + q / (2.0 * one_m)
}

/// Negative log-likelihood of the truth summed over steps.
pub fn nll_loss(trajectory: &GaussianTrajectory, truth: &[[f64; 2]]) -> Result<f64, TrainError> {
    if trajectory.steps.len() != truth.len() {
        return Err(TrainError::Shape(crate::tensor::shape_err("nll_loss", &[trajectory.steps.len(), 5], &[truth.len(), 2])));
    }
    if let Some((k, g)) = trajectory.steps.iter().enumerate().find(|(_, g)| !g.is_valid()) {
        return Err(TrainError::InvalidParams(format!("step {k}: {g:?}")));
    }
    Ok(trajectory.steps.iter().zip(truth).map(|(g, p)| step_nll(g, *p)).sum())
}

/// Sum of squared mean errors over a batch; `target` is `[B, T, 2]`.
pub fn squared_error_sum(tape: &mut Tape, mu: Var, target: Var) -> Result<Var, TensorError> {
    let d = tape.sub(mu, target)?;
    let sq = tape.square(d);
    Ok(tape.sum(sq))
}

/// Per-step negative log-likelihood summed over steps and samples.
pub fn nll_sum(tape: &mut Tape, out: &Forward, target: Var) -> Result<Var, TensorError> {
    let cells = tape.value(out.rho).numel() as f64;
    let d = tape.sub(target, out.mu)?;
    let z = tape.div(d, out.sigma)?;
    let zx = tape.slice(z, 2, 0, 1)?;
    let zy = tape.slice(z, 2, 1, 1)?;
    let rho2 = tape.square(out.rho);
    let neg = tape.scale(rho2, -1.0);
    let one_m = tape.offset(neg, 1.0);

    let zx2 = tape.square(zx);
    let zy2 = tape.square(zy);
    let cross = tape.mul(zx, zy)?;
    let cross = tape.mul(cross, out.rho)?;
    let cross = tape.scale(cross, -2.0);
    let q = tape.add(zx2, zy2)?;
    let q = tape.add(q, cross)?;
    let two_m = tape.scale(one_m, 2.0);
    let quad = tape.div(q, two_m)?;

    let log_sigma = tape.log(out.sigma);
    let log_one_m = tape.log(one_m);
    let log_one_m = tape.scale(log_one_m, 0.5);
    let a = tape.sum(log_sigma);
    let b = tape.sum(log_one_m);
    let c = tape.sum(quad);
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(tape.offset(total, cells * (2.0 * PI).ln()))
}
