use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub eps: f64,
    /// Upper bound on checked coordinates; all are checked when fewer exist.
    pub max_coords: usize,
    pub seed: u64,
    pub stencil: Stencil,
    /// Added to the error denominator. Rounding in `f` bounds how well a
    /// finite difference resolves very small gradients; coordinates below
    /// this scale are effectively compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: 256,
            seed: 0,
            stencil: Stencil::Central,
            floor: 1e-12,
        }
    }
}

/// Finite-difference formula for the numeric derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h²).
    #[default]
    Central,
    /// Five-point `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, error
    /// O(h⁴). Allows a larger step, so rounding in a large-valued `f` no
    /// longer swamps tiny gradients.
    FivePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|a - n| / (|a| + |n| + floor)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.value(out)
        .item()
        .ok_or_else(|| TensorError::NotScalar(tape.shape(out).to_vec()))
}

/// Compares reverse-mode gradients of the scalar function `f` against central
/// differences at `inputs`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], options: &GradCheckOptions) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v).to_vec())))
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() <= options.max_coords {
        coords
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut picked = rand::seq::index::sample(&mut rng, coords.len(), options.max_coords).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| coords[k]).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: chosen.len(),
    };
    let mut probe = inputs.to_vec();
    for (i, j) in chosen {
        let x0 = probe[i].data()[j];
        let h = options.eps;
        let mut diff = |step: f64| -> Result<f64, TensorError> {
            probe[i].data_mut()[j] = x0 + step;
            let up = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x0 - step;
            let down = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = x0;
            Ok(up - down)
        };
        let numeric = match options.stencil {
            Stencil::Central => diff(h)? / (2.0 * h),
            Stencil::FivePoint => (8.0 * diff(h)? - diff(2.0 * h)?) / (12.0 * h),
        };
        let a = analytic[i].data()[j];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + options.floor);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((i, j));
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
