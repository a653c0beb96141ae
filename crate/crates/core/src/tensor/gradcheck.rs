//! Central-difference gradient checks in `f64`.

use super::{Tensor, TensorError};

pub const STEP: f64 = 1e-3;

/// Central-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    ThreePoint,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error O(h^4).
    FivePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (input, flat index) of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` (gradient of `f` at `x`) with central differences.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, analytic: &Tensor<f64>) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Tensor<f64>) -> Result<f64, TensorError>,
{
    grad_check_many(
        |xs| f(&xs[0]),
        std::slice::from_ref(x),
        std::slice::from_ref(analytic),
    )
}

/// Multi-input version of [`grad_check`]; every element of every input is
/// perturbed. Uses the five-point stencil at [`STEP`].
pub fn grad_check_many<F>(f: F, xs: &[Tensor<f64>], analytic: &[Tensor<f64>]) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64, TensorError>,
{
    grad_check_with_step(f, xs, analytic, STEP, Stencil::FivePoint)
}

pub fn grad_check_with_step<F>(
    f: F,
    xs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    stencil: Stencil,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64, TensorError>,
{
    if xs.len() != analytic.len() {
        return Err(TensorError::StateMismatch(format!("{} inputs, {} gradients", xs.len(), analytic.len())));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = xs.to_vec();
    for (i, g) in analytic.iter().enumerate() {
        if g.shape() != xs[i].shape() {
            return Err(TensorError::ShapeMismatch {
                op: "grad_check",
                left: xs[i].shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        for j in 0..xs[i].len() {
            let orig = xs[i].data()[j];
            let mut eval = |delta: f64| {
                work[i].data_mut()[j] = orig + delta;
                let v = f(&work);
                work[i].data_mut()[j] = orig;
                v
            };
            let numeric = match stencil {
                Stencil::ThreePoint => (eval(step)? - eval(-step)?) / (2.0 * step),
                Stencil::FivePoint => {
                    let (p1, m1) = (eval(step)?, eval(-step)?);
                    let (p2, m2) = (eval(2.0 * step)?, eval(-2.0 * step)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step)
                }
            };
            let a = g.data()[j];
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
