//! Derivative-free-friendly local optimizers for expensive simulation
//! objectives: BFGS with finite-difference gradients and an Armijo line
//! search, Nelder-Mead as the gradient-free fallback, and a golden-section
//! bracket for 1-D problems. All of them record a per-iteration trace that
//! exports to CSV.

mod bfgs;
mod nelder_mead;

pub use bfgs::{bfgs_minimize, bfgs_minimize_with_gradient, BfgsOptions};
pub use nelder_mead::{nelder_mead_minimize, NelderMeadOptions};

use crate::error::{Error, Result};
use crate::io;
use std::path::Path;

/// Default finite-difference perturbation scale.
pub const DEFAULT_FD_EPS: f64 = 1e-6;

/// One optimizer iteration. For Nelder-Mead, `grad_norm` reports the
/// simplex f-spread and `step_norm` the simplex diameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    /// Cumulative objective evaluations up to and including this iteration.
    pub evals: usize,
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Infinity norm of the gradient fell below tolerance.
    GradientTol,
    /// Infinity norm of the accepted step fell below tolerance.
    StepTol,
    /// Simplex function spread fell below tolerance (Nelder-Mead).
    SpreadTol,
    /// Iteration budget exhausted.
    MaxIterations,
    /// No Armijo step could be found; best-so-far returned.
    LineSearchFailed,
}

impl StopReason {
    pub fn is_converged(self) -> bool {
        matches!(
            self,
            StopReason::GradientTol | StopReason::StepTol | StopReason::SpreadTol
        )
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub status: StopReason,
    pub trace: Vec<TraceRow>,
    pub evals: usize,
    pub grad_evals: usize,
}

impl MinimizeResult {
    /// Export the iteration trace as CSV.
    pub fn write_trace_csv<P: AsRef<Path>>(&self, path: P, seed: u64) -> Result<()> {
        io::write_csv(
            path,
            seed,
            &[],
            &["iteration", "f", "grad_norm", "step_norm", "evals"],
            self.trace.iter().map(|r| {
                vec![
                    r.iteration.to_string(),
                    io::fmt_f64(r.f),
                    io::fmt_f64(r.grad_norm),
                    io::fmt_f64(r.step_norm),
                    r.evals.to_string(),
                ]
            }),
        )
    }
}

/// Central-difference gradient with per-coordinate step
/// `max(eps, eps * |x_i|)`. Errors if the objective returns a non-finite
/// value at any probe point.
pub fn fd_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("fd eps {eps}")));
    }
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = eps.max(eps * x[i].abs());
        probe[i] = x[i] + h;
        let hi = f(&probe);
        probe[i] = x[i] - h;
        let lo = f(&probe);
        probe[i] = x[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::OptimFailed(format!(
                "objective non-finite near x[{i}] = {}",
                x[i]
            )));
        }
        grad.push((hi - lo) / (2.0 * h));
    }
    Ok(grad)
}

/// Golden-section search for the minimum of a unimodal function on
/// [lo, hi]; stops when the bracket is narrower than `tol`. Returns the
/// midpoint of the final bracket and its value.
pub fn golden_section(
    f: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("bracket [{lo}, {hi}]")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance {tol}")));
    }
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if !fx.is_finite() {
        return Err(Error::OptimFailed(format!("non-finite value at {x}")));
    }
    Ok((x, fx))
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
