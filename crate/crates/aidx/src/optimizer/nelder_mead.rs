//! Downhill simplex minimizer. Gradient-free, so it tolerates the sampling
//! noise that finite differences amplify; used as the fallback when the
//! quasi-Newton path struggles. Coefficients are the classic
//! reflection 1, expansion 2, contraction 0.5, shrink 0.5.

use super::{inf_norm, MinimizeResult, StopReason, TraceRow};
use crate::error::{Error, Result};

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when the spread of objective values across the simplex drops
    /// below this.
    pub spread_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iter: 2000,
            spread_tol: 1e-12,
        }
    }
}

pub fn nelder_mead_minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> Result<MinimizeResult> {
    if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "starting point must be non-empty and finite".into(),
        ));
    }
    if !(opts.spread_tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidInput(format!(
            "nelder-mead options: max_iter {}, spread_tol {}",
            opts.max_iter, opts.spread_tol
        )));
    }

    let n = x0.len();
    let mut evals = 0usize;

    // initial simplex: x0 plus one vertex displaced along each axis
    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    verts.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += (0.05 * v[i].abs()).max(0.05);
        verts.push(v);
    }
    let mut fvals: Vec<f64> = Vec::with_capacity(n + 1);
    for v in &verts {
        evals += 1;
        let fv = f(v);
        if !fv.is_finite() {
            return Err(Error::OptimFailed(format!(
                "objective is non-finite on the initial simplex: {fv}"
            )));
        }
        fvals.push(fv);
    }

    let mut trace = Vec::new();
    let mut status = StopReason::MaxIterations;

    for iter in 0..=opts.max_iter {
        // order best to worst; NaN sorts last and gets replaced first
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fvals[a].total_cmp(&fvals[b]));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| verts[i].clone()).collect();
        let refvals: Vec<f64> = order.iter().map(|&i| fvals[i]).collect();
        verts = reordered;
        fvals = refvals;

        let spread = fvals[n] - fvals[0];
        let diameter = verts[1..]
            .iter()
            .map(|v| {
                let diff: Vec<f64> = v.iter().zip(&verts[0]).map(|(a, b)| a - b).collect();
                inf_norm(&diff)
            })
            .fold(0.0f64, f64::max);
        trace.push(TraceRow {
            iteration: iter,
            f: fvals[0],
            grad_norm: spread,
            step_norm: diameter,
            evals,
        });
        if spread < opts.spread_tol {
            status = StopReason::SpreadTol;
            break;
        }
        if iter == opts.max_iter {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| verts[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = verts[n].clone();
        let f_worst = fvals[n];

        let xr: Vec<f64> = centroid
            .iter()
            .zip(&worst)
            .map(|(c, w)| c + REFLECT * (c - w))
            .collect();
        evals += 1;
        let fr = f(&xr);

        if fr.is_finite() && fr < fvals[0] {
            let xe: Vec<f64> = centroid
                .iter()
                .zip(&xr)
                .map(|(c, r)| c + EXPAND * (r - c))
                .collect();
            evals += 1;
            let fe = f(&xe);
            if fe.is_finite() && fe < fr {
                verts[n] = xe;
                fvals[n] = fe;
            } else {
                verts[n] = xr;
                fvals[n] = fr;
            }
        } else if fr.is_finite() && fr < fvals[n - 1] {
            verts[n] = xr;
            fvals[n] = fr;
        } else {
            let outside = fr.is_finite() && fr < f_worst;
            let xc: Vec<f64> = if outside {
                centroid
                    .iter()
                    .zip(&xr)
                    .map(|(c, r)| c + CONTRACT * (r - c))
                    .collect()
            } else {
                centroid
                    .iter()
                    .zip(&worst)
                    .map(|(c, w)| c - CONTRACT * (c - w))
                    .collect()
            };
            evals += 1;
            let fc = f(&xc);
            let accept = fc.is_finite() && if outside { fc <= fr } else { fc < f_worst };
            if accept {
                verts[n] = xc;
                fvals[n] = fc;
            } else {
                // shrink everything toward the best vertex
                let best = verts[0].clone();
                for i in 1..=n {
                    for j in 0..n {
                        verts[i][j] = best[j] + SHRINK * (verts[i][j] - best[j]);
                    }
                    evals += 1;
                    fvals[i] = f(&verts[i]);
                }
            }
        }
    }

    Ok(MinimizeResult {
        x: verts[0].clone(),
        f: fvals[0],
        status,
        trace,
        evals,
        grad_evals: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bowl_minimum_is_found_precisely() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2);
        let res = nelder_mead_minimize(&mut f, &[0.0, 0.0], &NelderMeadOptions::default()).unwrap();
        assert_eq!(res.status, StopReason::SpreadTol);
        assert!((res.x[0] - 1.0).abs() < 1e-5, "x0 = {}", res.x[0]);
        assert!((res.x[1] + 2.0).abs() < 1e-5, "x1 = {}", res.x[1]);
    }

    #[test]
    fn banana_valley_is_tracked_to_the_minimum() {
        let mut f =
            |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let res =
            nelder_mead_minimize(&mut f, &[-1.2, 1.0], &NelderMeadOptions::default()).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-3, "x0 = {}", res.x[0]);
        assert!((res.x[1] - 1.0).abs() < 1e-3, "x1 = {}", res.x[1]);
    }

    #[test]
    fn best_value_never_regresses() {
        let mut f = |x: &[f64]| x[0].sin() + 0.1 * x[0] * x[0] + (x[1] - 0.5).powi(2);
        let res = nelder_mead_minimize(&mut f, &[3.0, -1.0], &NelderMeadOptions::default()).unwrap();
        for pair in res.trace.windows(2) {
            assert!(pair[1].f <= pair[0].f);
            assert!(pair[1].evals > pair[0].evals);
        }
    }

    #[test]
    fn one_dimensional_problems_work() {
        let mut f = |x: &[f64]| (x[0] - 2.0).powi(2);
        let res = nelder_mead_minimize(&mut f, &[5.0], &NelderMeadOptions::default()).unwrap();
        assert!((res.x[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let mut f = |x: &[f64]| x[0];
        assert!(nelder_mead_minimize(&mut f, &[], &NelderMeadOptions::default()).is_err());
        let opts = NelderMeadOptions {
            spread_tol: -1.0,
            ..NelderMeadOptions::default()
        };
        assert!(nelder_mead_minimize(&mut f, &[1.0], &opts).is_err());
    }
}
