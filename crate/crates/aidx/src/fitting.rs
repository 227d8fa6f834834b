//! Sub-threshold parameter extraction from stress-sweep data.
//!
//! A sweep holds the device at a sequence of sub-threshold voltages, each
//! for a dwell time, recording the current at the moment every point is
//! entered. Drift accumulated over the dwells bends the current trace, and
//! that bend is what identifies `k_s` and `alpha_s` for the branch being
//! stressed. The extraction runs simulated annealing over
//! (log10 |k|, integer alpha) to find the basin, then polishes with a
//! quasi-Newton descent over (log10 |k|, real alpha, starting state).
//!
//! Identifiability scales with `|k_s| * dwell * points`: the accumulated
//! state change must rise above the current noise floor, so the weaker the
//! drift the longer the sweep has to stress the device. There is no
//! physically meaningful default dwell; callers choose one sized for the
//! device under test.

use crate::device::{DeviceParams, MemristorState, WindowKind};
use crate::error::{Error, Result};
use crate::io;
use crate::optimizer::{bfgs_minimize, BfgsOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One sweep point: `current_a` is measured as `voltage_v` is applied,
/// then the voltage is held for `dwell_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IvSample {
    pub voltage_v: f64,
    pub current_a: f64,
    pub dwell_s: f64,
}

/// Which drift branch a sweep stresses. `Set` is the negative-voltage
/// branch (state driven toward r_on), `Reset` the positive one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Set,
    Reset,
}

impl Branch {
    pub fn matches(self, v: f64) -> bool {
        match self {
            Branch::Set => v < 0.0,
            Branch::Reset => v > 0.0,
        }
    }

    /// Threshold magnitude for this branch's polarity.
    pub fn threshold_magnitude(self, v_on: f64, v_off: f64) -> f64 {
        match self {
            Branch::Set => -v_on,
            Branch::Reset => v_off,
        }
    }

    fn signed(self, magnitude: f64) -> f64 {
        match self {
            Branch::Set => -magnitude,
            Branch::Reset => magnitude,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Number of annealing temperature stages.
    pub sa_temperatures: usize,
    /// Proposals evaluated at each temperature.
    pub sa_proposals: usize,
    /// Geometric cooling factor per stage.
    pub sa_cooling: f64,
    /// Independent annealing chains (run in parallel, best result wins).
    pub chains: usize,
    pub seed: u64,
    /// Search box for log10 |k_s|.
    pub log10_k_bounds: (f64, f64),
    /// Search box for alpha_s. Annealing walks integers inside it; the
    /// refinement stage treats alpha as real.
    pub alpha_bounds: (f64, f64),
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            sa_temperatures: 200,
            sa_proposals: 20,
            sa_cooling: 0.95,
            chains: 4,
            seed: 0,
            log10_k_bounds: (-12.0, -1.0),
            alpha_bounds: (1.0, 10.0),
        }
    }
}

/// Fit of a single branch.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BranchFit {
    /// Signed rate constant (negative for the set branch).
    pub k: f64,
    pub alpha: f64,
    /// Starting state inferred from the sweep.
    pub w0: f64,
    /// Mean squared log-current error after annealing.
    pub annealed_objective: f64,
    /// Same objective after descent refinement; never larger.
    pub refined_objective: f64,
    pub n_samples: usize,
}

/// Both branches plus the assembled device. The above-threshold constants
/// are not observable from sub-threshold sweeps; they are filled with the
/// stock programming placeholders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DeviceParams,
    pub set: BranchFit,
    pub reset: BranchFit,
}

const MIN_SAMPLES_PER_BRANCH: usize = 10;
const BOX_PENALTY: f64 = 1e3;
/// If dropping the drift term entirely costs no more than this much MSLE,
/// the branch is reported as drift-free (k = 0).
const PARSIMONY_MARGIN: f64 = 1e-12;

struct BranchProblem<'a> {
    samples: &'a [IvSample],
    branch: Branch,
    r_on: f64,
    r_off: f64,
    v_on: f64,
    v_off: f64,
}

impl BranchProblem<'_> {
    /// Candidate device exercising only the branch under fit. The other
    /// branch and the above-threshold constants are zeroed; sweep voltages
    /// are strictly sub-threshold so they never engage.
    fn device(&self, k_magnitude: f64, alpha: f64) -> DeviceParams {
        let mut d = DeviceParams {
            r_on: self.r_on,
            r_off: self.r_off,
            v_on: self.v_on,
            v_off: self.v_off,
            k_on: 0.0,
            k_off: 0.0,
            alpha_on: 1.0,
            alpha_off: 1.0,
            k_s_on: 0.0,
            k_s_off: 0.0,
            alpha_s_on: 1.0,
            alpha_s_off: 1.0,
            window: WindowKind::Rectangular,
        };
        match self.branch {
            Branch::Set => {
                d.k_s_on = -k_magnitude;
                d.alpha_s_on = alpha;
            }
            Branch::Reset => {
                d.k_s_off = k_magnitude;
                d.alpha_s_off = alpha;
            }
        }
        d
    }

    fn objective(&self, log10_k: f64, alpha: f64, w0: f64) -> f64 {
        replay_msle(self.device(10f64.powf(log10_k), alpha), w0, self.samples)
    }

    fn objective_without_drift(&self, alpha: f64, w0: f64) -> f64 {
        replay_msle(self.device(0.0, alpha), w0, self.samples)
    }
}

/// Mean squared log-current error of a simulated replay against the data.
fn replay_msle(dev: DeviceParams, w0: f64, samples: &[IvSample]) -> f64 {
    let Ok(mut st) = MemristorState::new(dev, w0) else {
        return f64::INFINITY;
    };
    let mut acc = 0.0;
    for s in samples {
        let i_sim = s.voltage_v * st.conductance();
        let d = s.current_a.abs().ln() - i_sim.abs().ln();
        acc += d * d;
        if st.step(s.voltage_v, s.dwell_s).is_err() {
            return f64::INFINITY;
        }
    }
    acc / samples.len() as f64
}

fn validate_branch_samples(samples: &[IvSample], branch: Branch, vth: f64) -> Result<()> {
    if samples.len() < MIN_SAMPLES_PER_BRANCH {
        return Err(Error::InsufficientData(format!(
            "{} samples on the {:?} branch, need at least {MIN_SAMPLES_PER_BRANCH}",
            samples.len(),
            branch
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        if !s.voltage_v.is_finite() || !s.current_a.is_finite() || !s.dwell_s.is_finite() {
            return Err(Error::InvalidInput(format!("sample {i} has non-finite fields")));
        }
        if !branch.matches(s.voltage_v) {
            return Err(Error::InvalidInput(format!(
                "sample {i}: voltage {} V is not on the {:?} branch",
                s.voltage_v, branch
            )));
        }
        if s.voltage_v.abs() >= vth {
            return Err(Error::InvalidInput(format!(
                "sample {i}: voltage {} V is not sub-threshold (limit {vth} V)",
                s.voltage_v
            )));
        }
        if s.dwell_s <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "sample {i}: dwell {} s",
                s.dwell_s
            )));
        }
        if s.current_a * s.voltage_v <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "sample {i}: current {} A inconsistent with voltage {} V",
                s.current_a, s.voltage_v
            )));
        }
    }
    Ok(())
}

/// Starting state implied by the earliest samples, where drift is still
/// negligible. Averaging beats the per-point noise down.
fn estimate_w0(problem: &BranchProblem) -> Result<f64> {
    let probe = problem.device(0.0, 1.0);
    let n = (problem.samples.len() / 20).max(3).min(problem.samples.len());
    let mut acc = 0.0;
    for s in &problem.samples[..n] {
        acc += probe.w_for_conductance(s.current_a / s.voltage_v)?;
    }
    Ok(acc / n as f64)
}

/// One annealing chain over (log10 |k|, integer alpha).
fn anneal_chain(
    problem: &BranchProblem,
    w0: f64,
    opts: &FitOptions,
    chain: u64,
) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(0x5a00 + chain);
    let (klo, khi) = opts.log10_k_bounds;
    let (alo, ahi) = opts.alpha_bounds;

    let mut lk = rng.gen_range(klo..khi);
    let mut a = rng.gen_range(alo.ceil() as i64..=ahi.floor() as i64) as f64;
    let mut cur = problem.objective(lk, a, w0);
    let mut best = (lk, a, cur);

    let t0 = cur.max(1e-3);
    let mut t = t0;
    for _ in 0..opts.sa_temperatures {
        let step = 0.05 + 2.0 * (t / t0);
        for _ in 0..opts.sa_proposals {
            let lk_p = (lk + rng.gen_range(-step..=step)).clamp(klo, khi);
            let a_p = if rng.gen_bool(0.4) {
                let delta = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                (a + delta).clamp(alo, ahi)
            } else {
                a
            };
            let o = problem.objective(lk_p, a_p, w0);
            let delta = o - cur;
            if delta <= 0.0 || rng.gen::<f64>() < (-delta / t).exp() {
                lk = lk_p;
                a = a_p;
                cur = o;
                if cur < best.2 {
                    best = (lk, a, cur);
                }
            }
        }
        t *= opts.sa_cooling;
    }
    best
}

/// Fit one branch from samples that all lie on it, in sweep order.
pub fn fit_branch(
    samples: &[IvSample],
    branch: Branch,
    r_on: f64,
    r_off: f64,
    v_on: f64,
    v_off: f64,
    opts: &FitOptions,
) -> Result<BranchFit> {
    if opts.sa_temperatures == 0
        || opts.sa_proposals == 0
        || opts.chains == 0
        || !(0.0 < opts.sa_cooling && opts.sa_cooling < 1.0)
        || !(opts.log10_k_bounds.0 < opts.log10_k_bounds.1)
        || !(1.0 <= opts.alpha_bounds.0 && opts.alpha_bounds.0 < opts.alpha_bounds.1)
    {
        return Err(Error::InvalidInput("fit options out of range".into()));
    }
    let problem = BranchProblem {
        samples,
        branch,
        r_on,
        r_off,
        v_on,
        v_off,
    };
    // one validation pass catches bad r/v arguments early
    problem.device(1e-6, 1.0).validate()?;
    let vth = branch.threshold_magnitude(v_on, v_off);
    validate_branch_samples(samples, branch, vth)?;
    let w0_est = estimate_w0(&problem)?;

    let chain_results: Vec<(f64, f64, f64)> = (0..opts.chains as u64)
        .into_par_iter()
        .map(|c| anneal_chain(&problem, w0_est, opts, c))
        .collect();
    let mut annealed = chain_results[0];
    for r in &chain_results[1..] {
        if r.2 < annealed.2 {
            annealed = *r;
        }
    }

    // descent refinement: alpha and the starting state go real-valued, the
    // search box becomes a smooth quadratic penalty
    let (klo, khi) = opts.log10_k_bounds;
    let (alo, ahi) = opts.alpha_bounds;
    let mut refine = |x: &[f64]| {
        let mut violation = 0.0;
        let lk = boxed(x[0], klo, khi, &mut violation);
        let a = boxed(x[1], alo, ahi, &mut violation);
        let w0 = boxed(x[2], 0.0, 1.0, &mut violation);
        problem.objective(lk, a, w0) + BOX_PENALTY * violation
    };
    let bfgs_opts = BfgsOptions {
        max_iter: 200,
        grad_tol: 1e-10,
        step_tol: 1e-12,
        ..BfgsOptions::default()
    };
    let refined = bfgs_minimize(&mut refine, &[annealed.0, annealed.1, w0_est], &bfgs_opts)?;

    let mut violation = 0.0;
    let lk = boxed(refined.x[0], klo, khi, &mut violation);
    let alpha = boxed(refined.x[1], alo, ahi, &mut violation);
    let w0 = boxed(refined.x[2], 0.0, 1.0, &mut violation);
    let refined_objective = problem.objective(lk, alpha, w0);

    // prefer the drift-free model when drift explains nothing
    let without_drift = problem.objective_without_drift(alpha, w0);
    let k = if without_drift <= refined_objective + PARSIMONY_MARGIN {
        0.0
    } else {
        branch.signed(10f64.powf(lk))
    };
    let final_objective = if k == 0.0 {
        without_drift
    } else {
        refined_objective
    };

    Ok(BranchFit {
        k,
        alpha,
        w0,
        annealed_objective: annealed.2,
        refined_objective: final_objective,
        n_samples: samples.len(),
    })
}

/// Fit both branches from a combined sweep. Samples are split by voltage
/// sign; each branch must be contiguous in time and hold at least
/// 10 points.
pub fn fit_subthreshold(
    samples: &[IvSample],
    r_on: f64,
    r_off: f64,
    v_on: f64,
    v_off: f64,
    opts: &FitOptions,
) -> Result<FitResult> {
    if samples.iter().any(|s| s.voltage_v == 0.0) {
        return Err(Error::InvalidInput(
            "zero-voltage samples carry no drift information; remove them".into(),
        ));
    }
    let set: Vec<IvSample> = samples
        .iter()
        .copied()
        .filter(|s| Branch::Set.matches(s.voltage_v))
        .collect();
    let reset: Vec<IvSample> = samples
        .iter()
        .copied()
        .filter(|s| Branch::Reset.matches(s.voltage_v))
        .collect();

    let set_fit = fit_branch(&set, Branch::Set, r_on, r_off, v_on, v_off, opts)?;
    let reset_fit = fit_branch(&reset, Branch::Reset, r_on, r_off, v_on, v_off, opts)?;

    let stock = DeviceParams::tiox();
    let params = DeviceParams {
        r_on,
        r_off,
        v_on,
        v_off,
        k_on: stock.k_on,
        k_off: stock.k_off,
        alpha_on: stock.alpha_on,
        alpha_off: stock.alpha_off,
        k_s_on: set_fit.k,
        k_s_off: reset_fit.k,
        alpha_s_on: set_fit.alpha,
        alpha_s_off: reset_fit.alpha,
        window: WindowKind::Rectangular,
    };
    params.validate()?;
    Ok(FitResult {
        params,
        set: set_fit,
        reset: reset_fit,
    })
}

fn boxed(x: f64, lo: f64, hi: f64, violation: &mut f64) -> f64 {
    if x < lo {
        *violation += (lo - x) * (lo - x);
        lo
    } else if x > hi {
        *violation += (x - hi) * (x - hi);
        hi
    } else {
        x
    }
}

/// Generate a synthetic stress sweep standing in for lab data: a triangular
/// voltage profile from 5% to 95% of the branch threshold and back, one
/// current reading per point, drift applied over each dwell. `noise_frac`
/// is the multiplicative log-normal current noise (0.01 reads as 1%).
pub fn synthetic_sweep(
    params: &DeviceParams,
    branch: Branch,
    w0: f64,
    points_up: usize,
    dwell_s: f64,
    noise_frac: f64,
    seed: u64,
) -> Result<Vec<IvSample>> {
    if points_up < 2 {
        return Err(Error::InvalidInput(format!("points_up {points_up}")));
    }
    if !(dwell_s > 0.0) || !(noise_frac >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "dwell {dwell_s} s, noise {noise_frac}"
        )));
    }
    let mut st = MemristorState::new(params.clone(), w0)?;
    let vth = branch.threshold_magnitude(params.v_on, params.v_off);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut fractions: Vec<f64> = (0..points_up)
        .map(|j| 0.05 + 0.9 * j as f64 / (points_up - 1) as f64)
        .collect();
    for j in (0..points_up - 1).rev() {
        let f = fractions[j];
        fractions.push(f);
    }

    let mut out = Vec::with_capacity(fractions.len());
    for f in fractions {
        let v = branch.signed(f * vth);
        let mut i = v * st.conductance();
        if noise_frac > 0.0 {
            i *= (noise_frac * noise.sample(&mut rng)).exp();
        }
        out.push(IvSample {
            voltage_v: v,
            current_a: i,
            dwell_s,
        });
        st.step(v, dwell_s)?;
    }
    Ok(out)
}

/// Read sweep samples from CSV with columns voltage_v, current_a, dwell_s.
pub fn read_iv_csv<P: AsRef<Path>>(path: P) -> Result<Vec<IvSample>> {
    let path = path.as_ref();
    let (header, rows) = io::read_numeric_csv(path)?;
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                reason: format!("missing column {name}"),
            })
    };
    let (vi, ii, di) = (col("voltage_v")?, col("current_a")?, col("dwell_s")?);
    Ok(rows
        .iter()
        .map(|r| IvSample {
            voltage_v: r[vi],
            current_a: r[ii],
            dwell_s: r[di],
        })
        .collect())
}

pub fn write_iv_csv<P: AsRef<Path>>(path: P, seed: u64, samples: &[IvSample]) -> Result<()> {
    io::write_csv(
        path,
        seed,
        &[],
        &["voltage_v", "current_a", "dwell_s"],
        samples.iter().map(|s| {
            vec![
                io::fmt_f64(s.voltage_v),
                io::fmt_f64(s.current_a),
                io::fmt_f64(s.dwell_s),
            ]
        }),
    )
}
