//! Batch front end: `fit`, `optimize`, `benchmark`, and `drift-demo`
//! subcommands over JSON/CSV artifacts.
//!
//! Every run is driven by a [`RunConfig`] (JSON, all fields optional with
//! spec defaults); command-line flags override file values. Commands are
//! plain library functions so tests can call them without spawning a
//! process; the binary maps errors to exit codes (2 for validation
//! problems, 3 for simulation or optimizer failures) and prints the
//! message on stderr.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aidx::{aidx_preprocess, AidxOptions, PreprocessReport, Workload as DriftWorkload};
use crate::crossbar::ArrayConfig;
use crate::device::{DeviceParams, MemristorState};
use crate::error::{Error, Result};
use crate::fitting::{fit_subthreshold, read_iv_csv, FitOptions, FitResult};
use crate::io::{fmt_f64, write_csv};
use crate::network::{
    load_workload, map_network, Dataset, MappedNetwork, Network, TaskKind, TrajectoryMetrics,
    TrajectoryOptions, Workload as TaskWorkload,
};
use crate::signal::{encode_input, PulseConfig};

#[derive(Parser, Debug)]
#[command(
    name = "aidx",
    version,
    about = "Memristance-drift simulation and read-pulse shaping toolkit"
)]
pub struct Cli {
    /// Run configuration JSON; omitted fields take spec defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the run config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit sub-threshold drift parameters from an I-V sweep CSV.
    Fit {
        /// Input sweep: time_s, voltage_v, current_a columns.
        #[arg(long)]
        iv: PathBuf,
        /// Output JSON with the fitted device and per-branch diagnostics.
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose per-layer pulse configurations for a workload.
    Optimize {
        /// Workload manifest JSON (network layers + data).
        #[arg(long)]
        workload: PathBuf,
        /// Device parameter JSON; defaults to the run config device.
        #[arg(long)]
        device: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "aidx-a")]
        mode: Mode,
        /// Amplitude-ratio regularization weight (aidx-p only).
        #[arg(long)]
        lambda1: Option<f64>,
        /// Width-ratio regularization weight (aidx-p only).
        #[arg(long)]
        lambda2: Option<f64>,
        /// Output manifest JSON: per-layer configs plus the report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run paired baseline/shaped drift trajectories and summarize.
    Benchmark {
        #[arg(long)]
        workload: PathBuf,
        /// Pulse manifest from `optimize`; identity pulses when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        device: Option<PathBuf>,
        /// Total inference operations per trajectory.
        #[arg(long)]
        total_ops: Option<usize>,
        /// Number of Monte Carlo seeds.
        #[arg(long)]
        seeds: Option<usize>,
        /// Output CSV; ΔG heatmaps land next to it as *_dg_*.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-conductance divergence demo: two skew-driven device groups,
    /// unshaped vs shaped.
    DriftDemo {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Accuracy-optimized: no ratio regularization.
    AidxA,
    /// Power-optimized: L2-regularized ratios.
    AidxP,
}

/// One JSON document per run; every tunable has its library default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub device: DeviceParams,
    pub array: ArrayConfig,
    pub aidx: AidxOptions,
    pub trajectory: TrajectoryOptions,
    pub fit: FitOptions,
    pub benchmark: BenchmarkOptions,
    pub drift_demo: DriftDemoOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            device: DeviceParams::tiox(),
            array: ArrayConfig::default(),
            aidx: AidxOptions::default(),
            trajectory: TrajectoryOptions::default(),
            fit: FitOptions::default(),
            benchmark: BenchmarkOptions::default(),
            drift_demo: DriftDemoOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path: p.display().to_string(),
                    reason: e.to_string(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkOptions {
    /// Monte Carlo seeds per arm.
    pub n_seeds: usize,
    /// Also write per-cell |ΔG| long-format CSVs for the first seed.
    pub heatmaps: bool,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            n_seeds: 20,
            heatmaps: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftDemoOptions {
    /// Device used by the demo (fast-drift, mid-range conductance).
    pub device: DeviceParams,
    pub devices_per_group: usize,
    pub ops: usize,
    pub checkpoint_every: usize,
    /// P(+1) for the positively skewed group; the other group mirrors it.
    pub skew: f64,
    /// Device-to-device spread. Zero keeps the groups uniform so the two
    /// panels diverge in clean opposite directions; raise it to overlay
    /// per-device scatter on the same story.
    pub variation_scale: f64,
    /// Every device starts at this conductance.
    pub initial_g_s: f64,
    pub base_amplitude_v: f64,
    pub base_width_s: f64,
}

/// Demo device: drift constants scaled up so a few thousand reads move the
/// state visibly, resistance range chosen so the canonical starting
/// conductance sits mid-range, and branch rates balanced at the read
/// voltage so the two skew groups diverge in opposite directions.
fn demo_device() -> DeviceParams {
    let mut p = DeviceParams::tiox();
    p.r_on = 100.0;
    p.r_off = 2.0 / 5.2e-3 - 100.0;
    p.k_s_off = 45.0;
    p.k_s_on = -135.0;
    p
}

impl Default for DriftDemoOptions {
    fn default() -> Self {
        DriftDemoOptions {
            device: demo_device(),
            devices_per_group: 16,
            ops: 2000,
            checkpoint_every: 50,
            skew: 0.8,
            variation_scale: 0.0,
            initial_g_s: 5.2e-3,
            base_amplitude_v: 0.2,
            base_width_s: 1e-3,
        }
    }
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Parse flags, apply overrides, dispatch. The binary's whole job.
pub fn run(cli: &Cli) -> Result<()> {
    let mut rc = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        rc.seed = seed;
    }
    match &cli.cmd {
        Command::Fit { iv, out } => {
            let fit = cmd_fit(iv, out, &rc)?;
            println!(
                "fit: k_s_on={} alpha_s_on={} k_s_off={} alpha_s_off={} -> {}",
                fmt_f64(fit.params.k_s_on),
                fmt_f64(fit.params.alpha_s_on),
                fmt_f64(fit.params.k_s_off),
                fmt_f64(fit.params.alpha_s_off),
                out.display()
            );
        }
        Command::Optimize {
            workload,
            device,
            mode,
            lambda1,
            lambda2,
            out,
        } => {
            match mode {
                Mode::AidxA => {
                    rc.aidx.lambda1 = 0.0;
                    rc.aidx.lambda2 = 0.0;
                }
                Mode::AidxP => {
                    rc.aidx.lambda1 = lambda1.unwrap_or(1e-2);
                    rc.aidx.lambda2 = lambda2.unwrap_or(1e-2);
                }
            }
            let manifest = cmd_optimize(workload, device.as_deref(), *mode, out, &rc)?;
            for layer in &manifest.report.layers {
                println!(
                    "layer {}: {:?} E_Drift {} (identity {}){}",
                    layer.layer,
                    layer.selected,
                    fmt_f64(layer.final_e_drift),
                    fmt_f64(layer.identity_e_drift),
                    if layer.inversion_triggered {
                        format!(", inversion a={}", fmt_f64(layer.inversion_fraction))
                    } else {
                        String::new()
                    }
                );
            }
            println!("manifest -> {}", out.display());
        }
        Command::Benchmark {
            workload,
            manifest,
            device,
            total_ops,
            seeds,
            out,
        } => {
            if let Some(ops) = total_ops {
                rc.trajectory.total_ops = *ops;
            }
            if let Some(n) = seeds {
                rc.benchmark.n_seeds = *n;
            }
            let summary =
                cmd_benchmark(workload, manifest.as_deref(), device.as_deref(), out, &rc)?;
            println!(
                "benchmark: {} seeds x {} ops, final metric baseline {} vs shaped {}",
                rc.benchmark.n_seeds,
                rc.trajectory.total_ops,
                fmt_f64(*summary.baseline_mean.last().unwrap()),
                fmt_f64(*summary.shaped_mean.last().unwrap()),
            );
            println!(
                "lifetime: baseline {} ops, shaped {} ops, ratio {}",
                fmt_f64(summary.baseline_lifetime_mean),
                fmt_f64(summary.shaped_lifetime_mean),
                fmt_f64(summary.lifetime_ratio),
            );
            println!("csv -> {}", out.display());
        }
        Command::DriftDemo { out } => {
            let summary = cmd_drift_demo(out, &rc)?;
            println!(
                "drift demo: unshaped groups moved {} / {} S, shaped stayed within {} S",
                fmt_f64(summary.pos_unshaped_shift),
                fmt_f64(summary.neg_unshaped_shift),
                fmt_f64(summary.max_shaped_shift),
            );
            println!("csv -> {}", out.display());
        }
    }
    Ok(())
}

/// Fit sub-threshold parameters from a sweep CSV and write the device JSON.
/// The resistance and threshold constants come from the run config device
/// (they are measured independently, not fitted).
pub fn cmd_fit(iv_csv: &Path, out_json: &Path, rc: &RunConfig) -> Result<FitResult> {
    let samples = read_iv_csv(iv_csv)?;
    let mut opts = rc.fit;
    opts.seed = rc.seed;
    let d = &rc.device;
    let fit = fit_subthreshold(&samples, d.r_on, d.r_off, d.v_on, d.v_off, &opts)?;
    write_json(out_json, &fit)?;
    Ok(fit)
}

/// Per-layer pulse configs plus the preprocessing report, as written by
/// `optimize` and consumed by `benchmark`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeManifest {
    pub workload: String,
    pub mode: Mode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub configs: Vec<PulseConfig>,
    pub report: PreprocessReport,
}

/// The drift objective scores outputs against the float network's own
/// predictions, so a freshly programmed array starts near zero error and
/// any drift strictly raises the metric.
fn ideal_output_dataset(net: &Network, inputs: &Array2<f64>) -> Result<Dataset> {
    let mut targets = Array2::zeros((inputs.nrows(), net.n_outputs()));
    for (s, row) in inputs.rows().into_iter().enumerate() {
        let y = net.forward(row.as_slice().expect("contiguous"))?;
        targets
            .row_mut(s)
            .assign(&ndarray::Array1::from_vec(y));
    }
    Dataset::new(inputs.clone(), targets, None)
}

pub fn cmd_optimize(
    workload_json: &Path,
    device_json: Option<&Path>,
    mode: Mode,
    out_manifest: &Path,
    rc: &RunConfig,
) -> Result<OptimizeManifest> {
    let wl = load_workload(workload_json)?;
    let device = match device_json {
        Some(p) => load_json::<DeviceParams>(p)?,
        None => rc.device.clone(),
    };
    device.validate()?;
    let eval = ideal_output_dataset(&wl.network, &wl.data.inputs)?;
    let drift_workload = DriftWorkload::Network {
        network: wl.network.clone(),
        device,
        array: rc.array,
        replay: wl.data.inputs.clone(),
        eval,
    };
    let mut opts = rc.aidx.clone();
    opts.seed = rc.seed;
    let (configs, report) = aidx_preprocess(&drift_workload, &opts)?;
    let manifest = OptimizeManifest {
        workload: wl.name,
        mode,
        lambda1: opts.lambda1,
        lambda2: opts.lambda2,
        seed: rc.seed,
        configs,
        report,
    };
    write_json(out_manifest, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct BenchmarkSummary {
    pub op_counts: Vec<usize>,
    pub baseline_mean: Vec<f64>,
    pub shaped_mean: Vec<f64>,
    /// Censored lifetimes (runs that never died count as `total_ops`).
    pub baseline_lifetime_mean: f64,
    pub shaped_lifetime_mean: f64,
    pub lifetime_ratio: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64], m: f64) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn run_arm(
    wl: &TaskWorkload,
    device: &DeviceParams,
    array: &ArrayConfig,
    cfgs: &[PulseConfig],
    opts: &TrajectoryOptions,
    seeds: &[u64],
) -> Result<Vec<(TrajectoryMetrics, MappedNetwork)>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut net = map_network(&wl.network, device, array, seed)?;
            let m = crate::network::run_trajectory(
                &mut net,
                &wl.data.inputs,
                &wl.data,
                wl.task,
                cfgs,
                opts,
            )?;
            Ok((m, net))
        })
        .collect()
}

fn censored_lifetime(m: &TrajectoryMetrics, total_ops: usize) -> f64 {
    m.lifetime_ops.unwrap_or(total_ops) as f64
}

fn heatmap_path(out_csv: &Path, arm: &str) -> PathBuf {
    let stem = out_csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "benchmark".into());
    out_csv.with_file_name(format!("{stem}_dg_{arm}.csv"))
}

/// Per-cell |ΔG| of every layer after one full trajectory, long format.
fn write_heatmap(
    path: &Path,
    seed: u64,
    fresh: &MappedNetwork,
    aged: &MappedNetwork,
) -> Result<()> {
    let mut rows = Vec::new();
    for (l, (f, a)) in fresh.layers.iter().zip(&aged.layers).enumerate() {
        let g0 = f.crossbar.conductance_matrix();
        let g1 = a.crossbar.conductance_matrix();
        for i in 0..g0.nrows() {
            for j in 0..g0.ncols() {
                rows.push(vec![
                    l.to_string(),
                    i.to_string(),
                    j.to_string(),
                    fmt_f64((g1[[i, j]] - g0[[i, j]]).abs()),
                ]);
            }
        }
    }
    write_csv(
        path,
        seed,
        &["per-cell |delta G| (S) between fresh and aged arrays".into()],
        &["layer", "row", "col", "abs_delta_g_s"],
        rows,
    )
}

/// Paired trajectories: identity pulses vs the manifest's shaped pulses,
/// run from identical freshly programmed arrays for each seed.
pub fn cmd_benchmark(
    workload_json: &Path,
    manifest_path: Option<&Path>,
    device_json: Option<&Path>,
    out_csv: &Path,
    rc: &RunConfig,
) -> Result<BenchmarkSummary> {
    let wl = load_workload(workload_json)?;
    let device = match device_json {
        Some(p) => load_json::<DeviceParams>(p)?,
        None => rc.device.clone(),
    };
    device.validate()?;
    if rc.benchmark.n_seeds == 0 {
        return Err(Error::InvalidConfig("benchmark needs at least 1 seed".into()));
    }

    let probe = map_network(&wl.network, &device, &rc.array, 0)?;
    let identity = probe.identity_configs(rc.aidx.base_amplitude_v, rc.aidx.base_width_s);
    let shaped = match manifest_path {
        Some(p) => {
            let manifest: OptimizeManifest = load_json(p)?;
            probe.check_configs(&manifest.configs)?;
            manifest.configs
        }
        None => identity.clone(),
    };

    let seeds: Vec<u64> = (0..rc.benchmark.n_seeds)
        .map(|i| rc.seed.wrapping_add(i as u64))
        .collect();
    let fresh: Vec<MappedNetwork> = seeds
        .iter()
        .map(|&s| map_network(&wl.network, &device, &rc.array, s))
        .collect::<Result<_>>()?;
    let base_runs = run_arm(&wl, &device, &rc.array, &identity, &rc.trajectory, &seeds)?;
    let shaped_runs = run_arm(&wl, &device, &rc.array, &shaped, &rc.trajectory, &seeds)?;

    let op_counts = base_runs[0].0.op_counts.clone();
    let n_ck = op_counts.len();
    let col = |runs: &[(TrajectoryMetrics, MappedNetwork)], k: usize| -> Vec<f64> {
        runs.iter().map(|(m, _)| m.series[k]).collect()
    };
    let mut rows = Vec::with_capacity(n_ck);
    let mut baseline_mean = Vec::with_capacity(n_ck);
    let mut shaped_mean = Vec::with_capacity(n_ck);
    for k in 0..n_ck {
        let b = col(&base_runs, k);
        let s = col(&shaped_runs, k);
        let (bm, sm) = (mean(&b), mean(&s));
        rows.push(vec![
            op_counts[k].to_string(),
            fmt_f64(bm),
            fmt_f64(std_dev(&b, bm)),
            fmt_f64(sm),
            fmt_f64(std_dev(&s, sm)),
        ]);
        baseline_mean.push(bm);
        shaped_mean.push(sm);
    }

    let total = rc.trajectory.total_ops;
    let b_life: Vec<f64> = base_runs
        .iter()
        .map(|(m, _)| censored_lifetime(m, total))
        .collect();
    let s_life: Vec<f64> = shaped_runs
        .iter()
        .map(|(m, _)| censored_lifetime(m, total))
        .collect();
    let b_censored = base_runs.iter().filter(|(m, _)| m.lifetime_ops.is_none()).count();
    let s_censored = shaped_runs
        .iter()
        .filter(|(m, _)| m.lifetime_ops.is_none())
        .count();
    let baseline_lifetime_mean = mean(&b_life);
    let shaped_lifetime_mean = mean(&s_life);
    let lifetime_ratio = shaped_lifetime_mean / baseline_lifetime_mean;

    write_csv(
        out_csv,
        rc.seed,
        &[
            format!(
                "workload={} task={:?} seeds={} total_ops={}",
                wl.name,
                wl.task,
                seeds.len(),
                total
            ),
            format!(
                "baseline_lifetime_mean={} (censored {}/{})",
                fmt_f64(baseline_lifetime_mean),
                b_censored,
                seeds.len()
            ),
            format!(
                "shaped_lifetime_mean={} (censored {}/{})",
                fmt_f64(shaped_lifetime_mean),
                s_censored,
                seeds.len()
            ),
            format!("lifetime_ratio={}", fmt_f64(lifetime_ratio)),
        ],
        &[
            "op_count",
            "baseline_mean",
            "baseline_std",
            "shaped_mean",
            "shaped_std",
        ],
        rows,
    )?;

    if rc.benchmark.heatmaps {
        write_heatmap(
            &heatmap_path(out_csv, "baseline"),
            rc.seed,
            &fresh[0],
            &base_runs[0].1,
        )?;
        write_heatmap(
            &heatmap_path(out_csv, "shaped"),
            rc.seed,
            &fresh[0],
            &shaped_runs[0].1,
        )?;
    }

    Ok(BenchmarkSummary {
        op_counts,
        baseline_mean,
        shaped_mean,
        baseline_lifetime_mean,
        shaped_lifetime_mean,
        lifetime_ratio,
    })
}

#[derive(Debug, Clone)]
pub struct DriftDemoSummary {
    pub op_counts: Vec<usize>,
    /// Mean conductance per checkpoint: positively and negatively skewed
    /// groups, unshaped then shaped.
    pub pos_unshaped: Vec<f64>,
    pub neg_unshaped: Vec<f64>,
    pub pos_shaped: Vec<f64>,
    pub neg_shaped: Vec<f64>,
    pub pos_unshaped_shift: f64,
    pub neg_unshaped_shift: f64,
    pub max_shaped_shift: f64,
}

/// Mean-conductance trajectory of one device group under one config.
fn demo_group(
    opts: &DriftDemoOptions,
    stream: &[f64],
    cfg: &PulseConfig,
    w0: f64,
    group_seed: u64,
    checkpoints: &[usize],
) -> Result<Vec<f64>> {
    let devices: Vec<DeviceParams> = (0..opts.devices_per_group)
        .map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(group_seed ^ (d as u64 + 1) * 0x9E37);
            opts.device
                .sample_variation_scaled(&mut rng, opts.variation_scale)
        })
        .collect();
    let trajectories: Result<Vec<Vec<f64>>> = devices
        .into_par_iter()
        .map(|params| {
            let mut state = MemristorState::new(params, w0)?;
            let mut gs = Vec::with_capacity(checkpoints.len());
            let mut next = 0;
            for t in 0..=opts.ops {
                if next < checkpoints.len() && checkpoints[next] == t {
                    gs.push(state.conductance());
                    next += 1;
                }
                if t == opts.ops {
                    break;
                }
                let x = stream[t % stream.len()];
                let pulses = encode_input(&[x], cfg, cfg.inverted_at(t), &state.params)?;
                state.step(pulses[0].amplitude, pulses[0].width)?;
            }
            Ok(gs)
        })
        .collect();
    let trajectories = trajectories?;
    Ok((0..checkpoints.len())
        .map(|k| mean(&trajectories.iter().map(|t| t[k]).collect::<Vec<_>>()))
        .collect())
}

/// Two groups of identical-conductance devices, one driven by a positively
/// skewed pulse stream and one by its mirror. Unshaped reads walk the two
/// group means apart; the shaped configs hold both in a band.
pub fn cmd_drift_demo(out_csv: &Path, rc: &RunConfig) -> Result<DriftDemoSummary> {
    let opts = &rc.drift_demo;
    opts.device.validate()?;
    if !(0.0..=1.0).contains(&opts.skew) {
        return Err(Error::InvalidConfig(format!("skew {}", opts.skew)));
    }
    if opts.devices_per_group == 0 || opts.ops == 0 || opts.checkpoint_every == 0 {
        return Err(Error::InvalidConfig(
            "drift demo needs devices, ops, and a checkpoint interval".into(),
        ));
    }
    let r = 1.0 / opts.initial_g_s;
    let w0 = (r - opts.device.r_on) / (opts.device.r_off - opts.device.r_on);
    if !(0.0..=1.0).contains(&w0) {
        return Err(Error::InvalidConfig(format!(
            "initial conductance {} S is outside the device's range",
            opts.initial_g_s
        )));
    }

    // pre-generated random pulse signs, one stream per group
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
    let pos_stream: Vec<f64> = (0..opts.ops)
        .map(|_| if rng.gen::<f64>() < opts.skew { 1.0 } else { -1.0 })
        .collect();
    let neg_stream: Vec<f64> = pos_stream.iter().map(|x| -x).collect();

    // shaped arm: run the full preprocessing flow per group
    let mut aidx_opts = rc.aidx.clone();
    aidx_opts.seed = rc.seed;
    aidx_opts.base_amplitude_v = opts.base_amplitude_v;
    aidx_opts.base_width_s = opts.base_width_s;
    let shaped_cfg = |stream: &Vec<f64>| -> Result<PulseConfig> {
        let workload = DriftWorkload::SingleDevice {
            device: opts.device.clone(),
            w0,
            inputs: stream.clone(),
            variation_scale: opts.variation_scale,
        };
        let (cfgs, _) = aidx_preprocess(&workload, &aidx_opts)?;
        Ok(cfgs.into_iter().next().expect("one layer"))
    };
    let pos_cfg = shaped_cfg(&pos_stream)?;
    let neg_cfg = shaped_cfg(&neg_stream)?;
    let identity = PulseConfig::identity(1, opts.base_amplitude_v, opts.base_width_s);

    let mut checkpoints: Vec<usize> = (0..=opts.ops).step_by(opts.checkpoint_every).collect();
    if *checkpoints.last().unwrap() != opts.ops {
        checkpoints.push(opts.ops);
    }

    let pos_unshaped = demo_group(opts, &pos_stream, &identity, w0, rc.seed ^ 1, &checkpoints)?;
    let neg_unshaped = demo_group(opts, &neg_stream, &identity, w0, rc.seed ^ 2, &checkpoints)?;
    let pos_shaped = demo_group(opts, &pos_stream, &pos_cfg, w0, rc.seed ^ 1, &checkpoints)?;
    let neg_shaped = demo_group(opts, &neg_stream, &neg_cfg, w0, rc.seed ^ 2, &checkpoints)?;

    let g0 = 1.0 / (opts.device.r_off * w0 + opts.device.r_on * (1.0 - w0));
    let shift = |series: &[f64]| series.last().unwrap() - g0;
    let summary = DriftDemoSummary {
        op_counts: checkpoints.clone(),
        pos_unshaped_shift: shift(&pos_unshaped),
        neg_unshaped_shift: shift(&neg_unshaped),
        max_shaped_shift: shift(&pos_shaped).abs().max(shift(&neg_shaped).abs()),
        pos_unshaped: pos_unshaped.clone(),
        neg_unshaped: neg_unshaped.clone(),
        pos_shaped: pos_shaped.clone(),
        neg_shaped: neg_shaped.clone(),
    };

    let rows = checkpoints.iter().enumerate().map(|(k, &op)| {
        vec![
            op.to_string(),
            fmt_f64(pos_unshaped[k]),
            fmt_f64(neg_unshaped[k]),
            fmt_f64(pos_shaped[k]),
            fmt_f64(neg_shaped[k]),
        ]
    });
    write_csv(
        out_csv,
        rc.seed,
        &[
            format!(
                "devices_per_group={} ops={} skew={} initial_g_s={}",
                opts.devices_per_group,
                opts.ops,
                fmt_f64(opts.skew),
                fmt_f64(opts.initial_g_s)
            ),
            format!(
                "shaped configs: pos A={} D={} a={}, neg A={} D={} a={}",
                fmt_f64(pos_cfg.amplitude_ratio[0]),
                fmt_f64(pos_cfg.width_ratio[0]),
                fmt_f64(pos_cfg.inversion_fraction),
                fmt_f64(neg_cfg.amplitude_ratio[0]),
                fmt_f64(neg_cfg.width_ratio[0]),
                fmt_f64(neg_cfg.inversion_fraction)
            ),
        ],
        &[
            "op_count",
            "pos_unshaped_g_s",
            "neg_unshaped_g_s",
            "pos_shaped_g_s",
            "neg_shaped_g_s",
        ],
        rows,
    )?;
    Ok(summary)
}
