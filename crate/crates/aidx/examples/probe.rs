use aidx::cli::{cmd_benchmark, cmd_optimize, Mode, RunConfig};
use aidx::crossbar::ArrayConfig;
use aidx::device::DeviceParams;
use std::path::Path;
use std::time::Instant;

fn main() -> aidx::error::Result<()> {
    let mut p = DeviceParams::tiox();
    p.k_s_off = 1512.0;
    p.k_s_on = -4536.0;
    std::fs::create_dir_all("target/probe")?;
    let dev_path = Path::new("target/probe/stress.json");
    std::fs::write(dev_path, serde_json::to_string_pretty(&p).unwrap())?;

    let mut rc = RunConfig::default();
    rc.seed = 0;
    rc.device = p.clone();
    rc.array = ArrayConfig {
        g_min: 1e-5,
        g_max: 2e-5,
        line_resistance: 0.0,
        variation_scale: 0.02,
    };
    rc.aidx.horizon_k = 300;
    rc.aidx.trial_seeds = vec![0, 1, 2];
    rc.aidx.scenario_max_iter = 40;
    rc.benchmark.n_seeds = 20;
    rc.benchmark.heatmaps = false;

    let wl = Path::new("workloads/mlp_blobs.json");
    let manifest = Path::new("target/probe/manifest.json");
    let t0 = Instant::now();
    let m = cmd_optimize(wl, Some(dev_path), Mode::AidxA, manifest, &rc)?;
    println!("optimize: {:.1}s", t0.elapsed().as_secs_f64());
    for (l, (cfg, rep)) in m.configs.iter().zip(&m.report.layers).enumerate() {
        println!(
            "  layer {l}: A={:.4} D={:.4} inv {} frac {:.3} selected {:?} E {:.3e} -> {:.3e}",
            cfg.amplitude_ratio[0],
            cfg.width_ratio[0],
            rep.inversion_triggered,
            cfg.inversion_fraction,
            rep.selected,
            rep.identity_e_drift,
            rep.final_e_drift,
        );
    }

    let t1 = Instant::now();
    let s = cmd_benchmark(wl, Some(manifest), Some(dev_path), Path::new("target/probe/bench.csv"), &rc)?;
    println!("benchmark: {:.1}s", t1.elapsed().as_secs_f64());
    let k = s.op_counts.len() - 1;
    println!(
        "acc0 {:.3}, baseline acc_k {:.3}, shaped acc_k {:.3}",
        s.baseline_mean[0], s.baseline_mean[k], s.shaped_mean[k]
    );
    let loss = s.baseline_mean[0] - s.baseline_mean[k];
    let rec = (s.shaped_mean[k] - s.baseline_mean[k]) / loss;
    println!(
        "degradation {:.1}pt, recovery {:.1}%, lifetimes base {:.0} shaped {:.0} ratio {:.2}",
        loss * 100.0,
        rec * 100.0,
        s.baseline_lifetime_mean,
        s.shaped_lifetime_mean,
        s.lifetime_ratio
    );
    Ok(())
}
