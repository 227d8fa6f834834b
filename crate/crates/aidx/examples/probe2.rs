use aidx::cli::{cmd_benchmark, cmd_optimize, Mode, OptimizeManifest, RunConfig};
use aidx::crossbar::ArrayConfig;
use aidx::device::DeviceParams;
use std::path::Path;
use std::time::Instant;

fn ratio_l2(m: &OptimizeManifest) -> f64 {
    m.configs
        .iter()
        .map(|c| {
            c.amplitude_ratio.iter().map(|a| a * a).sum::<f64>()
                + c.width_ratio.iter().map(|d| d * d).sum::<f64>()
        })
        .sum()
}

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

    let t0 = Instant::now();
    let ma_path = Path::new("target/probe/manifest_a.json");
    let ma = cmd_optimize(wl, Some(dev_path), Mode::AidxA, ma_path, &rc)?;
    let sa = cmd_benchmark(
        wl,
        Some(ma_path),
        Some(dev_path),
        Path::new("target/probe/bench_a.csv"),
        &rc,
    )?;

    let mut rcp = rc.clone();
    rcp.aidx.lambda1 = 1e-2;
    rcp.aidx.lambda2 = 1e-2;
    let mp_path = Path::new("target/probe/manifest_p.json");
    let mp = cmd_optimize(wl, Some(dev_path), Mode::AidxP, mp_path, &rcp)?;
    let sp = cmd_benchmark(
        wl,
        Some(mp_path),
        Some(dev_path),
        Path::new("target/probe/bench_p.csv"),
        &rcp,
    )?;
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());

    for (tag, m) in [("A", &ma), ("P", &mp)] {
        for (l, cfg) in m.configs.iter().enumerate() {
            println!(
                "  {tag} layer {l}: A={:.4} D={:.4} inv frac {:.3}",
                cfg.amplitude_ratio[0], cfg.width_ratio[0], cfg.inversion_fraction
            );
        }
    }
    let k = sa.op_counts.len() - 1;
    let loss = sa.baseline_mean[0] - sa.baseline_mean[k];
    let rec_a = (sa.shaped_mean[k] - sa.baseline_mean[k]) / loss;
    let rec_p = (sp.shaped_mean[k] - sp.baseline_mean[k]) / loss;
    let l2_a = ratio_l2(&ma);
    let l2_p = ratio_l2(&mp);
    println!("ratio L2: A {:.3} P {:.3}  (P < A: {})", l2_a, l2_p, l2_p < l2_a);
    println!(
        "recovery: A {:.1}% P {:.1}%  retention {:.2} (>= 0.70: {})",
        rec_a * 100.0,
        rec_p * 100.0,
        rec_p / rec_a,
        rec_p >= 0.7 * rec_a
    );
    Ok(())
}
