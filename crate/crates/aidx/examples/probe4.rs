use aidx::crossbar::ArrayConfig;
use aidx::device::DeviceParams;
use aidx::network::{eval_metric, load_workload, map_network, Dataset};
use ndarray::Array2;
use std::path::Path;

fn main() -> aidx::error::Result<()> {
    let mut p = DeviceParams::tiox();
    p.k_s_off = 1512.0;
    p.k_s_on = -4536.0;
    let array = ArrayConfig {
        g_min: 1e-5,
        g_max: 2e-5,
        line_resistance: 0.0,
        variation_scale: 0.02,
    };
    let wl = load_workload(Path::new("workloads/autoencoder_digits.json"))?;
    let mut targets = Array2::zeros((wl.data.inputs.nrows(), wl.network.n_outputs()));
    for (s, row) in wl.data.inputs.rows().into_iter().enumerate() {
        let y = wl.network.forward(row.as_slice().expect("contiguous"))?;
        targets.row_mut(s).assign(&ndarray::Array1::from_vec(y));
    }
    let eval = Dataset::new(wl.data.inputs.clone(), targets, None)?;

    let mut net = map_network(&wl.network, &p, &array, 0)?;
    let fresh = net.clone();
    let cfgs = net.identity_configs(0.2, 1e-3);

    // activation magnitudes feeding each layer at op 0
    let x0 = wl.data.inputs.row(0).to_vec();
    let mut cur = x0.clone();
    for (l, layer) in fresh.layers.iter().enumerate() {
        let mx = cur.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mean: f64 = cur.iter().map(|v| v.abs()).sum::<f64>() / cur.len() as f64;
        println!("layer {l}: drive |x| mean {:.4} max {:.4}, rows {}", mean, mx, layer.crossbar.rows());
        cur = layer.crossbar.vmm_peek(
            &aidx::signal::encode_input(
                &{
                    let mut d = cur.clone();
                    d.push(1.0);
                    d
                },
                &cfgs[l],
                false,
                &p,
            )?,
        )?
        .decoded
        .iter()
        .map(|d| layer.activation.apply(d * 1.0 / 0.2))
        .collect();
    }

    for t in 0..10000usize {
        let row = wl.data.inputs.row(t % wl.data.inputs.nrows());
        net.forward(row.as_slice().expect("contiguous"), &cfgs, t)?;
    }
    for (l, (now, was)) in net.layers.iter().zip(&fresh.layers).enumerate() {
        let a = now.crossbar.conductance_matrix();
        let b = was.crossbar.conductance_matrix();
        let dg = (&a - &b).mapv(f64::abs);
        let mean_dg = dg.mean().unwrap();
        let max_dg = dg.iter().fold(0.0f64, |m, v| m.max(*v));
        // carry-cell w states before/after
        let rows = was.crossbar.rows();
        let cols = was.crossbar.cols();
        let mut w0s = Vec::new();
        let mut w1s = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                w0s.push(was.crossbar.cell(i, j).w);
                w1s.push(now.crossbar.cell(i, j).w);
            }
        }
        let mw0: f64 = w0s.iter().sum::<f64>() / w0s.len() as f64;
        let mw1: f64 = w1s.iter().sum::<f64>() / w1s.len() as f64;
        println!(
            "layer {l}: mean|dG| {:.3e} max|dG| {:.3e} (range 1e-5), mean w {:.4} -> {:.4}",
            mean_dg, max_dg, mw0, mw1
        );
    }
    let e = eval_metric(&net, &eval, aidx::network::TaskKind::Reconstruction, &cfgs)?;
    let e0 = eval_metric(&fresh, &eval, aidx::network::TaskKind::Reconstruction, &cfgs)?;
    println!("E0 {:.5} E_k {:.5}", e0, e);
    Ok(())
}
