//! Plain seeded SGD for the software networks. This exists to produce
//! deterministic desk-scale weights for the workload manifests, not to be a
//! serious training stack; dense layers only.

use super::{Activation, Dataset, Layer, LayerKind, Network};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Layers whose bias stays at its initial value. init_network starts
    /// biases at zero, so freezing a layer here trains it bias-free.
    pub frozen_biases: Vec<usize>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 100,
            learning_rate: 0.5,
            seed: 0,
            frozen_biases: Vec::new(),
        }
    }
}

/// Build a dense network with uniform(-1/sqrt(n_in), 1/sqrt(n_in)) weights
/// and zero bias. `dims` lists layer widths input-first, so `dims.len() - 1`
/// activations are needed.
pub fn init_network(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Network> {
    if dims.len() < 2 || activations.len() != dims.len() - 1 {
        return Err(Error::InvalidInput(format!(
            "{} layer dims need {} activations, got {}",
            dims.len(),
            dims.len().saturating_sub(1),
            activations.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(activations.len());
    for (l, act) in activations.iter().enumerate() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        if n_in == 0 || n_out == 0 {
            return Err(Error::InvalidInput("zero-width layer".into()));
        }
        let r = 1.0 / (n_in as f64).sqrt();
        let weights = Array2::from_shape_fn((n_in, n_out), |_| rng.gen_range(-r..r));
        layers.push(Layer::dense(weights, Array1::zeros(n_out), *act));
    }
    Network::new(layers)
}

fn activation_grad(act: Activation, pre: f64, post: f64) -> f64 {
    match act {
        Activation::Relu => {
            if pre > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Sigmoid => post * (1.0 - post),
        Activation::Identity => 1.0,
    }
}

/// Minimize mean squared error with per-sample SGD. Returns the final
/// epoch's mean loss. Deterministic for a given seed.
pub fn sgd_train(net: &mut Network, data: &Dataset, opts: &TrainOptions) -> Result<f64> {
    if net.layers.iter().any(|l| l.kind != LayerKind::Dense) {
        return Err(Error::InvalidInput("training supports dense layers only".into()));
    }
    if opts.epochs == 0 || !(opts.learning_rate > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bad training options: epochs {}, learning rate {}",
            opts.epochs, opts.learning_rate
        )));
    }
    if data.n_inputs() != net.n_inputs() || data.n_outputs() != net.n_outputs() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} -> {} network", data.n_inputs(), data.n_outputs()),
            actual: format!("{} -> {}", net.n_inputs(), net.n_outputs()),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_layers = net.layers.len();
    let mut epoch_loss = 0.0;

    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        epoch_loss = 0.0;
        for &s in &order {
            let x: Vec<f64> = data.inputs.row(s).to_vec();
            let target = data.targets.row(s);

            // forward, keeping pre- and post-activation values per layer
            let mut posts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
            let mut pres: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
            let mut cur = x.clone();
            for layer in &net.layers {
                let n_out = layer.weights.ncols();
                let mut pre = vec![0.0; n_out];
                for j in 0..n_out {
                    pre[j] = cur
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * layer.weights[[i, j]])
                        .sum::<f64>()
                        + layer.bias[j];
                }
                let post: Vec<f64> = pre.iter().map(|p| layer.activation.apply(*p)).collect();
                pres.push(pre);
                cur = post.clone();
                posts.push(post);
            }

            let out = posts.last().expect("at least one layer");
            epoch_loss += out
                .iter()
                .enumerate()
                .map(|(j, o)| (o - target[j]).powi(2))
                .sum::<f64>()
                / out.len() as f64;

            // backward
            let mut delta: Vec<f64> = out
                .iter()
                .enumerate()
                .map(|(j, o)| {
                    (o - target[j])
                        * activation_grad(
                            net.layers[n_layers - 1].activation,
                            pres[n_layers - 1][j],
                            *o,
                        )
                })
                .collect();
            for l in (0..n_layers).rev() {
                let upstream: Vec<f64> = if l == 0 { x.clone() } else { posts[l - 1].clone() };
                let next_delta: Option<Vec<f64>> = (l > 0).then(|| {
                    let layer = &net.layers[l];
                    (0..layer.weights.nrows())
                        .map(|i| {
                            let back: f64 = delta
                                .iter()
                                .enumerate()
                                .map(|(j, d)| d * layer.weights[[i, j]])
                                .sum();
                            back * activation_grad(
                                net.layers[l - 1].activation,
                                pres[l - 1][i],
                                posts[l - 1][i],
                            )
                        })
                        .collect()
                });
                let layer = &mut net.layers[l];
                let bias_frozen = opts.frozen_biases.contains(&l);
                for (j, d) in delta.iter().enumerate() {
                    for (i, u) in upstream.iter().enumerate() {
                        layer.weights[[i, j]] -= opts.learning_rate * d * u;
                    }
                    if !bias_frozen {
                        layer.bias[j] -= opts.learning_rate * d;
                    }
                }
                if let Some(nd) = next_delta {
                    delta = nd;
                }
            }
        }
        epoch_loss /= data.len() as f64;
    }
    Ok(epoch_loss)
}

/// Fraction of samples whose argmax output matches the label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("accuracy needs labels".into()))?;
    let mut hits = 0usize;
    for (i, row) in data.inputs.rows().into_iter().enumerate() {
        let out = net.forward(row.as_slice().expect("contiguous"))?;
        let pred = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .expect("non-empty output");
        hits += usize::from(pred == labels[i]);
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Mean squared error against the targets, averaged over samples and dims.
pub fn mse(net: &Network, data: &Dataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, row) in data.inputs.rows().into_iter().enumerate() {
        let out = net.forward(row.as_slice().expect("contiguous"))?;
        for (j, o) in out.iter().enumerate() {
            let d = o - data.targets[[i, j]];
            sum += d * d;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
