//! Mapping small neural networks onto crossbars and running long inference
//! workloads on them.
//!
//! The software [`Network`] is the float oracle; [`map_network`] programs one
//! crossbar per layer (bias folded in as an always-on row). Inference drives
//! each crossbar with shaped read pulses, so every operation both computes
//! and slowly disturbs the stored weights. [`run_trajectory`] replays an
//! input stream for a budget of operations and checkpoints a task metric on
//! held-out data along the way; checkpoints use drift-free peeks so that
//! measuring never perturbs what is measured.
//!
//! ## Recovering logical outputs
//!
//! A column current mixes every row's pulse, so per-row shaping is not
//! invertible in general. Outputs are decoded exactly when the effective
//! drive (after sample inversion) is sign-uniform and the amplitude ratios
//! are uniform: all-nonnegative drives divide out `base * A`, all-nonpositive
//! drives divide out `base`. Mixed-sign or non-uniform-amplitude drives are
//! decoded with the base gain and whatever per-row scaling remains is kept,
//! faithful to what the hardware would deliver. Layer inputs here are
//! nonnegative (pixels, sigmoid/relu activations), so shaped inference stays
//! exact. Drives larger than unit range are rescaled digitally before
//! encoding and undone after decoding.

pub mod data;
pub mod train;

pub use data::{
    antipodal_blobs8x8, blobs8x8, digits8x8, load_dataset_csv, write_dataset_csv, Dataset,
};

use crate::crossbar::{program_weights, ArrayConfig, Crossbar, DifferentialWeightMap, VmmResult};
use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::io;
use crate::signal::{encode_input, PulseConfig, RowPulse};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Element-wise nonlinearity applied after a layer's VMM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Identity => v,
        }
    }
}

/// What the workload's metric means: classification reports accuracy (higher
/// is better), reconstruction reports mean squared error (lower is better).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Reconstruction,
}

/// Geometry of a convolution realized as a dense crossbar layer: the kernel
/// tensor is flattened to a (k_h * k_w * in_ch) x out_ch weight matrix and
/// driven once per output position with the matching image patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_h: usize,
    pub in_w: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_h, self.in_w, self.in_ch, self.out_ch, self.k_h, self.k_w,
        ];
        if dims.contains(&0) || self.k_h > self.in_h || self.k_w > self.in_w {
            return Err(Error::InvalidInput(format!(
                "bad convolution geometry {self:?}"
            )));
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        self.in_h - self.k_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.in_w - self.k_w + 1
    }

    pub fn n_patches(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_ch
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.in_ch
    }

    pub fn output_len(&self) -> usize {
        self.n_patches() * self.out_ch
    }
}

/// How a layer's weight matrix is interpreted when driving it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    #[default]
    Dense,
    ConvAsDense {
        conv: ConvSpec,
    },
}

/// One software layer: weights are n_in x n_out, bias has n_out entries.
/// For `ConvAsDense`, n_in is the flattened patch length and n_out the
/// number of output channels.
#[derive(Debug, Clone)]
pub struct Layer {
    pub kind: LayerKind,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn dense(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Self {
        Layer {
            kind: LayerKind::Dense,
            weights,
            bias,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.nrows() == 0 || self.weights.ncols() == 0 {
            return Err(Error::InvalidInput("empty layer weights".into()));
        }
        if self.bias.len() != self.weights.ncols() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} bias entries", self.weights.ncols()),
                actual: self.bias.len().to_string(),
            });
        }
        if let LayerKind::ConvAsDense { conv } = self.kind {
            conv.validate()?;
            if self.weights.nrows() != conv.patch_len() || self.weights.ncols() != conv.out_ch {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} x {} kernel matrix", conv.patch_len(), conv.out_ch),
                    actual: format!("{} x {}", self.weights.nrows(), self.weights.ncols()),
                });
            }
        }
        Ok(())
    }

    /// Logical input length (the image size for convolution layers).
    pub fn n_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.weights.nrows(),
            LayerKind::ConvAsDense { conv } => conv.input_len(),
        }
    }

    /// Logical output length (all output positions for convolution layers).
    pub fn n_out(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.weights.ncols(),
            LayerKind::ConvAsDense { conv } => conv.output_len(),
        }
    }

    /// Float-arithmetic forward pass, the oracle the mapped layer is
    /// checked against.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_in() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} inputs", self.n_in()),
                actual: x.len().to_string(),
            });
        }
        let drives = self.sub_inputs(x);
        let mut out = Vec::with_capacity(self.n_out());
        for drive in &drives {
            for j in 0..self.weights.ncols() {
                let pre: f64 = drive
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * self.weights[[i, j]])
                    .sum::<f64>()
                    + self.bias[j];
                out.push(self.activation.apply(pre));
            }
        }
        Ok(out)
    }

    /// The vectors actually driven at the crossbar rows: the input itself
    /// for a dense layer, one flattened patch per output position for a
    /// convolution.
    fn sub_inputs(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match self.kind {
            LayerKind::Dense => vec![x.to_vec()],
            LayerKind::ConvAsDense { conv } => im2col(x, &conv),
        }
    }
}

/// Flatten every kernel-sized patch of a channel-last image into a row.
/// Index layout: image[(y * in_w + x) * in_ch + c], patch[(ky * k_w + kx) *
/// in_ch + c], patches ordered row-major over output positions.
pub fn im2col(image: &[f64], conv: &ConvSpec) -> Vec<Vec<f64>> {
    let mut patches = Vec::with_capacity(conv.n_patches());
    for oy in 0..conv.out_h() {
        for ox in 0..conv.out_w() {
            let mut patch = Vec::with_capacity(conv.patch_len());
            for ky in 0..conv.k_h {
                for kx in 0..conv.k_w {
                    let (y, x) = (oy + ky, ox + kx);
                    for c in 0..conv.in_ch {
                        patch.push(image[(y * conv.in_w + x) * conv.in_ch + c]);
                    }
                }
            }
            patches.push(patch);
        }
    }
    patches
}

/// A whole software network.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        for layer in &layers {
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} inputs to next layer", pair[0].n_out()),
                    actual: pair[1].n_in().to_string(),
                });
            }
        }
        Ok(Network { layers })
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }
}

/// One crossbar-backed layer.
#[derive(Debug, Clone)]
pub struct LayerMapping {
    pub kind: LayerKind,
    pub activation: Activation,
    pub crossbar: Crossbar,
}

/// A network programmed onto hardware, one crossbar per layer.
#[derive(Debug, Clone)]
pub struct MappedNetwork {
    pub layers: Vec<LayerMapping>,
}

fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Program every layer of `net` onto its own crossbar. Each layer gets a
/// distinct per-cell variation seed derived from `seed`, so the whole
/// mapping reproduces bit-for-bit.
pub fn map_network(
    net: &Network,
    device: &DeviceParams,
    array: &ArrayConfig,
    seed: u64,
) -> Result<MappedNetwork> {
    let mut layers = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        layer.validate()?;
        let map = DifferentialWeightMap::new(layer.weights.clone(), Some(layer.bias.clone()))?;
        let crossbar = program_weights(&map, device, array, layer_seed(seed, l))?;
        layers.push(LayerMapping {
            kind: layer.kind,
            activation: layer.activation,
            crossbar,
        });
    }
    Ok(MappedNetwork { layers })
}

/// Per-layer facts needed to encode a drive without holding a borrow of the
/// crossbar, so the read closure can borrow it mutably.
struct LayerIo {
    rows: usize,
    has_bias: bool,
    device: DeviceParams,
}

impl LayerIo {
    fn of(xbar: &Crossbar) -> Self {
        LayerIo {
            rows: xbar.rows(),
            has_bias: xbar.has_bias_row(),
            device: xbar.nominal_device().clone(),
        }
    }
}

/// Encode one drive vector (bias row appended, rescaled into unit range)
/// and return the pulses together with the factor that converts decoded
/// readings back to logical outputs.
fn encode_drive(
    io_meta: &LayerIo,
    cfg: &PulseConfig,
    logical: &[f64],
    t: usize,
) -> Result<(Vec<RowPulse>, f64)> {
    let mut driven = logical.to_vec();
    if io_meta.has_bias {
        driven.push(1.0);
    }
    if driven.len() != io_meta.rows {
        return Err(Error::ShapeMismatch {
            expected: format!("{} driven rows", io_meta.rows),
            actual: driven.len().to_string(),
        });
    }
    // Digital pre-scaling keeps activations above unit range encodable.
    let scale = driven.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for v in &mut driven {
        *v /= scale;
    }
    let invert = cfg.inverted_at(t);
    let pulses = encode_input(&driven, cfg, invert, &io_meta.device)?;

    // Amplitude shaping divides out only when it acted uniformly: the
    // effective drive all-nonnegative under one common ratio. Inverted
    // nonnegative drives become nonpositive and take the base amplitude.
    // Anything else keeps its per-row scaling, as the hardware would.
    let eff_nonneg = driven
        .iter()
        .all(|v| (if invert { -*v } else { *v }) >= 0.0);
    let a0 = cfg.amplitude_ratio[0];
    let a_uniform = cfg.amplitude_ratio.iter().all(|a| *a == a0);
    let amp_gain = if eff_nonneg && a_uniform { a0 } else { 1.0 };
    let sign = if invert { -1.0 } else { 1.0 };
    let to_logical = sign * scale / (cfg.base_amplitude_v * amp_gain);
    Ok((pulses, to_logical))
}

/// Drive one mapped layer and return its activated logical outputs. `vmm`
/// is the read primitive (drifting or peek).
fn run_layer(
    io_meta: &LayerIo,
    kind: LayerKind,
    activation: Activation,
    x: &[f64],
    cfg: &PulseConfig,
    t: usize,
    vmm: &mut dyn FnMut(&[RowPulse]) -> Result<VmmResult>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let expected_in = match kind {
        LayerKind::Dense => io_meta.rows - usize::from(io_meta.has_bias),
        LayerKind::ConvAsDense { conv } => conv.input_len(),
    };
    if x.len() != expected_in {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected_in} layer inputs"),
            actual: x.len().to_string(),
        });
    }
    let drives = match kind {
        LayerKind::Dense => vec![x.to_vec()],
        LayerKind::ConvAsDense { conv } => im2col(x, &conv),
    };
    let mut out = Vec::new();
    for drive in &drives {
        let (pulses, to_logical) = encode_drive(io_meta, cfg, drive, t)?;
        let res = vmm(&pulses)?;
        out.extend(res.decoded.iter().map(|d| activation.apply(d * to_logical)));
    }
    Ok(out)
}

impl MappedNetwork {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_inputs(&self) -> usize {
        let first = &self.layers[0];
        match first.kind {
            LayerKind::Dense => first.crossbar.n_inputs(),
            LayerKind::ConvAsDense { conv } => conv.input_len(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        let last = &self.layers[self.layers.len() - 1];
        match last.kind {
            LayerKind::Dense => last.crossbar.n_outputs(),
            LayerKind::ConvAsDense { conv } => conv.output_len(),
        }
    }

    /// Unit-ratio, no-inversion configurations matching every layer's row
    /// count, used for drift-free evaluation reads.
    pub fn identity_configs(&self, base_amplitude_v: f64, base_width_s: f64) -> Vec<PulseConfig> {
        self.layers
            .iter()
            .map(|l| PulseConfig::identity(l.crossbar.rows(), base_amplitude_v, base_width_s))
            .collect()
    }

    /// Validate that `cfgs` matches this network's layer count.
    pub fn check_configs(&self, cfgs: &[PulseConfig]) -> Result<()> {
        if cfgs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pulse configs", self.layers.len()),
                actual: cfgs.len().to_string(),
            });
        }
        Ok(())
    }

    /// One inference operation. Every read pulse stresses the cells it
    /// crosses, so repeated calls drift the stored weights. `t` is the
    /// replay position used to cycle each layer's inversion mask.
    pub fn forward(&mut self, x: &[f64], cfgs: &[PulseConfig], t: usize) -> Result<Vec<f64>> {
        self.check_configs(cfgs)?;
        let mut cur = x.to_vec();
        for (layer, cfg) in self.layers.iter_mut().zip(cfgs) {
            let io_meta = LayerIo::of(&layer.crossbar);
            let xbar = &mut layer.crossbar;
            let mut vmm = |p: &[RowPulse]| xbar.vmm_read(p);
            cur = run_layer(&io_meta, layer.kind, layer.activation, &cur, cfg, t, &mut vmm)?;
        }
        Ok(cur)
    }

    /// Same computation without the stress: currents are peeked at pulse
    /// start and no state advances. Used for evaluation checkpoints.
    pub fn forward_frozen(&self, x: &[f64], cfgs: &[PulseConfig], t: usize) -> Result<Vec<f64>> {
        self.check_configs(cfgs)?;
        let mut cur = x.to_vec();
        for (layer, cfg) in self.layers.iter().zip(cfgs) {
            let io_meta = LayerIo::of(&layer.crossbar);
            let xbar = &layer.crossbar;
            let mut vmm = |p: &[RowPulse]| xbar.vmm_peek(p);
            cur = run_layer(&io_meta, layer.kind, layer.activation, &cur, cfg, t, &mut vmm)?;
        }
        Ok(cur)
    }

    /// Frozen forward through the first `end` layers only, returning that
    /// prefix's output (the logical inputs of layer `end`). `end = 0` echoes
    /// the input.
    pub fn forward_frozen_prefix(
        &self,
        x: &[f64],
        cfgs: &[PulseConfig],
        t: usize,
        end: usize,
    ) -> Result<Vec<f64>> {
        self.check_configs(cfgs)?;
        if end > self.layers.len() {
            return Err(Error::InvalidInput(format!(
                "prefix of {end} layers from a {}-layer network",
                self.layers.len()
            )));
        }
        let mut cur = x.to_vec();
        for (layer, cfg) in self.layers.iter().zip(cfgs).take(end) {
            let io_meta = LayerIo::of(&layer.crossbar);
            let xbar = &layer.crossbar;
            let mut vmm = |p: &[RowPulse]| xbar.vmm_peek(p);
            cur = run_layer(&io_meta, layer.kind, layer.activation, &cur, cfg, t, &mut vmm)?;
        }
        Ok(cur)
    }
}

/// Estimate each layer's output error from decoded weight drift alone,
/// without running the drifted network end to end.
///
/// With `dW = W_drifted - W_reference` (and `db` likewise for bias), the
/// first layer's error is `E_j = sum_i x_i dW_ij + db_j`, exact for an
/// identity activation. Deeper layers accumulate the propagated term
/// `sum_i V_i sigma(E_i)` (ideal layer inputs `V` times the activated error
/// of the layer before) on top of their own drift term, which is how
/// early-layer error amplifies with depth. Dense layers only; inputs are
/// assumed within unit range so drives are not rescaled.
pub fn layer_error_estimate(
    current: &MappedNetwork,
    reference: &MappedNetwork,
    input: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if current.n_layers() != reference.n_layers() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} layers", reference.n_layers()),
            actual: current.n_layers().to_string(),
        });
    }
    let mut v = input.to_vec();
    let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(current.n_layers());
    let mut prev_activation = Activation::Identity;

    for (cur, refl) in current.layers.iter().zip(&reference.layers) {
        if cur.kind != LayerKind::Dense || refl.kind != LayerKind::Dense {
            return Err(Error::InvalidInput(
                "layer error estimation supports dense layers only".into(),
            ));
        }
        let (w_cur, b_cur) = cur.crossbar.decode_weights();
        let (w_ref, b_ref) = refl.crossbar.decode_weights();
        if w_cur.dim() != w_ref.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?} weights", w_ref.dim()),
                actual: format!("{:?}", w_cur.dim()),
            });
        }
        if v.len() != w_ref.nrows() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} layer inputs", w_ref.nrows()),
                actual: v.len().to_string(),
            });
        }
        let n_out = w_ref.ncols();

        // Error already present at this layer's inputs, propagated through
        // the previous activation and summed against the ideal drive.
        let carried: f64 = match estimates.last() {
            None => 0.0,
            Some(prev_e) => v
                .iter()
                .zip(prev_e)
                .map(|(vi, ei)| vi * prev_activation.apply(*ei))
                .sum(),
        };

        let mut e = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let drift: f64 = v
                .iter()
                .enumerate()
                .map(|(i, vi)| vi * (w_cur[[i, j]] - w_ref[[i, j]]))
                .sum();
            let db = match (&b_cur, &b_ref) {
                (Some(bc), Some(br)) => bc[j] - br[j],
                _ => 0.0,
            };
            e.push(carried + drift + db);
        }

        // Ideal next-layer drive from the reference weights, computed
        // digitally.
        let next: Vec<f64> = (0..n_out)
            .map(|j| {
                let pre: f64 = v
                    .iter()
                    .enumerate()
                    .map(|(i, vi)| vi * w_ref[[i, j]])
                    .sum::<f64>()
                    + b_ref.as_ref().map_or(0.0, |b| b[j]);
                cur.activation.apply(pre)
            })
            .collect();
        v = next;
        prev_activation = cur.activation;
        estimates.push(e);
    }
    Ok(estimates)
}

/// When a trajectory counts as dead.
///
/// `FractionOfInitial(f)`: a classification run dies when accuracy falls
/// below `f` times its initial value; a reconstruction run dies when its
/// error grows past `initial / f`. `Absolute(a)` compares the metric to `a`
/// directly (below for accuracy, above for error).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeRule {
    FractionOfInitial(f64),
    Absolute(f64),
}

impl Default for LifetimeRule {
    fn default() -> Self {
        LifetimeRule::FractionOfInitial(0.7)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryOptions {
    /// Total inference operations to replay.
    pub total_ops: usize,
    /// Metric checkpoint spacing, in operations.
    pub checkpoint_every: usize,
    pub lifetime: LifetimeRule,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            total_ops: 10_000,
            checkpoint_every: 500,
            lifetime: LifetimeRule::default(),
        }
    }
}

/// Metric series along one replay run. `series[i]` is the metric after
/// `op_counts[i]` operations; index 0 is the pre-drift baseline.
/// `lifetime_ops` is the first checkpoint at which the lifetime rule fired,
/// `None` if the run outlived its budget (censored).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub task: TaskKind,
    pub op_counts: Vec<usize>,
    pub series: Vec<f64>,
    pub initial_metric: f64,
    pub final_metric: f64,
    pub lifetime_ops: Option<usize>,
}

impl TrajectoryMetrics {
    /// One row per checkpoint: op_count, metric, seed.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P, seed: u64) -> Result<()> {
        io::write_csv(
            path,
            seed,
            &[],
            &["op_count", "metric", "seed"],
            self.op_counts.iter().zip(&self.series).map(|(op, m)| {
                vec![op.to_string(), io::fmt_f64(*m), seed.to_string()]
            }),
        )
    }
}

/// Task metric on held-out data, measured without disturbing the array.
pub fn eval_metric(
    net: &MappedNetwork,
    eval: &Dataset,
    task: TaskKind,
    cfgs: &[PulseConfig],
) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    match task {
        TaskKind::Classification => {
            let labels = eval.labels.as_ref().ok_or_else(|| {
                Error::InvalidInput("classification metric needs labels".into())
            })?;
            let mut hits = 0usize;
            for (i, row) in eval.inputs.rows().into_iter().enumerate() {
                let out = net.forward_frozen(row.as_slice().expect("contiguous"), cfgs, 0)?;
                let pred = out
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(j, _)| j)
                    .expect("non-empty outputs");
                hits += usize::from(pred == labels[i]);
            }
            Ok(hits as f64 / eval.len() as f64)
        }
        TaskKind::Reconstruction => {
            let mut sum = 0.0;
            let mut count = 0usize;
            for (i, row) in eval.inputs.rows().into_iter().enumerate() {
                let out = net.forward_frozen(row.as_slice().expect("contiguous"), cfgs, 0)?;
                for (j, o) in out.iter().enumerate() {
                    let d = o - eval.targets[[i, j]];
                    sum += d * d;
                    count += 1;
                }
            }
            Ok(sum / count as f64)
        }
    }
}

fn lifetime_fired(task: TaskKind, rule: LifetimeRule, initial: f64, metric: f64) -> bool {
    match (task, rule) {
        (TaskKind::Classification, LifetimeRule::FractionOfInitial(f)) => metric < f * initial,
        (TaskKind::Classification, LifetimeRule::Absolute(a)) => metric < a,
        (TaskKind::Reconstruction, LifetimeRule::FractionOfInitial(f)) => metric > initial / f,
        (TaskKind::Reconstruction, LifetimeRule::Absolute(a)) => metric > a,
    }
}

/// Replay `replay` rows through the drifting network for
/// `opts.total_ops` operations, checkpointing the metric on `eval` every
/// `opts.checkpoint_every` ops (plus op 0 and the final op). Checkpoints
/// read with unit-ratio configurations at the same pulse bases as `cfgs`
/// and never advance device state, so a run's endpoint is independent of
/// how often it was measured.
pub fn run_trajectory(
    net: &mut MappedNetwork,
    replay: &Array2<f64>,
    eval: &Dataset,
    task: TaskKind,
    cfgs: &[PulseConfig],
    opts: &TrajectoryOptions,
) -> Result<TrajectoryMetrics> {
    net.check_configs(cfgs)?;
    if replay.nrows() == 0 {
        return Err(Error::InvalidInput("empty replay stream".into()));
    }
    if replay.ncols() != net.n_inputs() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} replay columns", net.n_inputs()),
            actual: replay.ncols().to_string(),
        });
    }
    if opts.checkpoint_every == 0 || opts.total_ops < opts.checkpoint_every {
        return Err(Error::InvalidInput(format!(
            "total_ops {} must cover at least one checkpoint interval {}",
            opts.total_ops, opts.checkpoint_every
        )));
    }

    let eval_cfgs: Vec<PulseConfig> = cfgs
        .iter()
        .map(|c| PulseConfig::identity(c.rows(), c.base_amplitude_v, c.base_width_s))
        .collect();

    let initial = eval_metric(net, eval, task, &eval_cfgs)?;
    let mut op_counts = vec![0usize];
    let mut series = vec![initial];
    let mut lifetime_ops = None;

    for t in 0..opts.total_ops {
        let row = replay.row(t % replay.nrows());
        net.forward(row.as_slice().expect("contiguous"), cfgs, t)?;
        let done = t + 1;
        if done % opts.checkpoint_every == 0 || done == opts.total_ops {
            let m = eval_metric(net, eval, task, &eval_cfgs)?;
            op_counts.push(done);
            series.push(m);
            if lifetime_ops.is_none() && lifetime_fired(task, opts.lifetime, initial, m) {
                lifetime_ops = Some(done);
            }
        }
    }

    let final_metric = *series.last().expect("at least the baseline");
    Ok(TrajectoryMetrics {
        task,
        op_counts,
        series,
        initial_metric: initial,
        final_metric,
        lifetime_ops,
    })
}

/// Write one layer's weights as CSV: one column per output, n_in weight
/// rows followed by a final bias row.
pub fn write_layer_csv<P: AsRef<Path>>(
    path: P,
    seed: u64,
    weights: &Array2<f64>,
    bias: &Array1<f64>,
) -> Result<()> {
    let header: Vec<String> = (0..weights.ncols()).map(|j| format!("col_{j}")).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = weights
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| io::fmt_f64(*v)).collect::<Vec<_>>())
        .chain(std::iter::once(
            bias.iter().map(|v| io::fmt_f64(*v)).collect(),
        ));
    io::write_csv(path, seed, &[], &header_refs, rows)
}

/// Read a layer written by [`write_layer_csv`]; the last row is the bias.
pub fn read_layer_csv<P: AsRef<Path>>(path: P) -> Result<(Array2<f64>, Array1<f64>)> {
    let path = path.as_ref();
    let (header, rows) = io::read_numeric_csv(path)?;
    if rows.len() < 2 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: "need at least one weight row and one bias row".into(),
        });
    }
    let n_out = header.len();
    let n_in = rows.len() - 1;
    let mut weights = Array2::zeros((n_in, n_out));
    for (i, row) in rows[..n_in].iter().enumerate() {
        for j in 0..n_out {
            weights[[i, j]] = row[j];
        }
    }
    let bias = Array1::from_vec(rows[n_in].clone());
    Ok((weights, bias))
}

/// Where a workload's dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    Blobs { n_per_class: usize, seed: u64 },
    Digits { n_samples: usize, seed: u64 },
    Csv { path: String, n_inputs: usize },
}

impl DataSpec {
    /// Materialize the dataset; relative CSV paths resolve against
    /// `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<Dataset> {
        match self {
            DataSpec::Blobs { n_per_class, seed } => data::blobs8x8(*n_per_class, *seed),
            DataSpec::Digits { n_samples, seed } => data::digits8x8(*n_samples, *seed),
            DataSpec::Csv { path, n_inputs } => {
                let p = PathBuf::from(path);
                let p = if p.is_absolute() { p } else { base_dir.join(p) };
                data::load_dataset_csv(p, *n_inputs)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestLayer {
    /// Weight CSV path, relative to the manifest file.
    pub weights_csv: String,
    pub activation: Activation,
    #[serde(default)]
    pub kind: LayerKind,
}

/// On-disk description of a runnable workload: named layers plus the data
/// they are evaluated on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadManifest {
    pub name: String,
    pub task: TaskKind,
    pub layers: Vec<ManifestLayer>,
    pub data: DataSpec,
}

/// A manifest pulled into memory: the software network plus its dataset.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub task: TaskKind,
    pub network: Network,
    pub data: Dataset,
}

pub fn load_workload<P: AsRef<Path>>(manifest_path: P) -> Result<Workload> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: WorkloadManifest = serde_json::from_str(&text)?;
    let base_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for ml in &manifest.layers {
        let p = PathBuf::from(&ml.weights_csv);
        let p = if p.is_absolute() { p } else { base_dir.join(p) };
        let (weights, bias) = read_layer_csv(&p)?;
        layers.push(Layer {
            kind: ml.kind,
            weights,
            bias,
            activation: ml.activation,
        });
    }
    let network = Network::new(layers)?;
    let data = manifest.data.load(base_dir)?;
    if data.n_inputs() != network.n_inputs() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} dataset features", network.n_inputs()),
            actual: data.n_inputs().to_string(),
        });
    }
    Ok(Workload {
        name: manifest.name,
        task: manifest.task,
        network,
        data,
    })
}

/// Write a network and its data spec under `dir` as `<name>.json` plus one
/// weight CSV per layer. Returns the manifest path.
pub fn save_workload(
    dir: &Path,
    name: &str,
    net: &Network,
    task: TaskKind,
    data: &DataSpec,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let csv_name = format!("{name}_layer{l}.csv");
        write_layer_csv(dir.join(&csv_name), seed, &layer.weights, &layer.bias)?;
        layers.push(ManifestLayer {
            weights_csv: csv_name,
            activation: layer.activation,
            kind: layer.kind,
        });
    }
    let manifest = WorkloadManifest {
        name: name.to_string(),
        task,
        layers,
        data: data.clone(),
    };
    let path = dir.join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text)?;
    Ok(path)
}
