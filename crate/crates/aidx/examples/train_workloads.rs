//! Regenerate the bundled workloads from scratch: synthesize the datasets,
//! train the reference networks, and write the manifests under `workloads/`.
//! Everything is seeded, so rerunning reproduces the committed files byte
//! for byte. Run from the repository root.
//!
//! Features are signed and zero-centered: signed row drives exercise both
//! sub-threshold branches of the device, which is the regime the
//! pulse-shaping pipeline targets. The classification set is antipodal
//! (class 1 is the negation of class 0), so every input line sees a
//! sign-symmetric stream and one shared ratio can balance the whole layer.
//! The input layers train bias-free: a zero bias maps to a matched
//! differential pair whose drift cancels exactly in the decode, so the
//! constant-drive bias line never conflicts with the signed pixel rows.

use aidx::network::train::{accuracy, init_network, sgd_train, TrainOptions};
use aidx::network::{
    antipodal_blobs8x8, digits8x8, save_workload, write_dataset_csv, Activation, DataSpec,
    Dataset, TaskKind,
};
use std::path::Path;

fn centered(data: &Dataset, center_targets: bool) -> Dataset {
    let inputs = data.inputs.mapv(|v| v - 0.5);
    let targets = if center_targets {
        data.targets.mapv(|v| v - 0.5)
    } else {
        data.targets.clone()
    };
    Dataset::new(inputs, targets, data.labels.clone()).expect("same shapes")
}

/// Shrink input and target contrast together. The sub-threshold drift rate
/// falls off as a high power of the drive, so low-contrast pixel lines barely
/// disturb the first layer and the stress concentrates on the hidden layers.
fn contrast(data: &Dataset, s: f64) -> Dataset {
    let inputs = data.inputs.mapv(|v| v * s);
    let targets = data.targets.mapv(|v| v * s);
    Dataset::new(inputs, targets, data.labels.clone()).expect("same shapes")
}

fn main() -> aidx::error::Result<()> {
    let dir = Path::new("workloads");
    std::fs::create_dir_all(dir)?;

    // Two antipodal signed bump composites, one-hot targets.
    let blobs = antipodal_blobs8x8(40, 7)?;
    write_dataset_csv(dir.join("blobs_antipodal.csv"), 7, &blobs)?;
    let mut mlp = init_network(
        &[64, 16, 2],
        &[Activation::Sigmoid, Activation::Identity],
        7,
    )?;
    let opts = TrainOptions {
        epochs: 400,
        learning_rate: 0.2,
        seed: 7,
        frozen_biases: vec![0],
    };
    let loss = sgd_train(&mut mlp, &blobs, &opts)?;
    let acc = accuracy(&mlp, &blobs)?;
    println!("mlp_blobs: train MSE {loss:.4}, accuracy {acc:.3}");
    save_workload(
        dir,
        "mlp_blobs",
        &mlp,
        TaskKind::Classification,
        &DataSpec::Csv {
            path: "blobs_antipodal.csv".into(),
            n_inputs: 64,
        },
        7,
    )?;

    // Digit glyphs reconstructed through a 16-unit bottleneck; inputs and
    // targets are the same centered, contrast-reduced image.
    let digits = contrast(&centered(&digits8x8(60, 11)?, true), 0.3);
    write_dataset_csv(dir.join("digits_centered.csv"), 11, &digits)?;
    let mut auto = init_network(
        &[64, 16, 64],
        &[Activation::Sigmoid, Activation::Identity],
        11,
    )?;
    // Both layers train bias-free. Zero-bias rows program as identical pair
    // cells whose drift stays common mode, while a trained bias row carries a
    // full-scale constant drive and is the first thing long runs wash out.
    let opts = TrainOptions {
        epochs: 600,
        learning_rate: 0.3,
        seed: 11,
        frozen_biases: vec![0, 1],
    };
    let loss = sgd_train(&mut auto, &digits, &opts)?;
    println!("autoencoder_digits: train MSE {loss:.4}");
    save_workload(
        dir,
        "autoencoder_digits",
        &auto,
        TaskKind::Reconstruction,
        &DataSpec::Csv {
            path: "digits_centered.csv".into(),
            n_inputs: 64,
        },
        11,
    )?;

    Ok(())
}
