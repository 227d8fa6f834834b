//! Simulation and mitigation of memristance drift in memristor-crossbar
//! vector-matrix-multiply accelerators.
//!
//! Reading a memristor is not free: even sub-threshold read pulses nudge the
//! device state, and over many inference operations a crossbar's programmed
//! conductances walk away from their targets. This crate models that drift at
//! the device level, simulates its effect on crossbar-mapped neural networks,
//! and optimizes the read-pulse shapes (per-row amplitude/width ratios plus
//! partial input inversion) so that the expected drift cancels instead of
//! accumulating.
//!
//! Modules, bottom up:
//!
//! * [`device`] – single-device state equation (above- and sub-threshold),
//!   explicit-Euler integration, device-to-device variation sampling.
//! * [`crossbar`] – 1T1R arrays, differential weight programming, VMM reads
//!   with drift applied per pulse, line-resistance correction, snapshots.
//! * [`signal`] – pulse encodings of input vectors, input distributions,
//!   partial inversion, expected drift rate of a pulse scheme.
//! * [`optimizer`] – finite-difference gradients, BFGS with Armijo line
//!   search, Nelder–Mead, golden-section; iteration traces.
//! * [`fitting`] – recover sub-threshold parameters from I-V sweeps
//!   (simulated annealing + gradient refinement).
//! * [`network`] – map trained layers onto crossbars, run drifting inference
//!   trajectories, error-propagation diagnostics, toy datasets and training.
//! * [`aidx`] – the drift objective and the preprocessing optimizer that
//!   produces per-layer pulse configurations.
//! * [`cli`] – the `fit` / `optimize` / `benchmark` / `drift-demo`
//!   subcommands used by the thin binary.
//!
//! The `examples/` directory holds one runnable example per capability; start
//! with `cargo run --release --example device_drift`.

pub mod error;

pub mod aidx;
pub mod cli;
pub mod crossbar;
pub mod device;
pub mod fitting;
pub mod io;
pub mod network;
pub mod optimizer;
pub mod signal;

pub use error::{Error, Result};
