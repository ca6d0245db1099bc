//! Benchmark harness and reference computations for the `cbpf` crate.
//!
//! The library half of the `cbpf-bench` binary: experiment configs, model
//! construction, replicated meeting-time sweeps, exact oracles for small
//! models (Kalman smoothing, discrete forward-backward, brute-force
//! enumeration) and the statistical tests the validation suite is built on.

pub mod config;
pub mod harness;
pub mod oracle;
pub mod stats;
