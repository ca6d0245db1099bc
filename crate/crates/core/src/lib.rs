//! Coupled conditional backward-sampling particle filters for state-space
//! smoothing.
//!
//! The crate is organised around one Markov kernel, the backward-sampling
//! conditional particle filter in [`kernels`], which leaves the smoothing
//! distribution of a Feynman-Kac model invariant. [`coupled`] advances two
//! copies of that kernel with common randomness so the chains meet exactly
//! after finitely many steps, [`unbiased`] turns meeting chains into unbiased
//! estimators of smoothing expectations, and [`score`] runs stochastic
//! gradient ascent on the likelihood using those estimators. The maximal
//! couplings everything is built on live in [`coupling`]; built-in benchmark
//! models live in [`fk`].

pub mod coupled;
pub mod coupling;
pub mod error;
pub mod fk;
pub mod kernels;
pub mod score;
pub mod seed;
pub mod unbiased;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
