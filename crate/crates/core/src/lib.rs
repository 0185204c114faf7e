//! Desk-scale laboratory for distance-aware fair adversarial training (DAFA)
//! on synthetic Gaussian mixtures.
//!
//! The crate has three layers:
//!
//! * **Analysis** — [`theory`] holds the closed-form error formulas for a
//!   two-Gaussian task under an ℓ∞ adversary, together with a Monte Carlo
//!   oracle that validates every formula independently.
//! * **Engine** — [`dafa`] computes per-class weights from a class-wise
//!   probability matrix; [`nn`], [`attack`], and [`training`] provide a
//!   from-scratch MLP, PGD attacks, and the TRADES / standard adversarial
//!   training loops that consume those weights.
//! * **Harness** — [`synthdata`] generates seeded mixture datasets,
//!   [`metrics`] evaluates class-wise fairness, and [`experiment`] wires
//!   everything into reproducible paired experiments behind the `dafa-lab`
//!   binary.
//!
//! Everything is deterministic given a seed: random streams come from a
//! counter-based 64-bit generator owned by this crate, so results are
//! bit-identical across platforms and thread counts.

pub mod attack;
pub mod dafa;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod synthdata;
pub mod theory;
pub mod training;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
