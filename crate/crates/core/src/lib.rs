//! Simulation of a photonic reservoir PUF and the tooling to operate it as a
//! deterministic key generator.
//!
//! The pipeline runs challenge generation ([`challenge`]), the optical device
//! and detector chain ([`photonics`]), the ridge readout ([`readout`]) and key
//! extraction ([`keygen`]). [`metrics`] measures reproducibility and
//! identifiability, [`fuzzy`] turns noisy keys into exact ones with a BCH
//! fuzzy commitment, and [`randtests`] holds the statistical battery.
//! [`config`] ties one experiment together under a single master seed.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod bits;
pub mod challenge;
pub mod config;
pub mod error;
pub mod fuzzy;
pub mod keygen;
pub mod metrics;
pub mod photonics;
pub mod randtests;
pub mod readout;
pub mod seeds;

pub use bits::Bits;
pub use config::ExperimentConfig;
pub use error::{Error, Result};
