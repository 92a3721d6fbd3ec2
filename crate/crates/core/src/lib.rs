//! Simulation and analysis of long-lived singlet states in a two-spin system.
//!
//! The crate is organised bottom-up:
//!
//! * [`spin`]: operators, Hamiltonians, singlet-triplet basis and observables.
//! * [`evolution`]: coherent and dissipative propagation, gradients, diffusion
//!   and the pulse-program runner.
//! * [`sequence`]: resonance conditions, built-in programs and the text format.
//! * [`sample`]: temperature, order parameter, schedules and rate calibration.
//! * [`experiments`]: lifetime and diffusion drivers, stick spectra.
//! * [`fit`]: least-squares fits of decay and attenuation curves.

pub mod error;
pub mod evolution;
pub mod experiments;
pub mod fit;
pub mod sample;
pub mod sequence;
pub mod spin;

pub use error::{Error, Result};
