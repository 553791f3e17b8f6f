//! Dynamical-decoupling noise spectroscopy.
//!
//! A dephasing probe qubit under a train of pi pulses decays at a rate set by
//! the overlap of the environmental noise spectrum with the filter function of
//! the pulse sequence. This crate simulates that decay (analytically and by
//! Monte Carlo over synthesized Gaussian noise) and inverts a suite of
//! measured rates back into the spectral density, including the correction
//! for the high-frequency tail that a finite suite cannot see.

pub mod error;
pub mod cli;
pub mod filter;
pub mod io;
pub mod noise;
mod quad;
pub mod sequence;
pub mod simulate;
pub mod spectro;

pub use error::{Error, Result};
