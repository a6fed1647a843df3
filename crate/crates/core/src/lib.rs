//! Casino profit analysis for the two-armed Futurity slot machine under
//! periodic pattern strategies and random mixtures.
//!
//! - [`pattern`]: pattern parsing, canonical run-length form, `q`/`b` sequences.
//! - [`chain`]: the cam/pointer Markov chain, its stationary law and the brute-force profit oracle.
//! - [`closed_form`]: Futurity rates, fair payouts and every closed-form route to `R_D`.
//! - [`sign_analysis`]: negative points, the φ/ψ correspondence, the structure-function bound and positivity scans.
//! - [`simulate`]: seeded Monte Carlo play of the physical machine.

pub mod chain;
pub mod closed_form;
pub mod error;
pub mod grid;
pub mod pattern;
pub mod scalar;
pub mod sign_analysis;
pub mod simulate;

pub use error::{Error, Result};
pub use grid::Grid;
pub use pattern::{Arm, BSequence, Pattern, QSequence, RunLengthForm};
pub use scalar::Real;
