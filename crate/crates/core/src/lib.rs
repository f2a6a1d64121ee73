//! Simulation and analysis of cavity-enhanced biphoton frequency combs.
//!
//! - [`comb`]: Lorentzian comb teeth and the joint spectral amplitude.
//! - [`correlation`]: closed-form cross-/auto-correlation functions and the
//!   mode-number estimator built on the integrated autocorrelation excess.
//! - [`synth`] and [`histogram`]: noisy delayed-coincidence histograms.
//! - [`fitting`]: weighted least-squares recovery of cavity parameters.
//! - [`sagnac`]: the polarization state out of a Sagnac loop with a resonator
//!   off-centre, its contamination and fidelity bounds.
//! - [`tomography`]: two-qubit polarization tomography (linear inversion and
//!   maximum likelihood).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comb;
pub mod correlation;
pub mod density;
pub mod fitting;
pub mod histogram;
pub mod quadrature;
pub mod sagnac;
pub mod special;
pub mod synth;
pub mod tomography;

pub use comb::{CombSpec, IdlerLinewidth, Linewidths, PumpRegime, Regime};
pub use density::DensityMatrix;
pub use histogram::{Histogram, HistogramKind};

/// Crate version, recorded in run provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
