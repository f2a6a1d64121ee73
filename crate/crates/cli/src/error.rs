use std::path::PathBuf;

use bfc_core::comb::CombError;
use bfc_core::correlation::CorrelationError;
use bfc_core::density::DensityError;
use bfc_core::fitting::FitError;
use bfc_core::histogram::HistogramError;
use bfc_core::sagnac::SagnacError;
use bfc_core::synth::SynthError;
use bfc_core::tomography::TomographyError;
use thiserror::Error;

/// Every failure the CLI reports, tagged with the module it came from.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("comb-model: {0}")]
    Comb(#[from] CombError),
    #[error("correlation: {0}")]
    Correlation(#[from] CorrelationError),
    #[error("histogram-synth: {0}")]
    Synth(#[from] SynthError),
    #[error("histogram-synth: {0}")]
    Histogram(#[from] HistogramError),
    #[error("fitting: {0}")]
    Fit(#[from] FitError),
    #[error("sagnac-polarization: {0}")]
    Sagnac(#[from] SagnacError),
    #[error("tomography: {0}")]
    Tomography(#[from] TomographyError),
    #[error("sagnac-polarization: {0}")]
    Density(#[from] DensityError),
    #[error("plotdata: {0}")]
    Plot(String),
    #[error("verify: {0}")]
    Verify(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Usage problems exit with 2, everything else with 1.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
