//! The run configuration: one TOML file with a section per module.
//!
//! ```toml
//! pipeline = "cross-fit"
//! seed = 7
//! output_dir = "out"
//!
//! [comb]
//! fsr_hz = 3.5e9
//! fwhm_signal_hz = 126e6
//! idler_unconfined = true
//! center_nm = 1580.0
//! mode_count = 100
//! pump_nm = 790.0
//!
//! [detector]
//! jitter_sigma = 30e-12
//! bin_width = 4e-12
//! tau_min = -12e-9
//! tau_max = 3e-9
//! accidental_rate = 1.0
//! total_counts = 1e5
//!
//! [cross]
//! purity = 0.95
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bfc_core::comb::CombConfig;
use bfc_core::fitting::{FitModel, Weighting};
use bfc_core::sagnac::SagnacSpec;
use bfc_core::synth::{DetectorSpec, DEFAULT_EDGE_FRACTION};
use bfc_core::CombSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Output directory used when neither the flag nor the config names one.
pub const OUTPUT_DIR_ENV: &str = "BFC_OUTPUT_DIR";
pub const FALLBACK_OUTPUT_DIR: &str = "bfc-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Synthesize a cross-correlation histogram, fit it and report the cavity.
    CrossFit,
    /// Synthesize an autocorrelation histogram and estimate the mode count.
    AutoModeCount,
    /// Simulate tomography of the Sagnac state and reconstruct it.
    Tomography,
    /// Classify the pump regime and summarize the comb.
    RegimeReport,
    /// Finesse and Q for a list of linewidths and wavelengths.
    TableS1,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::CrossFit => "cross-fit",
            Pipeline::AutoModeCount => "auto-mode-count",
            Pipeline::Tomography => "tomography",
            Pipeline::RegimeReport => "regime-report",
            Pipeline::TableS1 => "table-s1",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSection {
    /// Coherent share `p` of the synthesized histogram.
    pub purity: f64,
    #[serde(default = "default_model")]
    pub model: FitModel,
    #[serde(default)]
    pub weighting: Weighting,
    /// Zero skips the bootstrap.
    #[serde(default)]
    pub bootstrap_resamples: usize,
    /// Wavelength for Q; the comb center when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
}

fn default_model() -> FitModel {
    FitModel::CrossSum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoSection {
    #[serde(default = "default_edge_fraction")]
    pub edge_fraction: f64,
}

impl Default for AutoSection {
    fn default() -> Self {
        Self {
            edge_fraction: DEFAULT_EDGE_FRACTION,
        }
    }
}

fn default_edge_fraction() -> f64 {
    DEFAULT_EDGE_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySection {
    /// Expected counts per unit probability.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_tomo_resamples")]
    pub bootstrap_resamples: usize,
}

impl Default for TomographySection {
    fn default() -> Self {
        Self {
            scale: default_scale(),
            bootstrap_resamples: default_tomo_resamples(),
        }
    }
}

fn default_scale() -> f64 {
    1e4
}

fn default_tomo_resamples() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    /// `|ζ|`, the per-mode squeezing magnitude.
    pub zeta_abs: f64,
    #[serde(default)]
    pub zeta_phase: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    bfc_core::comb::DEFAULT_REGIME_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub fwhm_hz: f64,
    pub wavelength_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSection {
    #[serde(default = "default_table_fsr")]
    pub fsr_hz: f64,
    #[serde(default = "default_table_rows")]
    pub rows: Vec<TableRow>,
}

impl Default for TableSection {
    fn default() -> Self {
        Self {
            fsr_hz: default_table_fsr(),
            rows: default_table_rows(),
        }
    }
}

fn default_table_fsr() -> f64 {
    3.5e9
}

/// Measured linewidths of the 3.5 GHz resonator across the telecom band.
fn default_table_rows() -> Vec<TableRow> {
    [
        (516e6, 1560.0),
        (243e6, 1570.0),
        (126e6, 1580.0),
        (85e6, 1590.0),
        (57e6, 1600.0),
    ]
    .into_iter()
    .map(|(fwhm_hz, wavelength_nm)| TableRow { fwhm_hz, wavelength_nm })
    .collect()
}

/// The file as written; every field optional so each subcommand can name
/// what it is missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<Pipeline>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comb: Option<CombConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sagnac: Option<SagnacSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross: Option<CrossSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto: Option<AutoSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomography: Option<TomographySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_s1: Option<TableSection>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(CliError::Usage(format!(
                "config {origin} is empty; it needs a `pipeline` key and the sections that pipeline reads"
            )));
        }
        toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_owned(),
            message: e.to_string().trim_end().to_owned(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

/// A loaded config with the seed and output directory settled.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub origin: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// SHA-256 of the normalized config (seed included, output directory
    /// excluded), in hex.
    pub hash: String,
}

impl RunConfig {
    /// Output directory precedence: flag, then config, then the
    /// `BFC_OUTPUT_DIR` environment variable, then `bfc-out`.
    pub fn resolve(file: ConfigFile, origin: &str, overrides: &Overrides) -> Result<Self> {
        let env_dir = std::env::var_os(OUTPUT_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        let output_dir = overrides
            .output_dir
            .clone()
            .or_else(|| file.output_dir.clone())
            .or(env_dir)
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR));
        let seed = overrides.seed.or(file.seed).unwrap_or(0);
        let mut normalized = file.clone();
        normalized.seed = Some(seed);
        normalized.output_dir = None;
        let canonical = serde_json::to_string(&normalized).map_err(|e| CliError::Config {
            path: origin.to_owned(),
            message: format!("cannot normalize: {e}"),
        })?;
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        Ok(Self {
            file,
            origin: origin.to_owned(),
            seed,
            output_dir,
            hash,
        })
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        Self::resolve(ConfigFile::load(path)?, &path.display().to_string(), overrides)
    }

    pub fn pipeline(&self) -> Result<Pipeline> {
        self.file.pipeline.ok_or_else(|| {
            CliError::Usage(format!(
                "config {} has no `pipeline` key (one of cross-fit, auto-mode-count, tomography, regime-report, table-s1)",
                self.origin
            ))
        })
    }

    fn missing(&self, section: &str, user: &str) -> CliError {
        CliError::Config {
            path: self.origin.clone(),
            message: format!("{user} needs a [{section}] section"),
        }
    }

    fn invalid(&self, section: &str, e: impl fmt::Display) -> CliError {
        CliError::Config {
            path: self.origin.clone(),
            message: format!("[{section}]: {e}"),
        }
    }

    pub fn comb(&self, user: &str) -> Result<CombSpec> {
        let c = self.file.comb.as_ref().ok_or_else(|| self.missing("comb", user))?;
        CombSpec::try_from(c).map_err(|e| self.invalid("comb", e))
    }

    pub fn detector(&self, user: &str) -> Result<DetectorSpec> {
        let d = self
            .file
            .detector
            .clone()
            .ok_or_else(|| self.missing("detector", user))?;
        d.validate().map_err(|e| self.invalid("detector", e))?;
        Ok(d)
    }

    pub fn sagnac(&self, user: &str) -> Result<SagnacSpec> {
        self.file.sagnac.ok_or_else(|| self.missing("sagnac", user))
    }

    pub fn cross(&self, user: &str) -> Result<CrossSection> {
        let c = self.file.cross.clone().ok_or_else(|| self.missing("cross", user))?;
        if !(0.0..=1.0).contains(&c.purity) {
            return Err(self.invalid("cross", format!("purity must lie in [0, 1], got {}", c.purity)));
        }
        if c.model == FitModel::AutoSingle {
            return Err(self.invalid("cross", "model auto-single does not describe a cross-correlation"));
        }
        Ok(c)
    }

    pub fn regime(&self, user: &str) -> Result<RegimeSection> {
        let r = self.file.regime.clone().ok_or_else(|| self.missing("regime", user))?;
        if !(r.zeta_abs >= 0.0 && r.zeta_abs.is_finite()) {
            return Err(self.invalid("regime", format!("zeta_abs must be non-negative, got {}", r.zeta_abs)));
        }
        Ok(r)
    }

    pub fn auto(&self) -> AutoSection {
        self.file.auto.clone().unwrap_or_default()
    }

    pub fn tomography(&self) -> TomographySection {
        self.file.tomography.clone().unwrap_or_default()
    }

    pub fn table(&self) -> TableSection {
        self.file.table_s1.clone().unwrap_or_default()
    }

    /// Checks that every section the pipeline reads is present and valid.
    pub fn check_sections(&self, pipeline: Pipeline) -> Result<()> {
        let user = format!("pipeline {pipeline}");
        match pipeline {
            Pipeline::CrossFit => {
                self.comb(&user)?;
                self.detector(&user)?;
                self.cross(&user)?;
            }
            Pipeline::AutoModeCount => {
                self.comb(&user)?;
                self.detector(&user)?;
            }
            Pipeline::Tomography => {
                self.sagnac(&user)?;
            }
            Pipeline::RegimeReport => {
                self.comb(&user)?;
                self.regime(&user)?;
            }
            Pipeline::TableS1 => {}
        }
        Ok(())
    }
}
