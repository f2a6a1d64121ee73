//! Command-line pipelines over `bfc-core`: synthesize, fit and report comb
//! correlations; simulate and reconstruct polarization tomography; emit
//! plot-ready data and a verifiable manifest of every run.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipelines;
pub mod plotdata;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use bfc_core::fitting::FitModel;
use bfc_core::tomography::TomographyRecord;
use bfc_core::Histogram;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{ConfigFile, Overrides, Pipeline, RunConfig};
use error::{CliError, Result};
use manifest::OutputDir;
use pipelines::{FitSettings, ModelGrid, ModelKind};
use plotdata::PlotKind;

#[derive(Debug, Parser)]
#[command(name = "bfc", version, about = "Biphoton frequency comb simulation and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// The config file and the two values a flag may override.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    pub config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's `output_dir` (fallback: $BFC_OUTPUT_DIR, then ./bfc-out).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline named in the config.
    Run(Common),
    /// Synthesize a cross-correlation histogram.
    SynthCross(Common),
    /// Synthesize an autocorrelation histogram.
    SynthAuto(Common),
    /// Fit a histogram file with a named model.
    Fit {
        histogram: PathBuf,
        /// cross-single, cross-multi, cross-sum or auto-single.
        model: String,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate Δg² and the mode count from an autocorrelation histogram.
    ModeCount {
        histogram: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct a polarization state, simulating the counts from the
    /// `[sagnac]` section unless a counts file is given.
    Tomo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Finesse and Q for the configured (or built-in) linewidth table.
    TableS1(Common),
    /// Classify the pump regime and summarize the comb.
    Regime(Common),
    /// Evaluate a correlation function on a delay grid.
    Model {
        #[command(flatten)]
        common: Common,
        /// cross-single, cross-multi, cross-sum, g2-auto-single or g2-auto.
        #[arg(long)]
        kind: String,
        #[arg(long, allow_hyphen_values = true)]
        tau_min: f64,
        #[arg(long, allow_hyphen_values = true)]
        tau_max: f64,
        #[arg(long, default_value_t = 1001)]
        points: usize,
        /// Jitter σ (s); the detector's by default.
        #[arg(long)]
        sigma: Option<f64>,
        /// Coherent share for cross-sum; the `[cross]` purity by default.
        #[arg(long)]
        purity: Option<f64>,
    },
    /// Convert an artifact to a plot-ready CSV.
    Plotdata {
        artifact: PathBuf,
        /// histogram, fit-overlay or density.
        #[arg(long)]
        kind: String,
        /// The fitted histogram, for fit-overlay.
        #[arg(long)]
        histogram: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check every summary in a directory against the files it lists.
    Verify {
        dir: PathBuf,
        /// Also require the summaries to match this config's hash.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// What a command did, for the terminal.
#[derive(Debug, Default)]
pub struct Report {
    pub lines: Vec<String>,
}

fn load(common: &Common) -> Result<RunConfig> {
    RunConfig::load(
        &common.config,
        &Overrides {
            seed: common.seed,
            output_dir: common.output_dir.clone(),
        },
    )
}

fn read_histogram(path: &Path) -> Result<Histogram> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(Histogram::from_csv_str(&text)?)
}

fn finish(
    out: OutputDir,
    cfg: &RunConfig,
    command: &str,
    pipeline: Option<&str>,
    results: serde_json::Value,
) -> Result<Report> {
    let n = out.artifacts().len();
    let dir = out.path().to_path_buf();
    let summary = out.finish(cfg, command, pipeline, results)?;
    Ok(Report {
        lines: vec![
            format!("config hash {}", cfg.hash),
            format!("wrote {n} artifact(s) to {}", dir.display()),
            format!("summary {}", summary.display()),
        ],
    })
}

/// Executes one parsed command.
pub fn execute(command: Command) -> Result<Report> {
    match command {
        Command::Run(common) => {
            let cfg = load(&common)?;
            let pipeline = cfg.pipeline()?;
            cfg.check_sections(pipeline)?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let results = pipelines::run_pipeline(&cfg, &mut out)?;
            finish(out, &cfg, "run", Some(pipeline.name()), results)
        }
        Command::SynthCross(common) => {
            let cfg = load(&common)?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let (_, v) = pipelines::synth_cross(&cfg, &mut out)?;
            finish(out, &cfg, "synth-cross", None, v)
        }
        Command::SynthAuto(common) => {
            let cfg = load(&common)?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let (_, v) = pipelines::synth_auto(&cfg, &mut out)?;
            finish(out, &cfg, "synth-auto", None, v)
        }
        Command::Fit {
            histogram,
            model,
            common,
        } => {
            let cfg = load(&common)?;
            let model: FitModel = model.parse()?;
            let h = read_histogram(&histogram)?;
            let settings = FitSettings::from_config(&cfg, model, "fit")?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let mut v = pipelines::fit_histogram(&h, &settings, &cfg, &mut out, "fit")?;
            v["input_sha256"] = json!(manifest::sha256_hex(h.to_csv_string().as_bytes()));
            finish(out, &cfg, "fit", None, v)
        }
        Command::ModeCount { histogram, common } => {
            let cfg = load(&common)?;
            let comb = cfg.comb("mode-count")?;
            let h = read_histogram(&histogram)?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let v = pipelines::mode_count(&h, &comb, &cfg, &mut out, "mode_count")?;
            finish(out, &cfg, "mode-count", None, v)
        }
        Command::Tomo { common, counts } => {
            let cfg = load(&common)?;
            let record = match counts {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
                    Some(TomographyRecord::from_csv(&text)?.0)
                }
                None => None,
            };
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let v = pipelines::tomography(&cfg, &mut out, record)?;
            finish(out, &cfg, "tomo", Some(Pipeline::Tomography.name()), v)
        }
        Command::TableS1(common) => {
            let cfg = load(&common)?;
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let v = pipelines::table_s1(&cfg, &mut out)?;
            finish(out, &cfg, "table-s1", Some(Pipeline::TableS1.name()), v)
        }
        Command::Regime(common) => {
            let cfg = load(&common)?;
            let v = pipelines::regime_report(&cfg)?;
            let out = OutputDir::create(&cfg.output_dir)?;
            finish(out, &cfg, "regime", Some(Pipeline::RegimeReport.name()), v)
        }
        Command::Model {
            common,
            kind,
            tau_min,
            tau_max,
            points,
            sigma,
            purity,
        } => {
            let cfg = load(&common)?;
            let grid = ModelGrid {
                kind: ModelKind::parse(&kind)?,
                tau_min,
                tau_max,
                points,
                sigma,
                purity,
            };
            let mut out = OutputDir::create(&cfg.output_dir)?;
            let v = pipelines::evaluate_model(&cfg, &mut out, &grid)?;
            finish(out, &cfg, "model", None, v)
        }
        Command::Plotdata {
            artifact,
            kind,
            histogram,
            out,
        } => {
            let kind: PlotKind = kind.parse()?;
            let csv = plotdata::emit(&artifact, kind, histogram.as_deref())?;
            fs::write(&out, csv).map_err(|e| CliError::io(&out, e))?;
            Ok(Report {
                lines: vec![format!("wrote {} ({})", out.display(), kind.name())],
            })
        }
        Command::Verify { dir, config, seed } => {
            let hash = match config {
                Some(p) => Some(
                    RunConfig::resolve(
                        ConfigFile::load(&p)?,
                        &p.display().to_string(),
                        &Overrides { seed, output_dir: None },
                    )?
                    .hash,
                ),
                None => None,
            };
            let checked = manifest::verify(&dir, hash.as_deref())?;
            Ok(Report {
                lines: checked
                    .iter()
                    .map(|v| format!("ok {} ({} artifacts)", v.summary.display(), v.artifacts))
                    .collect(),
            })
        }
    }
}

/// Parses `args`, runs the command, prints the outcome and returns the exit
/// status: 0 on success, 2 for usage errors, 1 for any module error.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return u8::try_from(code).unwrap_or(2);
        }
    };
    match execute(cli.command) {
        Ok(report) => {
            for line in report.lines {
                println!("{line}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
