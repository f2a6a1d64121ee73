//! Plot-ready CSV files: `#` header lines documenting the columns, then a
//! single header row and the data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use bfc_core::fitting::{FitReport, FitResult};
use bfc_core::{DensityMatrix, Histogram};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Histogram,
    FitOverlay,
    Density,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Histogram, PlotKind::FitOverlay, PlotKind::Density];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::Histogram => "histogram",
            PlotKind::FitOverlay => "fit-overlay",
            PlotKind::Density => "density",
        }
    }
}

impl FromStr for PlotKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            CliError::Plot(format!("unknown kind `{s}`; valid kinds: {}", valid.join(", ")))
        })
    }
}

fn header(out: &mut String, provenance: &BTreeMap<String, String>, columns: &[(&str, &str)]) {
    for (k, v) in provenance {
        writeln!(out, "# {k}={v}").expect("string write");
    }
    for (name, doc) in columns {
        writeln!(out, "# column {name}: {doc}").expect("string write");
    }
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    writeln!(out, "{}", names.join(",")).expect("string write");
}

fn provenance_of(meta: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    meta.iter()
        .filter(|(k, _)| matches!(k.as_str(), "config_hash" | "seed" | "kind"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// `tau_s,counts` at bin centers.
pub fn histogram_csv(h: &Histogram) -> String {
    let mut meta = provenance_of(h.metadata());
    meta.insert("kind".into(), h.kind().to_string());
    let mut out = String::new();
    header(
        &mut out,
        &meta,
        &[("tau_s", "bin centre, s"), ("counts", "coincidences in the bin")],
    );
    for (t, c) in h.centers().iter().zip(h.counts()) {
        writeln!(out, "{t},{c}").expect("string write");
    }
    out
}

/// `tau_s,g2,g2_err`: counts over a baseline with Poisson errors.
pub fn normalized_csv(h: &Histogram, baseline: f64, provenance: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    let mut meta = provenance_of(h.metadata());
    meta.extend(provenance_of(provenance));
    meta.insert("baseline".into(), baseline.to_string());
    header(
        &mut out,
        &meta,
        &[
            ("tau_s", "bin centre, s"),
            ("g2", "counts / baseline"),
            ("g2_err", "sqrt(counts) / baseline"),
        ],
    );
    for (t, c) in h.centers().iter().zip(h.counts()) {
        let c = *c as f64;
        writeln!(out, "{t},{},{}", c / baseline, c.sqrt() / baseline).expect("string write");
    }
    out
}

/// `tau_s,model_value`: expected counts of the fit on the histogram grid.
pub fn fit_overlay_csv(h: &Histogram, fit: &FitResult, provenance: &BTreeMap<String, String>) -> Result<String> {
    let model = fit.model_counts(h.edges())?;
    let mut meta = provenance_of(h.metadata());
    meta.extend(provenance_of(provenance));
    meta.insert("model".into(), fit.model.to_string());
    let mut out = String::new();
    header(
        &mut out,
        &meta,
        &[
            ("tau_s", "bin centre, s"),
            ("model_value", "fitted expected counts in the bin"),
        ],
    );
    for (t, m) in h.centers().iter().zip(&model) {
        writeln!(out, "{t},{m}").expect("string write");
    }
    Ok(out)
}

/// Sixteen `basis,re,im` rows.
pub fn density_csv(rho: &DensityMatrix, meta: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in provenance_of(meta) {
        writeln!(out, "# {k}={v}").expect("string write");
    }
    out.push_str("# column basis: row|column basis states, idler first\n");
    out.push_str("# column re: real part\n# column im: imaginary part\n");
    out.push_str(&rho.to_basis_csv());
    out
}

/// The fit a report describes, enough to evaluate its model.
pub fn fit_from_report(r: &FitReport) -> FitResult {
    FitResult {
        model: r.model,
        idler_unconfined: r.idler_unconfined,
        reduced_to_singly_resonant: r.reduced_to_singly_resonant,
        estimates: r.estimates.clone(),
        free_params: r.covariance_order.clone(),
        covariance: r.covariance.clone(),
        reduced_chi2: r.reduced_chi2,
        iterations: r.iterations,
        converged: r.converged,
        cost_trace: Vec::new(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Converts an artifact file. `fit-overlay` reads a fit report and needs the
/// histogram it was fitted to.
pub fn emit(artifact: &Path, kind: PlotKind, histogram: Option<&Path>) -> Result<String> {
    let text = read(artifact)?;
    match kind {
        PlotKind::Histogram => Ok(histogram_csv(&Histogram::from_csv_str(&text)?)),
        PlotKind::FitOverlay => {
            let report = FitReport::from_json(&text)?;
            let hist_path = histogram
                .ok_or_else(|| CliError::Plot("fit-overlay needs the fitted histogram (--histogram)".into()))?;
            let h = Histogram::from_csv_str(&read(hist_path)?)?;
            fit_overlay_csv(&h, &fit_from_report(&report), &report.source)
        }
        PlotKind::Density => {
            let (rho, meta) = DensityMatrix::from_text(&text)?;
            Ok(density_csv(&rho, &meta))
        }
    }
}
