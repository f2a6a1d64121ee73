//! Weighted least-squares fits of correlation histograms.
//!
//! Expected counts per bin are `A·∫_bin shape(τ − delay) dτ + B`, where the
//! cross-correlation shapes have unit area (so `A` is the number of true
//! coincidences) and the autocorrelation shape is the jitter-convolved
//! bunching excess (so `B` is the per-bin baseline). Residuals carry Poisson
//! weights `1/max(N, 1)`.

mod bootstrap;
mod guess;
mod lm;
mod models;
mod report;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::histogram::{check_edges, Histogram, HistogramError};

pub use bootstrap::{bootstrap_errors, BootstrapSummary, MIN_RESAMPLES};
pub use guess::{decay_rate_from_tail, round_trip_from_fft, InitialGuess};
pub use models::{FitModel, Param};
pub use report::{derive_cavity_report, CavityReport, FitReport};

use lm::{LeastSquares, LmOptions};
use models::{BinGrid, GridModel, Values, N_PARAMS};

pub const DEFAULT_MAX_ITER: usize = 500;
pub const STEP_TOLERANCE: f64 = 1e-8;
pub const COST_TOLERANCE: f64 = 1e-10;
/// Normalized curvature correlation at which two parameters are declared
/// indistinguishable.
pub const DEGENERACY_THRESHOLD: f64 = 1.0 - 1e-10;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("unknown model `{0}` (expected cross-single, cross-multi, cross-sum or auto-single)")]
    UnknownModel(String),
    #[error("parameter `{0}` is both free and fixed")]
    Overlap(Param),
    #[error("model {model} needs parameter `{param}`, which is neither free nor fixed")]
    MissingParam { model: FitModel, param: Param },
    #[error("parameter `{param}` is not used by model {model}")]
    ExtraParam { model: FitModel, param: Param },
    #[error("bounds for `{param}` must satisfy lower ≤ initial ≤ upper, got {lower} ≤ {initial} ≤ {upper}")]
    Bounds {
        param: Param,
        initial: f64,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite value {value} for `{param}`")]
    NonFinite { param: Param, value: f64 },
    #[error("{bins} bins for {free} free parameters; need at least five bins per parameter")]
    TooFewBins { bins: usize, free: usize },
    #[error("counts must be finite and non-negative (bin {0})")]
    Counts(usize),
    #[error("parameter `{0}` has no influence on the model at the current point")]
    Insensitive(Param),
    #[error("parameters `{0}` and `{1}` are degenerate (normalized curvature correlation ≥ 1 − 1e−10)")]
    Degenerate(Param, Param),
    #[error("cannot form an initial guess for `{param}`: {reason}")]
    Guess { param: Param, reason: String },
    #[error("fit did not converge; cavity parameters are not reported")]
    NotConverged,
    #[error("fit result lacks `{0}`")]
    MissingEstimate(Param),
    #[error("need at least {min} bootstrap resamples, got {got}")]
    TooFewResamples { min: usize, got: usize },
    #[error("{failed} of {total} bootstrap refits failed (more than 20%)")]
    Bootstrap { failed: usize, total: usize },
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
}

/// Binned counts to fit; counts are real so that noise-free expectations can
/// be fitted directly.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    edges: Vec<f64>,
    counts: Vec<f64>,
    metadata: BTreeMap<String, String>,
}

impl FitData {
    pub fn new(edges: Vec<f64>, counts: Vec<f64>) -> Result<Self, FitError> {
        check_edges(&edges)?;
        if counts.len() + 1 != edges.len() {
            return Err(HistogramError::Length {
                counts: counts.len(),
                edges: edges.len(),
            }
            .into());
        }
        if let Some(i) = counts.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(FitError::Counts(i));
        }
        Ok(Self {
            edges,
            counts,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub(crate) fn with_counts(&self, counts: Vec<f64>) -> Self {
        Self {
            edges: self.edges.clone(),
            counts,
            metadata: self.metadata.clone(),
        }
    }
}

impl From<&Histogram> for FitData {
    fn from(h: &Histogram) -> Self {
        let mut metadata = h.metadata().clone();
        metadata.insert("kind".into(), h.kind().to_string());
        Self {
            edges: h.edges().to_vec(),
            counts: h.counts().iter().map(|&c| c as f64).collect(),
            metadata,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Per-bin least-squares weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `1/max(N, 1)` from the observed counts.
    #[default]
    Observed,
    /// A second pass weighted by `1/max(μ, 1)`, with `μ` the first pass's
    /// model. Removes the downward pull of sparse bins on the observed weights.
    Model,
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub data: FitData,
    pub model: FitModel,
    pub idler_unconfined: bool,
    pub free: BTreeMap<Param, Bounded>,
    pub fixed: BTreeMap<Param, f64>,
    pub max_iter: usize,
    pub weighting: Weighting,
}

impl FitProblem {
    pub fn new(data: FitData, model: FitModel, idler_unconfined: bool) -> Self {
        Self {
            data,
            model,
            idler_unconfined,
            free: BTreeMap::new(),
            fixed: BTreeMap::new(),
            max_iter: DEFAULT_MAX_ITER,
            weighting: Weighting::Observed,
        }
    }

    pub fn free(mut self, param: Param, initial: f64, lower: f64, upper: f64) -> Self {
        self.free.insert(param, Bounded { initial, lower, upper });
        self
    }

    pub fn fixed(mut self, param: Param, value: f64) -> Self {
        self.fixed.insert(param, value);
        self
    }

    /// Frees every model parameter not in `fixed`, starting from the
    /// heuristic guesses of [`InitialGuess`] with their default bounds.
    pub fn with_guesses(
        data: FitData,
        model: FitModel,
        idler_unconfined: bool,
        fixed: &BTreeMap<Param, f64>,
    ) -> Result<Self, FitError> {
        let guess = InitialGuess::estimate(&data, model, idler_unconfined, fixed)?;
        let mut p = Self::new(data, model, idler_unconfined);
        for param in model.params(idler_unconfined) {
            if let Some(v) = fixed.get(&param) {
                p.fixed.insert(param, *v);
            } else {
                p.free.insert(param, guess.bounded(param));
            }
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let needed = self.model.params(self.idler_unconfined);
        for p in self.free.keys() {
            if self.fixed.contains_key(p) {
                return Err(FitError::Overlap(*p));
            }
        }
        for p in self.free.keys().chain(self.fixed.keys()) {
            if !needed.contains(p) {
                return Err(FitError::ExtraParam {
                    model: self.model,
                    param: *p,
                });
            }
        }
        for p in &needed {
            if !self.free.contains_key(p) && !self.fixed.contains_key(p) {
                return Err(FitError::MissingParam {
                    model: self.model,
                    param: *p,
                });
            }
        }
        for (p, b) in &self.free {
            if b.initial.is_nan() || b.lower.is_nan() || b.upper.is_nan() || !b.initial.is_finite() {
                return Err(FitError::NonFinite {
                    param: *p,
                    value: b.initial,
                });
            }
            if !(b.lower <= b.initial && b.initial <= b.upper) {
                return Err(FitError::Bounds {
                    param: *p,
                    initial: b.initial,
                    lower: b.lower,
                    upper: b.upper,
                });
            }
        }
        for (p, v) in &self.fixed {
            if !v.is_finite() {
                return Err(FitError::NonFinite { param: *p, value: *v });
            }
        }
        if self.data.len() < 5 * self.free.len() {
            return Err(FitError::TooFewBins {
                bins: self.data.len(),
                free: self.free.len(),
            });
        }
        Ok(())
    }

    fn values(&self) -> Values {
        let mut v = [0.0; N_PARAMS];
        for (p, x) in &self.fixed {
            v[p.index()] = *x;
        }
        for (p, b) in &self.free {
            v[p.index()] = b.initial;
        }
        v
    }

    /// A copy that restarts from `result`'s estimates (clamped to the bounds),
    /// reduced to the singly resonant model if `result` was.
    pub fn restarted_from(&self, result: &FitResult) -> Self {
        let mut p = self.clone();
        if result.reduced_to_singly_resonant {
            p.idler_unconfined = true;
            p.free.remove(&Param::GammaI);
            p.fixed.remove(&Param::GammaI);
        }
        for (param, b) in p.free.iter_mut() {
            if let Some(v) = result.estimates.get(param) {
                b.initial = v.clamp(b.lower, b.upper);
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub idler_unconfined: bool,
    /// Set when `gamma_i` ran into its upper bound and the singly resonant
    /// model was fitted instead.
    pub reduced_to_singly_resonant: bool,
    /// Every model parameter, free and fixed.
    pub estimates: BTreeMap<Param, f64>,
    /// Order of the covariance rows and columns.
    pub free_params: Vec<Param>,
    pub covariance: Vec<Vec<f64>>,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step.
    pub cost_trace: Vec<f64>,
}

impl FitResult {
    pub fn estimate(&self, p: Param) -> Option<f64> {
        self.estimates.get(&p).copied()
    }

    pub fn std_error(&self, p: Param) -> Option<f64> {
        let i = self.free_params.iter().position(|q| *q == p)?;
        Some(self.covariance[i][i].max(0.0).sqrt())
    }

    /// Expected counts of the fitted model on `edges`.
    pub fn model_counts(&self, edges: &[f64]) -> Result<Vec<f64>, FitError> {
        check_edges(edges)?;
        let mut v = [0.0; N_PARAMS];
        for (p, x) in &self.estimates {
            v[p.index()] = *x;
        }
        let sigma = v[Param::Sigma.index()];
        let gm = GridModel {
            model: self.model,
            unconfined: self.idler_unconfined,
            grid: BinGrid::new(edges, panel_width(sigma)),
        };
        Ok(gm.expected(&v))
    }
}

fn panel_width(sigma: f64) -> f64 {
    (0.5 * std::f64::consts::SQRT_2 * sigma).max(f64::MIN_POSITIVE)
}

/// The least-squares problem in scaled coordinates `x = θ·scale`.
struct Scaled<'a> {
    gm: &'a GridModel,
    base: Values,
    free: &'a [Param],
    scales: &'a [f64],
    fd_steps: Vec<f64>,
}

impl Scaled<'_> {
    fn unpack(&self, theta: &[f64]) -> Values {
        let mut v = self.base;
        for ((p, t), s) in self.free.iter().zip(theta).zip(self.scales) {
            v[p.index()] = t * s;
        }
        v
    }
}

impl LeastSquares for Scaled<'_> {
    fn predict(&self, theta: &[f64]) -> Vec<f64> {
        self.gm.expected(&self.unpack(theta))
    }

    fn predict_with_jacobian(&self, theta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let (m, mut j) = self
            .gm
            .expected_and_jacobian(&self.unpack(theta), self.free, &self.fd_steps);
        for (k, s) in self.scales.iter().enumerate() {
            j.column_mut(k).scale_mut(*s);
        }
        (m, j)
    }
}

fn param_scale(p: Param, b: &Bounded, problem: &FitProblem, base: &Values) -> f64 {
    let typical = match p {
        Param::Purity => 1.0,
        Param::Background => b.initial.abs().max(1.0),
        Param::Delay => base[Param::Sigma.index()]
            .abs()
            .max(problem.data.edges[1] - problem.data.edges[0]),
        _ => b.initial.abs(),
    };
    if typical > 0.0 && typical.is_finite() {
        typical
    } else {
        1.0
    }
}

fn curvature(jac: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let n = jac.ncols();
    DMatrix::from_fn(n, n, |a, b| {
        (0..jac.nrows()).map(|i| w[i] * jac[(i, a)] * jac[(i, b)]).sum()
    })
}

fn check_degeneracy(h: &DMatrix<f64>, free: &[Param]) -> Result<(), FitError> {
    let n = free.len();
    let max_diag = (0..n).map(|k| h[(k, k)]).fold(0.0, f64::max);
    for k in 0..n {
        if !(h[(k, k)] > 1e-300 && h[(k, k)] > 1e-30 * max_diag) {
            return Err(FitError::Insensitive(free[k]));
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            let corr = h[(a, b)].abs() / (h[(a, a)] * h[(b, b)]).sqrt();
            if corr >= DEGENERACY_THRESHOLD {
                return Err(FitError::Degenerate(free[a], free[b]));
            }
        }
    }
    Ok(())
}

fn weights(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|c| 1.0 / c.max(1.0)).collect()
}

fn run_once(problem: &FitProblem, w: &[f64]) -> Result<FitResult, FitError> {
    let free: Vec<Param> = problem.free.keys().copied().collect();
    let base = problem.values();
    let gm = GridModel {
        model: problem.model,
        unconfined: problem.idler_unconfined,
        grid: BinGrid::new(&problem.data.edges, panel_width(base[Param::Sigma.index()])),
    };
    let scales: Vec<f64> = free
        .iter()
        .map(|p| param_scale(*p, &problem.free[p], problem, &base))
        .collect();
    let scaled = Scaled {
        gm: &gm,
        base,
        free: &free,
        scales: &scales,
        fd_steps: scales.iter().map(|s| 1e-6 * s).collect(),
    };
    let theta0: Vec<f64> = free
        .iter()
        .zip(&scales)
        .map(|(p, s)| problem.free[p].initial / s)
        .collect();
    let lo: Vec<f64> = free
        .iter()
        .zip(&scales)
        .map(|(p, s)| problem.free[p].lower / s)
        .collect();
    let hi: Vec<f64> = free
        .iter()
        .zip(&scales)
        .map(|(p, s)| problem.free[p].upper / s)
        .collect();
    let y = problem.data.counts.clone();

    let (_, j0) = scaled.predict_with_jacobian(&theta0);
    check_degeneracy(&curvature(&j0, w), &free)?;

    let out = lm::minimize(
        &scaled,
        &y,
        w,
        &theta0,
        &lo,
        &hi,
        LmOptions {
            max_iter: problem.max_iter,
            step_tol: STEP_TOLERANCE,
            cost_tol: COST_TOLERANCE,
        },
    );

    let h = curvature(&out.jacobian, w);
    check_degeneracy(&h, &free)?;
    let inv = h.clone().try_inverse().ok_or_else(|| {
        // Fall back to naming the most correlated pair.
        let mut worst = (free[0], free[free.len().min(2) - 1], -1.0);
        for a in 0..free.len() {
            for b in a + 1..free.len() {
                let c = h[(a, b)].abs() / (h[(a, a)] * h[(b, b)]).sqrt();
                if c > worst.2 {
                    worst = (free[a], free[b], c);
                }
            }
        }
        FitError::Degenerate(worst.0, worst.1)
    })?;
    let k = free.len();
    let covariance: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| 0.5 * (inv[(a, b)] + inv[(b, a)]) * scales[a] * scales[b])
                .collect()
        })
        .collect();

    let values = scaled.unpack(&out.x);
    let estimates = problem
        .model
        .params(problem.idler_unconfined)
        .into_iter()
        .map(|p| (p, values[p.index()]))
        .collect();
    let dof = (y.len() - k).max(1) as f64;
    Ok(FitResult {
        model: problem.model,
        idler_unconfined: problem.idler_unconfined,
        reduced_to_singly_resonant: false,
        estimates,
        free_params: free,
        covariance,
        reduced_chi2: out.cost / dof,
        iterations: out.iterations,
        converged: out.converged,
        cost_trace: out.trace,
    })
}

/// Fits `problem`. If a free `gamma_i` ends on its upper bound the idler is
/// effectively unconfined, and the singly resonant model is refitted and
/// reported instead.
pub fn fit(problem: &FitProblem) -> Result<FitResult, FitError> {
    problem.validate()?;
    let first = fit_weighted(problem, &weights(&problem.data.counts))?;
    if problem.weighting == Weighting::Observed {
        return Ok(first);
    }
    let refined = problem.restarted_from(&first);
    let w = weights(&first.model_counts(&problem.data.edges)?);
    let mut second = fit_weighted(&refined, &w)?;
    second.reduced_to_singly_resonant |= first.reduced_to_singly_resonant;
    Ok(second)
}

fn fit_weighted(problem: &FitProblem, w: &[f64]) -> Result<FitResult, FitError> {
    let first = run_once(problem, w)?;
    let Some(bounds) = problem.free.get(&Param::GammaI) else {
        return Ok(first);
    };
    let gi = first.estimate(Param::GammaI).expect("free parameter has an estimate");
    if problem.idler_unconfined || gi < bounds.upper * (1.0 - 1e-6) {
        return Ok(first);
    }
    let mut reduced = problem.clone();
    reduced.idler_unconfined = true;
    reduced.free.remove(&Param::GammaI);
    for (p, b) in reduced.free.iter_mut() {
        if let Some(v) = first.estimates.get(p) {
            b.initial = v.clamp(b.lower, b.upper);
        }
    }
    let mut second = run_once(&reduced, w)?;
    second.reduced_to_singly_resonant = true;
    Ok(second)
}

#[cfg(test)]
mod tests;
