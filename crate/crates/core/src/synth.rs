//! Synthetic delayed-coincidence histograms with jitter, binning, Poisson
//! noise and flat accidentals, and the model-free Δg² estimator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comb::{hz_to_wavelength_nm, CombSpec, IdlerLinewidth};
use crate::correlation::{mode_beat, CorrelationError, CrossCorrelationModel};
use crate::histogram::{uniform_edges, Histogram, HistogramError, HistogramKind};
use crate::quadrature::{gauss_legendre, GL5};
use crate::special::normal_cdf;

/// Name recorded in histogram metadata for reproducibility.
pub const RNG_NAME: &str = "ChaCha8Rng";

/// Fraction of model mass the window must hold before a warning is recorded.
pub const WINDOW_MASS_WARNING: f64 = 0.99;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("detector: {0}")]
    Detector(String),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Histogram(#[from] HistogramError),
    #[error("Δg² needs an autocorrelation histogram")]
    NotAuto,
    #[error("edge fraction must lie in (0, 0.5], got {0}")]
    EdgeFraction(f64),
    #[error("histogram too short: {0} bins")]
    TooFewBins(usize),
    #[error("baseline is zero; no counts in the outer bins")]
    ZeroBaseline,
    #[error(
        "baseline not reached at the {edge} edge: outer mean {edge_mean:.3} vs baseline {baseline:.3} \
         (allowed ±{allowed:.3})"
    )]
    BaselineNotReached {
        edge: &'static str,
        edge_mean: f64,
        baseline: f64,
        allowed: f64,
    },
}

/// Timing and binning of a detector pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    /// Per-detector timing jitter σ (s); the pair response has width √2σ.
    pub jitter_sigma: f64,
    pub bin_width: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    /// Flat accidental counts per bin.
    #[serde(default)]
    pub accidental_rate: f64,
    /// Expected true coincidences in the window (cross), or expected
    /// baseline counts over the window (auto).
    pub total_counts: f64,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Detector(m));
        if !(self.jitter_sigma > 0.0 && self.jitter_sigma.is_finite()) {
            return bad(format!("jitter_sigma must be positive, got {}", self.jitter_sigma));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return bad(format!("bin_width must be positive, got {}", self.bin_width));
        }
        if !(self.tau_min.is_finite() && self.tau_max.is_finite() && self.tau_min < self.tau_max) {
            return bad(format!(
                "window must satisfy tau_min < tau_max, got [{}, {}]",
                self.tau_min, self.tau_max
            ));
        }
        if !(self.accidental_rate >= 0.0 && self.accidental_rate.is_finite()) {
            return bad(format!(
                "accidental_rate must be non-negative, got {}",
                self.accidental_rate
            ));
        }
        if !(self.total_counts >= 0.0 && self.total_counts.is_finite()) {
            return bad(format!("total_counts must be non-negative, got {}", self.total_counts));
        }
        Ok(())
    }

    /// Bin edges: the window split into whole bins of `bin_width`
    /// (the last bin absorbs rounding).
    pub fn edges(&self) -> Vec<f64> {
        let n = ((self.tau_max - self.tau_min) / self.bin_width).round().max(1.0) as usize;
        uniform_edges(self.tau_min, self.tau_max, n)
    }
}

/// Noise-free expected counts per bin, ready to be Poisson-sampled for any
/// number of seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedHistogram {
    pub edges: Vec<f64>,
    pub expected: Vec<f64>,
    pub kind: HistogramKind,
    /// Metadata shared by every sample (seed excluded).
    pub metadata: Vec<(String, String)>,
}

impl ExpectedHistogram {
    pub fn sample(&self, seed: u64) -> Histogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = self
            .expected
            .iter()
            .map(|&mu| {
                if mu > 0.0 {
                    Poisson::new(mu).expect("finite positive mean").sample(&mut rng) as u64
                } else {
                    0
                }
            })
            .collect();
        let mut h = Histogram::new(self.edges.clone(), counts, self.kind).expect("validated edges");
        for (k, v) in &self.metadata {
            h.set_meta(k.as_str(), v).expect("valid metadata");
        }
        h.set_meta("seed", seed).expect("valid metadata");
        h.set_meta("rng", RNG_NAME).expect("valid metadata");
        h
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Integral of `f` over `[a, b]` with GL5 on panels no wider than `max_panel`.
fn bin_integral(f: &impl Fn(f64) -> f64, a: f64, b: f64, max_panel: f64) -> f64 {
    let n = ((b - a) / max_panel).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    (0..n)
        .map(|k| {
            let lo = a + k as f64 * h;
            gauss_legendre(&GL5, lo, lo + h, f)
        })
        .sum()
}

fn comb_metadata(comb: &CombSpec, det: &DetectorSpec) -> Vec<(String, String)> {
    let lw = comb.linewidths();
    let mut m = vec![
        ("fsr_hz".into(), comb.fsr_hz().to_string()),
        ("fwhm_signal_hz".into(), lw.fwhm_signal_hz().to_string()),
        (
            "fwhm_idler_hz".into(),
            match lw.idler() {
                IdlerLinewidth::Finite(_) => lw.fwhm_idler_hz().expect("finite").to_string(),
                IdlerLinewidth::Unconfined => "unconfined".into(),
            },
        ),
        (
            "center_nm".into(),
            hz_to_wavelength_nm(comb.center_freq_hz()).to_string(),
        ),
        ("mode_count".into(), comb.mode_count().to_string()),
        ("effective_mode_count".into(), comb.effective_mode_count().to_string()),
        ("jitter_sigma_s".into(), det.jitter_sigma.to_string()),
        ("bin_width_s".into(), det.bin_width.to_string()),
        ("accidental_rate".into(), det.accidental_rate.to_string()),
        ("total_counts".into(), det.total_counts.to_string()),
    ];
    m.sort();
    m
}

fn push_mass(meta: &mut Vec<(String, String)>, mass: f64) {
    meta.push(("window_mass".into(), mass.to_string()));
    if mass < WINDOW_MASS_WARNING {
        meta.push(("warning".into(), "window-holds-less-than-99pct-of-model-mass".into()));
    }
}

/// Expected cross-correlation counts: `total_counts·∫_bin C / ∫_window C + accidentals`.
pub fn expected_cross(comb: &CombSpec, det: &DetectorSpec, purity: f64) -> Result<ExpectedHistogram, SynthError> {
    det.validate()?;
    let model = CrossCorrelationModel::new(comb, det.jitter_sigma, purity, 1.0, 0.0)?;
    let edges = det.edges();
    // Panels resolve the √2σ Gaussians of the multi-mode peaks.
    let panel = det.jitter_sigma * std::f64::consts::SQRT_2 * 0.5;
    let f = |t: f64| model.unit_shape(t);
    let mass: Vec<f64> = edges.windows(2).map(|w| bin_integral(&f, w[0], w[1], panel)).collect();
    let in_window: f64 = mass.iter().sum();
    let expected = mass
        .iter()
        .map(|m| {
            let signal = if in_window > 0.0 {
                det.total_counts * m / in_window
            } else {
                0.0
            };
            signal + det.accidental_rate
        })
        .collect();
    let mut metadata = comb_metadata(comb, det);
    metadata.push(("purity".into(), purity.to_string()));
    push_mass(&mut metadata, in_window);
    Ok(ExpectedHistogram {
        edges,
        expected,
        kind: HistogramKind::Cross,
        metadata,
    })
}

pub fn synthesize_cross(comb: &CombSpec, det: &DetectorSpec, purity: f64, seed: u64) -> Result<Histogram, SynthError> {
    Ok(expected_cross(comb, det, purity)?.sample(seed))
}

/// Single-mode bunching excess `g²_single − 1`, via the same stable form as
/// [`crate::correlation::g2_auto_single`].
fn single_excess(comb: &CombSpec, tau: f64) -> f64 {
    crate::correlation::g2_auto_single(&comb.linewidths(), tau) - 1.0
}

/// Bin-averaged jitter-convolved excess `g² − 1` of the comb's idler
/// autocorrelation on the given edges.
///
/// Each bin needs `∫ e(τ′)[Φ((b−τ′)/s) − Φ((a−τ′)/s)] dτ′ / (b − a)` with
/// `s = √2σ`. The excess is tabulated once on GL5 nodes fine enough to
/// resolve the mode beat, then every bin sums over the nodes within its
/// reach.
pub fn convolved_auto_excess(comb: &CombSpec, sigma: f64, edges: &[f64]) -> Vec<f64> {
    let s = std::f64::consts::SQRT_2 * sigma;
    let lw = comb.linewidths();
    let g_min = lw.gamma_i().map_or(lw.gamma_s(), |gi| gi.min(lw.gamma_s()));
    let g_max = lw.gamma_i().map_or(lw.gamma_s(), |gi| gi.max(lw.gamma_s()));
    // e(τ) ≤ (1 + γ|τ|)²e^{−2γ_min|τ|}; 45/γ_min keeps it below 1e−30.
    let reach = 45.0 / g_min;
    let beat_span = comb.mode_count().saturating_sub(1).max(1) as f64;
    let h = (s / 4.0)
        .min(comb.round_trip() / (4.0 * beat_span))
        .min(1.0 / (8.0 * g_max));
    let panels = (reach / h).ceil() as usize;
    let h = reach / panels as f64;
    let mut nodes = Vec::with_capacity(2 * panels * GL5.len());
    let mut weights = Vec::with_capacity(nodes.capacity());
    for side in [-1.0, 1.0] {
        for k in 0..panels {
            let (a, b) = if side < 0.0 {
                (-reach + k as f64 * h, -reach + (k + 1) as f64 * h)
            } else {
                (k as f64 * h, (k + 1) as f64 * h)
            };
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for &(x, w) in &GL5 {
                let t = mid + half * x;
                nodes.push(t);
                weights.push(w * half * mode_beat(comb, t) * single_excess(comb, t));
            }
        }
    }
    let kernel_reach = 9.0 * s;
    edges
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let lo = nodes.partition_point(|&t| t < a - kernel_reach);
            let hi = nodes.partition_point(|&t| t <= b + kernel_reach);
            let mut acc = 0.0;
            for k in lo..hi {
                let t = nodes[k];
                acc += weights[k] * (normal_cdf((b - t) / s) - normal_cdf((a - t) / s));
            }
            acc / (b - a)
        })
        .collect()
}

/// Expected autocorrelation counts: a flat baseline of
/// `total_counts / n_bins` per bin scaled by `1 + excess`, plus accidentals.
pub fn expected_auto(comb: &CombSpec, det: &DetectorSpec) -> Result<ExpectedHistogram, SynthError> {
    det.validate()?;
    let edges = det.edges();
    let n = edges.len() - 1;
    let excess = convolved_auto_excess(comb, det.jitter_sigma, &edges);
    let baseline = det.total_counts / n as f64;
    let expected = excess
        .iter()
        .map(|e| baseline * (1.0 + e) + det.accidental_rate)
        .collect();
    // Fraction of the integrated excess inside the window.
    let inside: f64 = excess
        .iter()
        .zip(edges.windows(2))
        .map(|(e, w)| e * (w[1] - w[0]))
        .sum();
    let whole = excess_integral(comb);
    let mut metadata = comb_metadata(comb, det);
    push_mass(&mut metadata, (inside / whole).min(1.0));
    Ok(ExpectedHistogram {
        edges,
        expected,
        kind: HistogramKind::Auto,
        metadata,
    })
}

/// `∫(g² − 1)dτ` of the unconvolved model over the whole line, for the
/// window-mass diagnostic.
fn excess_integral(comb: &CombSpec) -> f64 {
    let lw = comb.linewidths();
    let g_min = lw.gamma_i().map_or(lw.gamma_s(), |gi| gi.min(lw.gamma_s()));
    let reach = 45.0 / g_min;
    let edges = [-reach, 0.0, reach];
    let beat_span = comb.mode_count().saturating_sub(1).max(1) as f64;
    let panel = (comb.round_trip() / (4.0 * beat_span)).min(0.125 / g_min);
    let f = |t: f64| mode_beat(comb, t) * single_excess(comb, t);
    edges.windows(2).map(|w| bin_integral(&f, w[0], w[1], panel)).sum()
}

pub fn synthesize_auto(comb: &CombSpec, det: &DetectorSpec, seed: u64) -> Result<Histogram, SynthError> {
    Ok(expected_auto(comb, det)?.sample(seed))
}

/// Model-free estimate of `Δg² = ∫(g² − 1)dτ` from an autocorrelation
/// histogram, with its Poisson standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaG2Estimate {
    pub delta_g2: f64,
    pub std_error: f64,
    pub baseline: f64,
}

/// Default share of bins at each end used for the baseline.
pub const DEFAULT_EDGE_FRACTION: f64 = 0.1;

/// Normalizes by the mean of the outer bins (an `edge_fraction` share at
/// each end) and sums `(N/baseline − 1)·width`.
///
/// Each edge's mean must lie within two single-bin Poisson deviations
/// (`2√baseline`) of the combined baseline; otherwise the window has not
/// reached the uncorrelated level and the edge is named in the error.
pub fn integrate_delta_g2(h: &Histogram, edge_fraction: f64) -> Result<DeltaG2Estimate, SynthError> {
    if h.kind() != HistogramKind::Auto {
        return Err(SynthError::NotAuto);
    }
    if !(edge_fraction > 0.0 && edge_fraction <= 0.5) {
        return Err(SynthError::EdgeFraction(edge_fraction));
    }
    let n = h.len();
    let k = ((n as f64 * edge_fraction).floor() as usize).max(1);
    if n < 2 * k + 1 {
        return Err(SynthError::TooFewBins(n));
    }
    let counts = h.counts();
    let mean = |c: &[u64]| c.iter().sum::<u64>() as f64 / c.len() as f64;
    let left = mean(&counts[..k]);
    let right = mean(&counts[n - k..]);
    let baseline = 0.5 * (left + right);
    if baseline <= 0.0 {
        return Err(SynthError::ZeroBaseline);
    }
    let allowed = 2.0 * baseline.sqrt();
    for (edge, edge_mean) in [("left", left), ("right", right)] {
        if (edge_mean - baseline).abs() > allowed {
            return Err(SynthError::BaselineNotReached {
                edge,
                edge_mean,
                baseline,
                allowed,
            });
        }
    }
    let widths = h.widths();
    let mut sum = 0.0;
    let mut var_counts = 0.0;
    let mut weighted = 0.0;
    for (&c, &w) in counts.iter().zip(&widths) {
        sum += (c as f64 / baseline - 1.0) * w;
        var_counts += c as f64 * w * w;
        weighted += c as f64 * w;
    }
    // Propagate the bin counts and the baseline (mean of 2k bins).
    let var =
        var_counts / (baseline * baseline) + (weighted / (baseline * baseline)).powi(2) * baseline / (2 * k) as f64;
    Ok(DeltaG2Estimate {
        delta_g2: sum,
        std_error: var.sqrt(),
        baseline,
    })
}

/// Mode-number analog of the autocorrelation pipeline.
pub fn estimate_from_histogram(
    h: &Histogram,
    comb: &CombSpec,
    edge_fraction: f64,
) -> Result<(DeltaG2Estimate, f64), SynthError> {
    let est = integrate_delta_g2(h, edge_fraction)?;
    let m = crate::correlation::estimate_mode_count(est.delta_g2, &comb.linewidths())?;
    Ok((est, m))
}
