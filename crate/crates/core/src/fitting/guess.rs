//! Starting values for the fitter.
//!
//! - background: the quieter of the two edge means (outer 5% of bins);
//! - amplitude: background-subtracted counts (divided by the per-mode Δg²
//!   for the autocorrelation shape);
//! - delay: the smoothed maximum;
//! - jitter: the histogram's `jitter_sigma_s` metadata, else the half-maximum
//!   width of the central peak;
//! - round trip: the strongest beat in the FFT of the background-subtracted
//!   counts, with parabolic refinement and a sub-harmonic check;
//! - decay rates: the ratio of summed counts in two consecutive windows of
//!   the tail, `ln(S₁/S₂) = 2γL`.
//!
//! Every guess can be overridden by fixing the parameter or by building the
//! problem by hand.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::comb::Linewidths;
use crate::correlation::delta_g2_for;

use super::{Bounded, FitData, FitError, FitModel, Param};

/// Guessed starting values and default box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub values: BTreeMap<Param, f64>,
    pub bounds: BTreeMap<Param, (f64, f64)>,
}

/// Purity start when nothing better is known.
const PURITY_START: f64 = 0.9;

impl InitialGuess {
    pub fn bounded(&self, p: Param) -> Bounded {
        let initial = self.values[&p];
        let (lower, upper) = self.bounds[&p];
        Bounded {
            initial: initial.clamp(lower, upper),
            lower,
            upper,
        }
    }

    pub fn estimate(
        data: &FitData,
        model: FitModel,
        unconfined: bool,
        fixed: &BTreeMap<Param, f64>,
    ) -> Result<Self, FitError> {
        let centers = data.centers();
        let counts = data.counts();
        let n = counts.len();
        let bin = data.edges()[1] - data.edges()[0];
        let (tau_min, tau_max) = (data.edges()[0], data.edges()[n]);
        let mut values = BTreeMap::new();
        let pick = |p: Param, v: f64| fixed.get(&p).copied().unwrap_or(v);

        let k = (n / 20).max(1);
        let edge_mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let background = pick(
            Param::Background,
            edge_mean(&counts[..k]).min(edge_mean(&counts[n - k..])).max(0.0),
        );
        values.insert(Param::Background, background);
        let net: Vec<f64> = counts.iter().map(|c| c - background).collect();

        let smoothed: Vec<f64> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 2).min(n);
                net[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
            })
            .collect();
        let peak_idx = (0..n).max_by(|a, b| smoothed[*a].total_cmp(&smoothed[*b])).unwrap_or(0);
        let peak = smoothed[peak_idx];
        if !(peak > 0.0) {
            return Err(FitError::Guess {
                param: Param::Amplitude,
                reason: "no counts above the background".into(),
            });
        }
        let delay = pick(Param::Delay, centers[peak_idx]);
        values.insert(Param::Delay, delay);

        let sigma = match fixed.get(&Param::Sigma) {
            Some(s) => *s,
            None => data
                .metadata()
                .get("jitter_sigma_s")
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|s| *s > 0.0)
                .unwrap_or_else(|| {
                    let half = 0.5 * peak;
                    let mut l = peak_idx;
                    while l > 0 && smoothed[l - 1] > half {
                        l -= 1;
                    }
                    let mut r = peak_idx;
                    while r + 1 < n && smoothed[r + 1] > half {
                        r += 1;
                    }
                    // FWHM of a Gaussian of standard deviation √2σ.
                    ((r - l + 1) as f64 * bin / (2.0 * (2.0 * 2f64.ln()).sqrt() * std::f64::consts::SQRT_2))
                        .max(0.5 * bin)
                }),
        };
        values.insert(Param::Sigma, sigma);

        let needs_t0 = matches!(model, FitModel::CrossMulti | FitModel::CrossSum);
        let round_trip = match fixed.get(&Param::RoundTrip) {
            Some(t) => Some(*t),
            None if needs_t0 => Some(round_trip_from_fft(&net, bin).ok_or_else(|| FitError::Guess {
                param: Param::RoundTrip,
                reason: "no beat peak in the spectrum of the counts".into(),
            })?),
            None => None,
        };
        if let Some(t0) = round_trip {
            values.insert(Param::RoundTrip, t0);
        }

        // Tails start a few jitter widths (and at least one round trip) away
        // from the peak.
        let offset = (6.0 * sigma).max(round_trip.unwrap_or(0.0));
        let gamma_s = match fixed.get(&Param::GammaS) {
            Some(g) => *g,
            None => decay_rate_from_tail(&centers, &net, delay - offset, tau_min, round_trip).ok_or_else(|| {
                FitError::Guess {
                    param: Param::GammaS,
                    reason: "the τ < 0 tail does not decay within the window".into(),
                }
            })?,
        };
        values.insert(Param::GammaS, gamma_s);
        if !unconfined {
            let gi = fixed.get(&Param::GammaI).copied().unwrap_or_else(|| {
                let right = if model == FitModel::AutoSingle {
                    None
                } else {
                    decay_rate_from_tail(&centers, &net, delay + offset, tau_max, round_trip)
                };
                right.unwrap_or(2.0 * gamma_s)
            });
            values.insert(Param::GammaI, gi);
        }

        let total: f64 = net.iter().sum::<f64>().max(peak);
        let amplitude = if model == FitModel::AutoSingle {
            let lw = match values.get(&Param::GammaI) {
                Some(gi) => Linewidths::doubly_resonant(gamma_s, *gi),
                None => Linewidths::singly_resonant(gamma_s),
            }
            .map_err(|e| FitError::Guess {
                param: Param::Amplitude,
                reason: e.to_string(),
            })?;
            total / delta_g2_for(&lw, 1.0)
        } else {
            total
        };
        values.insert(Param::Amplitude, pick(Param::Amplitude, amplitude));
        if model == FitModel::CrossSum {
            values.insert(Param::Purity, pick(Param::Purity, PURITY_START));
        }

        let mut bounds = BTreeMap::new();
        for (p, v) in &values {
            let b = match p {
                Param::Amplitude => (1e-9 * v, f64::INFINITY),
                Param::Background => (0.0, f64::INFINITY),
                Param::GammaS => (1e-3 * v, 1e3 * v),
                Param::GammaI => (1e-2 * gamma_s, 1e4 * gamma_s),
                Param::Sigma => (1e-2 * v, 1e2 * v),
                Param::Delay => (tau_min, tau_max),
                Param::RoundTrip => (0.5 * v, 2.0 * v),
                Param::Purity => (0.0, 1.0),
            };
            bounds.insert(*p, b);
        }
        values.retain(|p, _| model.params(unconfined).contains(p));
        bounds.retain(|p, _| values.contains_key(p));
        Ok(Self { values, bounds })
    }
}

/// Beat period of a histogram from its spectrum: the strongest non-DC
/// frequency (after the spectrum first stops falling), parabolically
/// refined, then moved to a sub-harmonic if one carries at least 30% of its
/// magnitude.
pub fn round_trip_from_fft(net: &[f64], bin: f64) -> Option<f64> {
    let n = net.len();
    if n < 8 {
        return None;
    }
    let mean = net.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = net.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let mag: Vec<f64> = buf[..=half].iter().map(|c| c.norm()).collect();
    // Skip the low-frequency envelope: walk down until the spectrum turns up.
    let mut start = 1;
    while start < half && mag[start + 1] <= mag[start] {
        start += 1;
    }
    if start >= half {
        return None;
    }
    let k = (start..=half).max_by(|a, b| mag[*a].total_cmp(&mag[*b]))?;
    let refine = |k: usize| -> f64 {
        if k == 0 || k >= half {
            return k as f64;
        }
        let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
        let den = a - 2.0 * b + c;
        if den.abs() < 1e-300 || !den.is_finite() {
            k as f64
        } else {
            k as f64 + 0.5 * (a - c) / den
        }
    };
    let mut best = k;
    for div in (2..=4).rev() {
        let guess = (k as f64 / div as f64).round() as usize;
        if guess < start || guess == 0 {
            continue;
        }
        let lo = guess.saturating_sub(1).max(1);
        let hi = (guess + 1).min(half);
        if let Some(sub) = (lo..=hi).max_by(|a, b| mag[*a].total_cmp(&mag[*b])) {
            if mag[sub] >= 0.3 * mag[k] {
                best = sub;
                break;
            }
        }
    }
    let freq = refine(best) / (n as f64 * bin);
    (freq > 0.0).then(|| 1.0 / freq)
}

/// Decay rate γ of a tail `∝ e^{−2γ|τ − start|}` running from `start` toward
/// `limit` (either side), from the summed counts of two consecutive windows.
/// Window lengths are rounded to whole beat periods when `period` is given.
pub fn decay_rate_from_tail(centers: &[f64], net: &[f64], start: f64, limit: f64, period: Option<f64>) -> Option<f64> {
    let extent = (limit - start).abs();
    let dir = (limit - start).signum();
    let window_sum = |from: f64, len: f64| -> f64 {
        let (a, b) = if dir < 0.0 {
            (from - len, from)
        } else {
            (from, from + len)
        };
        centers
            .iter()
            .zip(net)
            .filter(|(t, _)| **t >= a && **t < b)
            .map(|(_, v)| *v)
            .sum()
    };
    let snap = |len: f64| match period {
        Some(p) if p > 0.0 && len > p => (len / p).round() * p,
        _ => len,
    };
    let mut len = snap(extent / 4.0);
    let mut gamma = None;
    for _ in 0..3 {
        if !(len > 0.0) || 2.0 * len > extent {
            break;
        }
        let s1 = window_sum(start, len);
        let s2 = window_sum(start + dir * len, len);
        if !(s1 > 0.0 && s2 > 0.0 && s1 > s2) {
            break;
        }
        let g = (s1 / s2).ln() / (2.0 * len);
        gamma = Some(g);
        // About one and a half decay lengths per window balances noise.
        len = snap((1.5 / (2.0 * g)).min(extent / 2.0));
    }
    gamma
}
