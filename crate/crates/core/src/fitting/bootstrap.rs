//! Parametric bootstrap of fit uncertainties.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{fit, FitError, FitProblem, Param};

pub const MIN_RESAMPLES: usize = 50;

/// Refits that may fail before the bootstrap is rejected.
const MAX_FAILURE_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    /// Sample standard deviation of each free parameter over the refits.
    pub std_devs: BTreeMap<Param, f64>,
    pub resamples: usize,
    pub failures: usize,
}

/// Draws every bin from a Poisson law centred on the observed count, refits
/// starting from the fit of the observed data, and reports the spread of the
/// estimates. One ChaCha8 stream seeded with `seed` drives all resamples.
pub fn bootstrap_errors(problem: &FitProblem, n_resamples: usize, seed: u64) -> Result<BootstrapSummary, FitError> {
    if n_resamples < MIN_RESAMPLES {
        return Err(FitError::TooFewResamples {
            min: MIN_RESAMPLES,
            got: n_resamples,
        });
    }
    let base = fit(problem)?;
    let start = problem.restarted_from(&base);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: BTreeMap<Param, Vec<f64>> = BTreeMap::new();
    let mut failures = 0;
    for _ in 0..n_resamples {
        let counts: Vec<f64> = start
            .data
            .counts()
            .iter()
            .map(|&c| {
                if c > 0.0 {
                    Poisson::new(c).expect("positive finite mean").sample(&mut rng)
                } else {
                    0.0
                }
            })
            .collect();
        let mut p = start.clone();
        p.data = start.data.with_counts(counts);
        match fit(&p) {
            Ok(r) if r.converged => {
                for q in &r.free_params {
                    samples.entry(*q).or_default().push(r.estimates[q]);
                }
            }
            _ => failures += 1,
        }
    }
    if failures as f64 > MAX_FAILURE_SHARE * n_resamples as f64 {
        return Err(FitError::Bootstrap {
            failed: failures,
            total: n_resamples,
        });
    }
    let std_devs = samples
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(p, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (p, var.sqrt())
        })
        .collect();
    Ok(BootstrapSummary {
        std_devs,
        resamples: n_resamples,
        failures,
    })
}
