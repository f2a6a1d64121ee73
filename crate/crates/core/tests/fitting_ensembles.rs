//! Statistical properties of the cross-correlation fit over seeded ensembles.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use bfc_core::comb::wavelength_nm_to_hz;
use bfc_core::fitting::{bootstrap_errors, fit, FitData, FitModel, FitProblem, Param, Weighting};
use bfc_core::synth::{expected_cross, synthesize_cross, DetectorSpec};
use bfc_core::{CombSpec, Linewidths};

const G: f64 = PI * 126e6;
const T0: f64 = 285.7e-12;

fn comb() -> CombSpec {
    CombSpec::new(
        1.0 / T0,
        Linewidths::singly_resonant(G).unwrap(),
        wavelength_nm_to_hz(1580.0),
        100,
        2.0 * PI * wavelength_nm_to_hz(790.0),
    )
    .unwrap()
}

fn det(total: f64) -> DetectorSpec {
    DetectorSpec {
        jitter_sigma: 30e-12,
        bin_width: 4e-12,
        tau_min: -12e-9,
        tau_max: 3e-9,
        accidental_rate: 1.0,
        total_counts: total,
    }
}

fn problem(data: FitData, weighting: Weighting) -> FitProblem {
    let mut p = FitProblem::with_guesses(data, FitModel::CrossSum, true, &BTreeMap::new()).unwrap();
    p.weighting = weighting;
    p
}

fn synth_problem(purity: f64, total: f64, seed: u64, weighting: Weighting) -> FitProblem {
    let h = synthesize_cross(&comb(), &det(total), purity, seed).unwrap();
    problem(FitData::from(&h), weighting)
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn quantile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

#[test]
fn model_weighted_recovery_percentiles() {
    let mut errs: Vec<f64> = (0..100)
        .map(|seed| {
            let r = fit(&synth_problem(0.95, 1e5, seed, Weighting::Model)).unwrap();
            assert!(r.converged, "seed {seed}");
            (r.estimate(Param::GammaS).unwrap() / G - 1.0).abs()
        })
        .collect();
    let median = quantile(&mut errs, 0.5);
    let p90 = quantile(&mut errs, 0.9);
    assert!(median < 0.02, "median {median}");
    assert!(p90 < 0.05, "90th percentile {p90}");
}

#[test]
fn bootstrap_spread_matches_ensemble_scatter() {
    let ensemble: Vec<f64> = (100..200)
        .filter_map(|seed| fit(&synth_problem(0.95, 1e5, seed, Weighting::Observed)).ok())
        .filter(|r| r.converged)
        .map(|r| r.estimate(Param::GammaS).unwrap())
        .collect();
    assert!(ensemble.len() >= 95);
    let scatter = std_dev(&ensemble);
    let boot = bootstrap_errors(&synth_problem(0.95, 1e5, 7, Weighting::Observed), 100, 11).unwrap();
    let sigma = boot.std_devs[&Param::GammaS];
    let ratio = sigma / scatter;
    assert!(
        (0.5..=2.0).contains(&ratio),
        "bootstrap {sigma:e} vs ensemble {scatter:e}"
    );
}

#[test]
fn bootstrap_spread_scales_as_inverse_root_counts() {
    let totals = [1e4, 1e5, 1e6];
    let sigmas: Vec<f64> = totals
        .iter()
        .map(|&n| {
            let b = bootstrap_errors(&synth_problem(0.95, n, 3, Weighting::Observed), 60, 5).unwrap();
            b.std_devs[&Param::GammaS]
        })
        .collect();
    // Log-log slope over two decades; −½ expected.
    let slope = (sigmas[2] / sigmas[0]).ln() / (totals[2] / totals[0]).ln();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}, sigmas {sigmas:?}");
}

#[test]
fn noiseless_data_gives_vanishing_spread() {
    // Expected counts at a very large total: the Poisson resamples are
    // relatively tiny perturbations of an exact optimum.
    let mut d = det(1e16);
    d.accidental_rate = 1e11;
    let e = expected_cross(&comb(), &d, 0.95).unwrap();
    let p = problem(FitData::new(e.edges, e.expected).unwrap(), Weighting::Observed);
    let b = bootstrap_errors(&p, 50, 1).unwrap();
    assert_eq!(b.failures, 0);
    for (param, sd) in &b.std_devs {
        let scale = match param {
            Param::Delay => 30e-12,
            _ => fit(&p).unwrap().estimate(*param).unwrap().abs(),
        };
        assert!(sd / scale < 1e-6, "{param}: {sd:e} relative to {scale:e}");
    }
}

#[test]
fn fully_coherent_purity_is_recovered_within_two_sigma() {
    let p = synth_problem(1.0, 1e5, 21, Weighting::Observed);
    let r = fit(&p).unwrap();
    let est = r.estimate(Param::Purity).unwrap();
    let sigma = bootstrap_errors(&p, 60, 4).unwrap().std_devs[&Param::Purity];
    assert!((1.0 - est) <= 2.0 * sigma + 1e-12, "p̂ = {est}, σ = {sigma}");
}
