use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::*;
use crate::comb::{wavelength_nm_to_hz, CombSpec, Linewidths};
use crate::synth::{expected_cross, DetectorSpec};

const G: f64 = PI * 126e6;

fn comb(lw: Linewidths) -> CombSpec {
    CombSpec::new(3.5e9, lw, wavelength_nm_to_hz(1580.0), 100, 1e16).unwrap()
}

fn det(total: f64) -> DetectorSpec {
    DetectorSpec {
        jitter_sigma: 30e-12,
        bin_width: 4e-12,
        tau_min: -12e-9,
        tau_max: 3e-9,
        accidental_rate: 2.0,
        total_counts: total,
    }
}

fn noiseless(lw: Linewidths, purity: f64, total: f64) -> FitData {
    let e = expected_cross(&comb(lw), &det(total), purity).unwrap();
    FitData::new(e.edges, e.expected).unwrap()
}

/// Counts of the fit model itself at `truth`, so the truth is the exact optimum.
fn model_data(model: FitModel, unconfined: bool, truth: &[(Param, f64)]) -> FitData {
    let r = FitResult {
        model,
        idler_unconfined: unconfined,
        reduced_to_singly_resonant: false,
        estimates: truth.iter().copied().collect(),
        free_params: Vec::new(),
        covariance: Vec::new(),
        reduced_chi2: 0.0,
        iterations: 0,
        converged: true,
        cost_trace: Vec::new(),
    };
    let edges = det(1.0).edges();
    let counts = r.model_counts(&edges).unwrap();
    FitData::new(edges, counts).unwrap()
}

#[test]
fn exact_start_on_noiseless_single_mode_data() {
    let truth = [
        (Param::Amplitude, 1e5),
        (Param::Background, 2.0),
        (Param::GammaS, G),
        (Param::Sigma, 30e-12),
        (Param::Delay, 0.0),
    ];
    let data = model_data(FitModel::CrossSingle, true, &truth);
    let mut p = FitProblem::new(data, FitModel::CrossSingle, true);
    for (q, v) in truth {
        let (lo, hi) = if q == Param::Delay {
            (-1e-9, 1e-9)
        } else {
            (0.1 * v, 10.0 * v)
        };
        p = p.free(q, v, lo, hi);
    }
    let r = fit(&p).unwrap();
    assert!(r.converged);
    assert!(r.iterations <= 2, "{} iterations", r.iterations);
    for (q, v) in truth {
        let got = r.estimate(q).unwrap();
        let err = if v == 0.0 {
            got.abs() / 30e-12
        } else {
            (got / v - 1.0).abs()
        };
        assert!(err < 1e-8, "{q}: {got} vs {v}");
    }
}

#[test]
fn noiseless_synthetic_data_is_recovered() {
    // The synthesizer integrates the exact comb; the fit shape is the same
    // function, so only the truncated window mass shifts the amplitude.
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.0, 1e5);
    let p = FitProblem::with_guesses(data, FitModel::CrossSingle, true, &BTreeMap::new()).unwrap();
    let r = fit(&p).unwrap();
    assert!(r.converged);
    assert!((r.estimate(Param::GammaS).unwrap() / G - 1.0).abs() < 1e-6);
    assert!((r.estimate(Param::Sigma).unwrap() / 30e-12 - 1.0).abs() < 1e-6);
    assert!((r.estimate(Param::Amplitude).unwrap() / 1e5 - 1.0).abs() < 1e-3);
}

#[test]
fn recovers_cross_sum_from_heuristic_start() {
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.95, 1e5);
    let p = FitProblem::with_guesses(data, FitModel::CrossSum, true, &BTreeMap::new()).unwrap();
    let r = fit(&p).unwrap();
    assert!(r.converged);
    assert!((r.estimate(Param::GammaS).unwrap() / G - 1.0).abs() < 1e-6);
    assert!((r.estimate(Param::RoundTrip).unwrap() * 3.5e9 - 1.0).abs() < 1e-6);
    assert!((r.estimate(Param::Purity).unwrap() - 0.95).abs() < 1e-6);
    assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    for a in 0..r.covariance.len() {
        for b in 0..r.covariance.len() {
            let (x, y) = (r.covariance[a][b], r.covariance[b][a]);
            assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()));
        }
    }
    let cav = derive_cavity_report(&r, 1580.0).unwrap();
    assert!((cav.finesse - 3.5e9 / 126e6).abs() < 1e-3);
}

#[test]
fn recovers_doubly_resonant_cross_single() {
    let lw = Linewidths::doubly_resonant(G, 3.0 * G).unwrap();
    let data = noiseless(lw, 0.0, 1e5);
    let p = FitProblem::with_guesses(data, FitModel::CrossSingle, false, &BTreeMap::new()).unwrap();
    let r = fit(&p).unwrap();
    assert!(r.converged && !r.reduced_to_singly_resonant);
    assert!((r.estimate(Param::GammaS).unwrap() / G - 1.0).abs() < 1e-6);
    assert!((r.estimate(Param::GammaI).unwrap() / (3.0 * G) - 1.0).abs() < 1e-6);
}

#[test]
fn idler_at_bound_falls_back_to_singly_resonant() {
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.0, 1e5);
    let p = FitProblem::new(data, FitModel::CrossSingle, false)
        .free(Param::Amplitude, 1e5, 1.0, 1e7)
        .free(Param::Background, 2.0, 0.0, 100.0)
        .free(Param::GammaS, G, 0.1 * G, 10.0 * G)
        .free(Param::GammaI, 5.0 * G, 0.1 * G, 30.0 * G)
        .free(Param::Sigma, 30e-12, 1e-12, 1e-10)
        .free(Param::Delay, 0.0, -1e-9, 1e-9);
    let r = fit(&p).unwrap();
    assert!(r.reduced_to_singly_resonant);
    assert!(r.idler_unconfined);
    assert!(r.estimate(Param::GammaI).is_none());
    assert!((r.estimate(Param::GammaS).unwrap() / G - 1.0).abs() < 1e-6);
}

#[test]
fn problem_validation() {
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.0, 1e5);
    let base = FitProblem::new(data.clone(), FitModel::CrossSingle, true)
        .free(Param::Amplitude, 1e5, 1.0, 1e7)
        .free(Param::Background, 2.0, 0.0, 100.0)
        .free(Param::GammaS, G, 0.1 * G, 10.0 * G)
        .fixed(Param::Sigma, 30e-12);
    assert!(matches!(
        base.validate(),
        Err(FitError::MissingParam {
            param: Param::Delay,
            ..
        })
    ));
    let full = base.clone().fixed(Param::Delay, 0.0);
    assert!(full.validate().is_ok());
    assert!(matches!(
        full.clone().fixed(Param::GammaS, G).validate(),
        Err(FitError::Overlap(Param::GammaS))
    ));
    assert!(matches!(
        full.clone().fixed(Param::Purity, 1.0).validate(),
        Err(FitError::ExtraParam { .. })
    ));
    assert!(matches!(
        full.clone().free(Param::Delay, 5e-9, -1e-9, 1e-9).validate(),
        Err(FitError::Overlap(_)) | Err(FitError::Bounds { .. })
    ));
    let tiny = FitData::new(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap();
    let mut small = full;
    small.data = tiny;
    assert!(matches!(small.validate(), Err(FitError::TooFewBins { .. })));
}

#[test]
fn degenerate_parameters_are_named() {
    // Only the far signal tail is visible: amplitude, delay and jitter all
    // rescale the same pure exponential.
    let full = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.0, 1e5);
    let keep: Vec<usize> = (0..full.len()).filter(|&i| full.centers()[i] < -2e-9).collect();
    let edges: Vec<f64> = full.edges()[keep[0]..=keep[keep.len() - 1] + 1].to_vec();
    let counts: Vec<f64> = keep.iter().map(|&i| full.counts()[i] - 2.0).collect();
    let data = FitData::new(edges, counts).unwrap();
    let p = FitProblem::new(data, FitModel::CrossSingle, true)
        .free(Param::Amplitude, 1e5, 1.0, 1e7)
        .fixed(Param::Background, 0.0)
        .fixed(Param::GammaS, G)
        .fixed(Param::Sigma, 30e-12)
        .free(Param::Delay, 0.0, -1e-9, 1e-9);
    match fit(&p) {
        Err(FitError::Degenerate(a, b)) => {
            assert_eq!((a, b), (Param::Amplitude, Param::Delay));
        }
        other => panic!("expected degeneracy, got {other:?}"),
    }
}

#[test]
fn insensitive_parameter_is_named() {
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.0, 1e5);
    let p = FitProblem::new(data, FitModel::CrossSum, true)
        .free(Param::Amplitude, 1e5, 1.0, 1e7)
        .fixed(Param::Background, 2.0)
        .fixed(Param::GammaS, G)
        .fixed(Param::Sigma, 30e-12)
        .fixed(Param::Delay, 0.0)
        .fixed(Param::RoundTrip, 1.0 / 3.5e9)
        .free(Param::Purity, 0.5, 0.0, 1.0);
    let r = fit(&p);
    assert!(r.is_ok(), "{r:?}");
    // At purity 0 the round trip has no effect.
    let q = FitProblem::new(p.data.clone(), FitModel::CrossSum, true)
        .free(Param::Amplitude, 1e5, 1.0, 1e7)
        .fixed(Param::Background, 2.0)
        .fixed(Param::GammaS, G)
        .fixed(Param::Sigma, 30e-12)
        .fixed(Param::Delay, 0.0)
        .free(Param::RoundTrip, 1.0 / 3.5e9, 1e-10, 1e-9)
        .fixed(Param::Purity, 0.0);
    assert!(matches!(fit(&q), Err(FitError::Insensitive(Param::RoundTrip))));
}

#[test]
fn iteration_cap_returns_best_so_far() {
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.95, 1e5);
    let mut p = FitProblem::with_guesses(data, FitModel::CrossSum, true, &BTreeMap::new()).unwrap();
    p.free.get_mut(&Param::GammaS).unwrap().initial *= 1.5;
    p.max_iter = 1;
    let r = fit(&p).unwrap();
    assert!(!r.converged);
    assert_eq!(r.iterations, 1);
    assert!(r.cost_trace.len() <= 2);
    assert!(matches!(derive_cavity_report(&r, 1580.0), Err(FitError::NotConverged)));
}

#[test]
fn model_counts_reproduce_the_data() {
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.95, 1e5);
    let p = FitProblem::with_guesses(data.clone(), FitModel::CrossSum, true, &BTreeMap::new()).unwrap();
    let r = fit(&p).unwrap();
    let m = r.model_counts(data.edges()).unwrap();
    for (a, b) in m.iter().zip(data.counts()) {
        assert!((a - b).abs() < 1e-4 * b.max(1.0));
    }
}

#[test]
fn bootstrap_needs_enough_resamples() {
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.95, 1e5);
    let p = FitProblem::with_guesses(data, FitModel::CrossSum, true, &BTreeMap::new()).unwrap();
    assert!(matches!(
        bootstrap_errors(&p, 10, 1),
        Err(FitError::TooFewResamples { min: 50, got: 10 })
    ));
}

#[test]
fn model_weighting_keeps_the_noiseless_optimum() {
    let data = noiseless(Linewidths::singly_resonant(G).unwrap(), 0.95, 1e5);
    let mut p = FitProblem::with_guesses(data, FitModel::CrossSum, true, &BTreeMap::new()).unwrap();
    p.weighting = Weighting::Model;
    let r = fit(&p).unwrap();
    assert!(r.converged);
    assert!((r.estimate(Param::GammaS).unwrap() / G - 1.0).abs() < 1e-6);
    assert!((r.estimate(Param::Purity).unwrap() - 0.95).abs() < 1e-6);
}
