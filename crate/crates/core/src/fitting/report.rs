//! Cavity figures of merit and the serialized fit report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::comb::SPEED_OF_LIGHT;

use super::{FitError, FitModel, FitResult, Param};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityReport {
    pub fwhm_hz: f64,
    pub fsr_hz: f64,
    pub finesse: f64,
    pub q_factor: f64,
    pub wavelength_nm: f64,
}

impl CavityReport {
    /// `finesse = FSR/FWHM`, `Q = (c/λ)/FWHM`.
    pub fn new(fwhm_hz: f64, fsr_hz: f64, wavelength_nm: f64) -> Result<Self, FitError> {
        for (name, v) in [("fwhm", fwhm_hz), ("fsr", fsr_hz), ("wavelength", wavelength_nm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FitError::Report(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            fwhm_hz,
            fsr_hz,
            finesse: fsr_hz / fwhm_hz,
            q_factor: SPEED_OF_LIGHT / (wavelength_nm * 1e-9) / fwhm_hz,
            wavelength_nm,
        })
    }
}

/// `fwhm = γ_s/π`, `fsr = 1/T₀` from a converged fit.
pub fn derive_cavity_report(fit: &FitResult, wavelength_nm: f64) -> Result<CavityReport, FitError> {
    if !fit.converged {
        return Err(FitError::NotConverged);
    }
    let gamma_s = fit
        .estimate(Param::GammaS)
        .ok_or(FitError::MissingEstimate(Param::GammaS))?;
    let t0 = fit
        .estimate(Param::RoundTrip)
        .ok_or(FitError::MissingEstimate(Param::RoundTrip))?;
    CavityReport::new(gamma_s / std::f64::consts::PI, 1.0 / t0, wavelength_nm)
}

/// Everything needed to archive a fit: estimates, uncertainties, the
/// covariance matrix, goodness of fit and the input histogram's metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: FitModel,
    pub idler_unconfined: bool,
    pub reduced_to_singly_resonant: bool,
    pub converged: bool,
    pub iterations: usize,
    pub reduced_chi2: f64,
    pub estimates: BTreeMap<Param, f64>,
    pub std_errors: BTreeMap<Param, f64>,
    pub covariance_order: Vec<Param>,
    pub covariance: Vec<Vec<f64>>,
    pub source: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cavity: Option<CavityReport>,
}

impl FitReport {
    pub fn new(fit: &FitResult, source: BTreeMap<String, String>, cavity: Option<CavityReport>) -> Self {
        Self {
            model: fit.model,
            idler_unconfined: fit.idler_unconfined,
            reduced_to_singly_resonant: fit.reduced_to_singly_resonant,
            converged: fit.converged,
            iterations: fit.iterations,
            reduced_chi2: fit.reduced_chi2,
            estimates: fit.estimates.clone(),
            std_errors: fit
                .free_params
                .iter()
                .filter_map(|p| fit.std_error(*p).map(|s| (*p, s)))
                .collect(),
            covariance_order: fit.free_params.clone(),
            covariance: fit.covariance.clone(),
            source,
            cavity,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, FitError> {
        serde_json::from_str(s).map_err(|e| FitError::Report(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let r = CavityReport::new(126e6, 3.5e9, 1580.0).unwrap();
        assert_eq!(r.finesse.round(), 28.0);
        assert!((r.q_factor / 1.5e6 - 1.0).abs() < 0.05);
        let r = CavityReport::new(57e6, 3.5e9, 1600.0).unwrap();
        assert!((r.finesse - 62.0).abs() <= 1.0);
        assert!((r.q_factor / 3.3e6 - 1.0).abs() < 0.05);
        let r = CavityReport::new(3.5e9, 3.5e9, 1600.0).unwrap();
        assert_eq!(r.finesse, 1.0);
        assert!(CavityReport::new(0.0, 3.5e9, 1600.0).is_err());
    }

    #[test]
    fn finesse_identity_is_exact() {
        for (fwhm, fsr) in [(516e6, 3.5e9), (243e6, 3.5e9), (85e6, 3.5e9), (1.234e7, 9.87e9)] {
            let r = CavityReport::new(fwhm, fsr, 1570.0).unwrap();
            assert!((r.finesse * r.fwhm_hz / r.fsr_hz - 1.0).abs() < 1e-12);
        }
    }

    fn result(converged: bool, with_t0: bool) -> FitResult {
        let mut estimates = BTreeMap::new();
        estimates.insert(Param::GammaS, std::f64::consts::PI * 126e6);
        if with_t0 {
            estimates.insert(Param::RoundTrip, 1.0 / 3.5e9);
        }
        FitResult {
            model: FitModel::CrossSum,
            idler_unconfined: true,
            reduced_to_singly_resonant: false,
            estimates,
            free_params: vec![Param::GammaS],
            covariance: vec![vec![4.0]],
            reduced_chi2: 1.0,
            iterations: 3,
            converged,
            cost_trace: vec![2.0, 1.0],
        }
    }

    #[test]
    fn derive_requires_converged_fit_and_parameters() {
        let r = derive_cavity_report(&result(true, true), 1580.0).unwrap();
        assert!((r.fwhm_hz - 126e6).abs() < 1e-3);
        assert!((r.fsr_hz - 3.5e9).abs() < 1e-3);
        assert!(matches!(
            derive_cavity_report(&result(false, true), 1580.0),
            Err(FitError::NotConverged)
        ));
        let err = derive_cavity_report(&result(true, false), 1580.0).unwrap_err();
        assert!(err.to_string().contains("round_trip"), "{err}");
    }

    #[test]
    fn report_json_round_trip() {
        let fit = result(true, true);
        let rep = FitReport::new(&fit, BTreeMap::from([("seed".into(), "3".into())]), None);
        assert_eq!(rep.std_errors[&Param::GammaS], 2.0);
        let json = rep.to_json();
        assert!(json.contains("\"gamma_s\""));
        assert_eq!(FitReport::from_json(&json).unwrap(), rep);
    }
}
