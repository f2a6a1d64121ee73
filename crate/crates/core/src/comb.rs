//! Spectral model of the biphoton frequency comb.
//!
//! Each cavity tooth contributes a Lorentzian-product amplitude
//! `[γ_i − iδ]⁻¹[γ_s + iδ]⁻¹` in the idler detuning `δ = ω_i − ω_m`; the signal
//! frequency is fixed by energy conservation with a monochromatic pump.
//! Phase matching and dispersion are treated as flat across the band.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CombError {
    #[error("free spectral range must be positive and finite, got {0}")]
    Fsr(f64),
    #[error("{side} linewidth must be positive and finite, got {value}")]
    Linewidth { side: &'static str, value: f64 },
    #[error("mode count must be at least 1")]
    NoModes,
    #[error("mode weights must be non-negative, finite and not all zero")]
    ModeWeights,
    #[error("{what} must be positive and finite, got {value}")]
    Frequency { what: &'static str, value: f64 },
    #[error("idler frequency must be finite, got {0}")]
    NonFiniteFrequency(f64),
    #[error("regime threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("config: give exactly one of fwhm_idler_hz or idler_unconfined = true")]
    IdlerSpec,
}

/// Idler-side cavity linewidth. `Unconfined` is the singly resonant limit
/// `γ_i → ∞`, where only the signal photon sees the cavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdlerLinewidth {
    Finite(f64),
    Unconfined,
}

/// Angular half widths (rad/s) of the signal and idler teeth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linewidths {
    gamma_s: f64,
    idler: IdlerLinewidth,
}

impl Linewidths {
    pub fn new(gamma_s: f64, idler: IdlerLinewidth) -> Result<Self, CombError> {
        if !(gamma_s > 0.0 && gamma_s.is_finite()) {
            return Err(CombError::Linewidth {
                side: "signal",
                value: gamma_s,
            });
        }
        if let IdlerLinewidth::Finite(g) = idler {
            if !(g > 0.0 && g.is_finite()) {
                return Err(CombError::Linewidth {
                    side: "idler",
                    value: g,
                });
            }
        }
        Ok(Self { gamma_s, idler })
    }

    pub fn singly_resonant(gamma_s: f64) -> Result<Self, CombError> {
        Self::new(gamma_s, IdlerLinewidth::Unconfined)
    }

    pub fn doubly_resonant(gamma_s: f64, gamma_i: f64) -> Result<Self, CombError> {
        Self::new(gamma_s, IdlerLinewidth::Finite(gamma_i))
    }

    /// From full widths at half maximum in Hz (`γ = π·FWHM`).
    pub fn from_fwhm_hz(signal: f64, idler: Option<f64>) -> Result<Self, CombError> {
        Self::new(
            PI * signal,
            idler.map_or(IdlerLinewidth::Unconfined, |f| IdlerLinewidth::Finite(PI * f)),
        )
    }

    pub fn gamma_s(&self) -> f64 {
        self.gamma_s
    }

    pub fn idler(&self) -> IdlerLinewidth {
        self.idler
    }

    pub fn gamma_i(&self) -> Option<f64> {
        match self.idler {
            IdlerLinewidth::Finite(g) => Some(g),
            IdlerLinewidth::Unconfined => None,
        }
    }

    pub fn fwhm_signal_hz(&self) -> f64 {
        self.gamma_s / PI
    }

    pub fn fwhm_idler_hz(&self) -> Option<f64> {
        self.gamma_i().map(|g| g / PI)
    }

    /// Single-tooth amplitude at idler detuning `x` (unnormalized).
    pub(crate) fn tooth_amplitude(&self, x: f64) -> Complex64 {
        let signal = Complex64::new(self.gamma_s, x);
        match self.idler {
            IdlerLinewidth::Finite(gi) => (Complex64::new(gi, -x) * signal).inv(),
            IdlerLinewidth::Unconfined => signal.inv(),
        }
    }

    /// `∫ a*(x) a(x − d) dx` for two teeth whose centres differ by `d`,
    /// evaluated by residues in the upper half plane.
    pub(crate) fn tooth_overlap(&self, d: f64) -> Complex64 {
        let gs = self.gamma_s;
        let i = Complex64::i();
        match self.idler {
            IdlerLinewidth::Unconfined => {
                if d == 0.0 {
                    Complex64::new(PI / gs, 0.0)
                } else {
                    2.0 * PI * i / Complex64::new(d, 2.0 * gs)
                }
            }
            IdlerLinewidth::Finite(gi) => {
                if d == 0.0 {
                    return Complex64::new(PI / (gi * gs * (gi + gs)), 0.0);
                }
                let r1 = (i * (gi + gs) * Complex64::new(-d, 2.0 * gi) * Complex64::new(-d, gi - gs)).inv();
                let r2 = (i * (gi + gs) * Complex64::new(d, gs - gi) * Complex64::new(d, 2.0 * gs)).inv();
                2.0 * PI * i * (r1 + r2)
            }
        }
    }
}

/// Physical parameters of the comb seen through one filter window.
#[derive(Debug, Clone, PartialEq)]
pub struct CombSpec {
    fsr_hz: f64,
    linewidths: Linewidths,
    center_freq_hz: f64,
    pump_angular: f64,
    /// Intensity weight of each in-band tooth, summing to 1.
    weights: Vec<f64>,
    /// `∫|Σ_m √p_m a_m|²`, so that `jsa_marginal` has unit norm.
    norm_sq: f64,
}

impl CombSpec {
    /// `mode_count` equally weighted teeth at `center + m·fsr`, `m = 0..M`.
    pub fn new(
        fsr_hz: f64,
        linewidths: Linewidths,
        center_freq_hz: f64,
        mode_count: usize,
        pump_angular: f64,
    ) -> Result<Self, CombError> {
        if mode_count == 0 {
            return Err(CombError::NoModes);
        }
        Self::with_mode_weights(fsr_hz, linewidths, center_freq_hz, vec![1.0; mode_count], pump_angular)
    }

    /// Teeth with unequal filter transmission. Weights are relative
    /// intensities and are rescaled to sum to one.
    pub fn with_mode_weights(
        fsr_hz: f64,
        linewidths: Linewidths,
        center_freq_hz: f64,
        weights: Vec<f64>,
        pump_angular: f64,
    ) -> Result<Self, CombError> {
        if !(fsr_hz > 0.0 && fsr_hz.is_finite()) {
            return Err(CombError::Fsr(fsr_hz));
        }
        if !(center_freq_hz > 0.0 && center_freq_hz.is_finite()) {
            return Err(CombError::Frequency {
                what: "center frequency",
                value: center_freq_hz,
            });
        }
        if !(pump_angular > 0.0 && pump_angular.is_finite()) {
            return Err(CombError::Frequency {
                what: "pump frequency",
                value: pump_angular,
            });
        }
        if weights.is_empty() {
            return Err(CombError::NoModes);
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(total > 0.0) {
            return Err(CombError::ModeWeights);
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut spec = Self {
            fsr_hz,
            linewidths,
            center_freq_hz,
            pump_angular,
            weights,
            norm_sq: 1.0,
        };
        spec.norm_sq = spec.unnormalized_norm_sq();
        Ok(spec)
    }

    fn unnormalized_norm_sq(&self) -> f64 {
        let step = 2.0 * PI * self.fsr_hz;
        let amps: Vec<f64> = self.weights.iter().map(|p| p.sqrt()).collect();
        let mut total = 0.0;
        for (m, cm) in amps.iter().enumerate() {
            if *cm == 0.0 {
                continue;
            }
            for (n, cn) in amps.iter().enumerate() {
                if *cn == 0.0 {
                    continue;
                }
                let d = (n as f64 - m as f64) * step;
                total += cm * cn * self.linewidths.tooth_overlap(d).re;
            }
        }
        total
    }

    pub fn fsr_hz(&self) -> f64 {
        self.fsr_hz
    }

    /// Cavity round-trip time `T₀ = 1/FSR`.
    pub fn round_trip(&self) -> f64 {
        1.0 / self.fsr_hz
    }

    pub fn linewidths(&self) -> Linewidths {
        self.linewidths
    }

    pub fn gamma_s(&self) -> f64 {
        self.linewidths.gamma_s
    }

    pub fn center_freq_hz(&self) -> f64 {
        self.center_freq_hz
    }

    pub fn pump_angular(&self) -> f64 {
        self.pump_angular
    }

    pub fn mode_count(&self) -> usize {
        self.weights.len()
    }

    pub fn mode_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Participation ratio `1/Σp_m²`; equals `mode_count` for equal weights.
    pub fn effective_mode_count(&self) -> f64 {
        1.0 / self.weights.iter().map(|p| p * p).sum::<f64>()
    }

    /// Angular frequency of tooth `m`: `ω₀ + 2π·m·FSR`.
    pub fn mode_frequency(&self, m: i64) -> f64 {
        2.0 * PI * self.center_freq_hz + 2.0 * PI * m as f64 * self.fsr_hz
    }

    /// Signal frequency paired with idler frequency `omega_i`.
    pub fn signal_frequency(&self, omega_i: f64) -> f64 {
        self.pump_angular - omega_i
    }

    /// Normalized idler marginal of the joint spectral amplitude.
    pub fn jsa_marginal(&self, omega_i: f64) -> Result<Complex64, CombError> {
        if !omega_i.is_finite() {
            return Err(CombError::NonFiniteFrequency(omega_i));
        }
        Ok(self.jsa_at_detuning(omega_i - 2.0 * PI * self.center_freq_hz))
    }

    /// Same as [`jsa_marginal`](Self::jsa_marginal) but with the argument
    /// measured from tooth 0, which keeps quadrature well conditioned.
    pub fn jsa_at_detuning(&self, x: f64) -> Complex64 {
        let step = 2.0 * PI * self.fsr_hz;
        let sum: Complex64 = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(m, p)| p.sqrt() * self.linewidths.tooth_amplitude(x - m as f64 * step))
            .sum();
        sum / self.norm_sq.sqrt()
    }
}

/// FSR of a Fabry–Pérot resonator of length `length_m` and group index `index`.
pub fn fsr_from_cavity(length_m: f64, index: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * length_m * index)
}

pub fn wavelength_nm_to_hz(nm: f64) -> f64 {
    SPEED_OF_LIGHT / (nm * 1e-9)
}

pub fn hz_to_wavelength_nm(hz: f64) -> f64 {
    SPEED_OF_LIGHT / hz * 1e9
}

/// Config-file form of [`CombSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombConfig {
    pub fsr_hz: f64,
    pub fwhm_signal_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fwhm_idler_hz: Option<f64>,
    #[serde(default)]
    pub idler_unconfined: bool,
    pub center_nm: f64,
    pub mode_count: usize,
    pub pump_nm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_weights: Option<Vec<f64>>,
}

impl TryFrom<&CombConfig> for CombSpec {
    type Error = CombError;

    fn try_from(c: &CombConfig) -> Result<Self, CombError> {
        let idler = match (c.fwhm_idler_hz, c.idler_unconfined) {
            (Some(f), false) => Some(f),
            (None, true) => None,
            _ => return Err(CombError::IdlerSpec),
        };
        let lw = Linewidths::from_fwhm_hz(c.fwhm_signal_hz, idler)?;
        if !(c.center_nm > 0.0) {
            return Err(CombError::Frequency {
                what: "center wavelength",
                value: c.center_nm,
            });
        }
        if !(c.pump_nm > 0.0) {
            return Err(CombError::Frequency {
                what: "pump wavelength",
                value: c.pump_nm,
            });
        }
        let center = wavelength_nm_to_hz(c.center_nm);
        let pump = 2.0 * PI * wavelength_nm_to_hz(c.pump_nm);
        match &c.mode_weights {
            Some(w) => {
                if w.len() != c.mode_count {
                    return Err(CombError::ModeWeights);
                }
                CombSpec::with_mode_weights(c.fsr_hz, lw, center, w.clone(), pump)
            }
            None => CombSpec::new(c.fsr_hz, lw, center, c.mode_count, pump),
        }
    }
}

impl From<&CombSpec> for CombConfig {
    fn from(s: &CombSpec) -> Self {
        let uniform = s.weights.windows(2).all(|w| w[0] == w[1]);
        Self {
            fsr_hz: s.fsr_hz,
            fwhm_signal_hz: s.linewidths.fwhm_signal_hz(),
            fwhm_idler_hz: s.linewidths.fwhm_idler_hz(),
            idler_unconfined: s.linewidths.gamma_i().is_none(),
            center_nm: hz_to_wavelength_nm(s.center_freq_hz),
            mode_count: s.mode_count(),
            pump_nm: hz_to_wavelength_nm(s.pump_angular / (2.0 * PI)),
            mode_weights: (!uniform).then(|| s.weights.clone()),
        }
    }
}

/// Two-mode squeezing strength of the pump and the number of teeth it drives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpRegime {
    pub zeta: Complex64,
    pub mode_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// At most one pair across all teeth: polarization–frequency hyperentanglement.
    Hyperentangled,
    /// At most one pair per tooth: frequency-multiplexed entangled pairs.
    Multiplexed,
    Neither,
}

pub const DEFAULT_REGIME_THRESHOLD: f64 = 0.1;

impl PumpRegime {
    /// `2M|ζ|² < threshold` → hyperentangled; else `2|ζ|² < threshold` →
    /// multiplexed.
    pub fn classify(&self, threshold: f64) -> Result<Regime, CombError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(CombError::Threshold(threshold));
        }
        let per_mode = 2.0 * self.zeta.norm_sqr();
        Ok(if per_mode * f64::from(self.mode_count) < threshold {
            Regime::Hyperentangled
        } else if per_mode < threshold {
            Regime::Multiplexed
        } else {
            Regime::Neither
        })
    }
}
