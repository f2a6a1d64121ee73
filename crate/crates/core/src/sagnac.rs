//! Polarization state at the output of a Sagnac loop around a singly
//! resonant down-converter.
//!
//! Signal photons reflected off the resonator leave through the wrong port
//! and add `|VH⟩` and `|HV⟩` pairs to the wanted `|HH⟩`, `|VV⟩` terms. With
//! unequal arm delays the `|HV⟩` pairs fall outside the coincidence window;
//! the `|VH⟩` pairs overlap it with weight `|β_H|² e^{−2γΔτ}/2` relative to
//! the entangled part, and their phase is randomized.
//!
//! Kets are ordered idler first: `|VH⟩` is a V idler with an H signal.

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{hermitian_part, DensityError, DensityMatrix};

/// Tolerance on `|t|² + |r|² = 1`.
pub const UNITARITY_TOL: f64 = 1e-9;
/// Relative mismatch of the two pair amplitudes accepted by [`PumpBalance::Assert`].
pub const BALANCE_TOL: f64 = 1e-9;

const HH: usize = 0;
const VH: usize = 2;
const VV: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum SagnacError {
    #[error("{side} side: |t|² + |r|² = {value}, expected 1")]
    Unitarity { side: &'static str, value: f64 },
    #[error("{name} = {value} must lie in (0, 1]")]
    Loss { name: &'static str, value: f64 },
    #[error("{name} = {value} is out of range")]
    Range { name: &'static str, value: f64 },
    #[error("{0} transmittance is zero")]
    ZeroTransmittance(&'static str),
    #[error("pump couplings are unbalanced: amplitudes {vv:e} (VV) and {hh:e} (HH) differ")]
    Unbalanced { vv: f64, hh: f64 },
    #[error("the balanced-loop bound needs equal arm delays, got Δτ = {0:e} s")]
    ArmDelay(f64),
    #[error("measured fidelity {0} is outside (0, 1]")]
    Fidelity(f64),
    #[error("closed form {beta_form} and loss form {loss_form} of the bound disagree")]
    BoundMismatch { beta_form: f64, loss_form: f64 },
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// How the pump balance `g_H η_ir t_l η_sr = g_V η_il t_r η_sl` is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpBalance {
    /// The given couplings must already satisfy it.
    Assert,
    /// `g_V` is replaced by the value that satisfies it.
    #[default]
    Solve,
}

/// Raw interferometer parameters, as read from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SagnacParams {
    /// Resonator reflection and transmission amplitudes, entering from the left or right.
    pub r_l: Complex64,
    pub r_r: Complex64,
    pub t_l: Complex64,
    pub t_r: Complex64,
    /// Amplitude transmissions of the signal (`s`) and idler (`i`) paths leaving left or right.
    pub eta_sl: f64,
    pub eta_sr: f64,
    pub eta_il: f64,
    pub eta_ir: f64,
    /// Arm delay difference `τ_r − τ_l` in seconds.
    pub delta_tau: f64,
    /// Temporal decay rate of the pair wavepacket (rad/s).
    pub gamma: f64,
    /// Relative phase of the entangled pair.
    pub phase_phi: f64,
    /// Phase of the reflected contribution.
    pub delta_theta: f64,
    /// Pump couplings of the H and V pump components.
    pub g_h: Complex64,
    pub g_v: Complex64,
    #[serde(default)]
    pub pump_balance: PumpBalance,
}

/// Validated interferometer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SagnacParams", into = "SagnacParams")]
pub struct SagnacSpec(SagnacParams);

impl TryFrom<SagnacParams> for SagnacSpec {
    type Error = SagnacError;

    fn try_from(p: SagnacParams) -> Result<Self, Self::Error> {
        Self::new(p)
    }
}

impl From<SagnacSpec> for SagnacParams {
    fn from(s: SagnacSpec) -> Self {
        s.0
    }
}

impl SagnacSpec {
    pub fn new(p: SagnacParams) -> Result<Self, SagnacError> {
        for (side, r, t) in [("left", p.r_l, p.t_l), ("right", p.r_r, p.t_r)] {
            let value = r.norm_sqr() + t.norm_sqr();
            if !((value - 1.0).abs() <= UNITARITY_TOL) {
                return Err(SagnacError::Unitarity { side, value });
            }
        }
        for (name, value) in [
            ("eta_sl", p.eta_sl),
            ("eta_sr", p.eta_sr),
            ("eta_il", p.eta_il),
            ("eta_ir", p.eta_ir),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(SagnacError::Loss { name, value });
            }
        }
        if !(p.delta_tau >= 0.0 && p.delta_tau.is_finite()) {
            return Err(SagnacError::Range {
                name: "delta_tau",
                value: p.delta_tau,
            });
        }
        if !(p.gamma > 0.0 && p.gamma.is_finite()) {
            return Err(SagnacError::Range {
                name: "gamma",
                value: p.gamma,
            });
        }
        for (name, value) in [("phase_phi", p.phase_phi), ("delta_theta", p.delta_theta)] {
            if !value.is_finite() {
                return Err(SagnacError::Range { name, value });
            }
        }
        for (name, g) in [("g_h", p.g_h), ("g_v", p.g_v)] {
            if !(g.re.is_finite() && g.im.is_finite()) {
                return Err(SagnacError::Range { name, value: g.norm() });
            }
        }
        Ok(Self(p))
    }

    /// A reciprocal resonator with real `t = √(1−|r|²)` on both sides and
    /// `r_l = r_r = i|r|` (so that `r_l* t_r + t_l* r_r = 0`), balanced pump.
    pub fn symmetric(
        reflectance: f64,
        eta_sl: f64,
        eta_sr: f64,
        delta_tau: f64,
        gamma: f64,
        phase_phi: f64,
    ) -> Result<Self, SagnacError> {
        if !(0.0..1.0).contains(&reflectance) {
            return Err(SagnacError::Range {
                name: "reflectance",
                value: reflectance,
            });
        }
        let r = Complex64::new(0.0, reflectance.sqrt());
        let t = Complex64::from((1.0 - reflectance).sqrt());
        Self::new(SagnacParams {
            r_l: r,
            r_r: r,
            t_l: t,
            t_r: t,
            eta_sl,
            eta_sr,
            eta_il: 1.0,
            eta_ir: 1.0,
            delta_tau,
            gamma,
            phase_phi,
            delta_theta: 0.0,
            g_h: Complex64::from(1.0),
            g_v: Complex64::from(1.0),
            pump_balance: PumpBalance::Solve,
        })
    }

    pub fn params(&self) -> &SagnacParams {
        &self.0
    }

    /// Weight of the overlapping `|VH⟩` term, `|β_H|² e^{−2γΔτ}/2`.
    pub fn contamination_weight(&self) -> Result<f64, SagnacError> {
        let (bh, _) = beta_factors(self)?;
        Ok(0.5 * bh.norm_sqr() * (-2.0 * self.0.gamma * self.0.delta_tau).exp())
    }

    /// Pump couplings after applying the balance mode.
    pub fn balanced_couplings(&self) -> Result<(Complex64, Complex64), SagnacError> {
        let p = &self.0;
        if p.t_l == Complex64::from(0.0) {
            return Err(SagnacError::ZeroTransmittance("left"));
        }
        if p.t_r == Complex64::from(0.0) {
            return Err(SagnacError::ZeroTransmittance("right"));
        }
        let vv = p.g_h * p.eta_ir * p.t_l * p.eta_sr;
        match p.pump_balance {
            PumpBalance::Solve => Ok((p.g_h, vv / (p.eta_il * p.t_r * p.eta_sl))),
            PumpBalance::Assert => {
                let hh = p.g_v * p.eta_il * p.t_r * p.eta_sl;
                if (vv - hh).norm() > BALANCE_TOL * vv.norm().max(hh.norm()) {
                    return Err(SagnacError::Unbalanced {
                        vv: vv.norm(),
                        hh: hh.norm(),
                    });
                }
                Ok((p.g_h, p.g_v))
            }
        }
    }
}

/// `β_H = r_l η_sl / (t_l η_sr)`, `β_V = r_r η_sr / (t_r η_sl)`.
pub fn beta_factors(spec: &SagnacSpec) -> Result<(Complex64, Complex64), SagnacError> {
    let p = spec.params();
    if p.t_l == Complex64::from(0.0) {
        return Err(SagnacError::ZeroTransmittance("left"));
    }
    if p.t_r == Complex64::from(0.0) {
        return Err(SagnacError::ZeroTransmittance("right"));
    }
    Ok((
        p.r_l * p.eta_sl / (p.t_l * p.eta_sr),
        p.r_r * p.eta_sr / (p.t_r * p.eta_sl),
    ))
}

/// The windowed ket `|Φ⟩ + (β_H/√2) e^{−γΔτ − iΔθ} |VH⟩` before phase
/// randomization, with `|Φ⟩ = (|HH⟩ + e^{iφ}|VV⟩)/√2`. Not normalized.
pub fn coherent_state(spec: &SagnacSpec) -> Result<Vector4<Complex64>, SagnacError> {
    spec.balanced_couplings()?;
    let (bh, _) = beta_factors(spec)?;
    let p = spec.params();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = Vector4::zeros();
    v[HH] = Complex64::from(s);
    v[VV] = Complex64::from_polar(s, p.phase_phi);
    v[VH] = bh * s * Complex64::from_polar((-p.gamma * p.delta_tau).exp(), -p.delta_theta);
    Ok(v)
}

/// `ρ = (|Φ⟩⟨Φ| + w|VH⟩⟨VH|)/(1 + w)` with `w = |β_H|² e^{−2γΔτ}/2`: the
/// coherent state with every coherence between `|VH⟩` and the rest removed.
pub fn postselected_state(spec: &SagnacSpec) -> Result<DensityMatrix, SagnacError> {
    spec.balanced_couplings()?;
    let w = spec.contamination_weight()?;
    let phi = DensityMatrix::phi(spec.params().phase_phi).into_matrix();
    let mut m = phi;
    m[(VH, VH)] += Complex64::from(w);
    let m = m / Complex64::from(1.0 + w);
    Ok(DensityMatrix::new(hermitian_part(&m))?)
}

/// `F = max_θ ⟨Ψ_θ|ρ|Ψ_θ⟩` with `|Ψ_θ⟩ = (|HH⟩ + e^{iθ}|VV⟩)/√2`, and the
/// maximizing `θ`: `F = ½(ρ_HH,HH + ρ_VV,VV) + |ρ_HH,VV|`, `θ* = −arg ρ_HH,VV`.
pub fn fidelity_max_theta(rho: &DensityMatrix) -> (f64, f64) {
    fidelity_of_matrix(rho.matrix())
}

/// As [`fidelity_max_theta`] for any Hermitian matrix, physical or not.
pub fn fidelity_of_matrix(m: &Matrix4<Complex64>) -> (f64, f64) {
    let c = m[(HH, VV)];
    let theta = if c.norm() == 0.0 { 0.0 } else { -c.arg() };
    (0.5 * (m[(HH, HH)].re + m[(VV, VV)].re) + c.norm(), theta)
}

/// `⟨Ψ_θ|ρ|Ψ_θ⟩` at one phase.
pub fn overlap_at_theta(rho: &DensityMatrix, theta: f64) -> f64 {
    let mut v = Vector4::zeros();
    v[HH] = Complex64::from(std::f64::consts::FRAC_1_SQRT_2);
    v[VV] = Complex64::from_polar(std::f64::consts::FRAC_1_SQRT_2, theta);
    (v.adjoint() * rho.matrix() * v)[(0, 0)].re
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedFidelity {
    pub value: f64,
    /// The product exceeded one and was clamped.
    pub clamped: bool,
}

/// Fidelity with the overlapping contamination removed:
/// `F_meas · (1 + |β_H|² e^{−2γΔτ}/2)`, clamped at 1.
pub fn corrected_fidelity(measured: f64, spec: &SagnacSpec) -> Result<CorrectedFidelity, SagnacError> {
    if !(measured > 0.0 && measured <= 1.0) {
        return Err(SagnacError::Fidelity(measured));
    }
    let raw = measured * (1.0 + spec.contamination_weight()?);
    Ok(CorrectedFidelity {
        value: raw.min(1.0),
        clamped: raw > 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedBound {
    /// The bound; equals `loss_form` whenever that is defined.
    pub bound: f64,
    /// `½[1 + |1 − β_Hβ_V| / √((1+|β_H|²)(1+|β_V|²))]`.
    pub beta_form: f64,
    /// `½[1 + {(1+|r|²(η_sl²/η_sr² − 1))(1+|r|²(η_sr²/η_sl² − 1))}^{−1/2}]`,
    /// defined for a reciprocal resonator with `|r_l| = |r_r|`.
    pub loss_form: Option<f64>,
}

/// Lower bound on the fidelity when both arms have the same delay and the
/// whole output (including reflected pairs) is used.
pub fn balanced_fidelity_bound(spec: &SagnacSpec) -> Result<BalancedBound, SagnacError> {
    let p = spec.params();
    if p.delta_tau != 0.0 {
        return Err(SagnacError::ArmDelay(p.delta_tau));
    }
    let (bh, bv) = beta_factors(spec)?;
    let beta_form =
        0.5 * (1.0 + (Complex64::from(1.0) - bh * bv).norm() / ((1.0 + bh.norm_sqr()) * (1.0 + bv.norm_sqr())).sqrt());
    let symmetric = (p.r_l.norm() - p.r_r.norm()).abs() <= UNITARITY_TOL;
    let reciprocal = (p.r_l.conj() * p.t_r + p.t_l.conj() * p.r_r).norm() <= UNITARITY_TOL;
    let loss_form = (symmetric && reciprocal).then(|| {
        let r2 = p.r_l.norm_sqr();
        let ratio = (p.eta_sl * p.eta_sl) / (p.eta_sr * p.eta_sr);
        0.5 * (1.0
            + ((1.0 + r2 * (ratio - 1.0)) * (1.0 + r2 * (1.0 / ratio - 1.0)))
                .sqrt()
                .recip())
    });
    if let Some(lf) = loss_form {
        if (lf - beta_form).abs() > 1e-9 {
            return Err(SagnacError::BoundMismatch {
                beta_form,
                loss_form: lf,
            });
        }
    }
    Ok(BalancedBound {
        bound: loss_form.unwrap_or(beta_form),
        beta_form,
        loss_form,
    })
}
