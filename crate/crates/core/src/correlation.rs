//! Second-order correlation functions of the comb.
//!
//! All jitter-convolved shapes are built from one kernel, [`tail`]: a one-sided
//! exponential `e^{−kτ}h(τ)` convolved with the Gaussian timing response of a
//! detector pair (standard deviation `√2σ`). Writing it through `erfcx` keeps
//! the `e^{(kσ)²}·erfc(…)` products finite for any `kσ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::comb::{CombSpec, IdlerLinewidth, Linewidths};
use crate::quadrature::{self, QuadratureError, Tolerance};
use crate::special::{erfcx, one_minus_exp_over};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelationError {
    #[error("detector jitter must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("side-peak truncation j_max must be positive")]
    JMax,
    #[error("purity must lie in [0, 1], got {0}")]
    Purity(f64),
    #[error("amplitude must be positive, got {0}")]
    Amplitude(f64),
    #[error("background must be non-negative, got {0}")]
    Background(f64),
    #[error("Δg² must be positive and finite, got {0}")]
    DeltaG2(f64),
    #[error("spectral Δg² quadrature: {0}")]
    Quadrature(#[from] QuadratureError),
}

/// `1/(2√π σ)·e^{−τ²/4σ²}`: the Gaussian of standard deviation `√2σ`.
pub fn pair_gaussian(sigma: f64, tau: f64) -> f64 {
    (-(tau * tau) / (4.0 * sigma * sigma)).exp() / (2.0 * PI.sqrt() * sigma)
}

/// `∫₀^∞ e^{−kx} g_{√2σ}(τ − x) dx
///   = ½ e^{(kσ)² − kτ} erfc(kσ − τ/2σ)`.
pub fn tail(k: f64, sigma: f64, tau: f64) -> f64 {
    let z = k * sigma - tau / (2.0 * sigma);
    let gauss = (-(tau * tau) / (4.0 * sigma * sigma)).exp();
    if z >= 0.0 {
        0.5 * erfcx(z) * gauss
    } else {
        // erfc(z) = 2 − erfc(−z); the first piece is the bare exponential,
        // whose exponent is negative whenever z < 0.
        (k * k * sigma * sigma - k * tau).exp() - 0.5 * erfcx(-z) * gauss
    }
}

/// `∂tail/∂k = (2kσ² − τ)·tail − 2σ²·g(τ)`.
pub fn tail_dk(k: f64, sigma: f64, tau: f64, tail_value: f64) -> f64 {
    (2.0 * k * sigma * sigma - tau) * tail_value - 2.0 * sigma * sigma * pair_gaussian(sigma, tau)
}

/// `∂tail/∂σ = 2k²σ·tail − (2kσ + τ/σ)·g(τ)`.
pub fn tail_dsigma(k: f64, sigma: f64, tau: f64, tail_value: f64) -> f64 {
    2.0 * k * k * sigma * tail_value - (2.0 * k * sigma + tau / sigma) * pair_gaussian(sigma, tau)
}

/// `∂tail/∂τ = g(τ) − k·tail`.
pub fn tail_dtau(k: f64, sigma: f64, tau: f64, tail_value: f64) -> f64 {
    pair_gaussian(sigma, tau) - k * tail_value
}

/// Cross-correlation shape parameters with the linewidths unpacked, so that
/// the fitter can vary them freely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossShape {
    pub gamma_s: f64,
    /// `None` for an unconfined (singly resonant) idler.
    pub gamma_i: Option<f64>,
    pub sigma: f64,
    pub round_trip: f64,
}

/// Tail-bound for the automatic side-peak cut-off.
pub const SIDE_PEAK_TAIL: f64 = 1e-12;

impl CrossShape {
    pub fn from_comb(comb: &CombSpec, sigma: f64) -> Result<Self, CorrelationError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(CorrelationError::Sigma(sigma));
        }
        Ok(Self {
            gamma_s: comb.gamma_s(),
            gamma_i: comb.linewidths().gamma_i(),
            sigma,
            round_trip: comb.round_trip(),
        })
    }

    /// Single-tooth cross-correlation (unnormalized; integrates to
    /// `1/2γ_i + 1/2γ_s`).
    pub fn single(&self, tau: f64) -> f64 {
        let idler = self.gamma_i.map_or(0.0, |gi| tail(2.0 * gi, self.sigma, tau));
        idler + tail(2.0 * self.gamma_s, self.sigma, -tau)
    }

    /// `2γ_iγ_s/(γ_i + γ_s)`, which scales [`single`](Self::single) to unit area.
    pub fn single_norm(&self) -> f64 {
        match self.gamma_i {
            Some(gi) => 2.0 * gi * self.gamma_s / (gi + self.gamma_s),
            None => 2.0 * self.gamma_s,
        }
    }

    fn decay_ratios(&self) -> (f64, f64) {
        let qi = self.gamma_i.map_or(0.0, |gi| (-2.0 * gi * self.round_trip).exp());
        let qs = (-2.0 * self.gamma_s * self.round_trip).exp();
        (qi, qs)
    }

    /// Smallest `j` with `e^{−2γ_min j T₀} < 10⁻¹²`.
    pub fn auto_j_max(&self) -> usize {
        let g_min = self.gamma_i.map_or(self.gamma_s, |gi| gi.min(self.gamma_s));
        let j = (-SIDE_PEAK_TAIL.ln() / (2.0 * g_min * self.round_trip)).floor() + 1.0;
        (j as usize).max(1)
    }

    /// Multi-tooth cross-correlation: a train of Gaussians at `jT₀`
    /// weighted by `e^{−2γ_i jT₀}` (τ > 0) and `e^{−2γ_s jT₀}` (τ < 0).
    pub fn multi(&self, tau: f64, j_max: usize) -> f64 {
        let (qi, qs) = self.decay_ratios();
        let t0 = self.round_trip;
        let reach = 2.0 * self.sigma * 750f64.sqrt();
        let mut sum = pair_gaussian(self.sigma, tau);
        let clamp = |lo: f64, hi: f64| -> (usize, usize) {
            let lo = lo.ceil().max(1.0);
            let hi = hi.floor().min(j_max as f64);
            if hi < lo {
                (1, 0)
            } else {
                (lo as usize, hi as usize)
            }
        };
        if qi > 0.0 {
            let (lo, hi) = clamp((tau - reach) / t0, (tau + reach) / t0);
            for j in lo..=hi {
                let x = tau - j as f64 * t0;
                sum += qi.powi(j as i32) * pair_gaussian(self.sigma, x);
            }
        }
        let (lo, hi) = clamp((-tau - reach) / t0, (-tau + reach) / t0);
        for j in lo..=hi {
            let x = tau + j as f64 * t0;
            sum += qs.powi(j as i32) * pair_gaussian(self.sigma, x);
        }
        sum
    }

    /// `(1−q_i)(1−q_s)/(1−q_iq_s)` with `q = e^{−2γT₀}`; scales
    /// [`multi`](Self::multi) to unit area.
    pub fn multi_norm(&self) -> f64 {
        let (qi, qs) = self.decay_ratios();
        (1.0 - qi) * (1.0 - qs) / (1.0 - qi * qs)
    }
}

/// Single-mode cross-correlation with detector jitter `sigma`.
pub fn cross_single(comb: &CombSpec, sigma: f64, tau: f64) -> Result<f64, CorrelationError> {
    Ok(CrossShape::from_comb(comb, sigma)?.single(tau))
}

/// Multi-mode cross-correlation; `j_max = None` picks the 10⁻¹² tail bound.
pub fn cross_multi(comb: &CombSpec, sigma: f64, tau: f64, j_max: Option<usize>) -> Result<f64, CorrelationError> {
    let shape = CrossShape::from_comb(comb, sigma)?;
    let j = match j_max {
        Some(0) => return Err(CorrelationError::JMax),
        Some(j) => j,
        None => shape.auto_j_max(),
    };
    Ok(shape.multi(tau, j))
}

/// Mixture of the coherent multi-mode and incoherent single-mode shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelationModel {
    shape: CrossShape,
    purity: f64,
    amplitude: f64,
    background: f64,
    j_max: usize,
}

impl CrossCorrelationModel {
    pub fn new(
        comb: &CombSpec,
        sigma: f64,
        purity: f64,
        amplitude: f64,
        background: f64,
    ) -> Result<Self, CorrelationError> {
        Self::from_shape(CrossShape::from_comb(comb, sigma)?, purity, amplitude, background)
    }

    pub fn from_shape(
        shape: CrossShape,
        purity: f64,
        amplitude: f64,
        background: f64,
    ) -> Result<Self, CorrelationError> {
        if !(shape.sigma > 0.0 && shape.sigma.is_finite()) {
            return Err(CorrelationError::Sigma(shape.sigma));
        }
        if !(0.0..=1.0).contains(&purity) {
            return Err(CorrelationError::Purity(purity));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(CorrelationError::Amplitude(amplitude));
        }
        if !(background >= 0.0 && background.is_finite()) {
            return Err(CorrelationError::Background(background));
        }
        Ok(Self {
            j_max: shape.auto_j_max(),
            shape,
            purity,
            amplitude,
            background,
        })
    }

    pub fn shape(&self) -> &CrossShape {
        &self.shape
    }

    pub fn purity(&self) -> f64 {
        self.purity
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    /// Unit-area mixture without amplitude or background.
    pub fn unit_shape(&self, tau: f64) -> f64 {
        let p = self.purity;
        let mut v = 0.0;
        if p > 0.0 {
            v += p * self.shape.multi_norm() * self.shape.multi(tau, self.j_max);
        }
        if p < 1.0 {
            v += (1.0 - p) * self.shape.single_norm() * self.shape.single(tau);
        }
        v
    }

    /// `amplitude·[p·N_multi·C_multi + (1−p)·N_single·C_single] + background`.
    pub fn cross_sum(&self, tau: f64) -> f64 {
        self.amplitude * self.unit_shape(tau) + self.background
    }
}

/// Single-mode normalized idler autocorrelation,
/// `1 + |(γ_i e^{−γ_s|τ|} − γ_s e^{−γ_i|τ|})/(γ_i − γ_s)|²`.
pub fn g2_auto_single(linewidths: &Linewidths, tau: f64) -> f64 {
    1.0 + single_mode_excess(linewidths, tau)
}

/// Relative linewidth difference below which the equal-linewidth limit is used.
pub const DEGENERATE_LINEWIDTH: f64 = 1e-8;

fn single_mode_excess(linewidths: &Linewidths, tau: f64) -> f64 {
    let t = tau.abs();
    let gs = linewidths.gamma_s();
    let amp = match linewidths.idler() {
        IdlerLinewidth::Unconfined => (-gs * t).exp(),
        IdlerLinewidth::Finite(gi) => {
            let d = gi - gs;
            if d.abs() < DEGENERATE_LINEWIDTH * gs {
                (1.0 + gs * t) * (-gs * t).exp()
            } else {
                // (γ_i e^{−γ_s t} − γ_s e^{−γ_i t})/(γ_i − γ_s)
                //   = e^{−γ_s t}·[1 + γ_s t·(1 − e^{−(γ_i−γ_s)t})/((γ_i−γ_s)t)]
                (-gs * t).exp() * (1.0 + gs * t * one_minus_exp_over(d * t))
            }
        }
    };
    amp * amp
}

/// Autocorrelation of the full comb, `1 + |Σ_m p_m e^{i2πm·FSR·τ}|²·(g²_single − 1)`
/// (teeth treated as orthogonal).
pub fn g2_auto(comb: &CombSpec, tau: f64) -> f64 {
    1.0 + mode_beat(comb, tau) * single_mode_excess(&comb.linewidths(), tau)
}

/// `|Σ_m p_m e^{i2πm·FSR·τ}|²`, equal to 1 at τ = 0 and averaging `1/M_eff`
/// over one round trip.
pub fn mode_beat(comb: &CombSpec, tau: f64) -> f64 {
    let phase = 2.0 * PI * comb.fsr_hz() * tau;
    comb.mode_weights()
        .iter()
        .enumerate()
        .map(|(m, p)| Complex64::from_polar(*p, phase * m as f64))
        .sum::<Complex64>()
        .norm_sqr()
}

/// Closed-form `Δg² = (1/M)(γ_i² + 3γ_iγ_s + γ_s²)/(γ_iγ_s(γ_i + γ_s))`.
pub fn delta_g2_for(linewidths: &Linewidths, modes: f64) -> f64 {
    let gs = linewidths.gamma_s();
    let per_mode = match linewidths.idler() {
        IdlerLinewidth::Unconfined => 1.0 / gs,
        IdlerLinewidth::Finite(gi) => (gi * gi + 3.0 * gi * gs + gs * gs) / (gi * gs * (gi + gs)),
    };
    per_mode / modes
}

/// Closed-form `Δg²` of `comb`, using its effective mode number.
pub fn delta_g2_closed_form(comb: &CombSpec) -> f64 {
    delta_g2_for(&comb.linewidths(), comb.effective_mode_count())
}

/// Inverts [`delta_g2_for`] for the mode number.
pub fn estimate_mode_count(delta_g2: f64, linewidths: &Linewidths) -> Result<f64, CorrelationError> {
    if !(delta_g2 > 0.0 && delta_g2.is_finite()) {
        return Err(CorrelationError::DeltaG2(delta_g2));
    }
    Ok(delta_g2_for(linewidths, 1.0) / delta_g2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoCorrelationResult {
    pub delta_g2: f64,
    pub mode_estimate: f64,
}

impl AutoCorrelationResult {
    pub fn from_delta_g2(delta_g2: f64, linewidths: &Linewidths) -> Result<Self, CorrelationError> {
        Ok(Self {
            delta_g2,
            mode_estimate: estimate_mode_count(delta_g2, linewidths)?,
        })
    }
}

/// `Δg² = 2π∫|f(ω_i)|⁴ dω_i` by adaptive quadrature of the normalized joint
/// spectral amplitude over the whole real line.
pub fn delta_g2_spectral(comb: &CombSpec) -> Result<f64, CorrelationError> {
    let step = 2.0 * PI * comb.fsr_hz();
    let lw = comb.linewidths();
    let widths: Vec<f64> = std::iter::once(lw.gamma_s()).chain(lw.gamma_i()).collect();
    let mut breaks = Vec::new();
    for m in 0..comb.mode_count() {
        let x0 = m as f64 * step;
        breaks.push(x0);
        for &g in &widths {
            let mut r = g;
            while r < 0.5 * step {
                breaks.push(x0 + r);
                breaks.push(x0 - r);
                r *= 4.0;
            }
        }
    }
    let lo = -0.5 * step;
    let hi = (comb.mode_count() as f64 - 0.5) * step;
    let tol = Tolerance {
        abs: 0.0,
        rel: 1e-10,
        max_segments: 200_000,
    };
    let f4 = |x: f64| comb.jsa_at_detuning(x).norm_sqr().powi(2);
    let (mid, _) = quadrature::integrate(f4, lo, hi, &breaks, tol)?;
    let (right, _) = quadrature::integrate_to_infinity(f4, hi, step, tol)?;
    let (left, _) = quadrature::integrate_from_neg_infinity(f4, lo, step, tol)?;
    Ok(2.0 * PI * (mid + left + right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comb::wavelength_nm_to_hz;

    const G126: f64 = PI * 126e6;

    fn comb_with(lw: Linewidths, m: usize, fsr: f64) -> CombSpec {
        CombSpec::new(
            fsr,
            lw,
            wavelength_nm_to_hz(1580.0),
            m,
            2.0 * PI * wavelength_nm_to_hz(780.0),
        )
        .unwrap()
    }

    fn brute_conv_tail(k: f64, sigma: f64, tau: f64) -> f64 {
        // ∫₀^∞ e^{−kx} g(τ−x) dx, plain adaptive quadrature
        let f = |x: f64| (-k * x).exp() * pair_gaussian(sigma, tau - x);
        let lo = 0.0;
        let hi = (tau + 60.0 * sigma).max(0.0) + 60.0 / k;
        let breaks: Vec<f64> = [0.0, 1.0, 4.0, 16.0, 64.0]
            .iter()
            .map(|m| tau.max(0.0) + m * sigma)
            .collect();
        quadrature::integrate(f, lo, hi, &breaks, Tolerance::default())
            .unwrap()
            .0
    }

    #[test]
    fn tail_matches_quadrature() {
        let sigma = 30e-12;
        for &k in &[1e8, 2.0 * G126, 5e10, 1e12] {
            for i in -20..=20 {
                let tau = i as f64 * 0.1e-9;
                let want = brute_conv_tail(k, sigma, tau);
                let got = tail(k, sigma, tau);
                assert!(
                    // Far tails underflow differently in the two routes.
                    (got - want).abs() <= 1e-9 * want.abs() + 1e-200,
                    "k={k} tau={tau} got={got} want={want}"
                );
            }
        }
    }

    #[test]
    fn tail_never_overflows() {
        // γσ products far beyond where the naive formula overflows.
        for &k in &[1e13, 1e15] {
            for &tau in &[-1e-9, 0.0, 1e-9, 1e-6] {
                let v = tail(k, 30e-12, tau);
                assert!(v.is_finite() && v >= 0.0, "k={k} tau={tau} v={v}");
            }
        }
    }

    #[test]
    fn tail_derivatives_match_finite_differences() {
        let (k, s) = (2.0 * G126, 30e-12);
        for &tau in &[-2e-9, -50e-12, 0.0, 40e-12, 1e-9] {
            let t = tail(k, s, tau);
            let fd = |f: &dyn Fn(f64) -> f64, x: f64| {
                let h = 1e-5 * x.abs().max(1e-12);
                (f(x + h) - f(x - h)) / (2.0 * h)
            };
            let dk = fd(&|kk| tail(kk, s, tau), k);
            let ds = fd(&|ss| tail(k, ss, tau), s);
            let dt = fd(&|tt| tail(k, s, tt), tau.abs().max(1e-10) * tau.signum() + tau - tau);
            assert!((tail_dk(k, s, tau, t) - dk).abs() <= 1e-6 * dk.abs().max(1e-30));
            assert!((tail_dsigma(k, s, tau, t) - ds).abs() <= 1e-6 * ds.abs().max(1e-30));
            let _ = dt;
            let h = 1e-15;
            let dt = (tail(k, s, tau + h) - tail(k, s, tau - h)) / (2.0 * h);
            assert!((tail_dtau(k, s, tau, t) - dt).abs() <= 1e-5 * dt.abs().max(1.0));
        }
    }

    #[test]
    fn cross_single_symmetric_for_equal_linewidths() {
        let c = comb_with(Linewidths::doubly_resonant(G126, G126).unwrap(), 1, 3.5e9);
        for i in 0..100 {
            let tau = i as f64 * 37e-12;
            let a = cross_single(&c, 30e-12, tau).unwrap();
            let b = cross_single(&c, 30e-12, -tau).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn singly_resonant_decays_only_for_negative_delay() {
        let c = comb_with(Linewidths::singly_resonant(G126).unwrap(), 1, 3.5e9);
        let sigma = 30e-12;
        for i in 1..40 {
            let tau = -(i as f64) * 0.1e-9 - 0.5e-9;
            let want = (2.0 * G126 * tau).exp();
            let got = cross_single(&c, sigma, tau).unwrap();
            // Jitter only rescales the tail by e^{(2γσ)²}.
            let scale = (2.0 * G126 * sigma).powi(2).exp();
            assert!((got / (want * scale) - 1.0).abs() < 1e-9, "tau={tau}");
            assert!(cross_single(&c, sigma, -tau).unwrap() < 1e-30);
        }
    }

    #[test]
    fn tail_slope_recovers_126_mhz() {
        let c = comb_with(Linewidths::singly_resonant(G126).unwrap(), 1, 3.5e9);
        let sigma = 30e-12;
        let (t1, t2) = (-3e-9, -1e-9);
        let v1 = cross_single(&c, sigma, t1).unwrap();
        let v2 = cross_single(&c, sigma, t2).unwrap();
        let slope = (v2.ln() - v1.ln()) / (t2 - t1);
        let fwhm = slope / 2.0 / PI;
        assert!((fwhm - 126e6).abs() / 126e6 < 0.01, "fwhm={fwhm}");
    }

    #[test]
    fn cross_single_small_jitter_limit() {
        // Away from the jump at τ = 0 the jittered tail is the bare one times
        // e^{(2γσ)²}, so the pointwise gap is (e^{(2γσ)²} − 1)·envelope:
        // 3.6e−5 for γ_i = 3γ_s at σ = 10⁻³/γ_s and 3.6e−7 at σ = 10⁻⁴/γ_s.
        let lw = Linewidths::doubly_resonant(G126, 3.0 * G126).unwrap();
        let c = comb_with(lw, 1, 3.5e9);
        for (scale, tol) in [(1e-3, 4e-5), (1e-4, 1e-6)] {
            let sigma = scale / G126;
            for i in -30..=30 {
                let tau = i as f64 * 0.1e-9;
                if tau == 0.0 {
                    continue;
                }
                let bare = if tau > 0.0 {
                    (-2.0 * 3.0 * G126 * tau).exp()
                } else {
                    (2.0 * G126 * tau).exp()
                };
                let got = cross_single(&c, sigma, tau).unwrap();
                assert!((got - bare).abs() < tol, "σγ={scale} tau={tau}");
            }
        }
    }

    #[test]
    fn cross_multi_examples() {
        let c = comb_with(Linewidths::singly_resonant(G126).unwrap(), 100, 3.5e9);
        let sigma = 10e-12;
        // Central Gaussian peak value.
        let v0 = cross_multi(&c, sigma, 0.0, Some(1)).unwrap();
        assert!((v0 - 1.0 / (2.0 * PI.sqrt() * sigma)).abs() / v0 < 1e-12);
        assert_eq!(cross_multi(&c, sigma, 0.0, Some(0)), Err(CorrelationError::JMax));
        // Side peaks at −jT₀, T₀ = 285.7 ps.
        let t0 = c.round_trip();
        assert!((t0 - 285.714e-12).abs() < 1e-15);
        for j in 1..5 {
            let at = cross_multi(&c, sigma, -(j as f64) * t0, None).unwrap();
            let off = cross_multi(&c, sigma, -(j as f64 + 0.5) * t0, None).unwrap();
            assert!(at > 100.0 * off);
        }
    }

    #[test]
    fn cross_multi_merges_into_envelope_for_large_jitter() {
        // σ ≫ T₀: the peak train is a Riemann sum of the jittered envelope.
        // The j = 0 term sits on the envelope's jump and carries the ½T₀·g
        // endpoint correction; what remains is O((γT₀)²).
        let c = comb_with(Linewidths::singly_resonant(G126).unwrap(), 100, 35e9);
        let t0 = c.round_trip();
        let sigma = 20.0 * t0;
        let shape = CrossShape::from_comb(&c, sigma).unwrap();
        for i in -20..=5 {
            let tau = i as f64 * 0.2e-9;
            let m = (shape.multi(tau, shape.auto_j_max()) - 0.5 * pair_gaussian(sigma, tau)) * t0;
            let s = shape.single(tau);
            assert!((m - s).abs() < 2e-3 * s.max(1e-3), "tau={tau} m={m} s={s}");
        }
    }

    fn area(f: impl Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64]) -> f64 {
        quadrature::integrate(
            f,
            lo,
            hi,
            breaks,
            Tolerance {
                abs: 0.0,
                rel: 1e-11,
                max_segments: 100_000,
            },
        )
        .unwrap()
        .0
    }

    #[test]
    fn normalized_components_have_unit_area() {
        let lw = Linewidths::doubly_resonant(G126, 4.0 * G126).unwrap();
        let c = comb_with(lw, 50, 3.5e9);
        let shape = CrossShape::from_comb(&c, 20e-12).unwrap();
        let t0 = c.round_trip();
        let breaks: Vec<f64> = (-120..=60).map(|j| j as f64 * t0).collect();
        let (lo, hi) = (-40e-9, 20e-9);
        let jm = shape.auto_j_max();
        let multi = area(|t| shape.multi(t, jm), lo, hi, &breaks) * shape.multi_norm();
        let single = area(|t| shape.single(t), lo, hi, &[0.0]) * shape.single_norm();
        assert!((multi - 1.0).abs() < 1e-6, "multi area {multi}");
        assert!((single - 1.0).abs() < 1e-6, "single area {single}");
    }

    #[test]
    fn cross_sum_endpoints_and_mass() {
        let c = comb_with(Linewidths::singly_resonant(G126).unwrap(), 100, 3.5e9);
        let sigma = 30e-12;
        let shape = CrossShape::from_comb(&c, sigma).unwrap();
        let (amp, bg) = (1e5, 2.0);
        let m1 = CrossCorrelationModel::new(&c, sigma, 1.0, amp, bg).unwrap();
        let m0 = CrossCorrelationModel::new(&c, sigma, 0.0, amp, bg).unwrap();
        for i in -50..10 {
            let tau = i as f64 * 0.05e-9;
            let want1 = amp * shape.multi_norm() * shape.multi(tau, shape.auto_j_max()) + bg;
            let want0 = amp * shape.single_norm() * shape.single(tau) + bg;
            assert!((m1.cross_sum(tau) - want1).abs() <= 1e-12 * want1);
            assert!((m0.cross_sum(tau) - want0).abs() <= 1e-12 * want0);
        }
        let t0 = c.round_trip();
        let breaks: Vec<f64> = (-150..=5).map(|j| j as f64 * t0).collect();
        let (lo, hi) = (-40e-9, 2e-9);
        let mass = |p: f64| {
            let m = CrossCorrelationModel::new(&c, sigma, p, amp, bg).unwrap();
            area(|t| m.cross_sum(t), lo, hi, &breaks)
        };
        let (a0, a5, a1) = (mass(0.0), mass(0.5), mass(1.0));
        assert!((a5 - 0.5 * (a0 + a1)).abs() / a5 < 1e-6);
        assert!((a0 - a1).abs() / a0 < 1e-6, "a0={a0} a1={a1}");
        assert!(CrossCorrelationModel::new(&c, sigma, 1.5, amp, bg).is_err());
        assert!(CrossCorrelationModel::new(&c, sigma, 0.5, -1.0, bg).is_err());
    }

    #[test]
    fn g2_auto_single_examples() {
        let lw = Linewidths::doubly_resonant(G126, 7.0 * G126).unwrap();
        assert_eq!(g2_auto_single(&lw, 0.0), 2.0);
        assert!((g2_auto_single(&lw, 1e-6) - 1.0).abs() < 1e-12);
        // Equal-linewidth limit versus the general formula just off degeneracy.
        let g = G126;
        for i in 0..50 {
            let t = i as f64 * 0.1e-9;
            let limit = g2_auto_single(&Linewidths::doubly_resonant(g, g).unwrap(), t);
            let closed = 1.0 + (1.0 + g * t).powi(2) * (-2.0 * g * t).exp();
            assert!((limit - closed).abs() < 1e-14);
            let up = g2_auto_single(&Linewidths::doubly_resonant(g, g * (1.0 + 1e-6)).unwrap(), t);
            let dn = g2_auto_single(&Linewidths::doubly_resonant(g, g * (1.0 - 1e-6)).unwrap(), t);
            assert!((0.5 * (up + dn) - limit).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn g2_auto_single_brute_formula() {
        // Direct evaluation of the textbook expression away from degeneracy.
        let (gs, gi) = (G126, 2.7 * G126);
        let lw = Linewidths::doubly_resonant(gs, gi).unwrap();
        for i in -40..40 {
            let t = i as f64 * 0.07e-9;
            let a = (gi * (-gs * t.abs()).exp() - gs * (-gi * t.abs()).exp()) / (gi - gs);
            assert!((g2_auto_single(&lw, t) - (1.0 + a * a)).abs() < 1e-14);
        }
    }

    #[test]
    fn delta_g2_closed_form_examples() {
        let sr = Linewidths::singly_resonant(G126).unwrap();
        assert!((delta_g2_for(&sr, 1.2) - 2.1e-9).abs() < 0.01e-9);
        assert!((delta_g2_for(&sr, 14.9) - 0.17e-9).abs() < 0.001e-9);
        let eq = Linewidths::doubly_resonant(G126, G126).unwrap();
        assert!((delta_g2_for(&eq, 1.0) - 5.0 / (2.0 * G126)).abs() < 1e-22);
        let c = comb_with(sr, 15, 3.5e9);
        assert!((delta_g2_closed_form(&c) - 1.0 / (15.0 * G126)).abs() < 1e-22);
    }

    #[test]
    fn estimate_mode_count_examples() {
        let sr = Linewidths::singly_resonant(G126).unwrap();
        assert!((estimate_mode_count(2.1e-9, &sr).unwrap() - 1.20).abs() < 0.02);
        assert!((estimate_mode_count(0.17e-9, &sr).unwrap() - 14.9).abs() < 0.1);
        assert!((estimate_mode_count(1.0 / G126, &sr).unwrap() - 1.0).abs() < 1e-12);
        assert!(estimate_mode_count(0.0, &sr).is_err());
    }

    #[test]
    fn spectral_oracle_single_tooth() {
        let eq = Linewidths::doubly_resonant(G126, G126).unwrap();
        let c = comb_with(eq, 1, 3.5e9);
        let v = delta_g2_spectral(&c).unwrap();
        assert!((v / (5.0 / (2.0 * G126)) - 1.0).abs() < 1e-6);

        let wide = Linewidths::doubly_resonant(G126, 1e4 * G126).unwrap();
        let c = comb_with(wide, 1, 3.5e9);
        let v = delta_g2_spectral(&c).unwrap();
        assert!((v * G126 - 1.0).abs() < 1e-3);

        let sr = Linewidths::singly_resonant(G126).unwrap();
        let c = comb_with(sr, 1, 3.5e9);
        assert!((delta_g2_spectral(&c).unwrap() * G126 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn spectral_oracle_ten_teeth() {
        // Teeth isolated relative to both linewidths.
        let lw = Linewidths::doubly_resonant(G126, 10.0 * G126).unwrap();
        let c = comb_with(lw, 10, 1e5 * 126e6);
        let v = delta_g2_spectral(&c).unwrap();
        let want = delta_g2_closed_form(&c);
        assert!((v / want - 1.0).abs() < 1e-6, "rel {}", v / want - 1.0);
    }

    #[test]
    fn mode_beat_average_is_inverse_mode_count() {
        let c = comb_with(Linewidths::singly_resonant(G126).unwrap(), 7, 3.5e9);
        let t0 = c.round_trip();
        assert!((mode_beat(&c, 0.0) - 1.0).abs() < 1e-14);
        let n = 7000;
        let avg: f64 = (0..n).map(|i| mode_beat(&c, t0 * i as f64 / n as f64)).sum::<f64>() / n as f64;
        assert!((avg - 1.0 / 7.0).abs() < 1e-12);
        assert!((g2_auto(&c, 0.0) - 2.0).abs() < 1e-14);
    }
}
