//! Fit-model shapes on a histogram grid, with analytic gradients for the
//! cross-correlation models.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correlation::{pair_gaussian, tail, tail_dk, tail_dsigma, tail_dtau, SIDE_PEAK_TAIL};
use crate::quadrature::GL3;

use super::FitError;

/// Every parameter a fit model can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Amplitude,
    Background,
    GammaS,
    GammaI,
    Sigma,
    Delay,
    RoundTrip,
    Purity,
}

pub(crate) const N_PARAMS: usize = 8;

impl Param {
    pub const ALL: [Param; N_PARAMS] = [
        Param::Amplitude,
        Param::Background,
        Param::GammaS,
        Param::GammaI,
        Param::Sigma,
        Param::Delay,
        Param::RoundTrip,
        Param::Purity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Amplitude => "amplitude",
            Param::Background => "background",
            Param::GammaS => "gamma_s",
            Param::GammaI => "gamma_i",
            Param::Sigma => "sigma",
            Param::Delay => "delay",
            Param::RoundTrip => "round_trip",
            Param::Purity => "purity",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| FitError::UnknownParam(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    CrossSingle,
    CrossMulti,
    CrossSum,
    AutoSingle,
}

impl FitModel {
    pub const ALL: [FitModel; 4] = [
        FitModel::CrossSingle,
        FitModel::CrossMulti,
        FitModel::CrossSum,
        FitModel::AutoSingle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FitModel::CrossSingle => "cross-single",
            FitModel::CrossMulti => "cross-multi",
            FitModel::CrossSum => "cross-sum",
            FitModel::AutoSingle => "auto-single",
        }
    }

    /// Parameters the model needs; `gamma_i` is dropped for an unconfined idler.
    pub fn params(self, idler_unconfined: bool) -> Vec<Param> {
        let mut p = vec![Param::Amplitude, Param::Background, Param::GammaS];
        if !idler_unconfined {
            p.push(Param::GammaI);
        }
        p.extend([Param::Sigma, Param::Delay]);
        match self {
            FitModel::CrossMulti => p.push(Param::RoundTrip),
            FitModel::CrossSum => p.extend([Param::RoundTrip, Param::Purity]),
            FitModel::CrossSingle | FitModel::AutoSingle => {}
        }
        p
    }

    pub fn has_analytic_jacobian(self) -> bool {
        !matches!(self, FitModel::AutoSingle)
    }
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitModel {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FitModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| FitError::UnknownModel(s.to_owned()))
    }
}

pub(crate) type Values = [f64; N_PARAMS];

fn get(v: &Values, p: Param) -> f64 {
    v[p.index()]
}

/// Unit-area cross-correlation shape at `tau` and its gradient with respect
/// to every shape parameter (amplitude and background entries stay zero).
pub(crate) fn cross_unit(model: FitModel, unconfined: bool, v: &Values, tau: f64) -> (f64, Values) {
    let mut grad = [0.0; N_PARAMS];
    let t = tau - get(v, Param::Delay);
    let s = get(v, Param::Sigma);
    let gs = get(v, Param::GammaS);
    let gi = get(v, Param::GammaI);
    let p = match model {
        FitModel::CrossSingle => 0.0,
        FitModel::CrossMulti => 1.0,
        FitModel::CrossSum => get(v, Param::Purity),
        FitModel::AutoSingle => unreachable!("auto model has no cross shape"),
    };
    let mut u = 0.0;

    // The sum model needs both parts at p = 0 or 1 for the purity gradient.
    let is_sum = model == FitModel::CrossSum;
    if p < 1.0 || is_sum {
        let ts = tail(2.0 * gs, s, -t);
        let mut single = ts;
        let d_gs = 2.0 * tail_dk(2.0 * gs, s, -t, ts);
        let mut d_gi = 0.0;
        let mut d_s = tail_dsigma(2.0 * gs, s, -t, ts);
        let mut d_t = -tail_dtau(2.0 * gs, s, -t, ts);
        let (ns, dns_gs, dns_gi) = if unconfined {
            (2.0 * gs, 2.0, 0.0)
        } else {
            let ti = tail(2.0 * gi, s, t);
            single += ti;
            d_gi = 2.0 * tail_dk(2.0 * gi, s, t, ti);
            d_s += tail_dsigma(2.0 * gi, s, t, ti);
            d_t += tail_dtau(2.0 * gi, s, t, ti);
            let g_tot = gi + gs;
            (
                2.0 * gi * gs / g_tot,
                2.0 * gi * gi / (g_tot * g_tot),
                2.0 * gs * gs / (g_tot * g_tot),
            )
        };
        let w = 1.0 - p;
        u += w * ns * single;
        grad[Param::GammaS.index()] += w * (dns_gs * single + ns * d_gs);
        grad[Param::GammaI.index()] += w * (dns_gi * single + ns * d_gi);
        grad[Param::Sigma.index()] += w * ns * d_s;
        grad[Param::Delay.index()] -= w * ns * d_t;
        grad[Param::Purity.index()] -= ns * single;
    }

    if p > 0.0 || is_sum {
        let t0 = get(v, Param::RoundTrip);
        let qs = (-2.0 * gs * t0).exp();
        let qi = if unconfined { 0.0 } else { (-2.0 * gi * t0).exp() };
        let g_min = if unconfined { gs } else { gs.min(gi) };
        let j_max = (-SIDE_PEAK_TAIL.ln() / (2.0 * g_min * t0)).floor() + 1.0;
        let reach = 2.0 * s * 750f64.sqrt();
        let inv2s2 = 1.0 / (2.0 * s * s);

        // Gaussian at offset x: value, ∂/∂x and ∂/∂σ factors.
        let peak = |x: f64| {
            let g = pair_gaussian(s, x);
            (g, -x * inv2s2 * g, g * (x * x / (2.0 * s * s * s) - 1.0 / s))
        };
        let (g0, g0x, g0s) = peak(t);
        let (mut m, mut dm_t, mut dm_s) = (g0, g0x, g0s);
        let (mut dm_gs, mut dm_gi, mut dm_t0) = (0.0, 0.0, 0.0);
        let range = |lo: f64, hi: f64| -> std::ops::RangeInclusive<u64> {
            let lo = lo.ceil().max(1.0);
            let hi = hi.floor().min(j_max);
            if hi < lo {
                std::ops::RangeInclusive::new(1, 0)
            } else {
                (lo as u64)..=(hi as u64)
            }
        };
        if qi > 0.0 {
            for j in range((t - reach) / t0, (t + reach) / t0) {
                let jf = j as f64;
                let x = t - jf * t0;
                let w = qi.powi(j as i32);
                let (g, gx, gsig) = peak(x);
                m += w * g;
                dm_t += w * gx;
                dm_s += w * gsig;
                dm_gi += -2.0 * jf * t0 * w * g;
                dm_t0 += -2.0 * gi * jf * w * g - jf * w * gx;
            }
        }
        for j in range((-t - reach) / t0, (-t + reach) / t0) {
            let jf = j as f64;
            let x = t + jf * t0;
            let w = qs.powi(j as i32);
            let (g, gx, gsig) = peak(x);
            m += w * g;
            dm_t += w * gx;
            dm_s += w * gsig;
            dm_gs += -2.0 * jf * t0 * w * g;
            dm_t0 += -2.0 * gs * jf * w * g + jf * w * gx;
        }
        let den = 1.0 - qi * qs;
        let nm = (1.0 - qi) * (1.0 - qs) / den;
        let dnm_qi = -(1.0 - qs).powi(2) / (den * den);
        let dnm_qs = -(1.0 - qi).powi(2) / (den * den);
        let dnm_gs = dnm_qs * (-2.0 * t0 * qs);
        let dnm_gi = dnm_qi * (-2.0 * t0 * qi);
        let dnm_t0 = dnm_qi * (-2.0 * gi * qi) + dnm_qs * (-2.0 * gs * qs);
        u += p * nm * m;
        grad[Param::GammaS.index()] += p * (dnm_gs * m + nm * dm_gs);
        if !unconfined {
            grad[Param::GammaI.index()] += p * (dnm_gi * m + nm * dm_gi);
        }
        grad[Param::RoundTrip.index()] += p * (dnm_t0 * m + nm * dm_t0);
        grad[Param::Sigma.index()] += p * nm * dm_s;
        grad[Param::Delay.index()] -= p * nm * dm_t;
        grad[Param::Purity.index()] += nm * m;
    }
    (u, grad)
}

/// Relative linewidth gap below which the equal-linewidth form is used with
/// the mean linewidth; the excess is symmetric in the two linewidths, so the
/// error is second order in the gap.
const AUTO_DEGENERATE: f64 = 1e-4;

/// Jitter-convolved single-mode autocorrelation excess `g² − 1`.
pub(crate) fn auto_excess(unconfined: bool, v: &Values, tau: f64) -> f64 {
    let t = tau - get(v, Param::Delay);
    let s = get(v, Param::Sigma);
    let gs = get(v, Param::GammaS);
    // Convolution of e^{−k|τ|}.
    let two_sided = |k: f64| tail(k, s, t) + tail(k, s, -t);
    if unconfined {
        return two_sided(2.0 * gs);
    }
    let gi = get(v, Param::GammaI);
    let mean = 0.5 * (gi + gs);
    if (gi - gs).abs() < AUTO_DEGENERATE * mean {
        // (1 + γ|τ|)² e^{−2γ|τ|} = E + 2γ·(|τ|E) + γ²·(τ²E), with
        // |τ|^n e^{−k|τ|} = (−∂_k)^n e^{−k|τ|}.
        let k = 2.0 * mean;
        let mut acc = 0.0;
        for tt in [t, -t] {
            let base = tail(k, s, tt);
            let d1 = tail_dk(k, s, tt, base);
            let d2 = 2.0 * s * s * base + (2.0 * k * s * s - tt) * d1;
            acc += base - 2.0 * mean * d1 + mean * mean * d2;
        }
        return acc;
    }
    let d2 = (gi - gs) * (gi - gs);
    (gi * gi * two_sided(2.0 * gs) - 2.0 * gi * gs * two_sided(gi + gs) + gs * gs * two_sided(2.0 * gi)) / d2
}

/// Quadrature nodes for the bin integrals of one histogram grid.
#[derive(Debug, Clone)]
pub(crate) struct BinGrid {
    /// `(tau, weight)` per node; weights already include the panel width.
    nodes: Vec<(f64, f64)>,
    /// Node range of each bin.
    spans: Vec<(usize, usize)>,
}

impl BinGrid {
    /// GL3 on sub-panels no wider than `max_panel`.
    pub(crate) fn new(edges: &[f64], max_panel: f64) -> Self {
        let mut nodes = Vec::new();
        let mut spans = Vec::with_capacity(edges.len() - 1);
        for w in edges.windows(2) {
            let (a, b) = (w[0], w[1]);
            let n = ((b - a) / max_panel).ceil().clamp(1.0, 64.0) as usize;
            let h = (b - a) / n as f64;
            let start = nodes.len();
            for k in 0..n {
                let mid = a + (k as f64 + 0.5) * h;
                for &(x, wt) in &GL3 {
                    nodes.push((mid + 0.5 * h * x, 0.5 * h * wt));
                }
            }
            spans.push((start, nodes.len()));
        }
        Self { nodes, spans }
    }

    pub(crate) fn len(&self) -> usize {
        self.spans.len()
    }
}

/// Evaluates a model on a grid: expected counts per bin
/// `A·∫_bin shape + B`.
#[derive(Debug, Clone)]
pub(crate) struct GridModel {
    pub(crate) model: FitModel,
    pub(crate) unconfined: bool,
    pub(crate) grid: BinGrid,
}

impl GridModel {
    fn shape(&self, v: &Values, tau: f64) -> f64 {
        match self.model {
            FitModel::AutoSingle => auto_excess(self.unconfined, v, tau),
            m => cross_unit(m, self.unconfined, v, tau).0,
        }
    }

    pub(crate) fn expected(&self, v: &Values) -> Vec<f64> {
        let a = get(v, Param::Amplitude);
        let b = get(v, Param::Background);
        self.grid
            .spans
            .iter()
            .map(|&(lo, hi)| {
                let integral: f64 = self.grid.nodes[lo..hi].iter().map(|&(t, w)| w * self.shape(v, t)).sum();
                a * integral + b
            })
            .collect()
    }

    /// Expected counts and the Jacobian with respect to `free` parameters.
    /// Analytic for the cross models; central differences with steps
    /// `fd_steps` (one per free parameter) for the autocorrelation model.
    pub(crate) fn expected_and_jacobian(
        &self,
        v: &Values,
        free: &[Param],
        fd_steps: &[f64],
    ) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.grid.len();
        let mut jac = DMatrix::zeros(n, free.len());
        if self.model.has_analytic_jacobian() {
            let a = get(v, Param::Amplitude);
            let b = get(v, Param::Background);
            let mut out = Vec::with_capacity(n);
            for (row, &(lo, hi)) in self.grid.spans.iter().enumerate() {
                let mut integral = 0.0;
                let mut g = [0.0; N_PARAMS];
                for &(t, w) in &self.grid.nodes[lo..hi] {
                    let (u, du) = cross_unit(self.model, self.unconfined, v, t);
                    integral += w * u;
                    for k in 0..N_PARAMS {
                        g[k] += w * du[k];
                    }
                }
                out.push(a * integral + b);
                for (col, p) in free.iter().enumerate() {
                    jac[(row, col)] = match p {
                        Param::Amplitude => integral,
                        Param::Background => 1.0,
                        other => a * g[other.index()],
                    };
                }
            }
            (out, jac)
        } else {
            let base = self.expected(v);
            for (col, (p, &h)) in free.iter().zip(fd_steps).enumerate() {
                let mut up = *v;
                let mut dn = *v;
                up[p.index()] += h;
                dn[p.index()] -= h;
                let (eu, ed) = (self.expected(&up), self.expected(&dn));
                for row in 0..n {
                    jac[(row, col)] = (eu[row] - ed[row]) / (2.0 * h);
                }
            }
            (base, jac)
        }
    }
}
