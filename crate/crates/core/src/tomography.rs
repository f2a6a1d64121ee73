//! Sixteen-setting two-qubit polarization tomography: simulated counts,
//! linear inversion and maximum-likelihood reconstruction.
//!
//! The likelihood is Poisson with the overall rate profiled out, so only the
//! relative counts matter: `ℓ(ρ) = Σ_k n_k ln(p_k / Σ_j p_j)` with
//! `p_k = Tr[ρ Π_k]`. States are parameterized as `ρ = T†T / Tr(T†T)` with
//! `T` upper triangular (real diagonal), sixteen real numbers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix2, Matrix4, SVector, Vector2, Vector4};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::density::{hermitian_part, DensityError, DensityMatrix};
use crate::sagnac::fidelity_max_theta;

/// Gradient norm of the per-count negative log-likelihood that counts as converged.
pub const GRADIENT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 5000;
/// Smallest singular value of the normalized design matrix for a complete set.
const COMPLETENESS_TOL: f64 = 1e-10;
/// Weight of `I/4` mixed into the starting point so it is full rank.
const START_MIXING: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum TomographyError {
    #[error("measurement settings are not informationally complete (rank {rank} of 16)")]
    Incomplete { rank: usize },
    #[error("expected {expected} counts, found {found}")]
    Length { expected: usize, found: usize },
    #[error("acquisition scale must be positive and finite, got {0}")]
    Scale(f64),
    #[error("unknown polarization '{0}' (expected one of H, V, D, A, R, L)")]
    Polarization(String),
    #[error("every count is zero")]
    NoCounts,
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Density(#[from] DensityError),
}

/// Single-photon polarization projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pol {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Pol {
    pub const ALL: [Pol; 6] = [Pol::H, Pol::V, Pol::D, Pol::A, Pol::R, Pol::L];

    pub fn ket(self) -> Vector2<Complex64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (a, b) = match self {
            Pol::H => (Complex64::from(1.0), Complex64::from(0.0)),
            Pol::V => (Complex64::from(0.0), Complex64::from(1.0)),
            Pol::D => (Complex64::from(s), Complex64::from(s)),
            Pol::A => (Complex64::from(s), Complex64::from(-s)),
            Pol::R => (Complex64::from(s), Complex64::new(0.0, s)),
            Pol::L => (Complex64::from(s), Complex64::new(0.0, -s)),
        };
        Vector2::new(a, b)
    }

    fn letter(self) -> char {
        match self {
            Pol::H => 'H',
            Pol::V => 'V',
            Pol::D => 'D',
            Pol::A => 'A',
            Pol::R => 'R',
            Pol::L => 'L',
        }
    }
}

impl TryFrom<char> for Pol {
    type Error = TomographyError;

    fn try_from(c: char) -> Result<Self, Self::Error> {
        Pol::ALL
            .into_iter()
            .find(|p| p.letter() == c.to_ascii_uppercase())
            .ok_or_else(|| TomographyError::Polarization(c.to_string()))
    }
}

/// Idler projection `a` and signal projection `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeasurementSetting {
    pub a: Pol,
    pub b: Pol,
}

impl MeasurementSetting {
    pub fn new(a: Pol, b: Pol) -> Self {
        Self { a, b }
    }

    /// Product ket in the `{HH, HV, VH, VV}` basis.
    pub fn ket(&self) -> Vector4<Complex64> {
        let (x, y) = (self.a.ket(), self.b.ket());
        Vector4::new(x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1])
    }

    pub fn projector(&self) -> Matrix4<Complex64> {
        let k = self.ket();
        k * k.adjoint()
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.a.letter(), self.b.letter())
    }
}

impl FromStr for MeasurementSetting {
    type Err = TomographyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.trim().chars().collect();
        if chars.len() != 2 {
            return Err(TomographyError::Polarization(s.to_owned()));
        }
        Ok(Self::new(Pol::try_from(chars[0])?, Pol::try_from(chars[1])?))
    }
}

/// `{H, V, D, R} ⊗ {H, V, D, R}`.
pub fn canonical_settings() -> Vec<MeasurementSetting> {
    let four = [Pol::H, Pol::V, Pol::D, Pol::R];
    four.iter()
        .flat_map(|&a| four.iter().map(move |&b| MeasurementSetting::new(a, b)))
        .collect()
}

fn pauli(k: usize) -> Matrix2<Complex64> {
    let (o, i) = (Complex64::from(0.0), Complex64::from(1.0));
    let j = Complex64::new(0.0, 1.0);
    match k {
        0 => Matrix2::new(i, o, o, i),
        1 => Matrix2::new(o, i, i, o),
        2 => Matrix2::new(o, -j, j, o),
        _ => Matrix2::new(i, o, o, -i),
    }
}

/// The sixteen products `σ_μ ⊗ σ_ν`.
fn pauli_products() -> Vec<Matrix4<Complex64>> {
    (0..16).map(|k| pauli(k / 4).kronecker(&pauli(k % 4))).collect()
}

/// `A_kj = Tr[Π_k σ_j] / 4`, so that `p = A x` for `ρ = Σ_j x_j σ_j / 4`.
fn design_matrix(settings: &[MeasurementSetting]) -> DMatrix<f64> {
    let paulis = pauli_products();
    DMatrix::from_fn(settings.len(), 16, |k, j| {
        0.25 * (settings[k].projector() * paulis[j]).trace().re
    })
}

/// Errors unless the settings determine every two-qubit state.
pub fn check_complete(settings: &[MeasurementSetting]) -> Result<(), TomographyError> {
    let a = design_matrix(settings);
    let sv = a.singular_values();
    let max = sv.max();
    let rank = sv.iter().filter(|s| **s > COMPLETENESS_TOL * max).count();
    if settings.len() < 16 || rank < 16 {
        return Err(TomographyError::Incomplete { rank });
    }
    Ok(())
}

/// Counts per setting plus the expected count of a unit-probability setting.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyRecord {
    settings: Vec<MeasurementSetting>,
    counts: Vec<u64>,
    scale: f64,
}

impl TomographyRecord {
    pub fn new(settings: Vec<MeasurementSetting>, counts: Vec<u64>, scale: f64) -> Result<Self, TomographyError> {
        if counts.len() != settings.len() {
            return Err(TomographyError::Length {
                expected: settings.len(),
                found: counts.len(),
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TomographyError::Scale(scale));
        }
        check_complete(&settings)?;
        Ok(Self {
            settings,
            counts,
            scale,
        })
    }

    pub fn settings(&self) -> &[MeasurementSetting] {
        &self.settings
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_counts(&self, counts: Vec<u64>) -> Result<Self, TomographyError> {
        Self::new(self.settings.clone(), counts, self.scale)
    }

    /// `# key=value` metadata (including `acquisition_scale`), then
    /// `setting,count` rows.
    pub fn to_csv(&self, metadata: &BTreeMap<String, String>) -> String {
        let mut out = format!("# acquisition_scale={}\n", self.scale);
        for (k, v) in metadata {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str("setting,count\n");
        for (s, c) in self.settings.iter().zip(&self.counts) {
            out.push_str(&format!("{s},{c}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<(Self, BTreeMap<String, String>), TomographyError> {
        let mut meta = BTreeMap::new();
        let mut scale = None;
        let mut settings = Vec::new();
        let mut counts = Vec::new();
        let mut header = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| TomographyError::Csv { line: i + 1, message };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| err("metadata line without '='".into()))?;
                let (k, v) = (k.trim(), v.trim());
                if k == "acquisition_scale" {
                    scale = Some(v.parse::<f64>().map_err(|e| err(e.to_string()))?);
                } else {
                    meta.insert(k.to_owned(), v.to_owned());
                }
                continue;
            }
            if !header {
                if line != "setting,count" {
                    return Err(err(format!("expected header 'setting,count', found '{line}'")));
                }
                header = true;
                continue;
            }
            let (s, c) = line
                .split_once(',')
                .ok_or_else(|| err("expected 'setting,count'".into()))?;
            settings.push(s.parse::<MeasurementSetting>().map_err(|e| err(e.to_string()))?);
            counts.push(c.trim().parse::<u64>().map_err(|e| err(e.to_string()))?);
        }
        let scale = scale.ok_or_else(|| TomographyError::Csv {
            line: 0,
            message: "missing acquisition_scale".into(),
        })?;
        Ok((Self::new(settings, counts, scale)?, meta))
    }
}

/// `scale · Tr[ρ Π_k]` per setting.
pub fn expected_counts(rho: &DensityMatrix, settings: &[MeasurementSetting], scale: f64) -> Vec<f64> {
    settings
        .iter()
        .map(|s| (scale * rho.expectation(&s.projector())).max(0.0))
        .collect()
}

/// Poisson counts on the canonical settings.
pub fn simulate_counts(rho: &DensityMatrix, scale: f64, seed: u64) -> Result<TomographyRecord, TomographyError> {
    simulate_with(rho, canonical_settings(), scale, seed)
}

pub fn simulate_with(
    rho: &DensityMatrix,
    settings: Vec<MeasurementSetting>,
    scale: f64,
    seed: u64,
) -> Result<TomographyRecord, TomographyError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(TomographyError::Scale(scale));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = expected_counts(rho, &settings, scale)
        .into_iter()
        .map(|mu| {
            if mu > 0.0 {
                Poisson::new(mu).expect("positive finite mean").sample(&mut rng) as u64
            } else {
                0
            }
        })
        .collect();
    TomographyRecord::new(settings, counts, scale)
}

/// Least-squares solution of `n = N·A x` normalized to unit trace. The
/// result is Hermitian with unit trace but may have negative eigenvalues.
pub fn linear_inversion(rec: &TomographyRecord) -> Result<Matrix4<Complex64>, TomographyError> {
    let a = design_matrix(&rec.settings);
    let n = DVector::from_iterator(rec.counts.len(), rec.counts.iter().map(|c| *c as f64));
    let svd = a.svd(true, true);
    let x = svd
        .solve(&n, COMPLETENESS_TOL * svd.singular_values.max())
        .expect("U and V were computed");
    let tr = x[0];
    if !(tr > 0.0) {
        return Err(TomographyError::NoCounts);
    }
    let paulis = pauli_products();
    let m = paulis
        .iter()
        .zip(x.iter())
        .fold(Matrix4::zeros(), |acc, (p, c)| acc + p * Complex64::from(0.25 * c / tr));
    Ok(hermitian_part(&m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleOptions {
    pub max_iter: usize,
    pub gradient_tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            gradient_tol: GRADIENT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    pub rho: DensityMatrix,
    /// `Σ_k n_k ln(p_k / Σ_j p_j)` at the returned state.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// All counts were zero; the state is `I/4` by convention.
    pub no_data: bool,
    /// Log-likelihood after every accepted step, starting point first.
    pub trace: Vec<f64>,
}

const N_T: usize = 16;
type TParams = SVector<f64, N_T>;
type Hess = nalgebra::SMatrix<f64, N_T, N_T>;

/// Upper-triangular `T` from its real parameters: four real diagonal
/// entries, then real and imaginary parts of the six entries above it.
fn t_matrix(x: &TParams) -> Matrix4<Complex64> {
    let mut t = Matrix4::zeros();
    for i in 0..4 {
        t[(i, i)] = Complex64::from(x[i]);
    }
    let mut k = 4;
    for i in 0..4 {
        for j in i + 1..4 {
            t[(i, j)] = Complex64::new(x[k], x[k + 1]);
            k += 2;
        }
    }
    t
}

fn t_params(t: &Matrix4<Complex64>) -> TParams {
    let mut x = TParams::zeros();
    for i in 0..4 {
        x[i] = t[(i, i)].re;
    }
    let mut k = 4;
    for i in 0..4 {
        for j in i + 1..4 {
            x[k] = t[(i, j)].re;
            x[k + 1] = t[(i, j)].im;
            k += 2;
        }
    }
    x
}

fn state_from_t(x: &TParams) -> Matrix4<Complex64> {
    let t = t_matrix(x);
    let g = hermitian_part(&(t.adjoint() * t));
    let tr = g.trace().re;
    g / Complex64::from(tr)
}

/// Negative log-likelihood per count, in `T` coordinates.
struct Objective {
    kets: Vec<Vector4<Complex64>>,
    /// Counts divided by their total.
    freq: Vec<f64>,
}

impl Objective {
    fn new(rec: &TomographyRecord) -> Option<(Self, f64)> {
        let total: f64 = rec.counts.iter().map(|c| *c as f64).sum();
        if total <= 0.0 {
            return None;
        }
        Some((
            Self {
                kets: rec.settings.iter().map(MeasurementSetting::ket).collect(),
                freq: rec.counts.iter().map(|c| *c as f64 / total).collect(),
            },
            total,
        ))
    }

    fn value(&self, x: &TParams) -> f64 {
        let t = t_matrix(x);
        let q: Vec<f64> = self.kets.iter().map(|k| (t * k).norm_squared()).collect();
        let sum: f64 = q.iter().sum();
        let mut f = sum.ln();
        for (qk, fk) in q.iter().zip(&self.freq) {
            if *fk > 0.0 {
                f -= fk * qk.ln();
            }
        }
        if f.is_nan() {
            f64::INFINITY
        } else {
            f
        }
    }

    fn gradient(&self, x: &TParams) -> TParams {
        let t = t_matrix(x);
        let vs: Vec<Vector4<Complex64>> = self.kets.iter().map(|k| t * k).collect();
        let q: Vec<f64> = vs.iter().map(|v| v.norm_squared()).collect();
        let sum: f64 = q.iter().sum();
        let mut g = TParams::zeros();
        for ((v, psi), (qk, fk)) in vs.iter().zip(&self.kets).zip(q.iter().zip(&self.freq)) {
            let c = 1.0 / sum - if *fk > 0.0 { fk / qk } else { 0.0 };
            // ∂q/∂T_ab = 2 Re(v̄_a ψ_b) for the real part, −2 Im(v̄_a ψ_b) for the imaginary part.
            for i in 0..4 {
                g[i] += c * 2.0 * (v[i].conj() * psi[i]).re;
            }
            let mut k = 4;
            for i in 0..4 {
                for j in i + 1..4 {
                    let z = v[i].conj() * psi[j];
                    g[k] += c * 2.0 * z.re;
                    g[k + 1] -= c * 2.0 * z.im;
                    k += 2;
                }
            }
        }
        g
    }
}

/// Physical starting point: the linear estimate with negative eigenvalues
/// clipped and a little `I/4` mixed in, as a Cholesky factor.
fn starting_point(rec: &TomographyRecord) -> TParams {
    let guess = linear_inversion(rec).unwrap_or_else(|_| DensityMatrix::maximally_mixed().into_matrix());
    let eig = guess.symmetric_eigen();
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|e| e.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    let mut m = Matrix4::zeros();
    if sum > 0.0 {
        for (k, e) in clipped.iter().enumerate() {
            let v = eig.eigenvectors.column(k);
            m += v * v.adjoint() * Complex64::from(e / sum);
        }
    }
    let m = hermitian_part(
        &(m * Complex64::from(1.0 - START_MIXING) + Matrix4::identity() * Complex64::from(START_MIXING / 4.0)),
    );
    let l = Cholesky::new(m).expect("full-rank mixture").l();
    t_params(&l.adjoint())
}

/// Maximum-likelihood state with the default options.
pub fn mle_reconstruct(rec: &TomographyRecord) -> Result<MleResult, TomographyError> {
    mle_with(rec, &MleOptions::default())
}

/// Quasi-Newton (BFGS with backtracking) ascent of the likelihood. The
/// parameter vector is renormalized after every step; the likelihood does
/// not depend on its length.
pub fn mle_with(rec: &TomographyRecord, opts: &MleOptions) -> Result<MleResult, TomographyError> {
    let Some((obj, total)) = Objective::new(rec) else {
        return Ok(MleResult {
            rho: DensityMatrix::maximally_mixed(),
            log_likelihood: 0.0,
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            no_data: true,
            trace: vec![0.0],
        });
    };
    let mut x = starting_point(rec);
    x /= x.norm();
    let mut f = obj.value(&x);
    let mut g = obj.gradient(&x);
    let mut h = Hess::identity();
    let mut trace = vec![-f * total];
    let mut iterations = 0;
    let mut converged = g.norm() < opts.gradient_tol;
    while !converged && iterations < opts.max_iter {
        let mut d = -(h * g);
        if d.dot(&g) >= 0.0 {
            h = Hess::identity();
            d = -g;
        }
        let slope = d.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = x + d * step;
            let ft = obj.value(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            if h == Hess::identity() {
                break;
            }
            h = Hess::identity();
            continue;
        };
        let xn = trial / trial.norm();
        let gn = obj.gradient(&xn);
        let s = xn - x;
        let y = gn - g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = Hess::identity();
            h = (i - s * y.transpose() * rho) * h * (i - y * s.transpose() * rho) + s * s.transpose() * rho;
        }
        x = xn;
        f = ft.min(obj.value(&x));
        g = gn;
        iterations += 1;
        trace.push(-f * total);
        converged = g.norm() < opts.gradient_tol;
    }
    let rho = DensityMatrix::new(state_from_t(&x))?;
    let gradient_norm = g.norm();
    Ok(MleResult {
        log_likelihood: -f * total,
        rho,
        iterations,
        converged,
        gradient_norm,
        no_data: false,
        trace,
    })
}

/// `Σ_k n_k ln(p_k / Σ_j p_j)` of an arbitrary physical state.
pub fn log_likelihood(rec: &TomographyRecord, rho: &DensityMatrix) -> f64 {
    let p: Vec<f64> = rec.settings.iter().map(|s| rho.expectation(&s.projector())).collect();
    let sum: f64 = p.iter().sum();
    rec.counts
        .iter()
        .zip(&p)
        .filter(|(n, _)| **n > 0)
        .map(|(n, pk)| *n as f64 * (pk / sum).ln())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityEstimate {
    pub fidelity: f64,
    pub theta: f64,
    /// Spread of the fidelity over Poisson resamples of the counts.
    pub std_dev: f64,
    pub resamples: usize,
}

/// Fidelity of the maximum-likelihood state with a parametric bootstrap
/// error: each count is redrawn from a Poisson law with the observed mean.
pub fn fidelity_with_bootstrap(
    rec: &TomographyRecord,
    resamples: usize,
    seed: u64,
) -> Result<FidelityEstimate, TomographyError> {
    let base = mle_reconstruct(rec)?;
    let (fidelity, theta) = fidelity_max_theta(&base.rho);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let counts = rec
            .counts
            .iter()
            .map(|&c| {
                if c > 0 {
                    Poisson::new(c as f64).expect("positive mean").sample(&mut rng) as u64
                } else {
                    0
                }
            })
            .collect();
        let r = mle_reconstruct(&rec.with_counts(counts)?)?;
        fs.push(fidelity_max_theta(&r.rho).0);
    }
    let std_dev = if fs.len() >= 2 {
        let n = fs.len() as f64;
        let mean = fs.iter().sum::<f64>() / n;
        (fs.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(FidelityEstimate {
        fidelity,
        theta,
        std_dev,
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sagnac::{postselected_state, SagnacSpec};
    use proptest::prelude::*;

    fn random_state(parts: &[f64]) -> DensityMatrix {
        let a = Matrix4::from_fn(|r, c| Complex64::new(parts[8 * r + 2 * c], parts[8 * r + 2 * c + 1]));
        let g = a.adjoint() * a;
        let tr = g.trace().re;
        DensityMatrix::new(hermitian_part(&(g / Complex64::from(tr)))).unwrap()
    }

    fn exact_record(rho: &DensityMatrix, scale: f64) -> (TomographyRecord, Vec<f64>) {
        let settings = canonical_settings();
        let mu = expected_counts(rho, &settings, scale);
        // Counts are integers; build the record, then evaluate with exact means.
        let rec = TomographyRecord::new(settings, mu.iter().map(|m| m.round() as u64).collect(), scale).unwrap();
        (rec, mu)
    }

    #[test]
    fn canonical_settings_are_complete() {
        let s = canonical_settings();
        assert_eq!(s.len(), 16);
        assert!(check_complete(&s).is_ok());
        let mut bad = s.clone();
        bad[15] = MeasurementSetting::new(Pol::H, Pol::H);
        assert!(matches!(check_complete(&bad), Err(TomographyError::Incomplete { .. })));
        // Swapping R for L keeps completeness.
        let alt: Vec<_> = s
            .iter()
            .map(|m| MeasurementSetting::new(if m.a == Pol::R { Pol::L } else { m.a }, m.b))
            .collect();
        assert!(check_complete(&alt).is_ok());
    }

    #[test]
    fn setting_labels_round_trip() {
        for s in canonical_settings() {
            assert_eq!(s.to_string().parse::<MeasurementSetting>().unwrap(), s);
        }
        assert!("HX".parse::<MeasurementSetting>().is_err());
        assert!("HVH".parse::<MeasurementSetting>().is_err());
        for p in Pol::ALL {
            assert!((p.ket().norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn expected_count_examples() {
        let settings = canonical_settings();
        let idx = |l: &str| settings.iter().position(|s| s.to_string() == l).unwrap();
        let mut hh = Vector4::zeros();
        hh[0] = Complex64::from(1.0);
        let mu = expected_counts(&DensityMatrix::pure(&hh).unwrap(), &settings, 1e4);
        assert!((mu[idx("HH")] - 1e4).abs() < 1e-9);
        assert!(mu[idx("VV")].abs() < 1e-9);
        let phi = DensityMatrix::phi(0.0);
        let da = MeasurementSetting::new(Pol::D, Pol::A);
        let dd = MeasurementSetting::new(Pol::D, Pol::D);
        assert!((phi.expectation(&dd.projector()) - 0.5).abs() < 1e-15);
        assert!(phi.expectation(&da.projector()).abs() < 1e-15);
        // Contaminated state: VH probability is w/(1+w).
        let s = SagnacSpec::symmetric(0.3, 1.0, 1.0, 0.0, 1e8, 0.0).unwrap();
        let w = s.contamination_weight().unwrap();
        let rho = postselected_state(&s).unwrap();
        let mu = expected_counts(&rho, &settings, 1e4);
        let direct = (rho.matrix() * MeasurementSetting::new(Pol::V, Pol::H).projector())
            .trace()
            .re;
        assert!((mu[idx("VH")] - 1e4 * w / (1.0 + w)).abs() < 1e-9);
        assert!((mu[idx("VH")] - 1e4 * direct).abs() < 1e-9);
    }

    #[test]
    fn simulation_is_deterministic() {
        let rho = DensityMatrix::phi(0.3);
        let a = simulate_counts(&rho, 1e4, 7).unwrap();
        let b = simulate_counts(&rho, 1e4, 7).unwrap();
        let c = simulate_counts(&rho, 1e4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(simulate_counts(&rho, 0.0, 1).is_err());
    }

    #[test]
    fn linear_inversion_is_exact_on_means() {
        let parts: Vec<f64> = (0..32).map(|k| ((k * 37 % 17) as f64 - 8.0) / 7.0).collect();
        let rho = random_state(&parts);
        let settings = canonical_settings();
        let a = design_matrix(&settings);
        let mu = expected_counts(&rho, &settings, 1.0);
        // Solve with real-valued means through the same path as the counts.
        let x = a.clone().svd(true, true).solve(&DVector::from_vec(mu), 1e-12).unwrap();
        let paulis = pauli_products();
        let m = paulis
            .iter()
            .zip(x.iter())
            .fold(Matrix4::zeros(), |acc, (p, c)| acc + p * Complex64::from(0.25 * c));
        assert!((m - rho.matrix()).norm() < 1e-10);
        // Integer counts at a large scale.
        let (rec, _) = exact_record(&rho, 1e12);
        let lin = linear_inversion(&rec).unwrap();
        assert!((lin - rho.matrix()).norm() < 1e-10);
    }

    #[test]
    fn equal_counts_give_the_maximally_mixed_state() {
        let rec = TomographyRecord::new(canonical_settings(), vec![100; 16], 400.0).unwrap();
        let lin = linear_inversion(&rec).unwrap();
        assert!((lin - DensityMatrix::maximally_mixed().matrix()).norm() < 1e-12);
        let zero = rec.with_counts(vec![0; 16]).unwrap();
        assert_eq!(linear_inversion(&zero), Err(TomographyError::NoCounts));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let rho = DensityMatrix::phi(0.4);
        let rec = simulate_counts(&rho, 1e3, 3).unwrap();
        let (obj, _) = Objective::new(&rec).unwrap();
        let x = starting_point(&rec);
        let g = obj.gradient(&x);
        for k in 0..N_T {
            let h = 1e-5;
            let mut up = x;
            let mut dn = x;
            up[k] += h;
            dn[k] -= h;
            let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()), "k={k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn mle_matches_linear_inversion_on_noiseless_data() {
        let parts: Vec<f64> = (0..32).map(|k| ((k * 29 % 13) as f64 - 6.0) / 5.0).collect();
        let rho = random_state(&parts);
        let (rec, _) = exact_record(&rho, 1e12);
        let lin = linear_inversion(&rec).unwrap();
        let mle = mle_reconstruct(&rec).unwrap();
        assert!(mle.converged, "gradient {}", mle.gradient_norm);
        assert!((mle.rho.matrix() - lin).norm() < 1e-6);
        assert!(mle.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    }

    #[test]
    fn mle_stays_physical_where_inversion_does_not() {
        let rho = DensityMatrix::phi(0.0);
        let mut found = 0;
        for seed in 0..40 {
            let rec = simulate_counts(&rho, 1e3, seed).unwrap();
            let lin = linear_inversion(&rec).unwrap();
            if crate::density::eigenvalues(&lin)[0] < -1e-10 {
                found += 1;
                let mle = mle_reconstruct(&rec).unwrap();
                assert!(mle.rho.eigenvalues()[0] >= -1e-10);
                assert!(mle.converged, "seed {seed}: gradient {}", mle.gradient_norm);
                // The MLE is at least as likely as the clipped inversion.
                let start = DensityMatrix::new(state_from_t(&starting_point(&rec))).unwrap();
                assert!(mle.log_likelihood >= log_likelihood(&rec, &start) - 1e-9);
            }
        }
        assert!(found > 0, "no seed produced an unphysical inversion");
    }

    #[test]
    fn adversarial_count_vectors() {
        let base = TomographyRecord::new(canonical_settings(), vec![0; 16], 1e4).unwrap();
        let zero = mle_reconstruct(&base).unwrap();
        assert!(zero.no_data);
        assert_eq!(zero.rho, DensityMatrix::maximally_mixed());
        for k in 0..16 {
            let mut counts = vec![0; 16];
            counts[k] = 1000;
            let r = mle_reconstruct(&base.with_counts(counts).unwrap()).unwrap();
            assert!(!r.no_data);
            assert!(r.rho.eigenvalues()[0] >= -1e-10);
        }
    }

    #[test]
    fn record_csv_round_trip() {
        let rec = simulate_counts(&DensityMatrix::phi(1.0), 1e4, 11).unwrap();
        let meta = BTreeMap::from([("seed".to_owned(), "11".to_owned())]);
        let text = rec.to_csv(&meta);
        let (back, m) = TomographyRecord::from_csv(&text).unwrap();
        assert_eq!(back, rec);
        assert_eq!(m, meta);
        let broken = text.replace("HH,", "HX,");
        assert!(matches!(
            TomographyRecord::from_csv(&broken),
            Err(TomographyError::Csv { .. })
        ));
        let short: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(TomographyRecord::from_csv(&short).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mle_output_is_always_physical(counts in proptest::collection::vec(0u64..50, 16)) {
            let rec = TomographyRecord::new(canonical_settings(), counts, 100.0).unwrap();
            let r = mle_reconstruct(&rec).unwrap();
            prop_assert!(r.rho.eigenvalues()[0] >= -1e-10);
            prop_assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0)));
        }
    }
}
