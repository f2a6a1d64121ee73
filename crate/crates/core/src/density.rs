//! Two-qubit polarization density matrices in the `{HH, HV, VH, VV}` basis.
//!
//! The first letter is the idler polarization, the second the signal's.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use thiserror::Error;

/// Basis labels in matrix order.
pub const BASIS: [&str; 4] = ["HH", "HV", "VH", "VV"];

/// Frobenius norm of `ρ − ρ†` accepted as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Accepted deviation of the trace from one.
pub const TRACE_TOL: f64 = 1e-12;
/// Most negative eigenvalue still counted as positive semidefinite.
pub const EIGEN_FLOOR: f64 = -1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("matrix has a non-finite entry")]
    NonFinite,
    #[error("matrix is not Hermitian: ‖ρ − ρ†‖ = {0:e}")]
    NotHermitian(f64),
    #[error("trace is {re} + {im}i, expected 1")]
    Trace { re: f64, im: f64 },
    #[error("smallest eigenvalue {0:e} is negative")]
    Negative(f64),
    #[error("zero state vector")]
    ZeroVector,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A valid two-qubit state: Hermitian, unit trace and positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(Matrix4<Complex64>);

impl DensityMatrix {
    pub fn new(m: Matrix4<Complex64>) -> Result<Self, DensityError> {
        if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(DensityError::NonFinite);
        }
        let skew = (m - m.adjoint()).norm();
        if skew >= HERMITIAN_TOL {
            return Err(DensityError::NotHermitian(skew));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(DensityError::Trace { re: tr.re, im: tr.im });
        }
        let min = min_eigenvalue(&m);
        if min < EIGEN_FLOOR {
            return Err(DensityError::Negative(min));
        }
        Ok(Self(m))
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) state vector.
    pub fn pure(psi: &Vector4<Complex64>) -> Result<Self, DensityError> {
        let n = psi.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(DensityError::ZeroVector);
        }
        let v = psi / Complex64::from(n);
        Self::new(hermitian_part(&(v * v.adjoint())))
    }

    pub fn maximally_mixed() -> Self {
        Self(Matrix4::identity() * Complex64::from(0.25))
    }

    /// `(|HH⟩ + e^{iφ}|VV⟩)/√2`.
    pub fn phi(phase: f64) -> Self {
        let mut v = Vector4::zeros();
        v[0] = Complex64::from(1.0);
        v[3] = Complex64::from_polar(1.0, phase);
        Self::pure(&v).expect("nonzero vector")
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix4<Complex64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 4] {
        eigenvalues(&self.0)
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    /// `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &Self) -> f64 {
        0.5 * eigenvalues(&hermitian_part(&(self.0 - other.0)))
            .iter()
            .map(|e| e.abs())
            .sum::<f64>()
    }

    /// `Tr[ρ Π]` for a Hermitian operator `Π`.
    pub fn expectation(&self, op: &Matrix4<Complex64>) -> f64 {
        (self.0 * op).trace().re
    }

    /// Text form: `# key=value` metadata lines, then four rows of eight
    /// comma-separated numbers (real and imaginary part of each entry).
    pub fn to_text(&self, metadata: &BTreeMap<String, String>) -> String {
        let mut out = String::new();
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}").expect("string write");
        }
        for r in 0..4 {
            let row: Vec<String> = (0..4)
                .flat_map(|c| {
                    let z = self.0[(r, c)];
                    [z.re.to_string(), z.im.to_string()]
                })
                .collect();
            writeln!(out, "{}", row.join(",")).expect("string write");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<(Self, BTreeMap<String, String>), DensityError> {
        let mut meta = BTreeMap::new();
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let parse_err = |message: String| DensityError::Parse { line: i + 1, message };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| parse_err("metadata line without '='".into()))?;
                meta.insert(k.trim().to_owned(), v.trim().to_owned());
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            if vals.len() != 8 {
                return Err(parse_err(format!("expected 8 numbers, found {}", vals.len())));
            }
            if rows.len() == 4 {
                return Err(parse_err("more than four matrix rows".into()));
            }
            rows.push(vals);
        }
        if rows.len() != 4 {
            return Err(DensityError::Parse {
                line: text.lines().count(),
                message: format!("expected 4 matrix rows, found {}", rows.len()),
            });
        }
        let m = Matrix4::from_fn(|r, c| Complex64::new(rows[r][2 * c], rows[r][2 * c + 1]));
        Ok((Self::new(m)?, meta))
    }

    /// Sixteen `basis,re,im` rows, row-major, with a header.
    pub fn to_basis_csv(&self) -> String {
        let mut out = String::from("basis,re,im\n");
        for (r, row) in BASIS.iter().enumerate() {
            for (c, col) in BASIS.iter().enumerate() {
                let z = self.0[(r, c)];
                writeln!(out, "{row}|{col},{},{}", z.re, z.im).expect("string write");
            }
        }
        out
    }
}

/// `(M + M†)/2`.
pub fn hermitian_part(m: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    (m + m.adjoint()) * Complex64::from(0.5)
}

/// Ascending eigenvalues of the Hermitian part of `m`.
pub fn eigenvalues(m: &Matrix4<Complex64>) -> [f64; 4] {
    let ev = hermitian_part(m).symmetric_eigenvalues();
    let mut out = [ev[0], ev[1], ev[2], ev[3]];
    out.sort_by(f64::total_cmp);
    out
}

fn min_eigenvalue(m: &Matrix4<Complex64>) -> f64 {
    eigenvalues(m)[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn rejects_invalid_matrices() {
        let mut m = Matrix4::identity() * c(0.25, 0.0);
        m[(0, 1)] = c(0.0, 1e-6);
        assert!(matches!(DensityMatrix::new(m), Err(DensityError::NotHermitian(_))));
        let m = Matrix4::identity() * c(0.3, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(DensityError::Trace { .. })));
        let mut m = Matrix4::zeros();
        m[(0, 0)] = c(1.5, 0.0);
        m[(1, 1)] = c(-0.5, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(DensityError::Negative(_))));
        let mut m = Matrix4::identity() * c(0.25, 0.0);
        m[(2, 2)] = c(f64::NAN, 0.0);
        assert_eq!(DensityMatrix::new(m), Err(DensityError::NonFinite));
        assert_eq!(DensityMatrix::pure(&Vector4::zeros()), Err(DensityError::ZeroVector));
    }

    #[test]
    fn bell_state_properties() {
        let rho = DensityMatrix::phi(0.7);
        assert!((rho.purity() - 1.0).abs() < 1e-14);
        let ev = rho.eigenvalues();
        assert!((ev[3] - 1.0).abs() < 1e-14 && ev[0].abs() < 1e-14);
        assert!((rho.get(0, 3) - Complex64::from_polar(0.5, -0.7)).norm() < 1e-15);
        let mixed = DensityMatrix::maximally_mixed();
        assert!((mixed.purity() - 0.25).abs() < 1e-15);
        // Distance from a pure state to I/4 is 3/4.
        assert!((rho.trace_distance(&mixed) - 0.75).abs() < 1e-13);
    }

    #[test]
    fn text_format_round_trip() {
        let rho = DensityMatrix::phi(1.234567);
        let meta = BTreeMap::from([("source".to_owned(), "test".to_owned())]);
        let text = rho.to_text(&meta);
        let (back, m) = DensityMatrix::from_text(&text).unwrap();
        assert_eq!(back, rho);
        assert_eq!(m, meta);
        assert!(DensityMatrix::from_text("1,0,0,0\n").is_err());
        let err = DensityMatrix::from_text("# a=b\n1,0,0,0,0,0,x,0\n").unwrap_err();
        assert!(matches!(err, DensityError::Parse { line: 2, .. }));
    }

    #[test]
    fn basis_csv_has_sixteen_rows() {
        let csv = DensityMatrix::maximally_mixed().to_basis_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[0], "basis,re,im");
        assert_eq!(lines[1], "HH|HH,0.25,0");
        assert_eq!(lines[16], "VV|VV,0.25,0");
    }

    proptest! {
        #[test]
        fn gram_matrices_are_valid(parts in proptest::collection::vec(-1.0f64..1.0, 32)) {
            let a = Matrix4::from_fn(|r, c| Complex64::new(parts[8 * r + 2 * c], parts[8 * r + 2 * c + 1]));
            let g = a.adjoint() * a;
            let tr = g.trace().re;
            prop_assume!(tr > 1e-3);
            let rho = DensityMatrix::new(hermitian_part(&(g / Complex64::from(tr)))).unwrap();
            let ev = rho.eigenvalues();
            prop_assert!(ev[0] >= EIGEN_FLOOR);
            prop_assert!((ev.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
