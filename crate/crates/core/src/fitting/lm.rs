//! Box-constrained Levenberg–Marquardt on weighted residuals.

use nalgebra::{DMatrix, DVector};

/// Model predictions and their Jacobian at a parameter vector.
pub(crate) trait LeastSquares {
    fn predict(&self, x: &[f64]) -> Vec<f64>;
    fn predict_with_jacobian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iter: usize,
    pub step_tol: f64,
    pub cost_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub jacobian: DMatrix<f64>,
}

fn cost(y: &[f64], w: &[f64], m: &[f64]) -> f64 {
    y.iter().zip(w).zip(m).map(|((y, w), m)| w * (y - m) * (y - m)).sum()
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Largest damping before a point is declared stationary.
const LAMBDA_MAX: f64 = 1e16;

/// Minimizes `Σ w (y − f(x))²` over the box `[lo, hi]`.
///
/// Steps solve `(JᵀWJ + λ·diag(JᵀWJ)) δ = JᵀW r` and are projected onto the
/// box. A step is accepted only if it lowers the cost, so the accepted cost
/// sequence is non-increasing. Convergence: a relative step below
/// `step_tol`, a relative cost drop below `cost_tol`, a zero-residual fit,
/// or no descent available at any damping.
pub(crate) fn minimize<P: LeastSquares>(
    problem: &P,
    y: &[f64],
    w: &[f64],
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: LmOptions,
) -> LmOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut m, mut jac) = problem.predict_with_jacobian(&x);
    let mut c = cost(y, w, &m);
    let mut trace = vec![c];
    let scale: f64 = y
        .iter()
        .zip(w)
        .map(|(y, w)| w * y * y)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = c <= 1e-28 * scale;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let r = DVector::from_iterator(y.len(), y.iter().zip(&m).map(|(y, m)| y - m));
        let wv = DVector::from_column_slice(w);
        let jw = DMatrix::from_fn(jac.nrows(), n, |i, k| jac[(i, k)] * wv[i]);
        let h = jac.transpose() * &jw;
        let g = jw.transpose() * r;
        let diag: Vec<f64> = (0..n).map(|k| h[(k, k)].max(1e-300)).collect();

        let mut accepted = false;
        while lambda <= LAMBDA_MAX {
            let mut a = h.clone();
            for k in 0..n {
                a[(k, k)] += lambda * diag[k];
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, lo, hi);
            let mt = problem.predict(&trial);
            let ct = cost(y, w, &mt);
            if ct.is_finite() && ct < c {
                let dx: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let xn: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                let rel_step = dx / (xn + 1e-300);
                let rel_cost = (c - ct) / c;
                x = trial;
                let (m2, j2) = problem.predict_with_jacobian(&x);
                m = m2;
                jac = j2;
                c = ct;
                trace.push(c);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_step < opts.step_tol || rel_cost < opts.cost_tol || c <= 1e-28 * scale {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No damping yields descent: the point is stationary to rounding.
            converged = true;
        }
    }

    LmOutcome {
        x,
        cost: c,
        iterations,
        converged,
        trace,
        jacobian: jac,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = a·e^{−b t} + c
    struct Decay {
        t: Vec<f64>,
    }

    impl LeastSquares for Decay {
        fn predict(&self, x: &[f64]) -> Vec<f64> {
            self.t.iter().map(|t| x[0] * (-x[1] * t).exp() + x[2]).collect()
        }
        fn predict_with_jacobian(&self, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
            let m = self.predict(x);
            let j = DMatrix::from_fn(self.t.len(), 3, |i, k| {
                let e = (-x[1] * self.t[i]).exp();
                match k {
                    0 => e,
                    1 => -x[0] * self.t[i] * e,
                    _ => 1.0,
                }
            });
            (m, j)
        }
    }

    const OPTS: LmOptions = LmOptions {
        max_iter: 500,
        step_tol: 1e-10,
        cost_tol: 1e-14,
    };

    #[test]
    fn recovers_noiseless_decay_from_far_start() {
        let p = Decay {
            t: (0..50).map(|i| i as f64 * 0.1).collect(),
        };
        let y = p.predict(&[5.0, 1.3, 0.5]);
        let w = vec![1.0; 50];
        let out = minimize(&p, &y, &w, &[1.0, 0.2, 0.0], &[0.0; 3], &[100.0; 3], OPTS);
        assert!(out.converged);
        for (a, b) in out.x.iter().zip([5.0, 1.3, 0.5]) {
            assert!((a - b).abs() < 1e-7, "{:?}", out.x);
        }
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_bounds() {
        let p = Decay {
            t: (0..50).map(|i| i as f64 * 0.1).collect(),
        };
        let y = p.predict(&[5.0, 1.3, 0.5]);
        let w = vec![1.0; 50];
        let out = minimize(&p, &y, &w, &[4.0, 1.0, 0.2], &[0.0, 0.0, 0.0], &[10.0, 10.0, 0.3], OPTS);
        assert!(out.x[2] <= 0.3);
        assert!(out.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn exact_start_converges_immediately() {
        let p = Decay {
            t: (0..50).map(|i| i as f64 * 0.1).collect(),
        };
        let x = [5.0, 1.3, 0.5];
        let y = p.predict(&x);
        let out = minimize(&p, &y, &vec![1.0; 50], &x, &[0.0; 3], &[100.0; 3], OPTS);
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, x.to_vec());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let p = Decay {
            t: (0..50).map(|i| i as f64 * 0.1).collect(),
        };
        let y = p.predict(&[5.0, 1.3, 0.5]);
        let opts = LmOptions { max_iter: 1, ..OPTS };
        let out = minimize(&p, &y, &vec![1.0; 50], &[0.5, 5.0, 3.0], &[0.0; 3], &[100.0; 3], opts);
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }
}
