//! Gaussian process regression with an isotropic RBF kernel.
//!
//! Multi-output targets share one kernel; each output column gets its own
//! conditional mean `K_*X (K_XX + s2 I)^-1 y_q`, where `s2` is the observation
//! noise variance. A small diagonal jitter proportional to the signal variance
//! keeps the Cholesky factorization stable and is escalated tenfold on failure.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Matrix;

/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-2;

const LINE_SEARCH_HALVINGS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GprParams {
    pub signal_variance: f64,
    pub length_scale: f64,
    /// Observation noise variance in standardized target units. Zero gives a
    /// noise-free interpolator and keeps it out of the optimization.
    pub noise_variance: f64,
    /// Diagonal jitter relative to the signal variance.
    pub jitter: f64,
    pub optimizer_steps: usize,
}

impl Default for GprParams {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            length_scale: 1.0,
            noise_variance: 1e-2,
            jitter: 1e-6,
            optimizer_steps: 1,
        }
    }
}

/// Kernel hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Theta {
    pub signal_variance: f64,
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl Theta {
    /// Log parameters; a zero noise variance maps to negative infinity and
    /// stays there.
    fn to_log(self) -> [f64; 3] {
        [self.signal_variance.ln(), self.length_scale.ln(), self.noise_variance.ln()]
    }

    fn from_log(v: [f64; 3]) -> Self {
        Self {
            signal_variance: v[0].exp(),
            length_scale: v[1].exp(),
            noise_variance: v[2].exp(),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn rbf(a: &[f64], b: &[f64], theta: Theta) -> f64 {
    theta.signal_variance * (-0.5 * sq_dist(a, b) / (theta.length_scale * theta.length_scale)).exp()
}

fn kernel_matrix(inputs: &Matrix, theta: Theta, jitter: f64) -> DMatrix<f64> {
    let m = inputs.rows();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = theta.signal_variance * (1.0 + jitter) + theta.noise_variance;
        for j in 0..i {
            let v = rbf(inputs.row(i), inputs.row(j), theta);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn targets_matrix(targets: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(targets.rows(), targets.cols(), |i, j| targets.get(i, j))
}

struct Factored {
    chol: Cholesky<f64, Dyn>,
    alpha: DMatrix<f64>,
    lml: f64,
}

fn factor(inputs: &Matrix, y: &DMatrix<f64>, theta: Theta, jitter: f64) -> Option<Factored> {
    let k = kernel_matrix(inputs, theta, jitter);
    let chol = k.cholesky()?;
    let alpha = chol.solve(y);
    let (m, q) = (y.nrows() as f64, y.ncols() as f64);
    let fit: f64 = y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * fit - 0.5 * q * log_det - 0.5 * m * q * (2.0 * std::f64::consts::PI).ln();
    lml.is_finite().then_some(Factored { chol, alpha, lml })
}

/// Factors at `theta`, escalating the jitter tenfold until the kernel matrix
/// is positive definite. Returns the jitter that worked.
fn factor_with_escalation(
    inputs: &Matrix,
    y: &DMatrix<f64>,
    theta: Theta,
    jitter: f64,
) -> Result<(Factored, f64)> {
    let mut j = jitter;
    loop {
        if let Some(f) = factor(inputs, y, theta, j) {
            return Ok((f, j));
        }
        let next = if j > 0.0 { j * 10.0 } else { 1e-12 };
        if next > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::SingularKernel { jitter: j });
        }
        j = next;
    }
}

/// Log marginal likelihood of the targets (all output columns) under `theta`.
pub fn log_marginal_likelihood(inputs: &Matrix, targets: &Matrix, theta: Theta, jitter: f64) -> Result<f64> {
    let y = targets_matrix(targets);
    factor(inputs, &y, theta, jitter)
        .map(|f| f.lml)
        .ok_or(Error::SingularKernel { jitter })
}

/// Log marginal likelihood and its gradient with respect to
/// `(ln signal_variance, ln length_scale, ln noise_variance)`.
pub fn lml_gradient(inputs: &Matrix, targets: &Matrix, theta: Theta, jitter: f64) -> Result<(f64, [f64; 3])> {
    let y = targets_matrix(targets);
    let f = factor(inputs, &y, theta, jitter).ok_or(Error::SingularKernel { jitter })?;
    Ok((f.lml, gradient(inputs, &f, theta, jitter)))
}

fn gradient(inputs: &Matrix, f: &Factored, theta: Theta, jitter: f64) -> [f64; 3] {
    let m = inputs.rows();
    let q = f.alpha.ncols() as f64;
    let k_inv = f.chol.inverse();
    let ell2 = theta.length_scale * theta.length_scale;
    let mut g = [0.0; 3];
    for i in 0..m {
        for j in 0..m {
            let aa: f64 = (0..f.alpha.ncols()).map(|c| f.alpha[(i, c)] * f.alpha[(j, c)]).sum();
            let w = aa - q * k_inv[(i, j)];
            let (dk_var, dk_len) = if i == j {
                (theta.signal_variance * (1.0 + jitter), 0.0)
            } else {
                let r2 = sq_dist(inputs.row(i), inputs.row(j));
                let kij = theta.signal_variance * (-0.5 * r2 / ell2).exp();
                (kij, kij * r2 / ell2)
            };
            g[0] += w * dk_var;
            g[1] += w * dk_len;
            if i == j {
                g[2] += w * theta.noise_variance;
            }
        }
    }
    g.map(|v| 0.5 * v)
}

/// Gradient ascent on the log marginal likelihood in log-parameter space.
/// Each step moves along the normalized gradient with a backtracking line
/// search and is only taken if the likelihood increases.
pub fn optimize_hyperparameters(
    inputs: &Matrix,
    targets: &Matrix,
    initial: Theta,
    steps: usize,
    jitter: f64,
) -> Result<(Theta, f64)> {
    if steps == 0 {
        return Ok((initial, jitter));
    }
    let y = targets_matrix(targets);
    let (mut current, jitter) = factor_with_escalation(inputs, &y, initial, jitter)?;
    let mut theta = initial;
    for _ in 0..steps {
        let g = gradient(inputs, &current, theta, jitter);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            break;
        }
        let base = theta.to_log();
        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..LINE_SEARCH_HALVINGS {
            let candidate = Theta::from_log(std::array::from_fn(|d| base[d] + eta * g[d] / norm));
            if let Some(f) = factor(inputs, &y, candidate, jitter) {
                if f.lml > current.lml {
                    accepted = Some((candidate, f));
                    break;
                }
            }
            eta *= 0.5;
        }
        match accepted {
            Some((t, f)) => {
                theta = t;
                current = f;
            }
            None => break,
        }
    }
    Ok((theta, jitter))
}

/// Fitted posterior-mean predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct GprModel {
    pub(crate) inputs: Matrix,
    /// Lower Cholesky factor of `K_XX + jitter`, row-major.
    pub(crate) chol_lower: Vec<f64>,
    /// `K_XX^-1 Y`, one column per output.
    pub(crate) alpha: Matrix,
    pub(crate) theta: Theta,
    pub(crate) jitter: f64,
}

pub fn fit_gpr(inputs: &Matrix, targets: &Matrix, params: &GprParams) -> Result<GprModel> {
    let initial = Theta {
        signal_variance: params.signal_variance,
        length_scale: params.length_scale,
        noise_variance: params.noise_variance,
    };
    let (theta, jitter) = optimize_hyperparameters(inputs, targets, initial, params.optimizer_steps, params.jitter)?;
    let y = targets_matrix(targets);
    let (f, jitter) = factor_with_escalation(inputs, &y, theta, jitter)?;
    let m = inputs.rows();
    let l = f.chol.l();
    let chol_lower = (0..m * m).map(|i| l[(i / m, i % m)]).collect();
    let alpha = Matrix::new(
        m,
        targets.cols(),
        (0..m * targets.cols())
            .map(|i| f.alpha[(i / targets.cols(), i % targets.cols())])
            .collect(),
    )?;
    Ok(GprModel {
        inputs: inputs.clone(),
        chol_lower,
        alpha,
        theta,
        jitter,
    })
}

impl GprModel {
    pub fn theta(&self) -> Theta {
        self.theta
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn predict(&self, queries: &Matrix) -> Matrix {
        let q = self.alpha.cols();
        let mut out = Matrix::zeros(queries.rows(), q);
        out.data_mut()
            .par_chunks_mut(q)
            .enumerate()
            .for_each(|(i, row)| {
                let x = queries.row(i);
                for m in 0..self.inputs.rows() {
                    let k = rbf(x, self.inputs.row(m), self.theta);
                    for (o, a) in row.iter_mut().zip(self.alpha.row(m)) {
                        *o += k * a;
                    }
                }
            });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(values: &[f64]) -> Matrix {
        Matrix::new(values.len(), 1, values.to_vec()).unwrap()
    }

    /// Gaussian elimination with partial pivoting, independent of nalgebra.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn posterior_mean_matches_dense_solve() {
        let xs = [-1.0, 0.3, 1.7];
        let ys = [0.5, -1.2, 2.0];
        let params = GprParams {
            signal_variance: 1.3,
            length_scale: 0.8,
            noise_variance: 0.0,
            jitter: 1e-6,
            optimizer_steps: 0,
        };
        let model = fit_gpr(&col(&xs), &col(&ys), &params).unwrap();
        let theta = Theta {
            signal_variance: 1.3,
            length_scale: 0.8,
            noise_variance: 0.0,
        };
        let k = |a: f64, b: f64| 1.3 * (-0.5 * (a - b) * (a - b) / 0.64f64).exp();
        let kxx: Vec<Vec<f64>> = xs
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                xs.iter()
                    .enumerate()
                    .map(|(j, &b)| if i == j { 1.3 * (1.0 + 1e-6) } else { k(a, b) })
                    .collect()
            })
            .collect();
        let weights = dense_solve(kxx, ys.to_vec());
        let queries = [-2.0, 0.0, 0.9, 3.0];
        let pred = model.predict(&col(&queries));
        for (i, &q) in queries.iter().enumerate() {
            let expected: f64 = xs.iter().zip(&weights).map(|(&x, w)| k(q, x) * w).sum();
            assert!((pred.get(i, 0) - expected).abs() < 1e-9, "{} vs {}", pred.get(i, 0), expected);
        }
        assert_eq!(model.theta(), theta);
    }

    #[test]
    fn single_point_reproduces_target() {
        let params = GprParams {
            noise_variance: 0.0,
            jitter: 1e-12,
            optimizer_steps: 0,
            ..Default::default()
        };
        let model = fit_gpr(&col(&[0.4]), &Matrix::new(1, 2, vec![3.0, -1.0]).unwrap(), &params).unwrap();
        let p = model.predict(&col(&[0.4]));
        assert!((p.get(0, 0) - 3.0).abs() < 1e-9);
        assert!((p.get(0, 1) + 1.0).abs() < 1e-9);
    }

    #[test]
    fn interpolates_as_jitter_vanishes() {
        let xs = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.7, 1.2], vec![0.3, -1.1], vec![1.5, 1.5]]).unwrap();
        let ys = Matrix::from_rows(&[vec![1.0], vec![-0.5], vec![0.2], vec![2.0], vec![0.7]]).unwrap();
        let params = GprParams {
            noise_variance: 0.0,
            jitter: 1e-10,
            optimizer_steps: 0,
            ..Default::default()
        };
        let model = fit_gpr(&xs, &ys, &params).unwrap();
        let p = model.predict(&xs);
        for i in 0..5 {
            assert!((p.get(i, 0) - ys.get(i, 0)).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let xs = Matrix::from_rows(&rows).unwrap();
        let ys = Matrix::from_rows(&rows.iter().map(|r| vec![r[0].sin() + 0.3 * r[1], r[0] * r[1]]).collect::<Vec<_>>()).unwrap();
        for _ in 0..5 {
            let theta = Theta {
                signal_variance: rng.random_range(0.3..3.0),
                length_scale: rng.random_range(0.4..2.5),
                noise_variance: rng.random_range(0.01..0.5),
            };
            let jitter = 1e-4;
            let (_, g) = lml_gradient(&xs, &ys, theta, jitter).unwrap();
            let h = 1e-5;
            let base = theta.to_log();
            for d in 0..3 {
                let mut up = base;
                let mut down = base;
                up[d] += h;
                down[d] -= h;
                let fu = log_marginal_likelihood(&xs, &ys, Theta::from_log(up), jitter).unwrap();
                let fd = log_marginal_likelihood(&xs, &ys, Theta::from_log(down), jitter).unwrap();
                let fd_grad = (fu - fd) / (2.0 * h);
                let rel = (g[d] - fd_grad).abs() / fd_grad.abs().max(1e-8);
                assert!(rel < 1e-5, "dim {d}: analytic {} fd {} rel {rel}", g[d], fd_grad);
            }
        }
    }

    #[test]
    fn optimizer_is_monotone() {
        let xs = col(&[-2.0, -1.0, -0.2, 0.5, 1.1, 2.3, 3.0]);
        let ys = col(&[0.1, 0.8, 1.0, 0.4, -0.6, -0.9, 0.2]);
        let init = Theta {
            signal_variance: 0.2,
            length_scale: 4.0,
            noise_variance: 0.05,
        };
        let (same, _) = optimize_hyperparameters(&xs, &ys, init, 0, 1e-6).unwrap();
        assert_eq!(same, init);
        let before = log_marginal_likelihood(&xs, &ys, init, 1e-6).unwrap();
        let (after_theta, j) = optimize_hyperparameters(&xs, &ys, init, 1, 1e-6).unwrap();
        let after = log_marginal_likelihood(&xs, &ys, after_theta, j).unwrap();
        assert!(after >= before);
        let (more, j) = optimize_hyperparameters(&xs, &ys, init, 10, 1e-6).unwrap();
        assert!(log_marginal_likelihood(&xs, &ys, more, j).unwrap() >= after);
    }

    #[test]
    fn duplicate_inputs_escalate_jitter() {
        let xs = col(&[1.0, 1.0, 1.0]);
        let ys = col(&[0.0, 1.0, 2.0]);
        let params = GprParams {
            noise_variance: 0.0,
            jitter: 0.0,
            optimizer_steps: 0,
            ..Default::default()
        };
        let model = fit_gpr(&xs, &ys, &params).unwrap();
        assert!(model.jitter() > 0.0);
    }
}
