//! Multiple-output support vector regression.
//!
//! The weight vectors live in the span of the training points' RBF features,
//! `w_q = sum_m beta[m][q] phi(x_m)`, so `||w_q||^2 = beta_q^T K beta_q`. The
//! cost
//!
//! ```text
//! J(beta, b) = 1/2 sum_q beta_q^T K beta_q + lambda sum_m L(||e_m||)
//! L(u) = 0 for u < eps, (u - eps)^2 otherwise
//! ```
//!
//! is minimized by iteratively reweighted least squares: each iteration solves
//! the weighted system on the current support set and moves towards its
//! solution with a backtracking line search, so the cost never increases.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Matrix;

const LINE_SEARCH_HALVINGS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    pub lambda: f64,
    pub epsilon: f64,
    pub rbf_width: f64,
    pub max_iterations: usize,
    pub convergence_tol: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 0.1,
            rbf_width: 1.0,
            max_iterations: 100,
            convergence_tol: 1e-6,
        }
    }
}

#[inline]
pub fn rbf(a: &[f64], b: &[f64], width: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-d2 / (2.0 * width * width)).exp()
}

pub fn kernel_matrix(inputs: &Matrix, width: f64) -> DMatrix<f64> {
    let m = inputs.rows();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = rbf(inputs.row(i), inputs.row(j), width);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Per-sample loss.
#[inline]
pub fn insensitive_loss(u: f64, epsilon: f64) -> f64 {
    if u < epsilon {
        0.0
    } else {
        u * u - 2.0 * u * epsilon + epsilon * epsilon
    }
}

/// Residual norms `||y_m - K_m beta - b||` given `kb = K beta`.
fn residual_norms(kb: &DMatrix<f64>, targets: &DMatrix<f64>, bias: &[f64]) -> Vec<f64> {
    (0..targets.nrows())
        .map(|m| {
            (0..targets.ncols())
                .map(|q| {
                    let e = targets[(m, q)] - kb[(m, q)] - bias[q];
                    e * e
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn cost_parts(k: &DMatrix<f64>, targets: &DMatrix<f64>, beta: &DMatrix<f64>, bias: &[f64], params: &SvrParams) -> (f64, Vec<f64>) {
    let kb = k * beta;
    let reg = 0.5 * beta.iter().zip(kb.iter()).map(|(a, b)| a * b).sum::<f64>();
    let u = residual_norms(&kb, targets, bias);
    let loss: f64 = u.iter().map(|&v| insensitive_loss(v, params.epsilon)).sum();
    (reg + params.lambda * loss, u)
}

/// Cost of an expansion `(beta, bias)` on the given data.
pub fn svr_cost(inputs: &Matrix, targets: &Matrix, beta: &Matrix, bias: &[f64], params: &SvrParams) -> f64 {
    let k = kernel_matrix(inputs, params.rbf_width);
    let t = to_dmatrix(targets);
    cost_parts(&k, &t, &to_dmatrix(beta), bias, params).0
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
    let (r, c) = m.shape();
    Matrix::new(r, c, (0..r * c).map(|i| m[(i / c, i % c)]).collect()).expect("shape")
}

/// Result of the optimizer, in the kernel expansion parametrization.
#[derive(Clone, Debug)]
pub struct SvrSolution {
    /// `M x Q` expansion coefficients.
    pub beta: Matrix,
    pub bias: Vec<f64>,
    /// Cost after initialization and after every accepted iteration.
    pub cost_history: Vec<f64>,
    /// Training points whose residual norm is at least epsilon.
    pub support: Vec<usize>,
    pub converged: bool,
}

pub fn fit_svr(inputs: &Matrix, targets: &Matrix, params: &SvrParams) -> Result<SvrSolution> {
    let (m, q) = (targets.rows(), targets.cols());
    if inputs.rows() != m {
        return Err(Error::DimensionMismatch("inputs and targets differ in rows".into()));
    }
    let k = kernel_matrix(inputs, params.rbf_width);
    let y = to_dmatrix(targets);

    let mut beta = DMatrix::<f64>::zeros(m, q);
    let mut bias: Vec<f64> = (0..q).map(|c| y.column(c).mean()).collect();
    let (mut cost, mut u) = cost_parts(&k, &y, &beta, &bias, params);
    let mut history = vec![cost];
    let mut converged = false;

    for _ in 0..params.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        let support: Vec<usize> = (0..m).filter(|&i| u[i] >= params.epsilon && u[i] > 0.0).collect();
        let (target_beta, target_bias) = if support.is_empty() {
            (DMatrix::zeros(m, q), bias.clone())
        } else {
            weighted_solution(&k, &y, &u, &support, params)?
        };
        let step_beta = &target_beta - &beta;
        let step_bias: Vec<f64> = target_bias.iter().zip(&bias).map(|(t, b)| t - b).collect();

        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..LINE_SEARCH_HALVINGS {
            let cand_beta = &beta + &step_beta * eta;
            let cand_bias: Vec<f64> = bias.iter().zip(&step_bias).map(|(b, s)| b + eta * s).collect();
            let (c, cu) = cost_parts(&k, &y, &cand_beta, &cand_bias, params);
            if c < cost {
                accepted = Some((cand_beta, cand_bias, c, cu));
                break;
            }
            eta *= 0.5;
        }
        let Some((nb, nbias, ncost, nu)) = accepted else {
            converged = true;
            break;
        };
        let rel = (cost - ncost) / cost.max(f64::MIN_POSITIVE);
        beta = nb;
        bias = nbias;
        cost = ncost;
        u = nu;
        history.push(cost);
        if rel < params.convergence_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(
            "SVR did not converge within {} iterations (cost {cost:.6e})",
            params.max_iterations
        );
    }
    let support = (0..m).filter(|&i| u[i] >= params.epsilon).collect();
    Ok(SvrSolution {
        beta: from_dmatrix(&beta),
        bias,
        cost_history: history,
        support,
        converged,
    })
}

/// Minimizer of the reweighted quadratic surrogate on the support set `s`:
/// `[K_ss + D_a^-1, 1; 1^T, 0] [beta_s; b^T] = [Y_s; 0]`.
fn weighted_solution(
    k: &DMatrix<f64>,
    y: &DMatrix<f64>,
    u: &[f64],
    s: &[usize],
    params: &SvrParams,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (m, q) = y.shape();
    let n = s.len();
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    for (r, &i) in s.iter().enumerate() {
        for (c, &j) in s.iter().enumerate() {
            a[(r, c)] = k[(i, j)];
        }
        let weight = 2.0 * params.lambda * (u[i] - params.epsilon) / u[i];
        a[(r, r)] += 1.0 / weight;
        a[(r, n)] = 1.0;
        a[(n, r)] = 1.0;
    }
    let mut rhs = DMatrix::<f64>::zeros(n + 1, q);
    for (r, &i) in s.iter().enumerate() {
        for c in 0..q {
            rhs[(r, c)] = y[(i, c)];
        }
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("singular SVR system".into()))?;
    let mut beta = DMatrix::zeros(m, q);
    for (r, &i) in s.iter().enumerate() {
        for c in 0..q {
            beta[(i, c)] = sol[(r, c)];
        }
    }
    let bias = (0..q).map(|c| sol[(n, c)]).collect();
    Ok((beta, bias))
}

/// Kernel expansion restricted to the points with non-zero coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SvrModel {
    pub(crate) centers: Matrix,
    pub(crate) coefficients: Matrix,
    pub(crate) bias: Vec<f64>,
    pub(crate) rbf_width: f64,
    pub(crate) support: Vec<usize>,
}

impl SvrModel {
    pub fn from_solution(inputs: &Matrix, solution: &SvrSolution, rbf_width: f64) -> Self {
        let keep: Vec<usize> = (0..inputs.rows())
            .filter(|&i| solution.beta.row(i).iter().any(|&v| v != 0.0))
            .collect();
        let centers = Matrix::from_rows(&keep.iter().map(|&i| inputs.row(i).to_vec()).collect::<Vec<_>>())
            .unwrap_or_else(|_| Matrix::zeros(0, inputs.cols()));
        let centers = if keep.is_empty() { Matrix::zeros(0, inputs.cols()) } else { centers };
        let coefficients = if keep.is_empty() {
            Matrix::zeros(0, solution.bias.len())
        } else {
            Matrix::from_rows(&keep.iter().map(|&i| solution.beta.row(i).to_vec()).collect::<Vec<_>>())
                .expect("rows")
        };
        Self {
            centers,
            coefficients,
            bias: solution.bias.clone(),
            rbf_width,
            support: solution.support.clone(),
        }
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn predict(&self, queries: &Matrix) -> Matrix {
        let q = self.bias.len();
        let mut out = Matrix::zeros(queries.rows(), q);
        out.data_mut()
            .par_chunks_mut(q)
            .enumerate()
            .for_each(|(i, row)| {
                row.copy_from_slice(&self.bias);
                let x = queries.row(i);
                for c in 0..self.centers.rows() {
                    let k = rbf(x, self.centers.row(c), self.rbf_width);
                    for (o, w) in row.iter_mut().zip(self.coefficients.row(c)) {
                        *o += k * w;
                    }
                }
            });
        out
    }
}
