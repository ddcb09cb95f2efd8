//! Entropic optimal transport from support to query embeddings.
//!
//! The plan couples uniform marginals `α = 1/NK` over support rows and
//! `β = 1/NQ` over query rows. It is solved with Sinkhorn iterations on the
//! dual potentials `f, g`, so that
//!
//! ```text
//! λ_ij = exp((f_i + g_j - D_ij) / ε)
//! ```
//!
//! and no kernel entry is ever formed outside a log-sum-exp.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::matrix::{log_sum_exp, squared_distance, Matrix};

const DEGENERATE_ROW: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OtConfig {
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Use `λᵀ·Z` as is instead of the row-normalized barycentric map.
    pub raw_plan_transport: bool,
}

impl Default for OtConfig {
    fn default() -> Self {
        OtConfig {
            epsilon: 0.1,
            tol: 1e-6,
            max_iter: 1000,
            raw_plan_transport: false,
        }
    }
}

/// Non-negative, finite `NK × NQ` costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(d: Matrix) -> Result<Self> {
        if !d.is_finite() {
            return Err(StarError::NonFinite("cost matrix"));
        }
        if d.rows() == 0 || d.cols() == 0 {
            return Err(StarError::InvalidArgument("cost matrix is empty".into()));
        }
        if let Some(&v) = d.as_slice().iter().find(|&&v| v < 0.0) {
            return Err(StarError::OutOfRange {
                name: "cost entry",
                value: v,
                range: "[0, inf)",
            });
        }
        Ok(CostMatrix(d))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// `D_ij = ‖z_i − q_j‖²`.
pub fn pairwise_cost(z_spt: &Matrix, z_qry: &Matrix) -> Result<CostMatrix> {
    if z_spt.cols() != z_qry.cols() {
        return Err(StarError::dims("pairwise_cost", z_spt.cols(), z_qry.cols()));
    }
    let d = Matrix::from_fn(z_spt.rows(), z_qry.rows(), |i, j| {
        squared_distance(z_spt.row(i), z_qry.row(j))
    });
    CostMatrix::new(d)
}

#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: Matrix,
    pub epsilon: f64,
    pub iterations: usize,
    /// `max(‖λ1 − α‖∞, ‖λᵀ1 − β‖∞)` at exit.
    pub residual: f64,
    pub converged: bool,
    /// Dual potentials; `u = exp(f/ε)`, `v = exp(g/ε)`.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl TransportPlan {
    /// Transport cost `⟨λ, D⟩`.
    pub fn cost(&self, d: &CostMatrix) -> f64 {
        self.plan
            .as_slice()
            .iter()
            .zip(d.matrix().as_slice())
            .map(|(l, c)| l * c)
            .sum()
    }

    /// Scaling vectors `(u, v)` with `λ = diag(u)·exp(−D/ε)·diag(v)`.
    pub fn scalings(&self) -> (Vec<f64>, Vec<f64>) {
        let e = self.epsilon;
        (
            self.f.iter().map(|f| (f / e).exp()).collect(),
            self.g.iter().map(|g| (g / e).exp()).collect(),
        )
    }
}

pub fn sinkhorn(d: &CostMatrix, epsilon: f64, tol: f64, max_iter: usize) -> Result<TransportPlan> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(StarError::OutOfRange {
            name: "ot_epsilon",
            value: epsilon,
            range: "(0, inf)",
        });
    }
    let d = d.matrix();
    let (m, q) = d.shape();
    let log_a = -(m as f64).ln();
    let log_b = -(q as f64).ln();
    let inv_e = 1.0 / epsilon;
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; q];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < max_iter {
        iterations += 1;
        for (i, fi) in f.iter_mut().enumerate() {
            let row = d.row(i);
            let lse = log_sum_exp(g.iter().zip(row).map(|(gj, c)| (gj - c) * inv_e));
            *fi = epsilon * (log_a - lse);
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let lse = log_sum_exp(f.iter().enumerate().map(|(i, fi)| (fi - d[(i, j)]) * inv_e));
            *gj = epsilon * (log_b - lse);
        }
        residual = marginal_residual(&plan_from_potentials(d, &f, &g, epsilon));
        if residual <= tol {
            break;
        }
    }
    let plan = plan_from_potentials(d, &f, &g, epsilon);
    if !plan.is_finite() {
        return Err(StarError::NonFinite("transport plan"));
    }
    Ok(TransportPlan {
        plan,
        epsilon,
        iterations,
        residual,
        converged: residual <= tol,
        f,
        g,
    })
}

fn plan_from_potentials(d: &Matrix, f: &[f64], g: &[f64], epsilon: f64) -> Matrix {
    Matrix::from_fn(d.rows(), d.cols(), |i, j| {
        ((f[i] + g[j] - d[(i, j)]) / epsilon).exp()
    })
}

/// Largest deviation of the plan's marginals from uniform.
pub fn marginal_residual(plan: &Matrix) -> f64 {
    let (m, q) = plan.shape();
    let a = 1.0 / m as f64;
    let b = 1.0 / q as f64;
    let rows = plan
        .row_iter()
        .map(|r| (r.iter().sum::<f64>() - a).abs())
        .fold(0.0, f64::max);
    let cols = plan
        .sum_rows()
        .into_iter()
        .map(|c| (c - b).abs())
        .fold(0.0, f64::max);
    rows.max(cols)
}

/// Maps support embeddings and labels onto the query side through
/// `B = λᵀ` with rows rescaled to sum to one: `Ẑ = B·Z_spt`, `Ỹ = B·Y_spt`.
pub fn transport_support(
    plan: &TransportPlan,
    z_spt: &Matrix,
    y_spt: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let b = barycentric_weights(plan, z_spt, y_spt)?;
    let mut z_hat = b.matmul(z_spt)?;
    // rows are convex combinations; the clamp only removes rounding excursions
    for c in 0..z_spt.cols() {
        let col = z_spt.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for r in 0..z_hat.rows() {
            z_hat[(r, c)] = z_hat[(r, c)].clamp(lo, hi);
        }
    }
    Ok((z_hat, b.matmul(y_spt)?))
}

/// Like [`transport_support`] but `Ẑ = λᵀ·Z_spt` without rescaling.
/// Labels still use the normalized weights so they stay distributions.
pub fn transport_support_raw(
    plan: &TransportPlan,
    z_spt: &Matrix,
    y_spt: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let b = barycentric_weights(plan, z_spt, y_spt)?;
    Ok((plan.plan.t_matmul(z_spt)?, b.matmul(y_spt)?))
}

fn barycentric_weights(plan: &TransportPlan, z_spt: &Matrix, y_spt: &Matrix) -> Result<Matrix> {
    let m = plan.plan.rows();
    if z_spt.rows() != m {
        return Err(StarError::dims(
            "transport_support (Z_spt rows)",
            m,
            z_spt.rows(),
        ));
    }
    if y_spt.rows() != m {
        return Err(StarError::dims(
            "transport_support (Y_spt rows)",
            m,
            y_spt.rows(),
        ));
    }
    let mut b = plan.plan.transpose();
    for r in 0..b.rows() {
        let row = b.row_mut(r);
        let s: f64 = row.iter().sum();
        if s.is_nan() || s < DEGENERATE_ROW {
            return Err(StarError::DegeneratePlan(r));
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(b)
}
