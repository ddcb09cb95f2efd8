//! Diagnostics: support/query shift, 2-D projections.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{episode_data, evaluation_embeddings, sample_tasks};
use crate::episodes::ClassSplit;
use crate::error::{Result, StarError};
use crate::matrix::{dot, squared_distance, Matrix};
use crate::transport::{pairwise_cost, sinkhorn, transport_support};

fn mean_pairwise_distance(a: &Matrix, b: &Matrix) -> f64 {
    let mut s = 0.0;
    for x in a.row_iter() {
        for y in b.row_iter() {
            s += squared_distance(x, y).sqrt();
        }
    }
    s / (a.rows() * b.rows()) as f64
}

/// Energy distance between two point sets (V-statistic, Euclidean):
/// `2·E‖a−b‖ − E‖a−a'‖ − E‖b−b'‖`.
pub fn energy_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(StarError::dims("energy_distance", a.cols(), b.cols()));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return Err(StarError::InvalidArgument(
            "energy distance of an empty set".into(),
        ));
    }
    let e = 2.0 * mean_pairwise_distance(a, b)
        - mean_pairwise_distance(a, a)
        - mean_pairwise_distance(b, b);
    Ok(e.max(0.0))
}

/// Energy distance from the query set before (raw support) and after
/// transport (`z_hat`).
pub fn shift_diagnostic(z_spt: &Matrix, z_qry: &Matrix, z_hat: &Matrix) -> Result<(f64, f64)> {
    Ok((
        energy_distance(z_spt, z_qry)?,
        energy_distance(z_hat, z_qry)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub median_before: f64,
    pub median_after: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Shift before and after transport over the tasks of `cfg`.
pub fn shift_over_episodes(
    z: &Matrix,
    labels: &[usize],
    split: &ClassSplit,
    cfg: &RunConfig,
) -> Result<ShiftSummary> {
    let ot = cfg.ot();
    let z = &evaluation_embeddings(z, cfg)?;
    let mut before = Vec::new();
    let mut after = Vec::new();
    for ep in sample_tasks(labels, &split.test_classes, cfg)? {
        let (z_spt, y_spt, z_qry, _) = episode_data(z, &ep)?;
        let plan = sinkhorn(
            &pairwise_cost(&z_spt, &z_qry)?,
            ot.epsilon,
            ot.tol,
            ot.max_iter,
        )?;
        let (z_hat, _) = transport_support(&plan, &z_spt, &y_spt)?;
        let (b, a) = shift_diagnostic(&z_spt, &z_qry, &z_hat)?;
        before.push(b);
        after.push(a);
    }
    Ok(ShiftSummary {
        median_before: median(&before),
        median_after: median(&after),
        before,
        after,
    })
}

/// Projection onto the top two principal components, found by power
/// iteration with deflation on the covariance matrix.
pub fn pca_2d(z: &Matrix) -> Result<Matrix> {
    let (n, d) = z.shape();
    if n < 2 || d == 0 {
        return Err(StarError::InvalidArgument(
            "PCA needs at least two rows".into(),
        ));
    }
    let means: Vec<f64> = z.sum_rows().into_iter().map(|s| s / n as f64).collect();
    let mut centered = z.clone();
    for r in 0..n {
        centered
            .row_mut(r)
            .iter_mut()
            .zip(&means)
            .for_each(|(v, m)| *v -= m);
    }
    let mut cov = centered.t_matmul(&centered)?.scale(1.0 / (n - 1) as f64);
    let mut comps = Vec::new();
    for c in 0..2.min(d) {
        // deterministic start that is not orthogonal to a generic eigenvector
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + (i + c) as f64 * 0.1).collect();
        let mut lambda = 0.0;
        for _ in 0..1000 {
            let w: Vec<f64> = (0..d).map(|i| dot(cov.row(i), &v)).collect();
            let norm = dot(&w, &w).sqrt();
            if norm < 1e-300 {
                break;
            }
            let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let diff = next
                .iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            lambda = norm;
            if diff < 1e-12 {
                break;
            }
        }
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] -= lambda * v[i] * v[j];
            }
        }
        comps.push(v);
    }
    while comps.len() < 2 {
        comps.push(vec![0.0; d]);
    }
    Ok(Matrix::from_fn(n, 2, |r, c| {
        dot(centered.row(r), &comps[c])
    }))
}
