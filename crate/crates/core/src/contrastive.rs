//! InfoNCE over `2n` row-normalized embeddings paired across two views.
//!
//! The same loss serves node embeddings and set embeddings. For anchor `i`
//! with positive `p(i)` and similarities `s = E·Eᵀ`:
//!
//! ```text
//! ℓ_i = -s[i,p(i)]/τ + log Σ_{k≠i} exp(s[i,k]/τ)
//! L   = (1/2n) Σ_i ℓ_i
//! ```
//!
//! The positive stays in the denominator; only `k = i` is excluded.

use crate::error::{Result, StarError};
use crate::matrix::Matrix;

/// Temperature used throughout pretraining.
pub const DEFAULT_TEMPERATURE: f64 = 0.5;

const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    embeddings: Matrix,
    partner: Vec<usize>,
    temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(embeddings: Matrix, partner: Vec<usize>, temperature: f64) -> Result<Self> {
        validate_pairing(&partner, temperature)?;
        if partner.len() != embeddings.rows() {
            return Err(StarError::dims(
                "ContrastiveBatch partner map",
                embeddings.rows(),
                partner.len(),
            ));
        }
        if !embeddings.is_finite() {
            return Err(StarError::NonFinite("contrastive embeddings"));
        }
        for (i, row) in embeddings.row_iter().enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(StarError::InvalidArgument(format!(
                    "row {i} has norm {norm}, expected unit norm"
                )));
            }
        }
        Ok(ContrastiveBatch {
            embeddings,
            partner,
            temperature,
        })
    }

    /// Rows `0..n` are view one and rows `n..2n` view two; row `i` pairs with `i + n`.
    pub fn cross_view(view1: &Matrix, view2: &Matrix, temperature: f64) -> Result<Self> {
        if view1.shape() != view2.shape() {
            return Err(StarError::dims(
                "ContrastiveBatch::cross_view",
                format!("{:?}", view1.shape()),
                format!("{:?}", view2.shape()),
            ));
        }
        let n = view1.rows();
        let partner = (0..2 * n)
            .map(|i| if i < n { i + n } else { i - n })
            .collect();
        ContrastiveBatch::new(Matrix::vstack(&[view1, view2])?, partner, temperature)
    }

    /// Row `2i` pairs with row `2i + 1`.
    pub fn adjacent_pairs(embeddings: Matrix, temperature: f64) -> Result<Self> {
        let partner = adjacent_partner(embeddings.rows());
        ContrastiveBatch::new(embeddings, partner, temperature)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn partner(&self) -> &[usize] {
        &self.partner
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }
}

pub(crate) fn adjacent_partner(len: usize) -> Vec<usize> {
    (0..len).map(|i| i ^ 1).collect()
}

fn validate_pairing(partner: &[usize], temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(StarError::OutOfRange {
            name: "temperature",
            value: temperature,
            range: "(0, inf)",
        });
    }
    if partner.len() < 2 {
        return Err(StarError::InvalidArgument(
            "a contrastive batch needs at least one pair".into(),
        ));
    }
    for (i, &p) in partner.iter().enumerate() {
        if p >= partner.len() || p == i || partner[p] != i {
            return Err(StarError::InvalidArgument(format!(
                "partner map is not a fixed-point-free involution at {i}"
            )));
        }
    }
    Ok(())
}

/// All pairwise dot products `E·Eᵀ`.
pub fn similarity_matrix(e: &Matrix) -> Matrix {
    e.matmul_t(e).expect("E·Eᵀ is always conformable")
}

/// Loss value only.
pub fn infonce_loss(batch: &ContrastiveBatch) -> Result<f64> {
    let s = similarity_matrix(&batch.embeddings);
    Ok(infonce_from_similarities(&s, &batch.partner, batch.temperature)?.0)
}

/// Loss and `∂L/∂E`.
pub fn infonce_loss_and_grad(batch: &ContrastiveBatch) -> Result<(f64, Matrix)> {
    let e = &batch.embeddings;
    let s = similarity_matrix(e);
    let (loss, ds) = infonce_from_similarities(&s, &batch.partner, batch.temperature)?;
    // s = E·Eᵀ, so ∂L/∂E = (G + Gᵀ)·E
    let mut de = ds.matmul(e)?;
    de.add_assign(&ds.t_matmul(e)?)?;
    Ok((loss, de))
}

/// InfoNCE on a precomputed similarity matrix, with `∂L/∂s`.
///
/// Each anchor's denominator is evaluated with a max-shifted log-sum-exp.
pub fn infonce_from_similarities(
    s: &Matrix,
    partner: &[usize],
    temperature: f64,
) -> Result<(f64, Matrix)> {
    validate_pairing(partner, temperature)?;
    let m = partner.len();
    if s.shape() != (m, m) {
        return Err(StarError::dims(
            "infonce similarities",
            format!("{m}x{m}"),
            format!("{:?}", s.shape()),
        ));
    }
    if !s.is_finite() {
        return Err(StarError::NonFinite("infonce similarities"));
    }
    let inv_t = 1.0 / temperature;
    let scale = 1.0 / m as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(m, m);
    for (i, &p) in partner.iter().enumerate() {
        let row = s.row(i);
        let shift = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .fold(f64::NEG_INFINITY, |a, (_, &v)| a.max(v * inv_t));
        let g = grad.row_mut(i);
        let mut sum = 0.0;
        for (k, gk) in g.iter_mut().enumerate() {
            if k != i {
                *gk = (row[k] * inv_t - shift).exp();
                sum += *gk;
            }
        }
        let lse = shift + sum.ln();
        total += lse - row[p] * inv_t;
        for gk in g.iter_mut() {
            *gk *= scale * inv_t / sum;
        }
        g[p] -= scale * inv_t;
    }
    Ok((total * scale, grad))
}
