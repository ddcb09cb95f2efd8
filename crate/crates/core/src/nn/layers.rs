use rand::Rng;

use super::param::ParamTensor;
use crate::error::{Result, StarError};
use crate::matrix::Matrix;

/// Norm floor for [`l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// `X · W`.
pub fn linear_forward(w: &ParamTensor, x: &Matrix) -> Result<Matrix> {
    if x.cols() != w.value.rows() {
        return Err(StarError::dims("linear_forward", w.value.rows(), x.cols()));
    }
    x.matmul(&w.value)
}

/// Bias-free linear map (the collapsed SGC weight).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamTensor,
    input: Option<Matrix>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Linear::from_weight(ParamTensor::uniform(name, in_dim, out_dim, in_dim, rng))
    }

    pub fn from_weight(weight: ParamTensor) -> Self {
        Linear {
            weight,
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        linear_forward(&self.weight, x)
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let y = linear_forward(&self.weight, x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates `∂L/∂W = Xᵀ·dY` and returns `∂L/∂X = dY·Wᵀ`.
    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let x = self
            .input
            .as_ref()
            .ok_or(StarError::BackwardBeforeForward("Linear"))?;
        if dy.shape() != (x.rows(), self.out_dim()) {
            return Err(StarError::dims(
                "Linear::backward",
                format!("{:?}", (x.rows(), self.out_dim())),
                format!("{:?}", dy.shape()),
            ));
        }
        self.weight.accumulate(&x.t_matmul(dy)?);
        dy.matmul_t(&self.weight.value)
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.weight]
    }
}

/// `ReLU(X·W1 + b1)·W2 + b2`.
pub fn mlp_forward(p: &Mlp, x: &Matrix) -> Result<Matrix> {
    p.infer(x)
}

/// One-hidden-layer perceptron with a ReLU after the first layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
    cache: Option<MlpCache>,
}

#[derive(Debug, Clone)]
struct MlpCache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Mlp::from_params(
            ParamTensor::uniform(format!("{name}.w1"), in_dim, hidden, in_dim, rng),
            ParamTensor::uniform(format!("{name}.b1"), 1, hidden, in_dim, rng),
            ParamTensor::uniform(format!("{name}.w2"), hidden, out_dim, hidden, rng),
            ParamTensor::uniform(format!("{name}.b2"), 1, out_dim, hidden, rng),
        )
        .expect("shapes are consistent by construction")
    }

    pub fn from_params(
        w1: ParamTensor,
        b1: ParamTensor,
        w2: ParamTensor,
        b2: ParamTensor,
    ) -> Result<Self> {
        let h = w1.value.cols();
        if b1.shape() != (1, h) || w2.value.rows() != h || b2.shape() != (1, w2.value.cols()) {
            return Err(StarError::dims(
                "Mlp::from_params",
                format!("hidden width {h} throughout"),
                format!(
                    "b1 {:?}, w2 {:?}, b2 {:?}",
                    b1.shape(),
                    w2.shape(),
                    b2.shape()
                ),
            ));
        }
        Ok(Mlp {
            w1,
            b1,
            w2,
            b2,
            cache: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w1.value.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.value.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w2.value.cols()
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(StarError::dims("mlp_forward", self.in_dim(), x.cols()));
        }
        let mut pre = x.matmul(&self.w1.value)?;
        pre.add_row_vector(self.b1.value.row(0))?;
        Ok(pre)
    }

    fn output(&self, hidden: &Matrix) -> Result<Matrix> {
        let mut out = hidden.matmul(&self.w2.value)?;
        out.add_row_vector(self.b2.value.row(0))?;
        Ok(out)
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let hidden = self.pre_activation(x)?.map(relu);
        self.output(&hidden)
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let pre = self.pre_activation(x)?;
        let hidden = pre.map(relu);
        let out = self.output(&hidden)?;
        self.cache = Some(MlpCache {
            input: x.clone(),
            pre,
            hidden,
        });
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Matrix) -> Result<Matrix> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(StarError::BackwardBeforeForward("Mlp"))?;
        if dy.shape() != (cache.input.rows(), self.out_dim()) {
            return Err(StarError::dims(
                "Mlp::backward",
                format!("{:?}", (cache.input.rows(), self.out_dim())),
                format!("{:?}", dy.shape()),
            ));
        }
        let dw2 = cache.hidden.t_matmul(dy)?;
        let db2 = Matrix::from_vec(1, self.out_dim(), dy.sum_rows())?;
        let mut dpre = dy.matmul_t(&self.w2.value)?;
        for (g, &p) in dpre.as_mut_slice().iter_mut().zip(cache.pre.as_slice()) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        let dw1 = cache.input.t_matmul(&dpre)?;
        let db1 = Matrix::from_vec(1, self.hidden_dim(), dpre.sum_rows())?;
        let dx = dpre.matmul_t(&self.w1.value)?;
        self.w2.accumulate(&dw2);
        self.b2.accumulate(&db2);
        self.w1.accumulate(&dw1);
        self.b1.accumulate(&db1);
        Ok(dx)
    }

    pub fn params(&self) -> [&ParamTensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Divides each row by `max(‖row‖₂, 1e-12)`.
pub fn l2_normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let c = row_norm(row).max(NORM_EPS);
        row.iter_mut().for_each(|v| *v /= c);
    }
    out
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Differentiable [`l2_normalize_rows`]. Rows under the floor are divided by
/// the floor, and the gradient treats that clamped norm as a constant.
#[derive(Debug, Clone, Default)]
pub struct RowNormalizer {
    cache: Option<(Matrix, Vec<f64>)>,
}

impl RowNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Matrix) -> Matrix {
        let norms: Vec<f64> = x.row_iter().map(row_norm).collect();
        let y = l2_normalize_rows(x);
        self.cache = Some((y.clone(), norms));
        y
    }

    pub fn backward(&self, dy: &Matrix) -> Result<Matrix> {
        let (y, norms) = self
            .cache
            .as_ref()
            .ok_or(StarError::BackwardBeforeForward("RowNormalizer"))?;
        if dy.shape() != y.shape() {
            return Err(StarError::dims(
                "RowNormalizer::backward",
                format!("{:?}", y.shape()),
                format!("{:?}", dy.shape()),
            ));
        }
        let mut dx = dy.clone();
        for (r, &norm) in norms.iter().enumerate() {
            let yr = y.row(r);
            let row = dx.row_mut(r);
            if norm > NORM_EPS {
                let proj: f64 = yr.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
                for (g, yv) in row.iter_mut().zip(yr) {
                    *g = (*g - yv * proj) / norm;
                }
            } else {
                row.iter_mut().for_each(|g| *g /= NORM_EPS);
            }
        }
        Ok(dx)
    }
}
