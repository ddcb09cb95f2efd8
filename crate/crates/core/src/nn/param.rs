use rand::Rng;

use crate::matrix::Matrix;

/// A trainable tensor and its gradient accumulator. Vectors are `1 × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        ParamTensor {
            name: name.into(),
            value,
            grad,
        }
    }

    /// Uniform in `[-1/√fan_in, 1/√fan_in]`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let value = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound));
        ParamTensor::new(name, value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.as_mut_slice().fill(0.0);
    }

    pub(crate) fn accumulate(&mut self, g: &Matrix) {
        // shapes are fixed by construction inside the layers
        for (a, b) in self.grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *a += b;
        }
    }
}
