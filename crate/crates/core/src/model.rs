//! The trainable parameters of one pretraining run.

use rand::Rng;

use crate::error::{Result, StarError};
use crate::matrix::Matrix;
use crate::nn::{Checkpoint, Linear, Mlp, ParamTensor};
use crate::set_encoder::DeepSetsEncoder;

/// SGC weight `W`, node projector `φ`, set function `Ψ` and set projector `ψ`.
///
/// Only `W` and `Ψ` are needed after pretraining; the projectors exist to
/// shape the contrastive objectives.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub sgc: Linear,
    pub node_proj: Mlp,
    pub set_fn: DeepSetsEncoder,
    pub set_proj: Mlp,
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        embed_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        EncoderStack {
            sgc: Linear::new("sgc.weight", input_dim, embed_dim, rng),
            node_proj: Mlp::new("node_proj", embed_dim, hidden_dim, embed_dim, rng),
            set_fn: DeepSetsEncoder::new(Mlp::new("set_fn", embed_dim, hidden_dim, embed_dim, rng)),
            set_proj: Mlp::new("set_proj", embed_dim, hidden_dim, embed_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sgc.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.sgc.out_dim()
    }

    /// All parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = self.sgc.params_mut();
        out.extend(self.node_proj.params_mut());
        out.extend(self.set_fn.mlp.params_mut());
        out.extend(self.set_proj.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut out = vec![&self.sgc.weight];
        out.extend(self.node_proj.params());
        out.extend(self.set_fn.mlp.params());
        out.extend(self.set_proj.params());
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut()
            .into_iter()
            .for_each(ParamTensor::zero_grad);
    }

    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        Checkpoint {
            tensors: self
                .params()
                .into_iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
            metadata,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let p = |name: &str| -> Result<ParamTensor> {
            Ok(ParamTensor::new(name, ckpt.require(name)?.clone()))
        };
        let mlp = |prefix: &str| -> Result<Mlp> {
            Mlp::from_params(
                p(&format!("{prefix}.w1"))?,
                p(&format!("{prefix}.b1"))?,
                p(&format!("{prefix}.w2"))?,
                p(&format!("{prefix}.b2"))?,
            )
        };
        let stack = EncoderStack {
            sgc: Linear::from_weight(p("sgc.weight")?),
            node_proj: mlp("node_proj")?,
            set_fn: DeepSetsEncoder::new(mlp("set_fn")?),
            set_proj: mlp("set_proj")?,
        };
        let d = stack.embed_dim();
        for (name, m) in [
            ("node_proj", &stack.node_proj),
            ("set_fn", &stack.set_fn.mlp),
            ("set_proj", &stack.set_proj),
        ] {
            if m.in_dim() != d {
                return Err(StarError::Checkpoint(format!(
                    "{name} expects width {}, encoder produces {d}",
                    m.in_dim()
                )));
            }
        }
        if stack.set_fn.mlp.out_dim() != d {
            return Err(StarError::Checkpoint(format!(
                "set_fn outputs width {}, expected {d}",
                stack.set_fn.mlp.out_dim()
            )));
        }
        Ok(stack)
    }

    /// Max absolute parameter difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &EncoderStack) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for (a, b) in self.params().into_iter().zip(other.params()) {
            if a.shape() != b.shape() {
                return None;
            }
            worst = worst.max(a.value.max_abs_diff(&b.value));
        }
        Some(worst)
    }
}

/// Rounds every entry through `f32`, as a checkpoint round trip does.
pub fn round_to_f32(m: &Matrix) -> Matrix {
    m.map(|v| v as f32 as f64)
}
