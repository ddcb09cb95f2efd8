//! A small differentiable core: linear maps, one-hidden-layer MLPs, row
//! normalization, Adam and a finite-difference gradient checker.
//!
//! Gradients are derived by hand per layer. Each layer caches what its
//! backward pass needs during `forward`; `infer` is the cache-free variant
//! for evaluation. Shared weights are applied once to row-stacked inputs so
//! each cache holds exactly one forward pass.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod param;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use layers::{
    l2_normalize_rows, linear_forward, mlp_forward, Linear, Mlp, RowNormalizer, NORM_EPS,
};
pub use param::ParamTensor;
