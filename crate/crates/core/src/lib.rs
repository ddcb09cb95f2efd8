//! Contrastive pretraining of instance- and set-level node embeddings, and
//! few-shot node classification with support sets calibrated onto the query
//! distribution by entropic optimal transport.
//!
//! The crate is organised bottom-up:
//!
//! - [`graph`]: graphs, normalized adjacency, SGC propagation
//! - [`augment`]: edge dropping and feature masking
//! - [`nn`]: layers with hand-written gradients, Adam, checkpoints
//! - [`contrastive`]: the InfoNCE loss shared by nodes and sets
//! - [`set_encoder`]: top-k retrieval and the DeepSets encoder
//! - [`transport`]: Sinkhorn and barycentric transport
//! - [`episodes`], [`classifier`]: N-way K-shot tasks and the linear head
//! - [`data`], [`pipeline`]: files, training and evaluation end to end
//!
//! ```
//! use star_fsl::{normalize_adjacency, propagate, Graph, Matrix};
//!
//! let x = Matrix::from_rows(&[[2.0], [5.0]])?;
//! let g = Graph::new("pair", x, [(0, 1)], None)?;
//! let h = propagate(&normalize_adjacency(&g), g.features(), 1)?;
//! assert!((h[(0, 0)] - 3.5).abs() < 1e-12);
//! # Ok::<(), star_fsl::StarError>(())
//! ```

pub mod augment;
pub mod classifier;
pub mod contrastive;
pub mod data;
pub mod episodes;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod set_encoder;
pub mod transport;

pub use error::{Result, StarError};
pub use graph::{normalize_adjacency, propagate, Graph, NormalizedAdjacency};
pub use matrix::Matrix;
