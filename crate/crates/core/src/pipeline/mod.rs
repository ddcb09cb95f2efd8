//! Pretraining, embedding and episodic evaluation end to end.

mod config;
pub mod diag;
pub mod eval;
pub mod train;

pub use config::{Ablation, RunConfig};
pub use diag::{energy_distance, pca_2d, shift_diagnostic, shift_over_episodes, ShiftSummary};
pub use eval::{
    evaluation_embeddings, meta_test, nearest_centroid_baseline, normalize_blocks, EpisodeResult,
    Metrics,
};
pub use train::{meta_train, EpochLoss, TrainOutcome};

use crate::error::Result;
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::model::EncoderStack;
use crate::set_encoder::{build_final_embeddings, encode_nodes};

/// Evaluation embeddings for a trained model: `H̃ ‖ S̃`, or `H̃` alone when
/// the set branch is ablated.
pub fn embed(g: &Graph, model: &EncoderStack, cfg: &RunConfig) -> Result<Matrix> {
    if cfg.ablation.no_set {
        return encode_nodes(g, &model.sgc, cfg.hops);
    }
    Ok(build_final_embeddings(g, &model.sgc, &model.set_fn, cfg.hops, cfg.top_k)?.z)
}

/// Everything for one variant: train, embed, evaluate.
pub fn run(
    g: &Graph,
    split: &crate::episodes::ClassSplit,
    cfg: &RunConfig,
) -> Result<(TrainOutcome, Metrics)> {
    let labels = g
        .labels()
        .ok_or(crate::error::StarError::MissingLabels("meta-testing"))?;
    let trained = meta_train(g, cfg)?;
    let z = embed(g, &trained.model, cfg)?;
    let metrics = meta_test(&z, labels, split, cfg)?;
    Ok((trained, metrics))
}
