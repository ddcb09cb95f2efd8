use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::classifier::ClassifierConfig;
use crate::error::{Result, StarError};
use crate::nn::AdamConfig;
use crate::transport::OtConfig;

/// Which parts of the method are switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Train with the set loss only.
    pub no_instance: bool,
    /// No set loss, and `Z = H̃` without the set block.
    pub no_set: bool,
    /// Classify with the raw support instead of the transported one.
    pub no_ot: bool,
    /// Anchors retrieve among embeddings of the unaugmented graph.
    pub retrieve_on_original: bool,
}

/// Everything one run depends on. Field names are the JSON config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub edge_drop_ratio: f64,
    pub feature_mask_ratio: f64,
    pub hops: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub temperature: f64,
    pub top_k: usize,
    /// Also let view-2 anchors retrieve in view 1, doubling the set batch.
    pub symmetric_sets: bool,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub patience: usize,
    /// Relative improvement that resets the patience counter.
    pub min_delta: f64,
    pub max_epochs: usize,
    pub ot_epsilon: f64,
    pub ot_tol: f64,
    pub ot_max_iter: usize,
    pub raw_plan_transport: bool,
    /// Scale the `H̃` and `S̃` blocks of every embedding row to unit norm
    /// before transport and classification.
    pub normalize_blocks: bool,
    pub clf_l2: f64,
    pub clf_epochs: usize,
    pub clf_lr: f64,
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub episodes: usize,
    pub repetitions: usize,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let ot = OtConfig::default();
        let clf = ClassifierConfig::default();
        let aug = AugmentConfig::default();
        RunConfig {
            seed: 0,
            edge_drop_ratio: aug.edge_drop_ratio,
            feature_mask_ratio: aug.feature_mask_ratio,
            hops: 2,
            embed_dim: 16,
            hidden_dim: 16,
            temperature: crate::contrastive::DEFAULT_TEMPERATURE,
            top_k: crate::set_encoder::DEFAULT_TOP_K,
            symmetric_sets: false,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            patience: 20,
            min_delta: 1e-3,
            max_epochs: 500,
            ot_epsilon: ot.epsilon,
            ot_tol: ot.tol,
            ot_max_iter: ot.max_iter,
            raw_plan_transport: ot.raw_plan_transport,
            normalize_blocks: true,
            clf_l2: clf.l2,
            clf_epochs: clf.epochs,
            clf_lr: clf.lr,
            n_way: 5,
            k_shot: 5,
            q_query: crate::episodes::DEFAULT_QUERY_PER_CLASS,
            episodes: 50,
            repetitions: 5,
            ablation: Ablation::default(),
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(StarError::OutOfRange {
            name,
            value: v,
            range: "(0, inf)",
        });
    }
    Ok(())
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(StarError::InvalidArgument(format!(
            "{name} must be at least 1"
        )));
    }
    Ok(())
}

impl RunConfig {
    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            edge_drop_ratio: self.edge_drop_ratio,
            feature_mask_ratio: self.feature_mask_ratio,
            seed: self.seed,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn ot(&self) -> OtConfig {
        OtConfig {
            epsilon: self.ot_epsilon,
            tol: self.ot_tol,
            max_iter: self.ot_max_iter,
            raw_plan_transport: self.raw_plan_transport,
        }
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            l2: self.clf_l2,
            epochs: self.clf_epochs,
            lr: self.clf_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.augment().validate()?;
        positive("temperature", self.temperature)?;
        positive("lr", self.lr)?;
        positive("adam_eps", self.adam_eps)?;
        positive("ot_epsilon", self.ot_epsilon)?;
        positive("ot_tol", self.ot_tol)?;
        positive("clf_lr", self.clf_lr)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(StarError::OutOfRange {
                    name,
                    value: b,
                    range: "[0, 1)",
                });
            }
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(StarError::OutOfRange {
                name: "min_delta",
                value: self.min_delta,
                range: "[0, inf)",
            });
        }
        if self.clf_l2.is_nan() || self.clf_l2 < 0.0 {
            return Err(StarError::OutOfRange {
                name: "clf_l2",
                value: self.clf_l2,
                range: "[0, inf)",
            });
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_epochs", self.max_epochs),
            ("ot_max_iter", self.ot_max_iter),
            ("n_way", self.n_way),
            ("k_shot", self.k_shot),
            ("q_query", self.q_query),
            ("episodes", self.episodes),
            ("repetitions", self.repetitions),
        ] {
            nonzero(name, v)?;
        }
        if self.top_k < 2 || !self.top_k.is_multiple_of(2) {
            return Err(StarError::InvalidArgument(format!(
                "top_k must be even and at least 2, got {}",
                self.top_k
            )));
        }
        if self.ablation.no_instance && self.ablation.no_set {
            return Err(StarError::InvalidArgument(
                "no_instance and no_set together leave nothing to train".into(),
            ));
        }
        Ok(())
    }
}
