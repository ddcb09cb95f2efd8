//! Unsupervised pretraining.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::contrastive::{infonce_loss_and_grad, ContrastiveBatch};
use crate::error::{Result, StarError};
use crate::graph::{normalize_adjacency, propagate, Graph};
use crate::matrix::Matrix;
use crate::model::EncoderStack;
use crate::nn::{Adam, RowNormalizer};
use crate::set_encoder::{sum_pool, sum_pool_backward, training_sets};

/// Stream reserved for parameter initialization; augmentation uses the
/// low streams `epoch << 1 | view`.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub instance: f64,
    pub set: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest loss.
    pub model: EncoderStack,
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Fresh parameters for `cfg`, drawn from the run seed.
pub fn init_model(input_dim: usize, cfg: &RunConfig) -> EncoderStack {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INIT_STREAM);
    EncoderStack::new(input_dim, cfg.embed_dim, cfg.hidden_dim, &mut rng)
}

/// Propagated features `Ã^ℓ X` of one graph.
pub fn propagated_features(g: &Graph, hops: usize) -> Result<Matrix> {
    propagate(&normalize_adjacency(g), g.features(), hops)
}

/// Inputs of one training step: propagated features of both views and,
/// when anchors retrieve on the unaugmented graph, of the original.
#[derive(Debug, Clone)]
pub struct StepInputs {
    pub view1: Matrix,
    pub view2: Matrix,
    pub original: Option<Matrix>,
}

impl StepInputs {
    fn stacked(&self) -> Result<Matrix> {
        match &self.original {
            Some(p0) => Matrix::vstack(&[&self.view1, &self.view2, p0]),
            None => Matrix::vstack(&[&self.view1, &self.view2]),
        }
    }
}

/// Member lists of the training sets as row indices into the stacked
/// `[H1; H2; H0]` matrix.
fn stacked_sets(h: &Matrix, n: usize, cfg: &RunConfig) -> Result<Vec<Vec<usize>>> {
    let on_original = cfg.ablation.retrieve_on_original;
    let block = |b: usize| h.slice_rows(b * n, (b + 1) * n);
    let shifted = |anchor: usize, keys: usize| -> Result<Vec<Vec<usize>>> {
        let mut sets = training_sets(&block(anchor), &block(keys), cfg.top_k)?;
        for s in &mut sets {
            s.iter_mut().for_each(|m| *m += keys * n);
        }
        Ok(sets)
    };
    let mut sets = shifted(0, if on_original { 2 } else { 1 })?;
    if cfg.symmetric_sets {
        sets.extend(shifted(1, if on_original { 2 } else { 0 })?);
    }
    Ok(sets)
}

/// Evaluates `L_ins` and `L_set` and accumulates their gradients into the
/// model. Retrieval indices are treated as constants.
pub fn loss_and_grad(
    model: &mut EncoderStack,
    inputs: &StepInputs,
    cfg: &RunConfig,
) -> Result<(f64, f64)> {
    let n = inputs.view1.rows();
    let h = model.sgc.forward(&inputs.stacked()?)?;
    let mut dh = Matrix::zeros(h.rows(), h.cols());
    let tau = cfg.temperature;

    let mut l_ins = 0.0;
    if !cfg.ablation.no_instance {
        let u = model.node_proj.forward(&h.slice_rows(0, 2 * n))?;
        let mut norm = RowNormalizer::new();
        let partner = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
        let batch = ContrastiveBatch::new(norm.forward(&u), partner, tau)?;
        let (loss, de) = infonce_loss_and_grad(&batch)?;
        let dv = model.node_proj.backward(&norm.backward(&de)?)?;
        for r in 0..2 * n {
            dh.row_mut(r).copy_from_slice(dv.row(r));
        }
        l_ins = loss;
    }

    let mut l_set = 0.0;
    if !cfg.ablation.no_set {
        let sets = stacked_sets(&h, n, cfg)?;
        let s = model.set_fn.mlp.forward(&sum_pool(&h, &sets)?)?;
        let u = model.set_proj.forward(&s)?;
        let mut norm = RowNormalizer::new();
        let batch = ContrastiveBatch::adjacent_pairs(norm.forward(&u), tau)?;
        let (loss, de) = infonce_loss_and_grad(&batch)?;
        let ds = model.set_proj.backward(&norm.backward(&de)?)?;
        let dpooled = model.set_fn.mlp.backward(&ds)?;
        sum_pool_backward(&dpooled, &sets, &mut dh);
        l_set = loss;
    }

    model.sgc.backward(&dh)?;
    Ok((l_ins, l_set))
}

/// Loss only, without touching gradients or caches.
pub fn loss_value(model: &EncoderStack, inputs: &StepInputs, cfg: &RunConfig) -> Result<f64> {
    let mut m = model.clone();
    let (a, b) = loss_and_grad(&mut m, inputs, cfg)?;
    Ok(a + b)
}

/// Inputs for epoch `epoch`: two fresh augmented views.
pub fn epoch_inputs(
    g: &Graph,
    cfg: &RunConfig,
    epoch: usize,
    original: Option<&Matrix>,
) -> Result<StepInputs> {
    let aug = cfg.augment();
    Ok(StepInputs {
        view1: propagated_features(&aug.view(g, epoch, 0)?, cfg.hops)?,
        view2: propagated_features(&aug.view(g, epoch, 1)?, cfg.hops)?,
        original: original.cloned(),
    })
}

pub fn meta_train(g: &Graph, cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = g.num_nodes();
    if !cfg.ablation.no_set && cfg.top_k > n {
        return Err(StarError::InvalidArgument(format!(
            "top_k = {} exceeds the node count {n}",
            cfg.top_k
        )));
    }
    if n < 2 {
        return Err(StarError::InvalidGraph(
            "pretraining needs at least two nodes".into(),
        ));
    }
    let original = if cfg.ablation.retrieve_on_original && !cfg.ablation.no_set {
        Some(propagated_features(g, cfg.hops)?)
    } else {
        None
    };
    let mut model = init_model(g.feature_dim(), cfg);
    let mut adam = Adam::new(cfg.adam());
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let inputs = epoch_inputs(g, cfg, epoch, original.as_ref())?;
        model.zero_grad();
        let (instance, set) = loss_and_grad(&mut model, &inputs, cfg)?;
        let total = instance + set;
        if !total.is_finite() {
            return Err(StarError::Diverged { epoch });
        }
        history.push(EpochLoss {
            epoch,
            instance,
            set,
            total,
        });
        if best.is_infinite() || total < best - cfg.min_delta * best.abs() {
            best = total;
            best_model = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if epoch % 10 == 0 {
            log::info!("epoch {epoch}: L_ins {instance:.4} L_set {set:.4}");
        }
        if since_best >= cfg.patience {
            stopped_early = true;
            log::info!("early stop at epoch {epoch}, best epoch {best_epoch}");
            break;
        }
        adam.step(&mut model.params_mut())?;
    }
    Ok(TrainOutcome {
        model: best_model,
        history,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_check, ParamTensor};
    use crate::pipeline::config::Ablation;
    use rand::SeedableRng;

    fn small_graph(n: usize, d: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::random_uniform(n, d, -1.0, 1.0, &mut rng);
        let edges: Vec<_> = (0..n)
            .map(|i| (i, (i + 1) % n))
            .chain((0..n / 2).map(|i| (i, i + n / 2)))
            .collect();
        Graph::new("small", x, edges, None).unwrap()
    }

    fn small_cfg() -> RunConfig {
        RunConfig {
            top_k: 2,
            embed_dim: 4,
            hidden_dim: 5,
            max_epochs: 15,
            ..Default::default()
        }
    }

    fn rebuild(template: &EncoderStack, params: &[ParamTensor]) -> EncoderStack {
        let mut m = template.clone();
        for (dst, src) in m.params_mut().into_iter().zip(params) {
            dst.value = src.value.clone();
        }
        m
    }

    fn check_gradients(cfg: &RunConfig) {
        let g = small_graph(8, 5, 3);
        let original = propagated_features(&g, cfg.hops).unwrap();
        let inputs = epoch_inputs(
            &g,
            cfg,
            0,
            cfg.ablation.retrieve_on_original.then_some(&original),
        )
        .unwrap();
        let mut model = init_model(5, cfg);
        model.zero_grad();
        loss_and_grad(&mut model, &inputs, cfg).unwrap();
        let mut params: Vec<ParamTensor> = model.params().into_iter().cloned().collect();
        let template = model.clone();
        let report = finite_difference_check(&mut params, 1e-5, |p| {
            loss_value(&rebuild(&template, p), &inputs, cfg)
        })
        .unwrap();
        // The full objective has coordinates with gradients near 1e-6, where
        // the central difference itself is only good to about 1e-10.
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }

    #[test]
    fn full_objective_gradient_matches_finite_differences() {
        check_gradients(&small_cfg());
    }

    #[test]
    fn ablated_and_variant_objective_gradients() {
        let base = small_cfg();
        check_gradients(&RunConfig {
            ablation: Ablation {
                no_set: true,
                ..Default::default()
            },
            ..base.clone()
        });
        check_gradients(&RunConfig {
            ablation: Ablation {
                no_instance: true,
                ..Default::default()
            },
            ..base.clone()
        });
        check_gradients(&RunConfig {
            ablation: Ablation {
                retrieve_on_original: true,
                ..Default::default()
            },
            ..base.clone()
        });
        check_gradients(&RunConfig {
            symmetric_sets: true,
            ..base
        });
    }

    #[test]
    fn training_is_deterministic() {
        let g = small_graph(12, 6, 4);
        let cfg = RunConfig {
            top_k: 4,
            ..small_cfg()
        };
        let a = meta_train(&g, &cfg).unwrap();
        let b = meta_train(&g, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model.max_abs_diff(&b.model), Some(0.0));
        let c = meta_train(&g, &RunConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn no_set_ignores_set_only_settings() {
        let g = small_graph(12, 6, 5);
        let no_set = Ablation {
            no_set: true,
            ..Default::default()
        };
        let cfg = RunConfig {
            ablation: no_set,
            ..small_cfg()
        };
        let a = meta_train(&g, &cfg).unwrap();
        assert!(a
            .history
            .iter()
            .all(|e| e.set == 0.0 && e.total == e.instance));
        let b = meta_train(
            &g,
            &RunConfig {
                symmetric_sets: true,
                top_k: 30,
                ablation: Ablation {
                    retrieve_on_original: true,
                    ..no_set
                },
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(a.history, b.history);
        // the set branch keeps its initial parameters
        let init = init_model(6, &cfg);
        assert_eq!(a.model.set_fn.mlp.w1.value, init.set_fn.mlp.w1.value);
        assert_eq!(a.model.set_proj.b2.value, init.set_proj.b2.value);
    }

    #[test]
    fn instance_branch_is_unchanged_by_set_branch_toggles() {
        // the instance loss at epoch 0 does not depend on set settings
        let g = small_graph(12, 6, 6);
        let cfg = RunConfig {
            max_epochs: 1,
            ..small_cfg()
        };
        let a = meta_train(&g, &cfg).unwrap();
        let b = meta_train(
            &g,
            &RunConfig {
                ablation: Ablation {
                    no_set: true,
                    ..Default::default()
                },
                ..cfg.clone()
            },
        )
        .unwrap();
        let c = meta_train(
            &g,
            &RunConfig {
                ablation: Ablation {
                    retrieve_on_original: true,
                    ..Default::default()
                },
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(a.history[0].instance, b.history[0].instance);
        assert_eq!(a.history[0].instance, c.history[0].instance);
        let d = meta_train(
            &g,
            &RunConfig {
                ablation: Ablation {
                    no_instance: true,
                    ..Default::default()
                },
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(a.history[0].set, d.history[0].set);
    }

    #[test]
    fn early_stopping_and_bad_k() {
        let g = small_graph(12, 6, 7);
        let cfg = RunConfig {
            patience: 2,
            min_delta: 0.5,
            max_epochs: 100,
            ..small_cfg()
        };
        let out = meta_train(&g, &cfg).unwrap();
        assert!(out.stopped_early);
        assert_eq!(out.history.len(), 3);
        assert_eq!(out.best_epoch, 0);
        assert!(meta_train(
            &g,
            &RunConfig {
                top_k: 14,
                ..small_cfg()
            }
        )
        .is_err());
    }

    #[test]
    fn loss_decreases_on_a_small_graph() {
        let g = small_graph(20, 8, 8);
        let cfg = RunConfig {
            top_k: 4,
            max_epochs: 150,
            lr: 0.01,
            patience: 1000,
            ..small_cfg()
        };
        let out = meta_train(&g, &cfg).unwrap();
        let first = out.history[0].total;
        let last = out.history.last().unwrap().total;
        assert!(last < first, "{first} -> {last}");
    }
}
