//! Episodic meta-testing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Ablation, RunConfig};
use crate::classifier::{accuracy, argmax, one_hot, predict, train_soft};
use crate::episodes::{sample_episode, ClassSplit, Episode};
use crate::error::{Result, StarError};
use crate::matrix::{squared_distance, Matrix};
use crate::transport::{pairwise_cost, sinkhorn, transport_support, transport_support_raw};

/// Mixed into the run seed so episode streams never coincide with the
/// pretraining streams.
const EPISODE_KEY: u64 = 0x6570_6973_6f64_6573;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub repetition: usize,
    pub episode: usize,
    pub accuracy: f64,
    /// Sinkhorn iterations, 0 when transport is off.
    pub ot_iterations: usize,
    pub ot_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepetitionStats {
    pub mean: f64,
    pub std: f64,
}

/// `metrics.json` payload. Standard deviations are population values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub episodes: usize,
    pub repetitions: usize,
    /// Mean over all `repetitions × episodes` tasks.
    pub mean_accuracy: f64,
    /// Spread over all tasks pooled.
    pub std_accuracy: f64,
    /// Spread of the per-repetition means.
    pub std_across_repetitions: f64,
    pub per_repetition: Vec<RepetitionStats>,
    pub unconverged_plans: usize,
    pub ablation: Ablation,
    pub config: RunConfig,
    #[serde(skip)]
    pub per_episode: Vec<EpisodeResult>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Generator for task `episode` of repetition `repetition`. Identical seeds
/// give identical tasks, which pairs the tasks seen by different variants.
pub fn episode_rng(seed: u64, repetition: usize, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EPISODE_KEY);
    rng.set_stream((repetition as u64) << 32 | episode as u64);
    rng
}

/// The task list of a configuration, in `(repetition, episode)` order.
pub fn sample_tasks(labels: &[usize], classes: &[usize], cfg: &RunConfig) -> Result<Vec<Episode>> {
    let mut out = Vec::with_capacity(cfg.repetitions * cfg.episodes);
    for r in 0..cfg.repetitions {
        for e in 0..cfg.episodes {
            let mut rng = episode_rng(cfg.seed, r, e);
            out.push(sample_episode(
                labels,
                classes,
                cfg.n_way,
                cfg.k_shot,
                cfg.q_query,
                &mut rng,
            )?);
        }
    }
    Ok(out)
}

/// Outcome of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskOutcome {
    pub accuracy: f64,
    pub ot_iterations: usize,
    pub ot_converged: bool,
}

/// Runs `task` on every sampled episode and aggregates.
pub fn evaluate_with<F>(
    labels: &[usize],
    classes: &[usize],
    cfg: &RunConfig,
    mut task: F,
) -> Result<Metrics>
where
    F: FnMut(&Episode) -> Result<TaskOutcome>,
{
    cfg.validate()?;
    let tasks = sample_tasks(labels, classes, cfg)?;
    let mut per_episode = Vec::with_capacity(tasks.len());
    for (i, ep) in tasks.iter().enumerate() {
        let o = task(ep)?;
        per_episode.push(EpisodeResult {
            repetition: i / cfg.episodes,
            episode: i % cfg.episodes,
            accuracy: o.accuracy,
            ot_iterations: o.ot_iterations,
            ot_converged: o.ot_converged,
        });
    }
    let all: Vec<f64> = per_episode.iter().map(|r| r.accuracy).collect();
    let per_repetition: Vec<RepetitionStats> = all
        .chunks(cfg.episodes)
        .map(|c| {
            let (mean, std) = mean_std(c);
            RepetitionStats { mean, std }
        })
        .collect();
    let (mean_accuracy, std_accuracy) = mean_std(&all);
    let rep_means: Vec<f64> = per_repetition.iter().map(|r| r.mean).collect();
    Ok(Metrics {
        n_way: cfg.n_way,
        k_shot: cfg.k_shot,
        q_query: cfg.q_query,
        episodes: cfg.episodes,
        repetitions: cfg.repetitions,
        mean_accuracy,
        std_accuracy,
        std_across_repetitions: mean_std(&rep_means).1,
        per_repetition,
        unconverged_plans: per_episode
            .iter()
            .filter(|r| r.ot_iterations > 0 && !r.ot_converged)
            .count(),
        ablation: cfg.ablation,
        config: cfg.clone(),
        per_episode,
    })
}

/// Support rows, one-hot support targets, query rows and query targets.
pub fn episode_data(z: &Matrix, ep: &Episode) -> Result<(Matrix, Matrix, Matrix, Vec<usize>)> {
    let ids = ep.support_ids().into_iter().chain(ep.query_ids());
    if let Some(bad) = ids.into_iter().find(|&id| id >= z.rows()) {
        return Err(StarError::InvalidArgument(format!(
            "episode node {bad} outside the {} embedding rows",
            z.rows()
        )));
    }
    Ok((
        z.select_rows(&ep.support_ids()),
        one_hot(&ep.support_targets(), ep.way)?,
        z.select_rows(&ep.query_ids()),
        ep.query_targets(),
    ))
}

/// Transport (unless disabled), fit the classifier, score the query.
pub fn classify_episode(z: &Matrix, ep: &Episode, cfg: &RunConfig) -> Result<TaskOutcome> {
    let (z_spt, y_spt, z_qry, truth) = episode_data(z, ep)?;
    let ot = cfg.ot();
    let (train_z, train_y, iters, converged) = if cfg.ablation.no_ot {
        (z_spt, y_spt, 0, false)
    } else {
        let d = pairwise_cost(&z_spt, &z_qry)?;
        let plan = sinkhorn(&d, ot.epsilon, ot.tol, ot.max_iter)?;
        let (zh, yh) = if ot.raw_plan_transport {
            transport_support_raw(&plan, &z_spt, &y_spt)?
        } else {
            transport_support(&plan, &z_spt, &y_spt)?
        };
        (zh, yh, plan.iterations, plan.converged)
    };
    let (clf, _) = train_soft(&train_z, &train_y, &cfg.classifier())?;
    let (pred, _) = predict(&clf, &z_qry)?;
    Ok(TaskOutcome {
        accuracy: accuracy(&pred, &truth)?,
        ot_iterations: iters,
        ot_converged: converged,
    })
}

/// Rescales every `width`-column block of every row to unit norm. Rows of
/// zeros stay zero.
pub fn normalize_blocks(z: &Matrix, width: usize) -> Result<Matrix> {
    if width == 0 || !z.cols().is_multiple_of(width) {
        return Err(StarError::InvalidArgument(format!(
            "{} embedding columns do not split into blocks of {width}",
            z.cols()
        )));
    }
    let mut out = z.clone();
    for r in 0..out.rows() {
        for block in out.row_mut(r).chunks_mut(width) {
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            block.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out)
}

/// The matrix episodes are cut from: `z` itself, or its normalized blocks.
pub fn evaluation_embeddings(z: &Matrix, cfg: &RunConfig) -> Result<Matrix> {
    if cfg.normalize_blocks {
        normalize_blocks(z, cfg.embed_dim)
    } else {
        Ok(z.clone())
    }
}

/// Evaluates embeddings `z` on the test classes of `split`.
pub fn meta_test(
    z: &Matrix,
    labels: &[usize],
    split: &ClassSplit,
    cfg: &RunConfig,
) -> Result<Metrics> {
    if labels.len() != z.rows() {
        return Err(StarError::dims("meta_test labels", z.rows(), labels.len()));
    }
    let z = &evaluation_embeddings(z, cfg)?;
    evaluate_with(labels, &split.test_classes, cfg, |ep| {
        classify_episode(z, ep, cfg)
    })
}

/// Nearest class mean of the support rows, by Euclidean distance.
pub fn nearest_centroid_episode(x: &Matrix, ep: &Episode) -> Result<TaskOutcome> {
    let (x_spt, y_spt, x_qry, truth) = episode_data(x, ep)?;
    let counts = y_spt.sum_rows();
    let centroids = y_spt.t_matmul(&x_spt)?;
    let mut pred = Vec::with_capacity(x_qry.rows());
    for q in x_qry.row_iter() {
        let neg: Vec<f64> = (0..ep.way)
            .map(|c| {
                let mean: Vec<f64> = centroids.row(c).iter().map(|v| v / counts[c]).collect();
                -squared_distance(q, &mean)
            })
            .collect();
        pred.push(argmax(&neg));
    }
    Ok(TaskOutcome {
        accuracy: accuracy(&pred, &truth)?,
        ot_iterations: 0,
        ot_converged: false,
    })
}

/// Nearest-centroid accuracy on raw features, over the same tasks as
/// [`meta_test`] with the same seed.
pub fn nearest_centroid_baseline(
    x: &Matrix,
    labels: &[usize],
    split: &ClassSplit,
    cfg: &RunConfig,
) -> Result<Metrics> {
    evaluate_with(labels, &split.test_classes, cfg, |ep| {
        nearest_centroid_episode(x, ep)
    })
}
