//! Stochastic graph views for contrastive training.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::graph::Graph;

/// Upper bound of the searched augmentation range.
pub const MAX_RATIO: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub edge_drop_ratio: f64,
    pub feature_mask_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            edge_drop_ratio: 0.2,
            feature_mask_ratio: 0.2,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratio("edge_drop_ratio", self.edge_drop_ratio)?;
        check_ratio("feature_mask_ratio", self.feature_mask_ratio)
    }

    /// Produces view `view` (0 or 1) for training epoch `epoch`.
    pub fn view(&self, g: &Graph, epoch: usize, view: usize) -> Result<Graph> {
        let mut rng = view_rng(self.seed, epoch, view);
        let dropped = drop_edges(g, self.edge_drop_ratio, &mut rng)?;
        mask_features(&dropped, self.feature_mask_ratio, &mut rng)
    }
}

/// Generator for one (epoch, view) pair. Every pair gets its own ChaCha
/// stream under the run seed, so one seed reproduces the whole run.
pub fn view_rng(seed: u64, epoch: usize, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch as u64) << 1 | (view as u64 & 1));
    rng
}

fn check_ratio(name: &'static str, ratio: f64) -> Result<()> {
    if !(0.0..=MAX_RATIO).contains(&ratio) {
        return Err(StarError::OutOfRange {
            name,
            value: ratio,
            range: "[0, 0.4]",
        });
    }
    Ok(())
}

/// `round(ratio · total)` with ties to even.
pub fn augment_count(ratio: f64, total: usize) -> usize {
    (ratio * total as f64).round_ties_even() as usize
}

/// Removes `round(ratio · m)` edges chosen uniformly without replacement.
pub fn drop_edges<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Result<Graph> {
    check_ratio("edge_drop_ratio", ratio)?;
    let m = g.num_edges();
    let k = augment_count(ratio, m);
    if k == 0 {
        return Ok(g.clone());
    }
    let mut keep = vec![true; m];
    for i in sample(rng, m, k) {
        keep[i] = false;
    }
    let edges = g
        .edges()
        .iter()
        .zip(&keep)
        .filter_map(|(e, &k)| k.then_some(*e))
        .collect();
    Ok(g.with_edges(edges))
}

/// Zeroes `round(ratio · d)` whole feature columns chosen uniformly.
pub fn mask_features<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Result<Graph> {
    check_ratio("feature_mask_ratio", ratio)?;
    let d = g.feature_dim();
    let k = augment_count(ratio, d);
    if k == 0 {
        return Ok(g.clone());
    }
    let cols: Vec<usize> = sample(rng, d, k).into_vec();
    let mut x = g.features().clone();
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        for &c in &cols {
            row[c] = 0.0;
        }
    }
    Ok(g.with_features(x))
}
