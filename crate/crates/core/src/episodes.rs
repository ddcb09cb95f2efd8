//! Class splits and N-way K-shot episode sampling.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};

/// Query nodes per class when not configured.
pub const DEFAULT_QUERY_PER_CLASS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassSplit {
    pub train_classes: Vec<usize>,
    pub val_classes: Vec<usize>,
    pub test_classes: Vec<usize>,
}

impl ClassSplit {
    /// Every observed class goes to the test section.
    pub fn all_test(labels: &[usize]) -> Self {
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        ClassSplit {
            test_classes: classes,
            ..Default::default()
        }
    }

    /// Checks that sections are disjoint and name observed classes only.
    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let mut seen = BTreeMap::new();
        for (section, list) in [
            ("train_classes", &self.train_classes),
            ("val_classes", &self.val_classes),
            ("test_classes", &self.test_classes),
        ] {
            for &c in list {
                if let Some(prev) = seen.insert(c, section) {
                    return Err(StarError::InvalidArgument(format!(
                        "class {c} appears in both {prev} and {section}"
                    )));
                }
                if !labels.contains(&c) {
                    return Err(StarError::InvalidArgument(format!(
                        "{section} names class {c}, which no node carries"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub query_per_class: usize,
    /// `(node id, class id)`, grouped by class in sampling order.
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
}

impl Episode {
    /// The sampled classes in order; position is the episode-local label.
    pub fn classes(&self) -> Vec<usize> {
        self.support
            .iter()
            .step_by(self.shot.max(1))
            .map(|&(_, c)| c)
            .collect()
    }

    pub fn support_ids(&self) -> Vec<usize> {
        self.support.iter().map(|&(id, _)| id).collect()
    }

    pub fn query_ids(&self) -> Vec<usize> {
        self.query.iter().map(|&(id, _)| id).collect()
    }

    /// Episode-local labels `0..way` of the support rows.
    pub fn support_targets(&self) -> Vec<usize> {
        (0..self.support.len()).map(|i| i / self.shot).collect()
    }

    pub fn query_targets(&self) -> Vec<usize> {
        (0..self.query.len())
            .map(|i| i / self.query_per_class)
            .collect()
    }
}

/// Samples `n` classes from `classes`, then `k + q` distinct nodes from
/// each: the first `k` form the support, the rest the query.
pub fn sample_episode<R: Rng + ?Sized>(
    labels: &[usize],
    classes: &[usize],
    n: usize,
    k: usize,
    q: usize,
    rng: &mut R,
) -> Result<Episode> {
    if n == 0 || k == 0 || q == 0 {
        return Err(StarError::InvalidArgument(format!(
            "way, shot and query must be positive (got {n}, {k}, {q})"
        )));
    }
    if classes.len() < n {
        return Err(StarError::InsufficientClasses {
            available: classes.len(),
            requested: n,
        });
    }
    let mut members: BTreeMap<usize, Vec<usize>> =
        classes.iter().map(|&c| (c, Vec::new())).collect();
    for (node, l) in labels.iter().enumerate() {
        if let Some(v) = members.get_mut(l) {
            v.push(node);
        }
    }
    for &c in classes {
        let available = members[&c].len();
        if available < k + q {
            return Err(StarError::ClassTooSmall {
                class: c,
                available,
                needed: k + q,
            });
        }
    }
    let mut support = Vec::with_capacity(n * k);
    let mut query = Vec::with_capacity(n * q);
    for ci in sample(rng, classes.len(), n) {
        let c = classes[ci];
        let pool = &members[&c];
        for (slot, idx) in sample(rng, pool.len(), k + q).into_iter().enumerate() {
            if slot < k {
                support.push((pool[idx], c));
            } else {
                query.push((pool[idx], c));
            }
        }
    }
    Ok(Episode {
        way: n,
        shot: k,
        query_per_class: q,
        support,
        query,
    })
}
