//! Stochastic block model graphs with Gaussian block features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::episodes::ClassSplit;
use crate::error::{Result, StarError};
use crate::graph::Graph;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Norm of every block mean.
    pub separation: f64,
    /// Standard deviation of the per-entry feature noise.
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Class split to ship with the dataset; all blocks are test classes
    /// when absent.
    #[serde(default)]
    pub split: Option<ClassSplit>,
}

impl SbmSpec {
    pub fn num_nodes(&self) -> usize {
        self.blocks * self.nodes_per_block
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_out && self.p_out <= self.p_in && self.p_in <= 1.0) {
            return Err(StarError::InvalidArgument(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in = {}, p_out = {}",
                self.p_in, self.p_out
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(StarError::OutOfRange {
                name: "separation",
                value: self.separation,
                range: "(0, inf)",
            });
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(StarError::OutOfRange {
                name: "noise",
                value: self.noise,
                range: "[0, inf)",
            });
        }
        if self.blocks == 0 || self.nodes_per_block == 0 || self.feature_dim == 0 {
            return Err(StarError::InvalidArgument(
                "blocks, nodes_per_block and feature_dim must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn class_split(&self) -> ClassSplit {
        self.split.clone().unwrap_or_else(|| ClassSplit {
            test_classes: (0..self.blocks).collect(),
            ..Default::default()
        })
    }
}

/// Draws the graph. Block `b` holds nodes `b·m .. (b+1)·m`; its mean is a
/// uniformly random direction scaled to `separation`.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.feature_dim;
    let means: Vec<Vec<f64>> = (0..spec.blocks)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm * spec.separation).collect();
            }
        })
        .collect();

    let n = spec.num_nodes();
    let m = spec.nodes_per_block;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if i / m == j / m {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise).expect("noise is validated");
    let x = Matrix::from_fn(n, d, |r, c| means[r / m][c] + noise.sample(&mut rng));
    let labels = (0..n).map(|i| i / m).collect();
    Graph::new(format!("sbm-{}x{}", spec.blocks, m), x, edges, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SbmSpec {
        SbmSpec {
            blocks: 2,
            nodes_per_block: 3,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 4,
            separation: 1.0,
            noise: 0.5,
            seed: 0,
            split: None,
        }
    }

    #[test]
    fn deterministic_edges_give_two_triangles() {
        let g = generate_sbm(&spec()).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
        assert_eq!(g.labels().unwrap(), &[0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn edge_count_matches_binomial_expectation() {
        let s = SbmSpec {
            blocks: 3,
            nodes_per_block: 20,
            p_in: 0.3,
            p_out: 0.05,
            ..spec()
        };
        let within: f64 = 3.0 * (20.0 * 19.0 / 2.0);
        let cross = 3.0 * 20.0 * 20.0;
        let mean = within * 0.3 + cross * 0.05;
        let sd = (within * 0.3 * 0.7 + cross * 0.05 * 0.95).sqrt();
        for seed in 0..20 {
            let g = generate_sbm(&SbmSpec { seed, ..s.clone() }).unwrap();
            assert!((g.num_edges() as f64 - mean).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn zero_noise_rows_match_block_mean() {
        let g = generate_sbm(&SbmSpec {
            noise: 0.0,
            ..spec()
        })
        .unwrap();
        let x = g.features();
        assert_eq!(x.row(0), x.row(1));
        assert_eq!(x.row(3), x.row(5));
        assert_ne!(x.row(0), x.row(3));
        let norm: f64 = x.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_and_determinism() {
        assert!(generate_sbm(&SbmSpec {
            p_out: 0.5,
            p_in: 0.2,
            ..spec()
        })
        .is_err());
        assert!(generate_sbm(&SbmSpec {
            p_in: 1.5,
            ..spec()
        })
        .is_err());
        assert!(generate_sbm(&SbmSpec {
            separation: 0.0,
            ..spec()
        })
        .is_err());
        assert!(generate_sbm(&SbmSpec {
            noise: -1.0,
            ..spec()
        })
        .is_err());
        let s = SbmSpec {
            p_in: 0.5,
            p_out: 0.1,
            seed: 3,
            ..spec()
        };
        assert_eq!(generate_sbm(&s).unwrap(), generate_sbm(&s).unwrap());
        assert_eq!(s.class_split().test_classes, vec![0, 1]);
    }
}
