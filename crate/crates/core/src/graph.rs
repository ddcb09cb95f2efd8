//! Undirected attributed graphs, self-loop normalization and SGC propagation.

use crate::error::{Result, StarError};
use crate::matrix::Matrix;

/// An undirected graph with dense node features and optional labels.
///
/// Edges are stored once each as `(i, j)` with `i < j`. Self-loops are never
/// stored; they are added during normalization only.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub name: String,
    n: usize,
    edges: Vec<(usize, usize)>,
    features: Matrix,
    labels: Option<Vec<usize>>,
}

impl Graph {
    /// Validates and canonicalizes a graph. Reversed and duplicate edges are
    /// merged; self-loops, out-of-range ids and non-finite features are errors.
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        if !features.is_finite() {
            return Err(StarError::InvalidGraph("non-finite feature entry".into()));
        }
        let mut canon = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(StarError::InvalidGraph(format!(
                    "edge ({a}, {b}) references a node outside [0, {n})"
                )));
            }
            if a == b {
                return Err(StarError::InvalidGraph(format!("self-loop on node {a}")));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        canon.dedup();
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(StarError::dims("Graph::new labels", n, l.len()));
            }
        }
        Ok(Graph {
            name: name.into(),
            n,
            edges: canon,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Same nodes and labels, a subset of the edges (already canonical).
    pub(crate) fn with_edges(&self, edges: Vec<(usize, usize)>) -> Graph {
        Graph {
            name: self.name.clone(),
            n: self.n,
            edges,
            features: self.features.clone(),
            labels: self.labels.clone(),
        }
    }

    pub(crate) fn with_features(&self, features: Matrix) -> Graph {
        debug_assert_eq!(features.shape(), self.features.shape());
        Graph {
            name: self.name.clone(),
            n: self.n,
            edges: self.edges.clone(),
            features,
            labels: self.labels.clone(),
        }
    }
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn dim(&self) -> usize {
        self.row_offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored entry at `(i, j)`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        match self.col_indices[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.dim();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                m[(i, self.col_indices[p])] = self.values[p];
            }
        }
        m
    }

    /// One sparse-dense product `Ã · x`.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.dim() {
            return Err(StarError::dims("spmm", self.dim(), x.rows()));
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..self.dim() {
            let o = out.row_mut(i);
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                let w = self.values[p];
                for (ov, xv) in o.iter_mut().zip(x.row(self.col_indices[p])) {
                    *ov += w * xv;
                }
            }
        }
        Ok(out)
    }
}

/// Symmetric normalization with self-loops. Isolated nodes get `d̂ = 1`.
pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.num_nodes();
    let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for &(i, j) in g.edges() {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    let inv_sqrt_deg: Vec<f64> = neighbors
        .iter()
        .map(|nb| 1.0 / (nb.len() as f64).sqrt())
        .collect();

    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(n + 2 * g.num_edges());
    let mut values = Vec::with_capacity(n + 2 * g.num_edges());
    row_offsets.push(0);
    for (i, nb) in neighbors.iter_mut().enumerate() {
        nb.sort_unstable();
        for &j in nb.iter() {
            col_indices.push(j);
            values.push(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
        }
        row_offsets.push(col_indices.len());
    }
    NormalizedAdjacency {
        row_offsets,
        col_indices,
        values,
    }
}

/// `Ã^ℓ X` computed as ℓ successive sparse products. `ℓ = 0` returns `X`.
pub fn propagate(adj: &NormalizedAdjacency, x: &Matrix, hops: usize) -> Result<Matrix> {
    if x.rows() != adj.dim() {
        return Err(StarError::dims("propagate", adj.dim(), x.rows()));
    }
    let mut out = x.clone();
    for _ in 0..hops {
        out = adj.spmm(&out)?;
    }
    Ok(out)
}
