//! Set-level representations: cross-view top-k retrieval, splitting each
//! retrieved set into two positive halves, the DeepSets encoder
//! `Ψ(Ω) = MLP(Σ_{ω∈Ω} ω)`, and the final `Z = H̃ ‖ S̃` embedding.

use std::cmp::Ordering;

use crate::contrastive::ContrastiveBatch;
use crate::error::{Result, StarError};
use crate::graph::{normalize_adjacency, propagate, Graph};
use crate::matrix::{dot, Matrix};
use crate::nn::{l2_normalize_rows, Linear, Mlp};

/// Retrieval set size used during pretraining.
pub const DEFAULT_TOP_K: usize = 20;

/// Top-k members per anchor, ordered by descending score with ties broken
/// by ascending node id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    k: usize,
    members: Vec<usize>,
    scores: Vec<f64>,
}

impl RetrievalIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_anchors(&self) -> usize {
        self.members.len() / self.k.max(1)
    }

    pub fn members(&self, anchor: usize) -> &[usize] {
        &self.members[anchor * self.k..(anchor + 1) * self.k]
    }

    pub fn scores(&self, anchor: usize) -> &[f64] {
        &self.scores[anchor * self.k..(anchor + 1) * self.k]
    }
}

fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn topk(queries: &Matrix, keys: &Matrix, k: usize) -> Result<RetrievalIndex> {
    if queries.cols() != keys.cols() {
        return Err(StarError::dims(
            "top-k retrieval",
            queries.cols(),
            keys.cols(),
        ));
    }
    if k == 0 || k > keys.rows() {
        return Err(StarError::InvalidArgument(format!(
            "top-k needs 1 <= k <= {} candidates, got k = {k}",
            keys.rows()
        )));
    }
    let mut members = Vec::with_capacity(queries.rows() * k);
    let mut scores = Vec::with_capacity(queries.rows() * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(keys.rows());
    for q in queries.row_iter() {
        cand.clear();
        cand.extend(keys.row_iter().enumerate().map(|(j, key)| (dot(q, key), j)));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, rank_order);
            cand.truncate(k);
        }
        cand.sort_unstable_by(rank_order);
        for &(s, j) in &cand {
            members.push(j);
            scores.push(s);
        }
    }
    Ok(RetrievalIndex { k, members, scores })
}

/// For every row of `h1`, the `k` rows of `h2` with the largest dot product.
/// The anchor's own counterpart in `h2` is a legitimate member.
pub fn topk_cross_retrieve(h1: &Matrix, h2: &Matrix, k: usize) -> Result<RetrievalIndex> {
    if !k.is_multiple_of(2) {
        return Err(StarError::InvalidArgument(format!(
            "top_k must be even to split into two halves, got {k}"
        )));
    }
    if k < 2 {
        return Err(StarError::InvalidArgument(
            "top_k must be at least 2".into(),
        ));
    }
    topk(h1, h2, k)
}

/// Top-k of `h` against itself, any `k >= 1` (no split follows).
pub fn topk_self_retrieve(h: &Matrix, k: usize) -> Result<RetrievalIndex> {
    topk(h, h, k)
}

/// Two disjoint halves of one anchor's retrieval set, as member ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetPair {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl SetPair {
    /// Member embedding matrices `(Ω_a, Ω_b)`.
    pub fn gather(&self, h: &Matrix) -> (Matrix, Matrix) {
        (h.select_rows(&self.a), h.select_rows(&self.b))
    }
}

/// Rank-interleaved split: ranks 1, 3, 5, … go to `a`, ranks 2, 4, … to `b`.
pub fn split_halves(index: &RetrievalIndex, anchor: usize) -> SetPair {
    debug_assert!(index.k().is_multiple_of(2));
    let members = index.members(anchor);
    SetPair {
        a: members.iter().step_by(2).copied().collect(),
        b: members.iter().skip(1).step_by(2).copied().collect(),
    }
}

/// `Ψ`: sum pooling followed by an MLP.
#[derive(Debug, Clone)]
pub struct DeepSetsEncoder {
    pub mlp: Mlp,
}

impl DeepSetsEncoder {
    pub fn new(mlp: Mlp) -> Self {
        DeepSetsEncoder { mlp }
    }

    pub fn encode(&self, members: &Matrix) -> Result<Vec<f64>> {
        if members.rows() == 0 {
            return Err(StarError::EmptySet);
        }
        let pooled = Matrix::from_vec(1, members.cols(), members.sum_rows())?;
        Ok(self.mlp.infer(&pooled)?.into_vec())
    }

    /// Encodes many sets given as row-index lists into `h`.
    pub fn encode_sets(&self, h: &Matrix, sets: &[Vec<usize>]) -> Result<Matrix> {
        self.mlp.infer(&sum_pool(h, sets)?)
    }
}

/// Row `s` of the result is the sum of the rows of `h` listed in `sets[s]`.
pub fn sum_pool(h: &Matrix, sets: &[Vec<usize>]) -> Result<Matrix> {
    let mut out = Matrix::zeros(sets.len(), h.cols());
    for (s, members) in sets.iter().enumerate() {
        if members.is_empty() {
            return Err(StarError::EmptySet);
        }
        let o = out.row_mut(s);
        for &m in members {
            for (ov, hv) in o.iter_mut().zip(h.row(m)) {
                *ov += hv;
            }
        }
    }
    Ok(out)
}

/// Backward of [`sum_pool`]: adds row `s` of `d_pooled` to every member row
/// of `d_h`.
pub fn sum_pool_backward(d_pooled: &Matrix, sets: &[Vec<usize>], d_h: &mut Matrix) {
    for (s, members) in sets.iter().enumerate() {
        let g = d_pooled.row(s);
        for &m in members {
            for (dv, gv) in d_h.row_mut(m).iter_mut().zip(g) {
                *dv += gv;
            }
        }
    }
}

/// Member lists of the `2n` training sets: anchor `i` of `h1` retrieves in
/// `h2`, and its halves become sets `2i` and `2i + 1`. Member ids index `h2`.
pub fn training_sets(h1: &Matrix, h2: &Matrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let index = topk_cross_retrieve(h1, h2, k)?;
    let mut sets = Vec::with_capacity(2 * h1.rows());
    for anchor in 0..h1.rows() {
        let pair = split_halves(&index, anchor);
        sets.push(pair.a);
        sets.push(pair.b);
    }
    Ok(sets)
}

/// The `2n` set embeddings `normalize(ψ(Ψ(Ω)))`, paired as `(2i, 2i + 1)`.
pub fn build_set_batch(
    h1: &Matrix,
    h2: &Matrix,
    set_fn: &DeepSetsEncoder,
    set_proj: &Mlp,
    k: usize,
    temperature: f64,
) -> Result<ContrastiveBatch> {
    let sets = training_sets(h1, h2, k)?;
    let s = set_fn.encode_sets(h2, &sets)?;
    let projected = l2_normalize_rows(&set_proj.infer(&s)?);
    ContrastiveBatch::adjacent_pairs(projected, temperature)
}

/// Embeddings used for few-shot evaluation.
#[derive(Debug, Clone)]
pub struct FinalEmbeddings {
    /// `H̃ ‖ S̃`, `n × 2d'`.
    pub z: Matrix,
    /// Width of the `H̃` block.
    pub instance_dim: usize,
    /// Self-retrieval on `H̃` that produced `S̃`.
    pub index: RetrievalIndex,
}

impl FinalEmbeddings {
    pub fn instance_block(&self) -> Matrix {
        self.z.slice_cols(0, self.instance_dim)
    }

    pub fn set_block(&self) -> Matrix {
        self.z.slice_cols(self.instance_dim, self.z.cols())
    }
}

/// `H̃ = Ã^ℓ X W` on the unaugmented graph.
pub fn encode_nodes(g: &Graph, sgc: &Linear, hops: usize) -> Result<Matrix> {
    let adj = normalize_adjacency(g);
    sgc.infer(&propagate(&adj, g.features(), hops)?)
}

/// `Z = H̃ ‖ S̃` where `S̃_i = Ψ(all k members of node i's self-retrieval on H̃)`.
pub fn build_final_embeddings(
    g: &Graph,
    sgc: &Linear,
    set_fn: &DeepSetsEncoder,
    hops: usize,
    k: usize,
) -> Result<FinalEmbeddings> {
    if k > g.num_nodes() {
        return Err(StarError::InvalidArgument(format!(
            "top_k = {k} exceeds the node count {}",
            g.num_nodes()
        )));
    }
    let h = encode_nodes(g, sgc, hops)?;
    let index = topk_self_retrieve(&h, k)?;
    let sets: Vec<Vec<usize>> = (0..h.rows()).map(|i| index.members(i).to_vec()).collect();
    let s = set_fn.encode_sets(&h, &sets)?;
    let z = Matrix::hstack(&[&h, &s])?;
    if !z.is_finite() {
        return Err(StarError::NonFinite("final embeddings"));
    }
    Ok(FinalEmbeddings {
        z,
        instance_dim: h.cols(),
        index,
    })
}

/// Fraction of (anchor, member) pairs sharing a label, ignoring the anchor
/// itself when it was retrieved.
pub fn retrieval_purity(index: &RetrievalIndex, labels: Option<&[usize]>) -> Result<f64> {
    let labels = labels.ok_or(StarError::MissingLabels("retrieval purity"))?;
    let mut same = 0usize;
    let mut total = 0usize;
    for anchor in 0..index.num_anchors() {
        for &m in index.members(anchor) {
            if m == anchor {
                continue;
            }
            total += 1;
            if labels[m] == labels[anchor] {
                same += 1;
            }
        }
    }
    if total == 0 {
        return Err(StarError::InvalidArgument(
            "retrieval index has no non-self members".into(),
        ));
    }
    Ok(same as f64 / total as f64)
}
