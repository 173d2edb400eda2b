//! Complete-linkage agglomerative clustering of post vectors (or embeddings)
//! and the insertion-state merge that collapses undersized states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{cosine_distance, cosine_distance_dense, PostVector};

/// Per-post state ids in input order, with ids contiguous in
/// `0..num_states`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub num_states: usize,
}

impl ClusterAssignment {
    pub fn state_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.num_states];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn distinct_states(&self) -> usize {
        let mut seen = vec![false; self.num_states];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

/// Symmetric pairwise distance matrix, stored dense.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_vectors(vectors: &[PostVector]) -> Self {
        Self::build(vectors.len(), |i, j| cosine_distance(&vectors[i], &vectors[j]))
    }

    pub fn from_embeddings(vectors: &[Vec<f64>]) -> Self {
        Self::build(vectors.len(), |i, j| cosine_distance_dense(&vectors[i], &vectors[j]))
    }

    pub fn build(n: usize, mut dist: impl FnMut(usize, usize) -> f64) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = dist(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.d[i * self.n + j] = v;
        self.d[j * self.n + i] = v;
    }
}

/// Clusters post vectors down to `k` clusters with complete-linkage
/// agglomeration over cosine distances.
pub fn cluster(vectors: &[PostVector], k: usize) -> Result<ClusterAssignment> {
    cluster_distances(DistanceMatrix::from_vectors(vectors), k)
}

/// Same agglomeration over dense embedding vectors.
pub fn cluster_embeddings(vectors: &[Vec<f64>], k: usize) -> Result<ClusterAssignment> {
    cluster_distances(DistanceMatrix::from_embeddings(vectors), k)
}

/// Complete-linkage agglomeration on a prebuilt distance matrix.
///
/// Each active cluster is identified by the smallest original index among its
/// members, and at every step the globally closest pair is merged. Equal
/// linkage distances are resolved in favor of the smallest
/// (min-id, max-id) pair, which makes the output deterministic.
pub fn cluster_distances(mut dist: DistanceMatrix, k: usize) -> Result<ClusterAssignment> {
    let n = dist.len();
    if k < 1 || k > n {
        return Err(Error::Parameter(format!(
            "cluster count must satisfy 1 <= k <= {n}, got {k}"
        )));
    }

    // slot index == smallest member index of the cluster living there
    let mut active: Vec<bool> = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // nn[i]: closest active partner j > i, as (distance, j)
    let mut nn: Vec<Option<(f64, usize)>> = vec![None; n];

    let scan_nn = |dist: &DistanceMatrix, active: &[bool], i: usize| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            if !active[j] {
                continue;
            }
            let d = dist.get(i, j);
            match best {
                Some((bd, _)) if bd <= d => {}
                _ => best = Some((d, j)),
            }
        }
        best
    };

    for i in 0..n {
        nn[i] = scan_nn(&dist, &active, i);
    }

    let mut remaining = n;
    while remaining > k {
        // globally closest pair, ties by (distance, min-id, max-id)
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((d, j)) = nn[i] {
                match best {
                    Some((bd, bi, bj)) if (bd, bi, bj) <= (d, i, j) => {}
                    _ => best = Some((d, i, j)),
                }
            }
        }
        let (_, a, b) = best.expect("at least two active clusters");

        // merge b into a (a < b); complete linkage takes the max distance
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        active[b] = false;
        for c in 0..n {
            if c != a && active[c] {
                let v = dist.get(a, c).max(dist.get(b, c));
                dist.set(a, c, v);
            }
        }
        // entries pointing at a changed distance or at the removed slot
        nn[a] = scan_nn(&dist, &active, a);
        for i in 0..b {
            if !active[i] || i == a {
                continue;
            }
            if let Some((_, j)) = nn[i] {
                if j == a || j == b {
                    nn[i] = scan_nn(&dist, &active, i);
                }
            }
        }
        remaining -= 1;
    }

    // contiguous ids in order of first appearance
    let mut slot_of = vec![usize::MAX; n];
    for (slot, m) in members.iter().enumerate() {
        for &p in m {
            slot_of[p] = slot;
        }
    }
    let mut new_id = vec![usize::MAX; n];
    let mut next = 0usize;
    let mut labels = Vec::with_capacity(n);
    for p in 0..n {
        let slot = slot_of[p];
        if new_id[slot] == usize::MAX {
            new_id[slot] = next;
            next += 1;
        }
        labels.push(new_id[slot]);
    }
    Ok(ClusterAssignment { labels, num_states: next })
}

/// Collapses every state smaller than `threshold` posts into a single noise
/// state. Surviving states keep their relative order and are re-compacted to
/// `0..`; the merged state takes the last id.
pub fn merge_small_states(assignment: &ClusterAssignment, threshold: usize) -> ClusterAssignment {
    let sizes = assignment.state_sizes();
    let small: Vec<bool> = sizes.iter().map(|&s| s < threshold).collect();
    if !small.iter().any(|&s| s) {
        return assignment.clone();
    }
    let mut remap = vec![usize::MAX; assignment.num_states];
    let mut next = 0usize;
    for (state, &is_small) in small.iter().enumerate() {
        if !is_small {
            remap[state] = next;
            next += 1;
        }
    }
    let merged_id = next;
    for (state, &is_small) in small.iter().enumerate() {
        if is_small {
            remap[state] = merged_id;
        }
    }
    let labels = assignment.labels.iter().map(|&l| remap[l]).collect();
    ClusterAssignment { labels, num_states: merged_id + 1 }
}
