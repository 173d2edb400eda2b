//! Cluster-to-category mapping: a weight matrix of (predicted cluster, gold
//! label) co-occurrence counts and the maximum-weight one-to-one assignment
//! (Kuhn-Munkres).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// rows = cluster ids, cols = gold labels, entry = number of posts predicted
/// as the cluster that carry the gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightMatrix {
    weights: Vec<Vec<u64>>,
    num_clusters: usize,
    num_labels: usize,
}

impl WeightMatrix {
    pub fn new(num_clusters: usize, num_labels: usize) -> Self {
        WeightMatrix {
            weights: vec![vec![0; num_labels]; num_clusters],
            num_clusters,
            num_labels,
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Self {
        let num_clusters = rows.len();
        let num_labels = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == num_labels));
        WeightMatrix { weights: rows, num_clusters, num_labels }
    }

    pub fn get(&self, cluster: usize, label: usize) -> u64 {
        self.weights[cluster][label]
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn total(&self) -> u64 {
        self.weights.iter().flatten().sum()
    }
}

/// Counts co-occurrences of predictions and gold labels; unlabeled posts are
/// excluded.
pub fn build_weight_matrix(
    predicted: &[usize],
    gold: &[Option<usize>],
    num_clusters: usize,
    num_labels: usize,
) -> Result<WeightMatrix> {
    if predicted.len() != gold.len() {
        return Err(Error::Parameter(format!(
            "prediction and gold sequences differ in length: {} vs {}",
            predicted.len(),
            gold.len()
        )));
    }
    let mut w = WeightMatrix::new(num_clusters, num_labels);
    for (&c, g) in predicted.iter().zip(gold) {
        if let Some(g) = *g {
            w.weights[c][g] += 1;
        }
    }
    Ok(w)
}

/// A one-to-one cluster-to-label map over the zero-padded square matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabelMap {
    /// label assigned to each (padded) cluster row
    pub assignment: Vec<usize>,
    pub total_weight: u64,
}

impl ClusterLabelMap {
    pub fn label_for(&self, cluster: usize) -> usize {
        self.assignment[cluster]
    }
}

/// O(n^3) maximum-weight perfect assignment on a square matrix
/// (Kuhn-Munkres via shortest augmenting paths on negated costs).
/// Returns (row -> col, total weight).
fn hungarian_max(w: &[Vec<i64>]) -> (Vec<usize>, i64) {
    let n = w.len();
    if n == 0 {
        return (Vec::new(), 0);
    }
    let inf = i64::MAX / 4;
    let cost = |i: usize, j: usize| -w[i][j];

    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1]; // row matched to column j (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut total = 0i64;
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
        total += w[p[j] - 1][j - 1];
    }
    (assignment, total)
}

/// Maximum-weight one-to-one mapping from clusters to labels. Rectangular
/// matrices are zero-padded to square. Ties resolve to the lexicographically
/// smallest assignment sequence, found by fixing rows in order and keeping
/// the smallest column that still admits an optimal completion.
pub fn optimal_mapping(w: &WeightMatrix) -> ClusterLabelMap {
    let n = w.num_clusters.max(w.num_labels);
    let mut padded = vec![vec![0i64; n]; n];
    for c in 0..w.num_clusters {
        for g in 0..w.num_labels {
            let v = w.weights[c][g];
            assert!(v < (i64::MAX / 4) as u64, "weight too large");
            padded[c][g] = v as i64;
        }
    }
    let (_, best_total) = hungarian_max(&padded);

    let mut assignment = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut fixed_sum = 0i64;
    for r in 0..n {
        for c in 0..n {
            if used[c] {
                continue;
            }
            let rest_rows: Vec<usize> = (r + 1..n).collect();
            let rest_cols: Vec<usize> = (0..n).filter(|&j| !used[j] && j != c).collect();
            let sub: Vec<Vec<i64>> = rest_rows
                .iter()
                .map(|&i| rest_cols.iter().map(|&j| padded[i][j]).collect())
                .collect();
            let completion = hungarian_max(&sub).1;
            if fixed_sum + padded[r][c] + completion == best_total {
                assignment[r] = c;
                used[c] = true;
                fixed_sum += padded[r][c];
                break;
            }
        }
        debug_assert_ne!(assignment[r], usize::MAX);
    }

    ClusterLabelMap { assignment, total_weight: best_total as u64 }
}

/// Brute-force maximum over all permutations with the same lexicographic tie
/// rule. Exposed for oracle-style tests; factorial time.
pub fn brute_force_mapping(w: &WeightMatrix) -> ClusterLabelMap {
    let n = w.num_clusters.max(w.num_labels);
    let weight = |c: usize, g: usize| -> u64 {
        if c < w.num_clusters && g < w.num_labels {
            w.weights[c][g]
        } else {
            0
        }
    };
    let mut best: Option<(u64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(n);
    let mut used = vec![false; n];
    // lexicographic enumeration with a strict improvement test keeps the
    // first (smallest) optimal permutation
    permute_lex(n, &mut current, &mut used, &mut |perm| {
        let total: u64 = perm.iter().enumerate().map(|(c, &g)| weight(c, g)).sum();
        match &best {
            Some((bt, _)) if *bt >= total => {}
            _ => best = Some((total, perm.to_vec())),
        }
    });
    let (total_weight, assignment) = best.expect("n >= 1");
    ClusterLabelMap { assignment, total_weight }
}

fn permute_lex(
    n: usize,
    current: &mut Vec<usize>,
    used: &mut Vec<bool>,
    visit: &mut impl FnMut(&[usize]),
) {
    if current.len() == n {
        visit(current);
        return;
    }
    for c in 0..n {
        if !used[c] {
            used[c] = true;
            current.push(c);
            permute_lex(n, current, used, visit);
            current.pop();
            used[c] = false;
        }
    }
}
