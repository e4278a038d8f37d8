//! Clustering metrics and k-neighborhood diagnostics.

use std::collections::HashMap;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;

/// Row-wise argmax of the indicator matrix; ties go to the lowest column.
pub fn cluster_labels(g: ArrayView2<f64>) -> Vec<usize> {
    g.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Dense relabeling to 0..k in order of first appearance.
fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<usize>>, usize, usize) {
    let (p, kp) = compact(pred);
    let (t, kt) = compact(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    (table, kp, kt)
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "label vectors differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("label vectors are empty".into()));
    }
    Ok(())
}

/// Clustering accuracy: fraction of points matched under the best
/// one-to-one cluster/class assignment.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let (table, kp, kt) = contingency(pred, truth);
    let size = kp.max(kt);
    // maximize matches = minimize negated counts on a padded square matrix
    let mut cost = vec![vec![0i64; size]; size];
    for (i, row) in table.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            cost[i][j] = -(v as i64);
        }
    }
    let assignment = min_cost_assignment(&cost);
    let matched: usize = assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < kp && j < kt)
        .map(|(i, &j)| table[i][j])
        .sum();
    Ok(matched as f64 / pred.len() as f64)
}

/// Hungarian algorithm (shortest augmenting paths with potentials),
/// `O(n³)`. Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; column 0 is a virtual source
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information `I / √(H_pred · H_truth)`, natural log.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let (table, kp, kt) = contingency(pred, truth);
    let total = pred.len() as f64;
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..kt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let hp = entropy(row_sums.iter().copied(), total);
    let ht = entropy(col_sums.iter().copied(), total);
    if hp == 0.0 || ht == 0.0 {
        // a single-cluster partition only agrees with another single cluster
        return Ok(if kp == 1 && kt == 1 { 1.0 } else { 0.0 });
    }
    let one_to_one = kp == kt
        && table
            .iter()
            .all(|r| r.iter().filter(|&&c| c > 0).count() == 1);
    if one_to_one {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let pij = c as f64 / total;
                let pi = row_sums[i] as f64 / total;
                let pj = col_sums[j] as f64 / total;
                mi += pij * (pij / (pi * pj)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Which graph a diagnostics report was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    InputHeatKernel,
    LearnedMasked,
}

/// Cluster-assumption statistics of a k-neighborhood graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Fraction of point–neighbor pairs with mismatched labels.
    pub pct_bad_nn: f64,
    /// Fraction of neighborhoods with at least half their neighbors mismatched.
    pub pct_bad_nbh: f64,
    /// Mean similarity over pairs in good neighborhoods, absent if none.
    pub sim_good_nbh: Option<f64>,
    pub sim_bad_nbh: Option<f64>,
    pub k_used: usize,
    pub neighborhoods: usize,
    pub graph_source: GraphSource,
    /// Similarities are averaged per point–neighbor pair.
    pub similarity_averaging: String,
}

/// Neighborhood diagnostics over the rows of `graph` that have neighbors.
///
/// `similarity[i, j]` is the similarity reported for the pair (point i,
/// neighbor j), typically the adaptive input-space Gaussian kernel.
pub fn neighborhood_diagnostics(
    graph: &AffinityGraph,
    similarity: ArrayView2<f64>,
    labels: Option<&[usize]>,
    k: usize,
    source: GraphSource,
) -> Result<DiagnosticsReport> {
    let labels =
        labels.ok_or_else(|| Error::Data("diagnostics need ground-truth labels".into()))?;
    let n = graph.n();
    if labels.len() != n || similarity.dim() != (n, n) {
        return Err(Error::Shape(format!(
            "graph has {n} nodes, labels {}, similarity {:?}",
            labels.len(),
            similarity.dim()
        )));
    }
    let (mut edges, mut bad_edges) = (0usize, 0usize);
    let (mut nbhs, mut bad_nbhs) = (0usize, 0usize);
    let (mut good_sim, mut good_pairs) = (0.0, 0usize);
    let (mut bad_sim, mut bad_pairs) = (0.0, 0usize);
    for (i, list) in graph.neighbors.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let mismatched = list.iter().filter(|&&j| labels[j] != labels[i]).count();
        edges += list.len();
        bad_edges += mismatched;
        nbhs += 1;
        let is_bad = 2 * mismatched >= list.len();
        let sims: f64 = list.iter().map(|&j| similarity[[i, j]]).sum();
        if is_bad {
            bad_nbhs += 1;
            bad_sim += sims;
            bad_pairs += list.len();
        } else {
            good_sim += sims;
            good_pairs += list.len();
        }
    }
    if nbhs == 0 {
        return Err(Error::Data("graph has no neighborhoods".into()));
    }
    Ok(DiagnosticsReport {
        pct_bad_nn: bad_edges as f64 / edges as f64,
        pct_bad_nbh: bad_nbhs as f64 / nbhs as f64,
        sim_good_nbh: (good_pairs > 0).then(|| good_sim / good_pairs as f64),
        sim_bad_nbh: (bad_pairs > 0).then(|| bad_sim / bad_pairs as f64),
        k_used: k,
        neighborhoods: nbhs,
        graph_source: source,
        similarity_averaging: "per_pair".into(),
    })
}
