//! Neighbor structure, affinity graphs and Laplacians.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::kernels::{adaptive_bandwidths, pairwise_sq_dist};

/// An affinity matrix together with its neighbor lists and Laplacian.
///
/// `neighbors[i]` is empty for rows that do not take part in the graph
/// (non-exemplar rows of a masked affinity).
#[derive(Debug, Clone)]
pub struct AffinityGraph {
    pub weights: Array2<f64>,
    pub neighbors: Vec<Vec<usize>>,
    pub laplacian: Array2<f64>,
    pub degrees: Array1<f64>,
}

impl AffinityGraph {
    pub fn new(weights: Array2<f64>, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let (laplacian, degrees) = laplacian(weights.view())?;
        Ok(AffinityGraph {
            weights,
            neighbors,
            laplacian,
            degrees,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    /// Number of rows with a nonempty neighbor list.
    pub fn active_rows(&self) -> usize {
        self.neighbors.iter().filter(|l| !l.is_empty()).count()
    }

    /// Writes the nonzero weights as `i,j,value` lines.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "i,j,value")?;
        for ((i, j), &v) in self.weights.indexed_iter() {
            if v != 0.0 {
                writeln!(out, "{i},{j},{v}")?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::config(
            "k_neighbors",
            format!("need 1 <= k < n, got k={k}, n={n}"),
        ));
    }
    Ok(())
}

/// Indices of the `k` entries of `row` selected by `better`, skipping
/// `skip`; ties go to the lower index. Returned in selection order.
fn top_k_by<F>(row: ArrayView1<f64>, skip: usize, k: usize, better: F) -> Vec<usize>
where
    F: Fn(f64, f64) -> std::cmp::Ordering,
{
    let mut idx: Vec<usize> = (0..row.len()).filter(|&j| j != skip).collect();
    let cmp = |a: &usize, b: &usize| better(row[*a], row[*b]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// For each i, the `k` indices j≠i with the smallest `d[i, j]`.
pub fn knn_sets(d: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = d.nrows();
    check_k(k, n)?;
    Ok(d.axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| top_k_by(row, i, k, |a, b| a.total_cmp(&b)))
        .collect())
}

/// Fixed k-NN graph with adaptive heat-kernel weights
/// `W_ij = exp(-‖x_i - x_j‖² / (2σ_i²))` on the k nearest neighbors of i.
pub fn heat_affinity(x: ArrayView2<f64>, k: usize) -> Result<AffinityGraph> {
    let d2 = pairwise_sq_dist(x, x)?;
    heat_affinity_from_sq_dist(d2.view(), k)
}

pub fn heat_affinity_from_sq_dist(d2: ArrayView2<f64>, k: usize) -> Result<AffinityGraph> {
    let n = d2.nrows();
    let neighbors = knn_sets(d2, k)?;
    let sigma = adaptive_bandwidths(d2, k)?;
    let mut w = Array2::zeros((n, n));
    for (i, list) in neighbors.iter().enumerate() {
        let denom = 2.0 * sigma[i] * sigma[i];
        for &j in list {
            w[[i, j]] = (-d2[[i, j]] / denom).exp();
        }
    }
    AffinityGraph::new(w, neighbors)
}

/// Rows of `z` ranked by Euclidean norm; the `tau` largest are returned in
/// ascending index order. Ties go to the lower index.
pub fn select_exemplars(z: ArrayView2<f64>, tau: usize) -> Result<Vec<usize>> {
    let n = z.nrows();
    if tau == 0 || tau > n {
        return Err(Error::config(
            "tau",
            format!("exemplar count must be in 1..={n}, got {tau}"),
        ));
    }
    let norms: Vec<f64> = z
        .axis_iter(Axis(0))
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    idx.truncate(tau);
    idx.sort_unstable();
    Ok(idx)
}

/// Encoding entries at or below this level count as zero in neighbor lists.
pub const AFFINITY_FLOOR: f64 = 1e-6;

/// Neighbor lists of the masked affinity: for each exemplar row, the `k`
/// largest off-diagonal entries of that row of `z` that exceed
/// [`AFFINITY_FLOOR`].
pub fn masked_neighbors(
    z: ArrayView2<f64>,
    exemplars: &[usize],
    k: usize,
) -> Result<Vec<Vec<usize>>> {
    let n = z.nrows();
    if exemplars.is_empty() {
        return Err(Error::Selection("exemplar set is empty".into()));
    }
    check_k(k, n)?;
    let mut lists = vec![Vec::new(); n];
    for &i in exemplars {
        if i >= n {
            return Err(Error::Selection(format!(
                "exemplar {i} out of range for n={n}"
            )));
        }
        let mut list = top_k_by(z.row(i), i, k, |a, b| b.total_cmp(&a));
        list.retain(|&j| z[[i, j]] > AFFINITY_FLOOR);
        lists[i] = list;
    }
    Ok(lists)
}

/// Keeps `z[i, j]` for every `j` in `neighbors[i]`, zero elsewhere.
pub fn apply_mask(z: ArrayView2<f64>, neighbors: &[Vec<usize>]) -> Array2<f64> {
    let mut out = Array2::zeros(z.raw_dim());
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            if j != i {
                out[[i, j]] = z[[i, j]];
            }
        }
    }
    out
}

/// `Ẑ = M ⊙ Z` where `M_ij = 1` iff i is an exemplar and j is among the k
/// largest off-diagonal entries of row i.
pub fn mask_affinity(z: ArrayView2<f64>, exemplars: &[usize], k: usize) -> Result<Array2<f64>> {
    let lists = masked_neighbors(z, exemplars, k)?;
    Ok(apply_mask(z, &lists))
}

/// Masked affinity packaged as a graph (weights, lists and Laplacian).
pub fn masked_graph(z: ArrayView2<f64>, exemplars: &[usize], k: usize) -> Result<AffinityGraph> {
    let lists = masked_neighbors(z, exemplars, k)?;
    let w = apply_mask(z, &lists);
    AffinityGraph::new(w, lists)
}

/// Symmetrized Laplacian `L = Deg - S`, `S = (W + Wᵀ)/2`, `Deg_ii = Σ_j S_ij`.
pub fn laplacian(w: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let (n, m) = w.dim();
    if n != m {
        return Err(Error::Shape(format!(
            "affinity must be square, got {n}x{m}"
        )));
    }
    if let Some(v) = w.iter().find(|&&v| v < 0.0 || v.is_nan()) {
        return Err(Error::Data(format!("affinity has invalid entry {v}")));
    }
    let s = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (w[[i, j]] + w[[j, i]]));
    let deg = s.sum_axis(Axis(1));
    let mut l = -s;
    for i in 0..n {
        l[[i, i]] += deg[i];
    }
    Ok((l, deg))
}
