//! Pairwise distances, adaptive Gaussian kernels and kernel-space
//! dissimilarities.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible bandwidth; guards against duplicate points.
pub const BANDWIDTH_FLOOR: f64 = 1e-12;

/// How the k-th neighbor distance is turned into a kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// σ_i = distance to the k-th nearest neighbor.
    #[default]
    Distance,
    /// σ_i = squared distance to the k-th nearest neighbor.
    SquaredDistance,
}

/// Squared Euclidean distances between the columns of `a` (m×p) and `b` (m×q).
pub fn pairwise_sq_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "row dimensions differ: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let at = a.t().as_standard_layout().to_owned();
    let bt = b.t().as_standard_layout().to_owned();
    let rows: Vec<Vec<f64>> = (0..at.nrows())
        .into_par_iter()
        .map(|i| {
            let ai = at.row(i);
            bt.axis_iter(Axis(0))
                .map(|bj| sq_dist(ai, bj))
                .collect::<Vec<f64>>()
        })
        .collect();
    let (p, q) = (a.ncols(), b.ncols());
    Ok(
        Array2::from_shape_vec((p, q), rows.into_iter().flatten().collect())
            .expect("row lengths match q"),
    )
}

#[inline]
fn sq_dist(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Euclidean distances between the columns of `x`.
pub fn pairwise_dist(x: ArrayView2<f64>) -> Array2<f64> {
    pairwise_sq_dist(x, x)
        .expect("same matrix on both sides")
        .mapv(f64::sqrt)
}

/// k-th smallest off-diagonal entry of each row of `d2`.
fn kth_neighbor_sq(d2: ArrayView2<f64>, k: usize) -> Result<Array1<f64>> {
    let n = d2.nrows();
    if k == 0 || k >= n {
        return Err(Error::config(
            "k_neighbors",
            format!("need 1 <= k < n, got k={k}, n={n}"),
        ));
    }
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = d2.row(i);
            let mut others: Vec<f64> = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &v)| v)
                .collect();
            let (_, kth, _) = others.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            *kth
        })
        .collect();
    Ok(Array1::from(vals))
}

/// Adaptive bandwidths: σ_i is the distance from point i to its k-th
/// nearest neighbor (self excluded), floored at [`BANDWIDTH_FLOOR`].
pub fn adaptive_bandwidths(d2: ArrayView2<f64>, k: usize) -> Result<Array1<f64>> {
    adaptive_bandwidths_with(d2, k, BandwidthMode::Distance)
}

pub fn adaptive_bandwidths_with(
    d2: ArrayView2<f64>,
    k: usize,
    mode: BandwidthMode,
) -> Result<Array1<f64>> {
    let kth = kth_neighbor_sq(d2, k)?;
    Ok(kth.mapv(|v| {
        let bw = match mode {
            BandwidthMode::Distance => v.max(0.0).sqrt(),
            BandwidthMode::SquaredDistance => v.max(0.0),
        };
        bw.max(BANDWIDTH_FLOOR)
    }))
}

/// `K_ij = exp(-D2_ij / (2 bw_i²))`, row-adaptive.
pub fn gaussian_kernel(d2: ArrayView2<f64>, bw: ArrayView1<f64>) -> Result<Array2<f64>> {
    if bw.len() != d2.nrows() {
        return Err(Error::Shape(format!(
            "{} bandwidths for {} rows",
            bw.len(),
            d2.nrows()
        )));
    }
    if let Some(bad) = bw.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::config(
            "bandwidth",
            format!("bandwidths must be positive, got {bad}"),
        ));
    }
    let mut k = d2.to_owned();
    for (mut row, &s) in k.axis_iter_mut(Axis(0)).zip(bw.iter()) {
        let denom = 2.0 * s * s;
        row.mapv_inplace(|v| (-v / denom).exp());
    }
    Ok(k)
}

/// Negated symmetrized kernel: `-(K_ij + K_ji) / 2`.
pub fn kernel_dissimilarity(k: ArrayView2<f64>) -> Array2<f64> {
    let n = k.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| -0.5 * (k[[i, j]] + k[[j, i]]))
}

/// `D̂ = D_K + (λ/β)·D_K^hg`.
pub fn combine_dissimilarity(
    d_k: ArrayView2<f64>,
    d_k_hg: ArrayView2<f64>,
    lambda: f64,
    beta: f64,
) -> Result<Array2<f64>> {
    if !(beta > 0.0) {
        return Err(Error::config("beta", format!("must be > 0, got {beta}")));
    }
    if d_k.dim() != d_k_hg.dim() {
        return Err(Error::Shape(
            "dissimilarity matrices differ in shape".into(),
        ));
    }
    let ratio = lambda / beta;
    Ok(&d_k + &(&d_k_hg * ratio))
}

/// All dissimilarities feeding one Z update.
#[derive(Debug, Clone)]
pub struct DissimilarityBundle {
    /// Input-space Euclidean distances.
    pub d: Array2<f64>,
    pub d_k: Array2<f64>,
    pub d_k_hg: Array2<f64>,
    pub d_hat: Array2<f64>,
    pub sigma: Array1<f64>,
    pub gamma: Array1<f64>,
}

/// Input-space half of the bundle; fixed for a given dataset.
#[derive(Debug, Clone)]
pub struct InputKernel {
    pub d2: Array2<f64>,
    pub d: Array2<f64>,
    pub sigma: Array1<f64>,
    pub kernel: Array2<f64>,
    pub d_k: Array2<f64>,
}

impl InputKernel {
    pub fn new(x: ArrayView2<f64>, k: usize, mode: BandwidthMode) -> Result<Self> {
        let d2 = pairwise_sq_dist(x, x)?;
        let sigma = adaptive_bandwidths_with(d2.view(), k, mode)?;
        let kernel = gaussian_kernel(d2.view(), sigma.view())?;
        let d_k = kernel_dissimilarity(kernel.view());
        let d = d2.mapv(f64::sqrt);
        Ok(InputKernel {
            d2,
            d,
            sigma,
            kernel,
            d_k,
        })
    }
}

/// Latent-space kernel dissimilarity between rows of `g` and rows of `h`.
///
/// When `pooled` is set every γ_i is replaced by the mean bandwidth.
pub fn latent_dissimilarity(
    g: ArrayView2<f64>,
    h: ArrayView2<f64>,
    k: usize,
    mode: BandwidthMode,
    pooled: bool,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let d2 = pairwise_sq_dist(g.t(), h.t())?;
    let mut gamma = adaptive_bandwidths_with(d2.view(), k, mode)?;
    if pooled {
        let mean = gamma.mean().unwrap_or(BANDWIDTH_FLOOR).max(BANDWIDTH_FLOOR);
        gamma.fill(mean);
    }
    let kern = gaussian_kernel(d2.view(), gamma.view())?;
    Ok((kernel_dissimilarity(kern.view()), gamma))
}

impl DissimilarityBundle {
    pub fn build(
        input: &InputKernel,
        g: ArrayView2<f64>,
        h: ArrayView2<f64>,
        k: usize,
        lambda: f64,
        beta: f64,
        mode: BandwidthMode,
        pooled_gamma: bool,
    ) -> Result<Self> {
        let (d_k_hg, gamma) = latent_dissimilarity(g, h, k, mode, pooled_gamma)?;
        let d_hat = combine_dissimilarity(input.d_k.view(), d_k_hg.view(), lambda, beta)?;
        Ok(DissimilarityBundle {
            d: input.d.clone(),
            d_k: input.d_k.clone(),
            d_k_hg,
            d_hat,
            sigma: input.sigma.clone(),
            gamma,
        })
    }
}
