//! Closed-form projections and proximal operators.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{l1inf_norm, thin_svd};

/// Diagnostic wrapper around a projection result.
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub input_norm: f64,
    pub output: Array1<f64>,
    pub active_set_size: usize,
    pub kkt_residual: f64,
}

/// Euclidean projection onto the probability simplex `{z >= 0, sum z = 1}`.
///
/// Sort-and-threshold: `z_i = max(v_i - θ, 0)` with θ chosen so the output
/// sums to one.
pub fn project_simplex(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let theta = simplex_threshold(v)?;
    Ok(v.mapv(|x| (x - theta).max(0.0)))
}

fn simplex_threshold(v: ArrayView1<f64>) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Shape("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::numeric("project_simplex", "NaN input"));
    }
    if v.iter().any(|x| x.is_infinite()) {
        return Err(Error::numeric("project_simplex", "infinite input"));
    }
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = u[0] - 1.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    Ok(theta)
}

/// Simplex projection together with its KKT certificate.
pub fn project_simplex_report(v: ArrayView1<f64>) -> Result<ProjectionReport> {
    let theta = simplex_threshold(v)?;
    let output = v.mapv(|x| (x - theta).max(0.0));
    let active_set_size = output.iter().filter(|&&z| z > 0.0).count();
    let sum_gap = (output.sum() - 1.0).abs();
    // Stationarity: z_i - v_i + θ = 0 on the support, v_i - θ <= 0 off it.
    let stat = v
        .iter()
        .zip(output.iter())
        .map(|(&vi, &zi)| {
            if zi > 0.0 {
                (zi - vi + theta).abs()
            } else {
                (vi - theta).max(0.0)
            }
        })
        .fold(0.0_f64, f64::max);
    Ok(ProjectionReport {
        input_norm: v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        output,
        active_set_size,
        kkt_residual: sum_gap.max(stat),
    })
}

/// Projects every column of `m` onto the simplex. Columns are independent,
/// so the parallel result is bitwise identical to the serial one.
pub fn project_columns_simplex(m: ArrayView2<f64>) -> Result<Array2<f64>> {
    let cols: Vec<Array1<f64>> = (0..m.ncols())
        .into_par_iter()
        .map(|j| project_simplex(m.column(j)))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros(m.raw_dim());
    for (j, col) in cols.into_iter().enumerate() {
        out.column_mut(j).assign(&col);
    }
    Ok(out)
}

/// Per-row data for the L1,∞ water-filling: absolute values sorted in
/// descending order and their prefix sums.
struct RowProfile {
    sorted: Vec<f64>,
    prefix: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowState {
    Zeroed,
    Clipped(usize),
}

impl RowProfile {
    fn new(row: ArrayView1<f64>) -> Self {
        let mut sorted: Vec<f64> = row.iter().map(|x| x.abs()).collect();
        sorted.sort_unstable_by(|a, b| b.total_cmp(a));
        let mut prefix = Vec::with_capacity(sorted.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &a in &sorted {
            acc += a;
            prefix.push(acc);
        }
        RowProfile { sorted, prefix }
    }

    fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    fn next_value(&self, k: usize) -> f64 {
        self.sorted.get(k).copied().unwrap_or(0.0)
    }

    /// Row state at multiplier θ: the row is zeroed when its L1 mass is at
    /// most θ; otherwise `k` entries are clipped to the row level
    /// `t = (S_k - θ)/k`.
    fn state(&self, theta: f64) -> RowState {
        let q = self.sorted.len();
        if q == 0 || self.total() <= theta {
            return RowState::Zeroed;
        }
        // g(k) = S_k - k·a_{k+1} is nondecreasing; smallest k with g(k) >= θ.
        let (mut lo, mut hi) = (1usize, q);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.prefix[mid] - mid as f64 * self.next_value(mid) >= theta {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        RowState::Clipped(lo)
    }

    fn level(&self, state: RowState, theta: f64) -> f64 {
        match state {
            RowState::Zeroed => 0.0,
            RowState::Clipped(k) => ((self.prefix[k] - theta) / k as f64).max(0.0),
        }
    }
}

/// Euclidean projection onto `{C : Σ_i max_j |C_ij| <= τ}`.
///
/// Each row is clipped at its own level `t_i`, where the clipped L1 mass
/// `Σ_j (|c_ij| - t_i)_+` equals a shared multiplier θ. θ is located by
/// bisection on the active structure and then solved exactly from the
/// piecewise-linear level equation.
pub fn project_l1inf_ball(c: ArrayView2<f64>, tau: f64) -> Result<Array2<f64>> {
    project_l1inf_ball_with_stats(c, tau).map(|(out, _)| out)
}

/// Work done by one L1,∞ projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BallStats {
    /// Bisection probes on the multiplier.
    pub probes: usize,
    /// Per-row state evaluations (each a binary search over the row).
    pub row_evaluations: usize,
}

pub fn project_l1inf_ball_with_stats(
    c: ArrayView2<f64>,
    tau: f64,
) -> Result<(Array2<f64>, BallStats)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::config(
            "tau",
            format!("ball radius must be positive, got {tau}"),
        ));
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("project_l1inf_ball", "non-finite input"));
    }
    if l1inf_norm(c) <= tau {
        return Ok((c.to_owned(), BallStats::default()));
    }
    let profiles: Vec<RowProfile> = c.axis_iter(Axis(0)).map(RowProfile::new).collect();
    let mut stats = BallStats::default();
    let theta = solve_multiplier(&profiles, tau, &mut stats);

    let mut out = c.to_owned();
    for (mut row, prof) in out.axis_iter_mut(Axis(0)).zip(&profiles) {
        let t = prof.level(prof.state(theta), theta);
        row.mapv_inplace(|x| x.signum() * x.abs().min(t));
    }
    Ok((out, stats))
}

fn solve_multiplier(profiles: &[RowProfile], tau: f64, stats: &mut BallStats) -> f64 {
    let rows = profiles.len();
    let evaluations = std::cell::Cell::new(0usize);
    let total_level = |theta: f64| -> f64 {
        evaluations.set(evaluations.get() + rows);
        profiles
            .iter()
            .map(|p| p.level(p.state(theta), theta))
            .sum()
    };
    // Given a fixed active structure, Σ_i (S_{k_i} - θ)/k_i = τ is linear in θ.
    let exact_for = |theta: f64| -> Option<f64> {
        evaluations.set(evaluations.get() + 2 * rows);
        let states: Vec<RowState> = profiles.iter().map(|p| p.state(theta)).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for (p, s) in profiles.iter().zip(&states) {
            if let RowState::Clipped(k) = *s {
                num += p.prefix[k] / k as f64;
                den += 1.0 / k as f64;
            }
        }
        if den == 0.0 {
            return None;
        }
        let cand = ((num - tau) / den).max(0.0);
        let consistent = profiles
            .iter()
            .zip(&states)
            .all(|(p, s)| p.state(cand) == *s);
        consistent.then_some(cand)
    };

    let mut lo = 0.0_f64;
    let mut hi = profiles.iter().map(RowProfile::total).fold(0.0, f64::max);
    let mut result = None;
    for _ in 0..200 {
        stats.probes += 1;
        let mid = 0.5 * (lo + hi);
        if let Some(theta) = exact_for(mid) {
            result = Some(theta);
            break;
        }
        if total_level(mid) > tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    let theta = result
        .or_else(|| exact_for(lo))
        .or_else(|| exact_for(hi))
        .unwrap_or(0.5 * (lo + hi));
    stats.row_evaluations = evaluations.get();
    theta
}

/// Proximal operator of `threshold·‖·‖_{2,1}` applied column by column.
pub fn prox_l21_columns(b: ArrayView2<f64>, threshold: f64) -> Array2<f64> {
    let mut e = b.to_owned();
    for mut col in e.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm >= threshold && norm > 0.0 {
            let scale = 1.0 - threshold / norm;
            col.mapv_inplace(|x| x * scale);
        } else {
            col.fill(0.0);
        }
    }
    e
}

/// Orthogonal Procrustes: the `G` with orthonormal columns maximizing
/// `tr(GᵀN)`, i.e. `G = UVᵀ` from the thin SVD of `N`.
pub fn procrustes(n: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = n.dim();
    if rows < cols {
        return Err(Error::Shape(format!(
            "procrustes needs rows >= cols, got {rows}x{cols}"
        )));
    }
    let (u, _, v) = thin_svd(n)?;
    Ok(u.dot(&v.t()))
}

pub fn clamp_nonneg(j: ArrayView2<f64>) -> Array2<f64> {
    let mut h = Array2::zeros(j.raw_dim());
    Zip::from(&mut h).and(&j).for_each(|h, &x| *h = x.max(0.0));
    h
}
