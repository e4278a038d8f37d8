//! f-SMRMF: the Frobenius-relaxed encoding step solved column by column
//! with incremental water-filling.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::config::{Algorithm, SolverConfig};
use crate::error::{Error, Result};
use crate::proximal::{project_columns_simplex, project_l1inf_ball_with_stats};
use crate::solver::{solve_with_trace, SolveResult};

/// Scratch space for one column solve of
/// `min dᵀz + (δ/2)‖z‖²  s.t.  1ᵀz = 1, z ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct ColumnQpWorkspace {
    pub d: Vec<f64>,
    pub z: Vec<f64>,
    /// Mass still to be distributed.
    pub s: f64,
    /// Indices raised so far, in order of activation.
    pub active_set: Vec<usize>,
    /// Current water level in cost units.
    pub level: f64,
    /// Cost assigned to extracted indices; exceeds every real cost.
    pub sentinel: f64,
    /// Water-filling rounds performed by the last solve.
    pub iterations: usize,
    heap: BinaryHeap<Reverse<(Cost, usize)>>,
}

/// Totally ordered cost for heap extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost(f64);

impl Eq for Cost {}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cost {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl ColumnQpWorkspace {
    pub fn new(n: usize) -> Self {
        ColumnQpWorkspace {
            d: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            active_set: Vec::with_capacity(n),
            heap: BinaryHeap::with_capacity(n),
            ..Default::default()
        }
    }

    /// Solves one column and leaves the minimizer in `self.z`.
    ///
    /// Costs are extracted in ascending order (ties by index) from a binary
    /// heap, so only the coordinates that end up active are ever ordered. Each round lifts
    /// every active coordinate up to the next cost; when the remaining mass
    /// cannot reach it, the rest is shared equally and the level stops.
    pub fn solve(&mut self, d: ArrayView1<f64>, delta: f64) -> Result<()> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::config(
                "fast_delta",
                format!("must be > 0, got {delta}"),
            ));
        }
        let n = d.len();
        if n == 0 {
            return Err(Error::Shape("cannot solve an empty column".into()));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("solve_column_qp", "non-finite cost"));
        }
        self.d.clear();
        self.d.extend(d.iter().copied());
        self.z.clear();
        self.z.resize(n, 0.0);
        self.active_set.clear();
        self.sentinel = 1.0 + self.d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.s = 1.0;
        self.iterations = 0;
        // min-heap of (cost, index); extraction order breaks ties by index
        self.heap.clear();
        self.heap.extend(
            self.d
                .iter()
                .enumerate()
                .map(|(i, &c)| Reverse((Cost(c), i))),
        );

        let Reverse((Cost(l0), first)) = self.heap.pop().expect("column is nonempty");
        self.level = l0;
        self.d[first] = self.sentinel;
        self.active_set.push(first);

        while let Some(&Reverse((Cost(l1), next))) = self.heap.peek() {
            let w = (l1 - self.level) / delta;
            let need = w * self.active_set.len() as f64;
            self.iterations += 1;
            if need >= self.s {
                break;
            }
            for &i in &self.active_set {
                self.z[i] += w;
            }
            self.heap.pop();
            self.s -= need;
            self.level = l1;
            self.d[next] = self.sentinel;
            self.active_set.push(next);
        }
        let share = self.s / self.active_set.len() as f64;
        for &i in &self.active_set {
            self.z[i] += share;
        }
        self.level += share * delta;
        self.s = 0.0;
        Ok(())
    }
}

/// Minimizer of `d̂ᵀz + (δ/2)‖z‖²` over the probability simplex.
pub fn solve_column_qp(d_hat: ArrayView1<f64>, delta: f64) -> Result<Array1<f64>> {
    let mut ws = ColumnQpWorkspace::new(d_hat.len());
    ws.solve(d_hat, delta)?;
    Ok(Array1::from(ws.z))
}

/// Column-wise relaxed encoding step; columns are solved independently.
#[allow(non_snake_case)]
pub fn update_Z_fast(d_hat: ArrayView2<f64>, delta: f64) -> Result<Array2<f64>> {
    update_z_fast_counted(d_hat, delta).map(|(z, _)| z)
}

/// Same as [`update_Z_fast`], also returning the number of water-filling
/// rounds summed over columns.
pub fn update_z_fast_counted(d_hat: ArrayView2<f64>, delta: f64) -> Result<(Array2<f64>, usize)> {
    let n = d_hat.nrows();
    let cols: Vec<(Vec<f64>, usize)> = (0..d_hat.ncols())
        .into_par_iter()
        .map_init(
            || ColumnQpWorkspace::new(n),
            |ws, j| {
                ws.solve(d_hat.column(j), delta)?;
                Ok((ws.z.clone(), ws.iterations))
            },
        )
        .collect::<Result<_>>()?;
    let mut z = Array2::zeros(d_hat.raw_dim());
    let mut rounds = 0;
    for (j, (col, it)) in cols.into_iter().enumerate() {
        z.column_mut(j).assign(&Array1::from(col));
        rounds += it;
    }
    Ok((z, rounds))
}

/// Abstract operation counts of one encoding step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCost {
    /// Comparisons spent ordering entries (sorts, heap builds and pops).
    pub sorting: usize,
    /// Scalar updates and per-row searches outside the sorts.
    pub updates: usize,
}

impl StepCost {
    pub fn total(&self) -> usize {
        self.sorting + self.updates
    }
}

fn sort_cost(len: usize) -> usize {
    let log = usize::BITS - len.max(1).leading_zeros();
    len * log as usize
}

/// Cost of the relaxed step on `d_hat`.
pub fn fast_step_cost(d_hat: ArrayView2<f64>, delta: f64) -> Result<StepCost> {
    let (n, cols) = d_hat.dim();
    let (_, rounds) = update_z_fast_counted(d_hat, delta)?;
    let log = sort_cost(n) / n.max(1);
    Ok(StepCost {
        sorting: cols * n + rounds * log,
        updates: rounds + cols * n,
    })
}

/// Cost of the constrained step: column simplex projections of `target_z`
/// followed by the L1,∞-ball projection of `target_c`.
pub fn constrained_step_cost(
    target_z: ArrayView2<f64>,
    target_c: ArrayView2<f64>,
    tau: f64,
) -> Result<StepCost> {
    let (n, cols) = target_z.dim();
    project_columns_simplex(target_z)?;
    let (_, stats) = project_l1inf_ball_with_stats(target_c, tau)?;
    let rows = target_c.nrows();
    let row_len = target_c.ncols();
    let search = sort_cost(row_len) / row_len.max(1);
    Ok(StepCost {
        sorting: cols * sort_cost(n) + rows * sort_cost(row_len),
        updates: 2 * cols * n + stats.row_evaluations * search + rows * row_len,
    })
}

/// Runs the solver loop with the relaxed encoding step.
pub fn solve_fast(x: ArrayView2<f64>, cfg: &SolverConfig) -> Result<SolveResult> {
    let mut cfg = cfg.clone();
    cfg.algorithm = Algorithm::FSmrmf;
    solve_with_trace(x, &cfg).map_err(|f| f.error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proximal::project_simplex;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_examples() {
        let z = solve_column_qp(array![0.0, 0.0, 0.0].view(), 1.0).unwrap();
        for v in z.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = solve_column_qp(array![0.0, 10.0].view(), 1.0).unwrap();
        assert_eq!(z, array![1.0, 0.0]);
        assert!(matches!(
            solve_column_qp(array![1.0].view(), 0.0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn matches_simplex_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let n = rng.random_range(1..=50);
            let delta = [0.01, 1.0, 10.0][rng.random_range(0..3)];
            let d = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
            let z = solve_column_qp(d.view(), delta).unwrap();
            let oracle = project_simplex((-&d / delta).view()).unwrap();
            let err = (&z - &oracle).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-8, "n={n} delta={delta} err={err}");
        }
    }

    #[test]
    fn kkt_per_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d_hat = Array2::from_shape_fn((30, 30), |_| rng.random_range(-1.0..1.0));
        let delta = 0.5;
        let z = update_Z_fast(d_hat.view(), delta).unwrap();
        for j in 0..30 {
            let col = z.column(j);
            assert!((col.sum() - 1.0).abs() < 1e-12);
            let active: Vec<usize> = (0..30).filter(|&i| col[i] > 0.0).collect();
            let level = d_hat[[active[0], j]] + delta * col[active[0]];
            for &i in &active {
                assert!((d_hat[[i, j]] + delta * col[i] - level).abs() < 1e-8);
            }
            for i in (0..30).filter(|i| !active.contains(i)) {
                assert!(d_hat[[i, j]] >= level - 1e-8);
            }
        }
    }

    #[test]
    fn zero_costs_give_uniform() {
        let z = update_Z_fast(Array2::zeros((4, 4)).view(), 1.0).unwrap();
        assert!(z.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dominant_entry_gives_one_hot() {
        let mut d_hat = Array2::from_elem((5, 5), 1.0);
        for j in 0..5 {
            d_hat[[(j + 1) % 5, j]] = -1.0;
        }
        let z = update_Z_fast(d_hat.view(), 0.1).unwrap();
        for j in 0..5 {
            assert_eq!(z[[(j + 1) % 5, j]], 1.0);
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d_hat = Array2::from_shape_fn((40, 40), |_| rng.random::<f64>());
        let par = update_Z_fast(d_hat.view(), 0.3).unwrap();
        let mut serial = Array2::zeros((40, 40));
        for j in 0..40 {
            serial
                .column_mut(j)
                .assign(&solve_column_qp(d_hat.column(j), 0.3).unwrap());
        }
        assert_eq!(par, serial);
    }

    #[test]
    fn workspace_invariants() {
        let mut ws = ColumnQpWorkspace::new(6);
        ws.solve(array![0.3, 0.1, 0.2, 5.0, 0.1, 0.4].view(), 1.0)
            .unwrap();
        assert_eq!(ws.active_set[..2], [1, 4]);
        assert!(ws.s >= -1e-12);
        assert!(ws.sentinel > 5.0);
        assert!(!ws.active_set.contains(&3));
    }

    #[test]
    fn relaxed_step_is_cheaper() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for &n in &[50usize, 200] {
            let d_hat = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..0.0));
            let fast = fast_step_cost(d_hat.view(), 1.0).unwrap();
            let z = project_columns_simplex((-&d_hat).view()).unwrap();
            let full = constrained_step_cost((-&d_hat).view(), z.view(), 0.1 * n as f64).unwrap();
            assert!(fast.total() < full.total(), "n={n}: {fast:?} vs {full:?}");
        }
    }
}
