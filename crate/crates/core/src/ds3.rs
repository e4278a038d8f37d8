//! Dissimilarity-based exemplar selection: encoding cost and the
//! accelerated ADMM initializer for the encoding matrix Z.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use crate::config::CHatStep;
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, frobenius, max_abs};
use crate::proximal::{project_columns_simplex, project_l1inf_ball};

/// Encoding cost `tr(DᵀZ) = Σ_ij d_ij z_ij`.
pub fn ds3_objective(d: ArrayView2<f64>, z: ArrayView2<f64>) -> f64 {
    Zip::from(d).and(z).fold(0.0, |acc, &a, &b| acc + a * b)
}

/// Single-exemplar encoding: the row of the point with the smallest total
/// distance is all ones (ties to the lowest index), every other row is zero.
#[allow(non_snake_case)]
pub fn init_C(d: ArrayView2<f64>) -> Array2<f64> {
    let n = d.nrows();
    let sums = d.sum_axis(Axis(1));
    let mut best = 0;
    for i in 1..n {
        if sums[i] < sums[best] {
            best = i;
        }
    }
    let mut c = Array2::zeros((n, n));
    c.row_mut(best).fill(1.0);
    c
}

/// Iterates of the accelerated ADMM.
#[derive(Debug, Clone)]
pub struct A2dm2State {
    pub z: Array2<f64>,
    pub c: Array2<f64>,
    pub c_hat: Array2<f64>,
    pub lambda: Array2<f64>,
    pub lambda_hat: Array2<f64>,
    pub a_t: f64,
    pub mu: f64,
    pub iteration: usize,
}

/// Knobs of the initializer.
#[derive(Debug, Clone, Copy)]
pub struct A2dm2Options {
    pub mu0: f64,
    pub rho: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub chat_step: CHatStep,
}

impl Default for A2dm2Options {
    fn default() -> Self {
        A2dm2Options {
            mu0: 0.1,
            rho: 1.05,
            max_iter: 1000,
            tol: 1e-5,
            chat_step: CHatStep::Momentum,
        }
    }
}

/// Output of [`a2dm2_init`].
#[derive(Debug, Clone)]
pub struct A2dm2Outcome {
    /// Simplex-feasible encoding.
    pub z: Array2<f64>,
    /// Ball-feasible copy of `z`.
    pub c: Array2<f64>,
    pub iterations: usize,
    pub restarts: usize,
    /// Final `‖Z − C‖_∞`.
    pub gap: f64,
    /// Set when the iteration budget ran out; `z`, `c` are then the iterate
    /// with the smallest gap.
    pub warning: bool,
}

/// Solves `min tr(DᵀZ) + δ/2‖Z‖² + δ/2‖C‖²` subject to simplex columns on Z,
/// `‖C‖_{1,∞} ≤ τ` and `Z = C` by accelerated ADMM with momentum restarts.
pub fn a2dm2_init(d: ArrayView2<f64>, tau: usize, delta: f64) -> Result<A2dm2Outcome> {
    a2dm2_init_with(d, tau, delta, A2dm2Options::default())
}

pub fn a2dm2_init_with(
    d: ArrayView2<f64>,
    tau: usize,
    delta: f64,
    opts: A2dm2Options,
) -> Result<A2dm2Outcome> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::Shape(format!(
            "dissimilarity must be square, got {:?}",
            d.dim()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::config("delta", format!("must be > 0, got {delta}")));
    }
    if tau == 0 {
        return Err(Error::config("tau", "exemplar count must be positive"));
    }
    ensure_finite(d, "a2dm2_init")?;
    let tau_f = tau as f64;
    let mut st = A2dm2State {
        z: Array2::zeros((n, n)),
        c: Array2::zeros((n, n)),
        c_hat: init_C(d),
        lambda: Array2::zeros((n, n)),
        lambda_hat: Array2::zeros((n, n)),
        a_t: 1.0,
        mu: opts.mu0,
        iteration: 0,
    };
    let mut lambda_prev;
    let mut c_prev = st.c_hat.clone();
    let mut last_residual = f64::INFINITY;
    let mut best: Option<(f64, Array2<f64>, Array2<f64>)> = None;
    let mut restarts = 0;

    while st.iteration < opts.max_iter {
        st.iteration += 1;
        let mu = st.mu;
        let scale = 1.0 / (mu + delta);

        let target = (&st.c_hat * mu - &st.lambda_hat - d) * scale;
        st.z = project_columns_simplex(target.view())?;

        let target = (&st.lambda_hat + &(&st.z * mu)) * scale;
        st.c = project_l1inf_ball(target.view(), tau_f)?;

        let diff = &st.z - &st.c;
        let gap = max_abs(diff.view());
        let new_lambda = &st.lambda_hat + &(&diff * mu);
        ensure_finite(new_lambda.view(), "a2dm2_init")?;

        if best.as_ref().is_none_or(|b| gap < b.0) {
            best = Some((gap, st.z.clone(), st.c.clone()));
        }
        if gap < opts.tol {
            return Ok(A2dm2Outcome {
                z: st.z,
                c: st.c,
                iterations: st.iteration,
                restarts,
                gap,
                warning: false,
            });
        }

        let dual = frobenius((&new_lambda - &st.lambda_hat).view());
        let primal = frobenius((&st.c - &st.c_hat).view());
        let residual = dual * dual / mu + mu * primal * primal;

        lambda_prev = std::mem::replace(&mut st.lambda, new_lambda);
        let restart = residual > last_residual;
        let w = if restart {
            restarts += 1;
            st.a_t = 1.0;
            0.0
        } else {
            let a_next = 0.5 * (1.0 + (1.0 + 4.0 * st.a_t * st.a_t).sqrt());
            let w = (st.a_t - 1.0) / a_next;
            st.a_t = a_next;
            w
        };
        last_residual = residual;
        st.lambda_hat = &st.lambda + &((&st.lambda - &lambda_prev) * w);

        st.c_hat = match opts.chat_step {
            CHatStep::Momentum => &st.c + &((&st.c - &c_prev) * w),
            CHatStep::Simplex => project_columns_simplex(((&st.lambda_hat - &d) / delta).view())?,
            CHatStep::Ball => project_l1inf_ball(((&st.lambda_hat - &d) / delta).view(), tau_f)?,
        };
        c_prev.assign(&st.c);
        st.mu *= opts.rho;
    }

    let (gap, z, c) = best.expect("at least one iteration ran");
    log::warn!(
        "exemplar initializer stopped after {} iterations with ‖Z−C‖∞ = {gap:.3e}",
        st.iteration
    );
    Ok(A2dm2Outcome {
        z,
        c,
        iterations: st.iteration,
        restarts,
        gap,
        warning: true,
    })
}
