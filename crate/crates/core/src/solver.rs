//! Augmented Lagrangian solver for SMRMF and its variants.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, MaskSpace, SolverConfig};
use crate::ds3::{a2dm2_init_with, A2dm2Options};
use crate::error::{Error, Result};
use crate::eval::cluster_labels;
use crate::fast::update_Z_fast;
use crate::graph::{
    apply_mask, heat_affinity_from_sq_dist, knn_sets, masked_neighbors, select_exemplars,
    AffinityGraph, AFFINITY_FLOOR,
};
use crate::kernels::{combine_dissimilarity, latent_dissimilarity, pairwise_sq_dist, InputKernel};
use crate::linalg::{ensure_finite, frobenius, l21_norm, max_abs, spd_inverse};
use crate::nmf::{nmf_multiplicative, nndsvd_init, NndsvdFill};
use crate::proximal::{
    clamp_nonneg, procrustes, project_columns_simplex, project_l1inf_ball, prox_l21_columns,
};

/// Penalty above which the solver gives up.
pub const MU_LIMIT: f64 = 1e30;

/// Primal and auxiliary iterates of the augmented Lagrangian.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub e: Array2<f64>,
    pub h: Array2<f64>,
    pub z: Array2<f64>,
    pub c: Array2<f64>,
    pub lambda1: Array2<f64>,
    pub lambda2: Array2<f64>,
    pub lambda3: Array2<f64>,
    pub mu: f64,
    pub iteration: usize,
}

/// Constraint residuals of one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// ‖X − FGᵀ − E‖_F
    pub reconstruction: f64,
    /// ‖G − H‖_F
    pub factor: f64,
    /// ‖Z − C‖_F
    pub encoding: f64,
}

/// Summary of the exemplar initializer run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSummary {
    pub iterations: usize,
    pub restarts: usize,
    pub gap: f64,
    pub warning: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub algorithm: Algorithm,
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    /// Encoding matrix; absent for variants without one.
    pub z: Option<Array2<f64>>,
    pub c: Option<Array2<f64>>,
    pub exemplar_indices: Vec<usize>,
    pub objective_trace: Vec<f64>,
    /// One entry per iteration; empty for plain NMF.
    pub residual_trace: Vec<Residuals>,
    pub iterations: usize,
    pub converged: bool,
    pub mu: f64,
    /// Graph used by the manifold term at the final iterate.
    pub graph: Option<AffinityGraph>,
    pub init: Option<InitSummary>,
    /// Iteration at which Z and C stopped changing and were frozen.
    pub frozen_at: Option<usize>,
}

impl SolveResult {
    pub fn labels(&self) -> Vec<usize> {
        cluster_labels(self.g.view())
    }
}

/// Iterations completed before a failure.
#[derive(Debug, Clone, Default)]
pub struct PartialTrace {
    pub objective_trace: Vec<f64>,
    pub residual_trace: Vec<Residuals>,
    pub iterations: usize,
}

#[derive(Debug)]
pub struct SolveFailure {
    pub error: Error,
    pub trace: PartialTrace,
}

impl From<Error> for SolveFailure {
    fn from(error: Error) -> Self {
        SolveFailure {
            error,
            trace: PartialTrace::default(),
        }
    }
}

impl SolverState {
    /// E = prox_{‖·‖₂,₁/μ}(X − FGᵀ + Λ1/μ).
    #[allow(non_snake_case)]
    pub fn update_E(&mut self, x: ArrayView2<f64>) -> Result<()> {
        let b = &x - &self.f.dot(&self.g.t()) + &self.lambda1 / self.mu;
        self.e = prox_l21_columns(b.view(), 1.0 / self.mu);
        ensure_finite(self.e.view(), "update_E")
    }

    /// F = (X − E + Λ1/μ) G (GᵀG)⁻¹.
    #[allow(non_snake_case)]
    pub fn update_F(&mut self, x: ArrayView2<f64>) -> Result<()> {
        let target = &x - &self.e + &self.lambda1 / self.mu;
        let gram_inv = spd_inverse(self.g.t().dot(&self.g).view())?;
        self.f = target.dot(&self.g).dot(&gram_inv);
        ensure_finite(self.f.view(), "update_F")
    }

    /// H = max(G + Λ2/μ − (λ/μ) L G, 0).
    #[allow(non_snake_case)]
    pub fn update_H(&mut self, laplacian: ArrayView2<f64>, lambda: f64) -> Result<()> {
        let j =
            &self.g + &(&self.lambda2 / self.mu) - &(laplacian.dot(&self.g) * (lambda / self.mu));
        self.h = clamp_nonneg(j.view());
        ensure_finite(self.h.view(), "update_H")
    }

    /// G = UVᵀ for N = H − Λ2/μ − (λ/μ) L H + (X − E + Λ1/μ)ᵀ F.
    #[allow(non_snake_case)]
    pub fn update_G(
        &mut self,
        x: ArrayView2<f64>,
        laplacian: ArrayView2<f64>,
        lambda: f64,
    ) -> Result<()> {
        let n_mat = self.g_target(x, laplacian, lambda);
        ensure_finite(n_mat.view(), "update_G")?;
        self.g = procrustes(n_mat.view()).map_err(|e| Error::numeric("update_G", e.to_string()))?;
        Ok(())
    }

    /// The matrix whose Procrustes factor is the G update.
    pub fn g_target(
        &self,
        x: ArrayView2<f64>,
        laplacian: ArrayView2<f64>,
        lambda: f64,
    ) -> Array2<f64> {
        let inv = 1.0 / self.mu;
        let b = &x - &self.e + &(&self.lambda1 * inv);
        &self.h - &(&self.lambda2 * inv) - &(laplacian.dot(&self.h) * (lambda * inv))
            + &b.t().dot(&self.f)
    }

    /// Z = column-wise simplex projection of C − Λ3/μ − (β/μ) D̂.
    #[allow(non_snake_case)]
    pub fn update_Z(&mut self, d_hat: ArrayView2<f64>, beta: f64) -> Result<()> {
        let target = &self.c - &(&self.lambda3 / self.mu) - &(&d_hat * (beta / self.mu));
        self.z = project_columns_simplex(target.view())
            .map_err(|e| Error::numeric("update_Z", e.to_string()))?;
        Ok(())
    }

    /// C = projection of Z + Λ3/μ onto the ball ‖C‖_{1,∞} ≤ τ.
    #[allow(non_snake_case)]
    pub fn update_C(&mut self, tau: f64) -> Result<()> {
        let target = &self.z + &(&self.lambda3 / self.mu);
        self.c = project_l1inf_ball(target.view(), tau)?;
        ensure_finite(self.c.view(), "update_C")
    }

    pub fn residuals(&self, x: ArrayView2<f64>) -> Residuals {
        Residuals {
            reconstruction: frobenius((&x - &self.f.dot(&self.g.t()) - &self.e).view()),
            factor: frobenius((&self.g - &self.h).view()),
            encoding: frobenius((&self.z - &self.c).view()),
        }
    }

    /// Multiplier ascent followed by `μ ← ρμ`. Returns the residuals used.
    pub fn update_multipliers(
        &mut self,
        x: ArrayView2<f64>,
        rho: f64,
        with_encoding: bool,
    ) -> Result<Residuals> {
        let mu = self.mu;
        let r1 = &x - &self.f.dot(&self.g.t()) - &self.e;
        self.lambda1.scaled_add(mu, &r1);
        let r2 = &self.g - &self.h;
        self.lambda2.scaled_add(mu, &r2);
        let mut res = Residuals {
            reconstruction: frobenius(r1.view()),
            factor: frobenius(r2.view()),
            encoding: 0.0,
        };
        if with_encoding {
            let r3 = &self.z - &self.c;
            self.lambda3.scaled_add(mu, &r3);
            res.encoding = frobenius(r3.view());
        }
        let next = mu * rho;
        if !next.is_finite() || next > MU_LIMIT {
            return Err(Error::numeric(
                "update_multipliers",
                format!("penalty μ exceeded {MU_LIMIT:e}; use a smaller rho or max_iter"),
            ));
        }
        self.mu = next;
        Ok(res)
    }
}

/// Terms of the unified objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub reconstruction: f64,
    pub manifold: f64,
    pub encoding: f64,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.manifold + self.encoding
    }
}

/// `‖X − FGᵀ‖₂,₁ + λ tr(GᵀLG) + β tr(DᵀZ)`; the encoding term is skipped
/// when `z` is absent.
pub fn objective_value(
    x: ArrayView2<f64>,
    f: ArrayView2<f64>,
    g: ArrayView2<f64>,
    laplacian: ArrayView2<f64>,
    lambda: f64,
    encoding: Option<(ArrayView2<f64>, ArrayView2<f64>, f64)>,
) -> Objective {
    let reconstruction = l21_norm((&x - &f.dot(&g.t())).view());
    let manifold = lambda * (&g * &laplacian.dot(&g)).sum();
    let encoding = encoding.map_or(0.0, |(d, z, beta)| {
        beta * Zip::from(d).and(z).fold(0.0, |acc, &a, &b| acc + a * b)
    });
    Objective {
        reconstruction,
        manifold,
        encoding,
    }
}

/// Relative objective change guarded against a vanishing denominator.
pub fn relative_change(prev: f64, current: f64) -> f64 {
    (current - prev).abs() / prev.abs().max(1e-12)
}

/// How the encoding matrix is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EncodingStep {
    /// No encoding matrix; fixed input-space graph.
    None,
    /// Simplex step plus L1,∞-ball copy and its multiplier.
    Constrained,
    /// Projected gradient step on Z alone; C tracks Z.
    Unconstrained,
    /// Closed-form relaxed step.
    Relaxed,
}

struct Problem<'a> {
    x: ArrayView2<'a, f64>,
    cfg: &'a SolverConfig,
    n: usize,
    tau: usize,
    k: usize,
    step: EncodingStep,
    input: InputKernel,
    input_knn: Option<Vec<Vec<usize>>>,
}

impl<'a> Problem<'a> {
    fn new(x: ArrayView2<'a, f64>, cfg: &'a SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let (m, n) = x.dim();
        if cfg.rank > m.min(n) {
            return Err(Error::config(
                "rank",
                format!("rank {} exceeds min(m, n) = {}", cfg.rank, m.min(n)),
            ));
        }
        ensure_finite(x, "input")?;
        let k = cfg.k(n);
        let step = match cfg.algorithm {
            Algorithm::Rmnmf | Algorithm::Nmf => EncodingStep::None,
            Algorithm::Smrmf | Algorithm::SmrmfEuc => EncodingStep::Constrained,
            Algorithm::SmrmfNs => EncodingStep::Unconstrained,
            Algorithm::FSmrmf => EncodingStep::Relaxed,
        };
        let input = InputKernel::new(x, k, cfg.bandwidth_mode)?;
        let input_knn = (cfg.mask_space == MaskSpace::Input)
            .then(|| knn_sets(input.d2.view(), k))
            .transpose()?;
        Ok(Problem {
            x,
            cfg,
            n,
            tau: cfg.tau(n),
            k,
            step,
            input,
            input_knn,
        })
    }

    /// Learned graph at the current Z and the exemplars it was built from.
    fn learned_graph(&self, z: ArrayView2<f64>) -> Result<(AffinityGraph, Vec<usize>)> {
        if self.step == EncodingStep::Unconstrained {
            let mut w = z.to_owned();
            w.diag_mut().fill(0.0);
            let all: Vec<usize> = (0..self.n).collect();
            let lists = masked_neighbors(z, &all, self.k)?;
            return Ok((AffinityGraph::new(w, lists)?, Vec::new()));
        }
        let exemplars = select_exemplars(z, self.tau)?;
        let lists = match &self.input_knn {
            Some(knn) => {
                let mut lists = vec![Vec::new(); self.n];
                for &i in &exemplars {
                    lists[i] = knn[i]
                        .iter()
                        .copied()
                        .filter(|&j| z[[i, j]] > AFFINITY_FLOOR)
                        .collect();
                }
                lists
            }
            None => masked_neighbors(z, &exemplars, self.k)?,
        };
        let w = apply_mask(z, &lists);
        Ok((AffinityGraph::new(w, lists)?, exemplars))
    }

    /// Combined dissimilarity driving the encoding step.
    fn d_hat(&self, g: ArrayView2<f64>, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cfg = self.cfg;
        if cfg.algorithm == Algorithm::SmrmfEuc {
            let latent = pairwise_sq_dist(g.t(), h.t())?.mapv(f64::sqrt);
            return combine_dissimilarity(self.input.d.view(), latent.view(), cfg.lambda, cfg.beta);
        }
        let (d_k_hg, _) =
            latent_dissimilarity(g, h, self.k, cfg.bandwidth_mode, cfg.pooled_gamma())?;
        combine_dissimilarity(self.input.d_k.view(), d_k_hg.view(), cfg.lambda, cfg.beta)
    }
}

/// Runs the configured algorithm on a preprocessed `m×n` matrix.
pub fn solve(x: ArrayView2<f64>, cfg: &SolverConfig) -> Result<SolveResult> {
    solve_with_trace(x, cfg).map_err(|f| f.error)
}

/// Like [`solve`], but a failure carries the iterations completed so far.
pub fn solve_with_trace(
    x: ArrayView2<f64>,
    cfg: &SolverConfig,
) -> std::result::Result<SolveResult, SolveFailure> {
    if cfg.algorithm == Algorithm::Nmf {
        return solve_nmf(x, cfg).map_err(SolveFailure::from);
    }
    let problem = Problem::new(x, cfg)?;
    let mut trace = PartialTrace::default();
    match run(&problem, &mut trace) {
        Ok(result) => Ok(result),
        Err(error) => Err(SolveFailure { error, trace }),
    }
}

fn solve_nmf(x: ArrayView2<f64>, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let out = nmf_multiplicative(x, cfg.rank, cfg.max_iter, cfg.tol)?;
    let iterations = out.loss_trace.len();
    Ok(SolveResult {
        algorithm: Algorithm::Nmf,
        f: out.factors.f,
        g: out.factors.g,
        z: None,
        c: None,
        exemplar_indices: Vec::new(),
        objective_trace: out.loss_trace,
        residual_trace: Vec::new(),
        iterations,
        converged: out.converged,
        mu: 0.0,
        graph: None,
        init: None,
        frozen_at: None,
    })
}

fn initial_state(p: &Problem) -> Result<(SolverState, Option<InitSummary>)> {
    let (m, n) = p.x.dim();
    let c = p.cfg.rank;
    let factors = nndsvd_init(p.x, c, NndsvdFill::Zeros)?;
    let mut state = SolverState {
        h: factors.g.clone(),
        f: factors.f,
        g: factors.g,
        e: Array2::zeros((m, n)),
        z: Array2::zeros((0, 0)),
        c: Array2::zeros((0, 0)),
        lambda1: Array2::zeros((m, n)),
        lambda2: Array2::zeros((n, c)),
        lambda3: Array2::zeros((0, 0)),
        mu: p.cfg.mu0,
        iteration: 0,
    };
    let mut summary = None;
    match p.step {
        EncodingStep::None => {}
        EncodingStep::Relaxed => {
            let d_hat = p.d_hat(state.g.view(), state.h.view())?;
            state.z = update_Z_fast(d_hat.view(), p.cfg.fast_delta)?;
            state.c = state.z.clone();
        }
        EncodingStep::Constrained | EncodingStep::Unconstrained => {
            let opts = A2dm2Options {
                mu0: p.cfg.mu0,
                rho: p.cfg.rho,
                max_iter: p.cfg.init_max_iter,
                tol: 1e-5,
                chat_step: p.cfg.chat_step,
            };
            let out = a2dm2_init_with(p.input.d.view(), p.tau, p.cfg.delta, opts)?;
            summary = Some(InitSummary {
                iterations: out.iterations,
                restarts: out.restarts,
                gap: out.gap,
                warning: out.warning,
            });
            state.c = if p.step == EncodingStep::Constrained {
                out.c
            } else {
                out.z.clone()
            };
            state.z = out.z;
            state.lambda3 = Array2::zeros((n, n));
        }
    }
    Ok((state, summary))
}

fn run(p: &Problem, trace: &mut PartialTrace) -> Result<SolveResult> {
    let cfg = p.cfg;
    let (mut st, init) = initial_state(p)?;
    let fixed_graph = match p.step {
        EncodingStep::None => Some(heat_affinity_from_sq_dist(p.input.d2.view(), p.k)?),
        _ => None,
    };
    let x_norm = frobenius(p.x).max(1e-12);
    let tau = p.tau as f64;
    let freeze_enabled = p.n >= cfg.early_term_min_n
        && matches!(
            p.step,
            EncodingStep::Constrained | EncodingStep::Unconstrained
        );
    let mut frozen_at = None;
    let mut converged = false;
    let mut exemplars = Vec::new();
    let mut prev_j: Option<f64> = None;

    while st.iteration < cfg.max_iter {
        st.iteration += 1;
        let learned = match &fixed_graph {
            Some(_) => None,
            None => Some(p.learned_graph(st.z.view())?),
        };
        let graph = match (&fixed_graph, &learned) {
            (Some(g), _) => g,
            (None, Some((g, ex))) => {
                exemplars.clone_from(ex);
                g
            }
            _ => unreachable!(),
        };
        let lap = graph.laplacian.view();

        st.update_E(p.x)?;
        st.update_F(p.x)?;
        st.update_H(lap, cfg.lambda)?;
        st.update_G(p.x, lap, cfg.lambda)?;

        if p.step != EncodingStep::None && frozen_at.is_none() {
            let d_hat = p.d_hat(st.g.view(), st.h.view())?;
            ensure_finite(d_hat.view(), "update_Z")?;
            let (z_old, c_old) = (st.z.clone(), st.c.clone());
            match p.step {
                EncodingStep::Constrained => {
                    st.update_Z(d_hat.view(), cfg.beta)?;
                    st.update_C(tau)?;
                }
                EncodingStep::Unconstrained => {
                    st.c.assign(&st.z);
                    st.update_Z(d_hat.view(), cfg.beta)?;
                    st.c.assign(&st.z);
                }
                EncodingStep::Relaxed => {
                    st.z = update_Z_fast(d_hat.view(), cfg.fast_delta)?;
                    st.c.assign(&st.z);
                }
                EncodingStep::None => unreachable!(),
            }
            if freeze_enabled {
                let dz = max_abs((&st.z - &z_old).view());
                let dc = max_abs((&st.c - &c_old).view());
                let gap = max_abs((&st.z - &st.c).view());
                let thr = cfg.early_term_threshold;
                if dz <= thr && dc <= thr && gap <= thr {
                    frozen_at = Some(st.iteration);
                    log::info!("encoding frozen at iteration {}", st.iteration);
                }
            }
        }

        let encoding =
            (p.step != EncodingStep::None).then(|| (p.input.d.view(), st.z.view(), cfg.beta));
        let j = objective_value(p.x, st.f.view(), st.g.view(), lap, cfg.lambda, encoding).total();
        if !j.is_finite() {
            return Err(Error::numeric("objective_value", "objective is not finite"));
        }
        let with_encoding = p.step == EncodingStep::Constrained && frozen_at.is_none();
        let mut res = st.residuals(p.x);
        if p.step != EncodingStep::Constrained {
            res.encoding = 0.0;
        }
        trace.objective_trace.push(j);
        trace.residual_trace.push(res);
        trace.iterations = st.iteration;

        let feasible = res.reconstruction / x_norm < cfg.feasibility_tol
            && res.factor < cfg.feasibility_tol
            && res.encoding < cfg.feasibility_tol;
        let stalled = prev_j.is_some_and(|prev| relative_change(prev, j) < cfg.tol);
        prev_j = Some(j);
        if stalled && feasible {
            converged = true;
            break;
        }
        if st.iteration < cfg.max_iter {
            st.update_multipliers(p.x, cfg.rho, with_encoding)?;
        }
    }

    let (z, c, graph) = match p.step {
        EncodingStep::None => (None, None, fixed_graph),
        _ => {
            let (graph, ex) = p.learned_graph(st.z.view())?;
            exemplars = ex;
            let c = (p.step == EncodingStep::Constrained).then(|| st.c.clone());
            (Some(st.z), c, Some(graph))
        }
    };
    Ok(SolveResult {
        algorithm: cfg.algorithm,
        f: st.f,
        g: st.g,
        z,
        c,
        exemplar_indices: exemplars,
        objective_trace: std::mem::take(&mut trace.objective_trace),
        residual_trace: std::mem::take(&mut trace.residual_trace),
        iterations: st.iteration,
        converged,
        mu: st.mu,
        graph,
        init,
        frozen_at,
    })
}
