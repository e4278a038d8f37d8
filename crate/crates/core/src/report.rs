//! Run orchestration and the JSON/CSV run reports.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Algorithm, SolverConfig};
use crate::data::{LabeledDataset, PreprocessOptions};
use crate::error::{Error, Result};
use crate::eval::{accuracy, neighborhood_diagnostics, nmi, DiagnosticsReport, GraphSource};
use crate::graph::{heat_affinity_from_sq_dist, AffinityGraph};
use crate::kernels::InputKernel;
use crate::solver::{solve_with_trace, InitSummary, Residuals, SolveResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Regularizer values swept by `--grid` for both λ and β.
pub const DEFAULT_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub n: usize,
    pub m: usize,
    pub c: Option<usize>,
    /// SHA-256 over the matrix values (little-endian, column-major by
    /// instance) followed by the labels.
    pub sha256: String,
}

pub fn fingerprint(ds: &LabeledDataset) -> DatasetFingerprint {
    let mut hasher = Sha256::new();
    for col in ds.x.columns() {
        for v in col {
            hasher.update(v.to_le_bytes());
        }
    }
    if let Some(labels) = &ds.labels {
        for &l in labels {
            hasher.update((l as u64).to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    DatasetFingerprint {
        n: ds.n_instances(),
        m: ds.n_features(),
        c: ds.n_classes(),
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    }
}

/// A weighted edge `(i, j, w)` of a graph.
pub type Triplet = (usize, usize, f64);

/// One λ/β cell of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    pub beta: f64,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub final_objective: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: SolverConfig,
    pub preprocessing: Option<PreprocessOptions>,
    pub dataset: DatasetFingerprint,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub nmi_normalization: String,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub residual_trace: Vec<Residuals>,
    pub exemplar_indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub init: Option<InitSummary>,
    pub frozen_at: Option<usize>,
    /// Nonzero weights of the final learned graph.
    pub learned_graph: Option<Vec<Triplet>>,
    pub diagnostics_before: Option<DiagnosticsReport>,
    pub diagnostics_after: Option<DiagnosticsReport>,
    pub wall_time_seconds: f64,
    /// Every cell when the run was a grid search; the report body describes
    /// the selected cell.
    pub grid: Option<Vec<GridCell>>,
    pub grid_criterion: Option<String>,
    /// Set when the solver failed; traces then hold the completed iterations.
    pub error: Option<String>,
}

impl RunReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("cannot serialize report: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let report: RunReport = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("cannot parse report {}: {e}", path.display())))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "report schema {} is not supported (expected {SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub const CSV_HEADER: &'static str = "algorithm,dataset_sha256,n,m,c,lambda,beta,tau_fraction,acc,nmi,iterations,converged,final_objective,wall_time_seconds";

    /// The flat metric row matching [`RunReport::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.config.algorithm.as_str(),
            self.dataset.sha256,
            self.dataset.n,
            self.dataset.m,
            self.dataset.c.map_or(String::new(), |c| c.to_string()),
            self.config.lambda,
            self.config.beta,
            self.config.tau_fraction,
            opt(self.acc),
            opt(self.nmi),
            self.iterations,
            self.converged,
            opt(self.objective_trace.last().copied()),
            self.wall_time_seconds,
        )
    }

    /// Appends the metric row, writing the header first for a new file.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        if fresh {
            writeln!(f, "{}", Self::CSV_HEADER)?;
        }
        writeln!(f, "{}", self.csv_row())?;
        Ok(())
    }

    /// Rebuilds the learned graph recorded in the report.
    pub fn learned_affinity(&self) -> Result<Option<AffinityGraph>> {
        let Some(triplets) = &self.learned_graph else {
            return Ok(None);
        };
        graph_from_triplets(self.dataset.n, triplets).map(Some)
    }
}

pub fn graph_triplets(graph: &AffinityGraph) -> Vec<Triplet> {
    let mut out = Vec::new();
    for (i, list) in graph.neighbors.iter().enumerate() {
        for &j in list {
            out.push((i, j, graph.weights[[i, j]]));
        }
    }
    out
}

pub fn graph_from_triplets(n: usize, triplets: &[Triplet]) -> Result<AffinityGraph> {
    let mut w = ndarray::Array2::zeros((n, n));
    let mut lists = vec![Vec::new(); n];
    for &(i, j, v) in triplets {
        if i >= n || j >= n {
            return Err(Error::Shape(format!(
                "edge ({i}, {j}) out of range for n={n}"
            )));
        }
        w[[i, j]] = v;
        lists[i].push(j);
    }
    AffinityGraph::new(w, lists)
}

/// Neighborhood diagnostics of the input-space heat-kernel graph and,
/// when given, of a learned graph. Similarities are the adaptive
/// input-space kernel.
pub fn diagnostics(
    ds: &LabeledDataset,
    cfg: &SolverConfig,
    learned: Option<&AffinityGraph>,
) -> Result<(DiagnosticsReport, Option<DiagnosticsReport>)> {
    let labels = ds
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data("diagnostics need ground-truth labels".into()))?;
    let n = ds.n_instances();
    let k = cfg.k(n);
    let input = InputKernel::new(ds.x.view(), k, cfg.bandwidth_mode)?;
    let heat = heat_affinity_from_sq_dist(input.d2.view(), k)?;
    let before = neighborhood_diagnostics(
        &heat,
        input.kernel.view(),
        Some(labels),
        k,
        GraphSource::InputHeatKernel,
    )?;
    let after = learned
        .map(|g| {
            neighborhood_diagnostics(
                g,
                input.kernel.view(),
                Some(labels),
                k,
                GraphSource::LearnedMasked,
            )
        })
        .transpose()?;
    Ok((before, after))
}

fn metrics(ds: &LabeledDataset, result: &SolveResult) -> Result<(Option<f64>, Option<f64>)> {
    match &ds.labels {
        Some(truth) => {
            let pred = result.labels();
            Ok((Some(accuracy(&pred, truth)?), Some(nmi(&pred, truth)?)))
        }
        None => Ok((None, None)),
    }
}

fn base_report(ds: &LabeledDataset, cfg: &SolverConfig) -> RunReport {
    RunReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        preprocessing: ds.preprocessing,
        dataset: fingerprint(ds),
        acc: None,
        nmi: None,
        nmi_normalization: "geometric_mean".into(),
        iterations: 0,
        converged: false,
        objective_trace: Vec::new(),
        residual_trace: Vec::new(),
        exemplar_indices: Vec::new(),
        labels: Vec::new(),
        init: None,
        frozen_at: None,
        learned_graph: None,
        diagnostics_before: None,
        diagnostics_after: None,
        wall_time_seconds: 0.0,
        grid: None,
        grid_criterion: None,
        error: None,
    }
}

/// Outcome of [`run`]: the report and, on failure, the error that stopped
/// the solver (the report then carries the partial trace).
pub struct RunOutcome {
    pub report: RunReport,
    pub result: Option<SolveResult>,
    pub error: Option<Error>,
}

/// Solves one configuration and assembles its report. Diagnostics are
/// attached when the dataset is labeled.
pub fn run(ds: &LabeledDataset, cfg: &SolverConfig) -> Result<RunOutcome> {
    let mut report = base_report(ds, cfg);
    let start = Instant::now();
    let solved = solve_with_trace(ds.x.view(), cfg);
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    match solved {
        Ok(result) => {
            let (acc, nmi) = metrics(ds, &result)?;
            report.acc = acc;
            report.nmi = nmi;
            report.iterations = result.iterations;
            report.converged = result.converged;
            report.objective_trace = result.objective_trace.clone();
            report.residual_trace = result.residual_trace.clone();
            report.exemplar_indices = result.exemplar_indices.clone();
            report.labels = result.labels();
            report.init = result.init;
            report.frozen_at = result.frozen_at;
            let learned = result
                .graph
                .as_ref()
                .filter(|_| result.algorithm != Algorithm::Rmnmf);
            report.learned_graph = learned.map(graph_triplets);
            if ds.labels.is_some() {
                let (before, after) = diagnostics(ds, cfg, learned)?;
                report.diagnostics_before = Some(before);
                report.diagnostics_after = after;
            }
            Ok(RunOutcome {
                report,
                result: Some(result),
                error: None,
            })
        }
        Err(failure) => {
            report.iterations = failure.trace.iterations;
            report.objective_trace = failure.trace.objective_trace;
            report.residual_trace = failure.trace.residual_trace;
            report.error = Some(failure.error.to_string());
            Ok(RunOutcome {
                report,
                result: None,
                error: Some(failure.error),
            })
        }
    }
}

/// Sweeps λ and β over `grid` and reports every cell. The selected cell is
/// the best ACC for labeled data, otherwise the lowest final objective; ties
/// go to the earlier cell. Algorithms without β sweep λ only.
pub fn run_grid(ds: &LabeledDataset, cfg: &SolverConfig, grid: &[f64]) -> Result<RunOutcome> {
    if grid.is_empty() {
        return Err(Error::config("grid", "grid must not be empty"));
    }
    let uses_beta = !matches!(cfg.algorithm, Algorithm::Rmnmf | Algorithm::Nmf);
    let uses_lambda = cfg.algorithm != Algorithm::Nmf;
    let lambdas: Vec<f64> = if uses_lambda {
        grid.to_vec()
    } else {
        vec![cfg.lambda]
    };
    let betas: Vec<f64> = if uses_beta {
        grid.to_vec()
    } else {
        vec![cfg.beta]
    };
    let labeled = ds.labels.is_some();
    let mut cells = Vec::new();
    let mut best: Option<(f64, RunOutcome)> = None;
    for &lambda in &lambdas {
        for &beta in &betas {
            let cell_cfg = SolverConfig {
                lambda,
                beta,
                ..cfg.clone()
            };
            let outcome = run(ds, &cell_cfg)?;
            let r = &outcome.report;
            cells.push(GridCell {
                lambda,
                beta,
                acc: r.acc,
                nmi: r.nmi,
                final_objective: r.objective_trace.last().copied(),
                iterations: r.iterations,
                converged: r.converged,
                wall_time_seconds: r.wall_time_seconds,
                error: r.error.clone(),
            });
            if outcome.error.is_some() {
                continue;
            }
            let score = if labeled {
                r.acc.unwrap_or(f64::NEG_INFINITY)
            } else {
                -r.objective_trace.last().copied().unwrap_or(f64::INFINITY)
            };
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, outcome));
            }
        }
    }
    let criterion = if labeled {
        "best_acc"
    } else {
        "lowest_objective"
    };
    match best {
        Some((_, mut outcome)) => {
            outcome.report.grid = Some(cells);
            outcome.report.grid_criterion = Some(criterion.into());
            Ok(outcome)
        }
        None => {
            let mut report = base_report(ds, cfg);
            report.error = cells.last().and_then(|c| c.error.clone());
            report.grid = Some(cells);
            report.grid_criterion = Some(criterion.into());
            Ok(RunOutcome {
                report,
                result: None,
                error: Some(Error::numeric("grid", "every grid cell failed")),
            })
        }
    }
}
