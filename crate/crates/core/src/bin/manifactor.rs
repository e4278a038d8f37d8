use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use manifactor::config::{load_config, Algorithm, SolverConfig};
use manifactor::data::{
    gen_blobs, gen_moons, load_csv, preprocess_with, write_csv, LabelColumn, LabeledDataset,
    PreprocessOptions,
};
use manifactor::report::{diagnostics, run, run_grid, RunReport, DEFAULT_GRID};
use manifactor::solver::solve;
use manifactor::Error;

#[derive(Parser)]
#[command(
    name = "manifactor",
    version,
    about = "Manifold regularized matrix factorization with exemplar selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded two-moons dataset as CSV.
    GenMoons(GenMoonsArgs),
    /// Cluster a CSV dataset and write a JSON run report.
    Run(RunArgs),
    /// Neighborhood diagnostics of the input graph and, given a report, the learned graph.
    Diagnose(DiagnoseArgs),
    /// Time the constrained and relaxed solvers on a seeded synthetic dataset.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenMoonsArgs {
    #[arg(long, default_value_t = 250)]
    n_per_cluster: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preprocess {
    /// Min-max scaling followed by unit-norm instances.
    Unit,
    /// Min-max scaling only.
    Minmax,
}

impl Preprocess {
    fn options(self) -> PreprocessOptions {
        PreprocessOptions {
            unit_norm: matches!(self, Preprocess::Unit),
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// CSV with instances as rows.
    #[arg(long)]
    data: PathBuf,
    /// Label column name or zero-based index; `label` is used when present.
    #[arg(long)]
    label_column: Option<LabelColumn>,
    #[arg(long, value_enum, default_value = "unit")]
    preprocess: Preprocess,
    /// Flat key=value solver configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured algorithm.
    #[arg(long)]
    algorithm: Option<Algorithm>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    /// Sweep λ and β; values default to 1e-3,1e-2,1e-1,1.
    #[arg(long, num_args = 0..=1, require_equals = true, value_delimiter = ',', default_missing_value = "")]
    grid: Option<Vec<String>>,
    /// Append the flat metric row to this CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Run report whose learned graph gives the after-selection statistics.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Dump the learned graph as `i,j,value` triplets.
    #[arg(long)]
    triplets: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    c: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchRow {
    algorithm: String,
    iterations: usize,
    wall_time_seconds: f64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric { .. } | Error::Selection(_) => 3,
        _ => 2,
    }
}

fn solver_config(args: &DataArgs) -> Result<SolverConfig, Error> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => SolverConfig::default(),
    };
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse {
            row: 0,
            col: 0,
            msg: format!("expected key=value, got `{kv}`"),
        })?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(a) = args.algorithm {
        cfg.algorithm = a;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(args: &DataArgs) -> Result<LabeledDataset, Error> {
    let label = args
        .label_column
        .clone()
        .or_else(|| has_label_header(&args.data).then(|| LabelColumn::Name("label".into())));
    let ds = load_csv(&args.data, label.as_ref())?;
    preprocess_with(&ds, args.preprocess.options())
}

fn has_label_header(path: &Path) -> bool {
    let Ok(mut reader) = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
    else {
        return false;
    };
    let mut rec = csv::StringRecord::new();
    matches!(reader.read_record(&mut rec), Ok(true)) && rec.iter().any(|f| f == "label")
}

fn parse_grid(values: &[String]) -> Result<Vec<f64>, Error> {
    let values: Vec<&String> = values.iter().filter(|v| !v.trim().is_empty()).collect();
    if values.is_empty() {
        return Ok(DEFAULT_GRID.to_vec());
    }
    values
        .iter()
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| Error::Config {
                    key: "grid".into(),
                    msg: format!("bad grid value `{v}`"),
                })
        })
        .collect()
}

fn cmd_gen_moons(a: GenMoonsArgs) -> Result<(), Error> {
    let ds = gen_moons(a.n_per_cluster, a.noise, a.dim, a.seed)?;
    write_csv(&ds, &a.out)
}

fn cmd_run(a: RunArgs) -> Result<(), Error> {
    let cfg = solver_config(&a.data)?;
    let ds = dataset(&a.data)?;
    let outcome = match &a.grid {
        Some(values) => run_grid(&ds, &cfg, &parse_grid(values)?)?,
        None => run(&ds, &cfg)?,
    };
    outcome.report.write_json(&a.out)?;
    if let Some(csv) = &a.csv {
        outcome.report.append_csv(csv)?;
    }
    if let Some(e) = outcome.error {
        return Err(e);
    }
    let r = &outcome.report;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} acc={} nmi={} iterations={} converged={} time={:.2}s",
        r.config.algorithm,
        fmt(r.acc),
        fmt(r.nmi),
        r.iterations,
        r.converged,
        r.wall_time_seconds
    );
    Ok(())
}

#[derive(Serialize)]
struct DiagnoseOutput {
    before: manifactor::eval::DiagnosticsReport,
    after: Option<manifactor::eval::DiagnosticsReport>,
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<(), Error> {
    let cfg = solver_config(&a.data)?;
    let ds = dataset(&a.data)?;
    if ds.labels.is_none() {
        return Err(Error::Data("diagnose needs a labeled dataset".into()));
    }
    let learned = match &a.report {
        Some(p) => {
            let report = RunReport::read_json(p)?;
            if report.dataset.n != ds.n_instances() {
                return Err(Error::Data(format!(
                    "report covers {} instances but the dataset has {}",
                    report.dataset.n,
                    ds.n_instances()
                )));
            }
            report.learned_affinity()?
        }
        None => None,
    };
    let (before, after) = diagnostics(&ds, &cfg, learned.as_ref())?;
    if let (Some(path), Some(g)) = (&a.triplets, &learned) {
        g.write_triplets(path)?;
    }
    let text = serde_json::to_string_pretty(&DiagnoseOutput { before, after })
        .map_err(|e| Error::Data(format!("cannot serialize diagnostics: {e}")))?;
    std::fs::write(&a.out, text)?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), Error> {
    let base = match &a.config {
        Some(p) => load_config(p)?,
        None => SolverConfig::default(),
    };
    let ds = gen_blobs(a.n, a.m, a.c, a.separation, a.seed)?;
    let ds = preprocess_with(&ds, PreprocessOptions::default())?;
    let mut rows = Vec::new();
    for algorithm in [Algorithm::Smrmf, Algorithm::FSmrmf] {
        let cfg = SolverConfig {
            algorithm,
            rank: a.c,
            ..base.clone()
        };
        let start = Instant::now();
        let result = solve(ds.x.view(), &cfg)?;
        let row = BenchRow {
            algorithm: algorithm.to_string(),
            iterations: result.iterations,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        };
        println!(
            "{} iterations={} time={:.3}s",
            row.algorithm, row.iterations, row.wall_time_seconds
        );
        rows.push(row);
    }
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(out, text)?;
    }
    Ok(())
}

fn init_threads() {
    if let Some(n) = std::env::var("MANIFACTOR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    let result = match cli.command {
        Command::GenMoons(a) => cmd_gen_moons(a),
        Command::Run(a) => cmd_run(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
