//! Dataset loading, preprocessing and the synthetic generators.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature-by-instance matrix (`m×n`, one instance per column) with optional
/// integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub feature_names: Option<Vec<String>>,
    /// Set once [`preprocess_with`] has run.
    pub preprocessing: Option<PreprocessOptions>,
}

impl LabeledDataset {
    pub fn new(x: Array2<f64>, labels: Option<Vec<usize>>) -> Self {
        LabeledDataset {
            x,
            labels,
            feature_names: None,
            preprocessing: None,
        }
    }

    pub fn n_features(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_instances(&self) -> usize {
        self.x.ncols()
    }

    /// Number of distinct class labels, if labeled.
    pub fn n_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().collect::<HashSet<_>>().len())
    }
}

/// Which column of a CSV holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

/// Reads a comma-separated table with instances as rows. A first row that
/// does not parse as numbers is treated as a header. The returned matrix is
/// transposed so instances become columns; values are not rescaled.
pub fn load_csv(path: &Path, label_column: Option<&LabelColumn>) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, 0))?;

    let mut records: Vec<Vec<String>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(e, line + 1))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec.iter().map(str::to_string).collect());
    }
    if records.is_empty() {
        return Err(Error::parse(0, 0, "empty file"));
    }
    let width = records[0].len();
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::parse(
                r + 1,
                rec.len(),
                format!("ragged row: expected {width} fields, found {}", rec.len()),
            ));
        }
    }

    let has_header = records[0].iter().any(|c| c.parse::<f64>().is_err());
    let header: Option<Vec<String>> = has_header.then(|| records[0].clone());

    let label_idx = match label_column {
        None => None,
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => {
            return Err(Error::config(
                "label_column",
                format!("index {i} out of range for {width} columns"),
            ))
        }
        Some(LabelColumn::Name(name)) => {
            let pos = header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name));
            match pos {
                Some(p) => Some(p),
                None => {
                    return Err(Error::config(
                        "label_column",
                        format!("no column named `{name}`"),
                    ))
                }
            }
        }
    };

    let body = &records[usize::from(has_header)..];
    if body.is_empty() {
        return Err(Error::parse(1, 0, "no data rows"));
    }
    let feature_cols: Vec<usize> = (0..width).filter(|&c| Some(c) != label_idx).collect();
    let first_line = 1 + usize::from(has_header);
    let mut x = Array2::zeros((feature_cols.len(), body.len()));
    for (r, rec) in body.iter().enumerate() {
        for (f, &c) in feature_cols.iter().enumerate() {
            x[[f, r]] = rec[c].parse::<f64>().map_err(|_| {
                Error::parse(
                    first_line + r,
                    c + 1,
                    format!("non-numeric value `{}`", rec[c]),
                )
            })?;
        }
    }

    let labels = label_idx.map(|c| encode_labels(body.iter().map(|rec| rec[c].as_str())));
    let feature_names = header.map(|h| feature_cols.iter().map(|&c| h[c].clone()).collect());
    Ok(LabeledDataset {
        x,
        labels,
        feature_names,
        preprocessing: None,
    })
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(line, 0, format!("{other:?}")),
    }
}

/// Integer codes for raw label strings: numeric labels keep their numeric
/// order, anything else is ordered lexicographically.
fn encode_labels<'a>(raw: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let raw: Vec<&str> = raw.collect();
    let mut uniq: Vec<&str> = raw.clone();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.iter().all(|s| s.parse::<f64>().is_ok()) {
        uniq.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    }
    raw.iter()
        .map(|s| uniq.iter().position(|u| u == s).unwrap())
        .collect()
}

/// Writes instances as rows, features as columns, plus a trailing `label`
/// column when labels are present.
pub fn write_csv(ds: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(e, 0))?;
    let m = ds.n_features();
    let mut header: Vec<String> = match &ds.feature_names {
        Some(names) => names.clone(),
        None => (0..m).map(|f| format!("x{f}")).collect(),
    };
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| csv_error(e, 0))?;
    for (j, col) in ds.x.axis_iter(Axis(1)).enumerate() {
        let mut rec: Vec<String> = col.iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &ds.labels {
            rec.push(l[j].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_error(e, j + 1))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// L2-normalize each instance after min-max scaling.
    pub unit_norm: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions { unit_norm: true }
    }
}

/// Full preprocessing: dedupe, drop constant features, min-max scale and
/// unit-normalize instances.
pub fn preprocess(ds: &LabeledDataset) -> Result<LabeledDataset> {
    preprocess_with(ds, PreprocessOptions::default())
}

/// Preprocessing with explicit options. A dataset already processed with
/// the same options is returned unchanged.
pub fn preprocess_with(ds: &LabeledDataset, opts: PreprocessOptions) -> Result<LabeledDataset> {
    if ds.preprocessing == Some(opts) {
        return Ok(ds.clone());
    }
    let mut out = dedupe_instances(ds);
    if out.n_instances() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 distinct instances, found {}",
            out.n_instances()
        )));
    }
    out = drop_constant_features(&out);
    if out.n_features() == 0 {
        return Err(Error::Data("every feature is constant".into()));
    }

    for mut row in out.x.axis_iter_mut(Axis(0)) {
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        row.mapv_inplace(|v| ((v - lo) / span).clamp(0.0, 1.0));
    }
    if opts.unit_norm {
        for mut col in out.x.axis_iter_mut(Axis(1)) {
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                col.mapv_inplace(|v| v / norm);
            }
        }
        // normalization can collapse proportional instances
        out = dedupe_instances(&out);
        if out.n_instances() < 2 {
            return Err(Error::Data(
                "fewer than 2 distinct instances after normalization".into(),
            ));
        }
    }
    out.preprocessing = Some(opts);
    Ok(out)
}

fn dedupe_instances(ds: &LabeledDataset) -> LabeledDataset {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let keep: Vec<usize> = (0..ds.n_instances())
        .filter(|&j| {
            // -0.0 and 0.0 compare equal as numbers
            let key: Vec<u64> =
                ds.x.column(j)
                    .iter()
                    .map(|v| if *v == 0.0 { 0 } else { v.to_bits() })
                    .collect();
            seen.insert(key)
        })
        .collect();
    LabeledDataset {
        x: ds.x.select(Axis(1), &keep),
        labels: ds
            .labels
            .as_ref()
            .map(|l| keep.iter().map(|&j| l[j]).collect()),
        feature_names: ds.feature_names.clone(),
        preprocessing: ds.preprocessing,
    }
}

fn drop_constant_features(ds: &LabeledDataset) -> LabeledDataset {
    let keep: Vec<usize> = (0..ds.n_features())
        .filter(|&f| {
            let row = ds.x.row(f);
            let first = row[0];
            row.iter().any(|&v| v != first)
        })
        .collect();
    LabeledDataset {
        x: ds.x.select(Axis(0), &keep),
        labels: ds.labels.clone(),
        feature_names: ds
            .feature_names
            .as_ref()
            .map(|names| keep.iter().map(|&f| names[f].clone()).collect()),
        preprocessing: ds.preprocessing,
    }
}

/// Two interleaving half circles of radius one, centred at (0, 0) and
/// (1, 0.5), with isotropic Gaussian noise.
///
/// For `ambient_dim = 10` the noisy 2D points are padded with eight
/// Gaussian noise coordinates and rotated by a seeded random orthogonal
/// matrix. Labels are 0 for the upper moon and 1 for the lower one.
pub fn gen_moons(
    n_per_cluster: usize,
    noise_sigma: f64,
    ambient_dim: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_per_cluster == 0 {
        return Err(Error::config("n_per_cluster", "must be at least 1"));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::config(
            "noise",
            format!("must be >= 0, got {noise_sigma}"),
        ));
    }
    if ambient_dim != 2 && ambient_dim != 10 {
        return Err(Error::config(
            "dim",
            format!("ambient dimension must be 2 or 10, got {ambient_dim}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = 2 * n_per_cluster;
    let mut x = Array2::zeros((ambient_dim, n));
    let step = if n_per_cluster > 1 {
        std::f64::consts::PI / (n_per_cluster - 1) as f64
    } else {
        0.0
    };
    for i in 0..n_per_cluster {
        let t = step * i as f64;
        x[[0, i]] = t.cos();
        x[[1, i]] = t.sin();
        x[[0, n_per_cluster + i]] = 1.0 - t.cos();
        x[[1, n_per_cluster + i]] = 0.5 - t.sin();
    }
    if noise_sigma > 0.0 {
        for v in x.iter_mut() {
            *v += noise_sigma * normal.sample(&mut rng);
        }
    }
    if ambient_dim == 10 {
        let q = random_orthogonal(ambient_dim, &mut rng, &normal);
        x = q.dot(&x);
    }
    let labels = (0..n).map(|j| usize::from(j >= n_per_cluster)).collect();
    Ok(LabeledDataset::new(x, Some(labels)))
}

/// `c` isotropic Gaussian clusters in `m` dimensions, `n` points in total
/// (cluster sizes differ by at most one). Centres are drawn from a standard
/// normal scaled by `separation`; points add unit-variance noise.
pub fn gen_blobs(
    n: usize,
    m: usize,
    c: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if c == 0 || n < c {
        return Err(Error::config(
            "clusters",
            format!("need 1 <= c <= n, got c={c}, n={n}"),
        ));
    }
    if m == 0 {
        return Err(Error::config("dim", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centres = Array2::from_shape_fn((m, c), |_| separation * normal.sample(&mut rng));
    let labels: Vec<usize> = (0..n).map(|j| j * c / n).collect();
    let x = Array2::from_shape_fn((m, n), |(i, j)| {
        centres[[i, labels[j]]] + normal.sample(&mut rng)
    });
    Ok(LabeledDataset::new(x, Some(labels)))
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> Array2<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal.sample(rng));
    let qr = a.qr();
    let (q, r) = (qr.q(), qr.r());
    // fix the sign ambiguity so Q is Haar-distributed and deterministic
    Array2::from_shape_fn((d, d), |(i, j)| {
        let s = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        q[(i, j)] * s
    })
}
