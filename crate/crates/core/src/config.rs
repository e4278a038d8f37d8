//! Solver configuration and its flat `key=value` file format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::BandwidthMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Nmf,
    Rmnmf,
    Smrmf,
    SmrmfEuc,
    SmrmfNs,
    FSmrmf,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Nmf,
        Algorithm::Rmnmf,
        Algorithm::Smrmf,
        Algorithm::SmrmfEuc,
        Algorithm::SmrmfNs,
        Algorithm::FSmrmf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Nmf => "nmf",
            Algorithm::Rmnmf => "rmnmf",
            Algorithm::Smrmf => "smrmf",
            Algorithm::SmrmfEuc => "smrmf_euc",
            Algorithm::SmrmfNs => "smrmf_ns",
            Algorithm::FSmrmf => "f_smrmf",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| Error::config("algorithm", format!("unknown algorithm `{s}`")))
    }
}

/// Neighborhood size: a fixed count or `⌈√n⌉`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KNeighbors {
    SqrtN,
    Fixed(usize),
}

impl KNeighbors {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            KNeighbors::SqrtN => (n as f64).sqrt().ceil() as usize,
            KNeighbors::Fixed(k) => k,
        }
    }
}

/// Where the neighbors of an exemplar row of the masked affinity come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpace {
    /// Largest entries of the exemplar's row of Z.
    Learned,
    /// Input-space k nearest neighbors of the exemplar.
    Input,
}

/// How the accelerated ADMM initializer forms its extrapolated C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CHatStep {
    /// Nesterov momentum on C, mirroring the multiplier extrapolation.
    Momentum,
    /// Linearized re-solve under simplex columns.
    Simplex,
    /// Linearized re-solve under the row-sparsity ball.
    Ball,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Factorization rank c (number of clusters).
    pub rank: usize,
    pub lambda: f64,
    pub beta: f64,
    /// Strong-convexity weight of the exemplar initializer.
    pub delta: f64,
    /// Quadratic weight of the relaxed Z problem in f-SMRMF.
    pub fast_delta: f64,
    pub tau_fraction: f64,
    pub k_neighbors: KNeighbors,
    pub rho: f64,
    pub mu0: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Z/C freeze threshold on ‖Δ‖_∞ for large problems.
    pub early_term_threshold: f64,
    /// Smallest n for which the Z/C freeze is enabled.
    pub early_term_min_n: usize,
    /// Primal residual bound required before the objective test may stop the solver.
    pub feasibility_tol: f64,
    pub bandwidth_mode: BandwidthMode,
    /// Pool latent bandwidths to their mean; defaults to on for f-SMRMF only.
    pub pooled_gamma: Option<bool>,
    pub mask_space: MaskSpace,
    pub chat_step: CHatStep,
    pub init_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: Algorithm::Smrmf,
            rank: 2,
            lambda: 0.1,
            beta: 0.1,
            delta: 0.01,
            fast_delta: 1.0,
            tau_fraction: 0.1,
            k_neighbors: KNeighbors::SqrtN,
            rho: 1.05,
            mu0: 0.1,
            max_iter: 1000,
            tol: 1e-4,
            seed: 0,
            early_term_threshold: 1e-5,
            early_term_min_n: 2000,
            feasibility_tol: 1e-3,
            bandwidth_mode: BandwidthMode::Distance,
            pooled_gamma: None,
            mask_space: MaskSpace::Learned,
            chat_step: CHatStep::Momentum,
            init_max_iter: 1000,
        }
    }
}

const KEYS: &[&str] = &[
    "algorithm",
    "rank",
    "lambda",
    "beta",
    "delta",
    "fast_delta",
    "tau_fraction",
    "k_neighbors",
    "rho",
    "mu0",
    "max_iter",
    "tol",
    "seed",
    "early_term_threshold",
    "early_term_min_n",
    "feasibility_tol",
    "bandwidth_mode",
    "pooled_gamma",
    "mask_space",
    "chat_step",
    "init_max_iter",
];

impl SolverConfig {
    /// Number of exemplars `⌈tau_fraction · n⌉`, at least one.
    pub fn tau(&self, n: usize) -> usize {
        let tau = ((self.tau_fraction * n as f64) - 1e-9).ceil().max(1.0) as usize;
        if tau < self.rank {
            log::warn!("exemplar count {tau} is below the rank {}", self.rank);
        }
        tau.min(n)
    }

    pub fn k(&self, n: usize) -> usize {
        self.k_neighbors.resolve(n)
    }

    pub fn pooled_gamma(&self) -> bool {
        self.pooled_gamma
            .unwrap_or(self.algorithm == Algorithm::FSmrmf)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be > 0, got {v}")))
            }
        };
        let nonneg = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be >= 0, got {v}")))
            }
        };
        if self.rank == 0 {
            return Err(Error::config("rank", "must be a positive integer"));
        }
        nonneg("lambda", self.lambda)?;
        nonneg("beta", self.beta)?;
        positive("delta", self.delta)?;
        positive("fast_delta", self.fast_delta)?;
        if !(self.tau_fraction > 0.0 && self.tau_fraction <= 1.0) {
            return Err(Error::config(
                "tau_fraction",
                format!("must lie in (0, 1], got {}", self.tau_fraction),
            ));
        }
        if self.k_neighbors == KNeighbors::Fixed(0) {
            return Err(Error::config("k_neighbors", "must be positive"));
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return Err(Error::config(
                "rho",
                format!("must be > 1, got {}", self.rho),
            ));
        }
        positive("mu0", self.mu0)?;
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be positive"));
        }
        if self.init_max_iter == 0 {
            return Err(Error::config("init_max_iter", "must be positive"));
        }
        positive("tol", self.tol)?;
        positive("early_term_threshold", self.early_term_threshold)?;
        positive("feasibility_tol", self.feasibility_tol)?;
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::config(key, format!("`{v}` is not a number")))
        };
        let int = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::config(key, format!("`{v}` is not a non-negative integer")))
        };
        match key {
            "algorithm" => self.algorithm = value.parse()?,
            "rank" | "c" => self.rank = int(value)?,
            "lambda" => self.lambda = num(value)?,
            "beta" => self.beta = num(value)?,
            "delta" => self.delta = num(value)?,
            "fast_delta" => self.fast_delta = num(value)?,
            "tau_fraction" => self.tau_fraction = num(value)?,
            "k_neighbors" | "k" => {
                self.k_neighbors = if value.eq_ignore_ascii_case("sqrt_n") {
                    KNeighbors::SqrtN
                } else {
                    KNeighbors::Fixed(int(value)?)
                }
            }
            "rho" => self.rho = num(value)?,
            "mu0" => self.mu0 = num(value)?,
            "max_iter" => self.max_iter = int(value)?,
            "tol" => self.tol = num(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::config(key, format!("`{value}` is not a seed")))?
            }
            "early_term_threshold" => self.early_term_threshold = num(value)?,
            "early_term_min_n" => self.early_term_min_n = int(value)?,
            "feasibility_tol" => self.feasibility_tol = num(value)?,
            "bandwidth_mode" => {
                self.bandwidth_mode = match value {
                    "distance" => BandwidthMode::Distance,
                    "squared_distance" => BandwidthMode::SquaredDistance,
                    _ => return Err(Error::config(key, format!("unknown mode `{value}`"))),
                }
            }
            "pooled_gamma" => {
                self.pooled_gamma = match value {
                    "auto" => None,
                    "true" => Some(true),
                    "false" => Some(false),
                    _ => return Err(Error::config(key, "expected true, false or auto")),
                }
            }
            "mask_space" => {
                self.mask_space = match value {
                    "learned" => MaskSpace::Learned,
                    "input" => MaskSpace::Input,
                    _ => return Err(Error::config(key, format!("unknown space `{value}`"))),
                }
            }
            "chat_step" => {
                self.chat_step = match value {
                    "momentum" => CHatStep::Momentum,
                    "simplex" => CHatStep::Simplex,
                    "ball" => CHatStep::Ball,
                    _ => return Err(Error::config(key, format!("unknown step `{value}`"))),
                }
            }
            "init_max_iter" => self.init_max_iter = int(value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses the flat `key=value` format. Blank lines and `#` comments are
    /// ignored; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SolverConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(lineno + 1, 0, format!("expected key=value, got `{line}`"))
            })?;
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match *key {
                "algorithm" => self.algorithm.to_string(),
                "rank" => self.rank.to_string(),
                "lambda" => format!("{:?}", self.lambda),
                "beta" => format!("{:?}", self.beta),
                "delta" => format!("{:?}", self.delta),
                "fast_delta" => format!("{:?}", self.fast_delta),
                "tau_fraction" => format!("{:?}", self.tau_fraction),
                "k_neighbors" => match self.k_neighbors {
                    KNeighbors::SqrtN => "sqrt_n".into(),
                    KNeighbors::Fixed(k) => k.to_string(),
                },
                "rho" => format!("{:?}", self.rho),
                "mu0" => format!("{:?}", self.mu0),
                "max_iter" => self.max_iter.to_string(),
                "tol" => format!("{:?}", self.tol),
                "seed" => self.seed.to_string(),
                "early_term_threshold" => format!("{:?}", self.early_term_threshold),
                "early_term_min_n" => self.early_term_min_n.to_string(),
                "feasibility_tol" => format!("{:?}", self.feasibility_tol),
                "bandwidth_mode" => match self.bandwidth_mode {
                    BandwidthMode::Distance => "distance".into(),
                    BandwidthMode::SquaredDistance => "squared_distance".into(),
                },
                "pooled_gamma" => match self.pooled_gamma {
                    None => "auto".into(),
                    Some(b) => b.to_string(),
                },
                "mask_space" => match self.mask_space {
                    MaskSpace::Learned => "learned".into(),
                    MaskSpace::Input => "input".into(),
                },
                "chat_step" => match self.chat_step {
                    CHatStep::Momentum => "momentum".into(),
                    CHatStep::Simplex => "simplex".into(),
                    CHatStep::Ball => "ball".into(),
                },
                "init_max_iter" => self.init_max_iter.to_string(),
                _ => unreachable!(),
            };
            out.push_str(key);
            out.push('=');
            out.push_str(&value);
            out.push('\n');
        }
        out
    }
}

pub fn load_config(path: &Path) -> Result<SolverConfig> {
    SolverConfig::parse(&std::fs::read_to_string(path)?)
}
