//! Baseline Frobenius NMF and the NNDSVD initializer shared by all solvers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, thin_svd};

/// Nonnegative basis `F` (m×c) and coefficients `G` (n×c) with `X ≈ FGᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub f: Array2<f64>,
    pub g: Array2<f64>,
}

impl FactorPair {
    pub fn reconstruction(&self) -> Array2<f64> {
        self.f.dot(&self.g.t())
    }

    pub fn loss(&self, x: ArrayView2<f64>) -> f64 {
        frobenius((&x - &self.reconstruction()).view())
    }
}

/// Treatment of the exact zeros NNDSVD produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NndsvdFill {
    /// Keep zeros (ALM solvers).
    Zeros,
    /// Replace zeros by the mean of X so multiplicative updates can move them.
    Mean,
}

fn split_parts(v: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
    (v.mapv(|x| x.max(0.0)), v.mapv(|x| (-x).max(0.0)))
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// NNDSVD initialization. Deterministic: each singular pair is sign-fixed so
/// the largest-magnitude entry of `u_k` is positive.
pub fn nndsvd_init(x: ArrayView2<f64>, c: usize, fill: NndsvdFill) -> Result<FactorPair> {
    let (m, n) = x.dim();
    if c == 0 || c > m.min(n) {
        return Err(Error::config(
            "rank",
            format!("rank must be in 1..={}, got {c}", m.min(n)),
        ));
    }
    if let Some(v) = x.iter().find(|&&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Data(format!(
            "NNDSVD needs nonnegative data, found {v}"
        )));
    }
    let (mut u, s, mut v) = thin_svd(x)?;
    for k in 0..c {
        let pivot = u.column(k).iter().copied().fold(0.0_f64, |best, val| {
            if val.abs() > best.abs() {
                val
            } else {
                best
            }
        });
        if pivot < 0.0 {
            u.column_mut(k).mapv_inplace(|t| -t);
            v.column_mut(k).mapv_inplace(|t| -t);
        }
    }

    let mut f = Array2::zeros((m, c));
    let mut g = Array2::zeros((n, c));
    let root = s[0].sqrt();
    f.column_mut(0)
        .assign(&u.column(0).mapv(|t| root * t.abs()));
    g.column_mut(0)
        .assign(&v.column(0).mapv(|t| root * t.abs()));

    for k in 1..c {
        let (up, un) = split_parts(u.column(k));
        let (vp, vn) = split_parts(v.column(k));
        let (nup, nun, nvp, nvn) = (norm(&up), norm(&un), norm(&vp), norm(&vn));
        let (pos, neg) = (nup * nvp, nun * nvn);
        let (uu, vv, scale) = if pos >= neg {
            (up, vp, pos)
        } else {
            (un, vn, neg)
        };
        if scale <= 0.0 {
            continue;
        }
        let lam = (s[k] * scale).sqrt();
        let (nu, nv) = (norm(&uu), norm(&vv));
        f.column_mut(k).assign(&(uu * (lam / nu)));
        g.column_mut(k).assign(&(vv * (lam / nv)));
    }

    if fill == NndsvdFill::Mean {
        let avg = x.mean().unwrap_or(0.0);
        f.mapv_inplace(|t| if t == 0.0 { avg } else { t });
        g.mapv_inplace(|t| if t == 0.0 { avg } else { t });
    }
    Ok(FactorPair { f, g })
}

#[derive(Debug, Clone)]
pub struct NmfOutcome {
    pub factors: FactorPair,
    /// Frobenius loss ‖X − FGᵀ‖_F after each iteration.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

const DENOM_FLOOR: f64 = 1e-12;

/// Lee–Seung multiplicative updates for `min ‖X − FGᵀ‖_F²`, F, G ≥ 0,
/// started from mean-filled NNDSVD.
pub fn nmf_multiplicative(
    x: ArrayView2<f64>,
    c: usize,
    max_iter: usize,
    tol: f64,
) -> Result<NmfOutcome> {
    let init = nndsvd_init(x, c, NndsvdFill::Mean)?;
    nmf_multiplicative_from(x, init, max_iter, tol)
}

pub fn nmf_multiplicative_from(
    x: ArrayView2<f64>,
    init: FactorPair,
    max_iter: usize,
    tol: f64,
) -> Result<NmfOutcome> {
    if x.iter().any(|&v| v < 0.0) {
        return Err(Error::Data(
            "multiplicative updates need nonnegative data".into(),
        ));
    }
    let FactorPair { mut f, mut g } = init;
    let mut trace = Vec::with_capacity(max_iter);
    let mut prev = FactorPair {
        f: f.clone(),
        g: g.clone(),
    }
    .loss(x);
    let mut converged = false;
    for _ in 0..max_iter {
        let num = x.dot(&g);
        let den = f.dot(&g.t().dot(&g));
        Zip::from(&mut f)
            .and(&num)
            .and(&den)
            .for_each(|f, &a, &b| *f *= a / b.max(DENOM_FLOOR));

        let num = x.t().dot(&f);
        let den = g.dot(&f.t().dot(&f));
        Zip::from(&mut g)
            .and(&num)
            .and(&den)
            .for_each(|g, &a, &b| *g *= a / b.max(DENOM_FLOOR));

        let loss = frobenius((&x - &f.dot(&g.t())).view());
        if !loss.is_finite() {
            return Err(Error::numeric("nmf_multiplicative", "loss is not finite"));
        }
        trace.push(loss);
        let rel = (prev - loss).abs() / prev.max(DENOM_FLOOR);
        prev = loss;
        if rel < tol || loss <= DENOM_FLOOR {
            converged = true;
            break;
        }
    }
    Ok(NmfOutcome {
        factors: FactorPair { f, g },
        loss_trace: trace,
        converged,
    })
}
