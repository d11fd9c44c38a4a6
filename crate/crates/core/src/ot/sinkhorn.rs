//! Entropic optimal transport by Sinkhorn scaling.
//!
//! Two numerically equivalent update schemes are provided. The log domain
//! works on potentials `ln u`, `ln v` and never forms `exp(-M/lambda)`
//! directly, so it is safe for any `lambda > 0`. The scaling domain works on
//! `u`, `v` and the Gibbs kernel and is cheaper per iteration, but needs
//! `max(M)/lambda` small enough that the kernel does not underflow.
//!
//! The last iterate is projected onto the transport polytope by the rounding
//! step of Altschuler, Weed & Rigollet (2017), so every returned plan has the
//! requested marginals up to floating-point error.

use std::cmp::Ordering;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::kernel::{log_sum_exp_shifted, RowMajor};
use super::{check_shapes, CostMatrix, Histogram, TransportPlan};
use crate::error::{Error, Result};

/// `Auto` picks the scaling domain when `max(M)/lambda` is at most this.
pub const SCALING_MAX_RATIO: f64 = 100.0;

/// Above this ratio `exp(-M/lambda)` underflows in f64.
const UNDERFLOW_RATIO: f64 = 700.0;

/// How often (in iterations) the optional early exit checks the marginals.
const CHECK_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    /// Scaling domain when the kernel is well conditioned, log domain otherwise.
    #[default]
    Auto,
    Log,
    Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularization strength, `> 0`.
    pub lambda: f64,
    /// Number of full (row + column) updates.
    pub iters: usize,
    pub domain: Domain,
    /// Stop early once the L1 marginal violation falls below this.
    pub tol: Option<f64>,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            iters: 100,
            domain: Domain::Auto,
            tol: None,
        }
    }
}

impl SinkhornConfig {
    pub fn new(lambda: f64, iters: usize) -> Self {
        Self {
            lambda,
            iters,
            ..Self::default()
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::BadParameter(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.iters == 0 {
            return Err(Error::BadParameter("iteration count must be positive".into()));
        }
        Ok(())
    }
}

/// Resolves `Auto` and rejects scaling-domain requests that would underflow.
pub(crate) fn resolve_domain(cfg: &SinkhornConfig, max_cost: f64) -> Result<Domain> {
    let ratio = max_cost / cfg.lambda;
    match cfg.domain {
        Domain::Auto if ratio <= SCALING_MAX_RATIO => Ok(Domain::Scaling),
        Domain::Auto | Domain::Log => Ok(Domain::Log),
        Domain::Scaling if ratio > UNDERFLOW_RATIO || !ratio.is_finite() => Err(Error::NumericalOverflow(format!(
            "max cost / lambda = {ratio:.3e}; use the log domain"
        ))),
        Domain::Scaling => Ok(Domain::Scaling),
    }
}

fn active(w: &[f64]) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] > 0.0).collect()
}

fn is_trivial(a: &[f64], b: &[f64]) -> bool {
    active(a).len() == 1 || active(b).len() == 1
}

fn outer(a: &[f64], b: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Log-domain updates for one pair; returns the unrounded coupling.
fn log_iterate(log_k: &RowMajor, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Array2<f64> {
    let (n, m) = (a.len(), b.len());
    let rows = active(a);
    let cols = active(b);
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut lu = vec![f64::NEG_INFINITY; n];
    let mut lv: Vec<f64> = b.iter().map(|&x| if x > 0.0 { 0.0 } else { f64::NEG_INFINITY }).collect();
    for it in 0..cfg.iters {
        for &i in &rows {
            lu[i] = log_a[i] - log_sum_exp_shifted(log_k.row(i), &lv);
        }
        for &j in &cols {
            lv[j] = log_b[j] - log_sum_exp_shifted(log_k.col(j), &lu);
        }
        if let Some(tol) = cfg.tol {
            if (it + 1) % CHECK_EVERY == 0 {
                let err: f64 = rows
                    .iter()
                    .map(|&i| ((lu[i] + log_sum_exp_shifted(log_k.row(i), &lv)).exp() - a[i]).abs())
                    .sum();
                if err < tol {
                    break;
                }
            }
        }
    }
    let mut t = Array2::zeros((n, m));
    for &i in &rows {
        for &j in &cols {
            t[[i, j]] = (log_k.get(i, j) + lu[i] + lv[j]).exp();
        }
    }
    t
}

/// Scaling-domain updates for all columns of `a` (n x B) and `b` (m x B) at
/// once. Zero-weight bins get zero scalings without special casing.
fn scaling_iterate(k: &Array2<f64>, a: &Array2<f64>, b: &Array2<f64>, cfg: &SinkhornConfig) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut u = Array2::zeros(a.dim());
    let mut v = Array2::<f64>::ones(b.dim());
    for it in 0..cfg.iters {
        u = a / &k.dot(&v);
        v = b / &k.t().dot(&u);
        if let Some(tol) = cfg.tol {
            if (it + 1) % CHECK_EVERY == 0 {
                let marg = &u * &k.dot(&v);
                let worst = (&marg - a)
                    .abs()
                    .sum_axis(Axis(0))
                    .iter()
                    .copied()
                    .fold(0.0, f64::max);
                if worst < tol {
                    break;
                }
            }
        }
    }
    if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NumericalOverflow("Sinkhorn scaling left the representable range".into()));
    }
    Ok((u, v))
}

/// Projects a nonnegative matrix onto `{T >= 0 : T1 = a, T^T 1 = b}`.
fn round_to_feasible(t: &mut Array2<f64>, a: &[f64], b: &[f64]) {
    let (n, m) = t.dim();
    for i in 0..n {
        let r: f64 = t.row(i).sum();
        if r > a[i] {
            let x = a[i] / r;
            t.row_mut(i).mapv_inplace(|v| v * x);
        }
    }
    for j in 0..m {
        let c: f64 = t.column(j).sum();
        if c > b[j] {
            let y = b[j] / c;
            t.column_mut(j).mapv_inplace(|v| v * y);
        }
    }
    let err_r: Vec<f64> = (0..n).map(|i| (a[i] - t.row(i).sum()).max(0.0)).collect();
    let err_c: Vec<f64> = (0..m).map(|j| (b[j] - t.column(j).sum()).max(0.0)).collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            if err_r[i] == 0.0 {
                continue;
            }
            for j in 0..m {
                t[[i, j]] += err_r[i] * err_c[j] / total;
            }
        }
    }
}

fn solve<T: Send>(
    pairs: &[(Histogram, Histogram)],
    m: &CostMatrix,
    cfg: &SinkhornConfig,
    finish: impl Fn(TransportPlan) -> T + Sync,
) -> Result<Vec<T>> {
    cfg.validate()?;
    for (a, b) in pairs {
        check_shapes(a, b, m)?;
    }
    let costs = m.costs();
    // Under a symmetric cost, (a, b) and (b, a) are solved in one fixed
    // orientation and the plan transposed back, so swapping is exact.
    let symmetric = costs.nrows() == costs.ncols() && costs == costs.t();
    let flipped: Vec<bool> = pairs
        .iter()
        .map(|(a, b)| symmetric && lexicographic(a.as_slice(), b.as_slice()) == Ordering::Greater)
        .collect();
    let couplings = if flipped.iter().any(|&f| f) {
        let oriented: Vec<(Histogram, Histogram)> = pairs
            .iter()
            .zip(&flipped)
            .map(|((a, b), &f)| if f { (b.clone(), a.clone()) } else { (a.clone(), b.clone()) })
            .collect();
        couplings(&oriented, m, cfg)?
    } else {
        couplings(pairs, m, cfg)?
    };
    Ok(couplings
        .into_par_iter()
        .zip(flipped.into_par_iter())
        .map(|(t, f)| {
            let t = if f { t.reversed_axes().as_standard_layout().into_owned() } else { t };
            finish(TransportPlan::from_coupling(t, costs))
        })
        .collect())
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn couplings(pairs: &[(Histogram, Histogram)], m: &CostMatrix, cfg: &SinkhornConfig) -> Result<Vec<Array2<f64>>> {
    let costs = m.costs();
    let (n, mm) = costs.dim();
    // A single atom on either side forces the product coupling.
    let trivial: Vec<bool> = pairs.iter().map(|(a, b)| is_trivial(a.as_slice(), b.as_slice())).collect();
    if trivial.iter().all(|&t| t) {
        return Ok(pairs.iter().map(|(a, b)| outer(a.as_slice(), b.as_slice())).collect());
    }
    match resolve_domain(cfg, m.max())? {
        Domain::Scaling => {
            let k = costs.mapv(|c| (-c / cfg.lambda).exp());
            let mut slot = vec![usize::MAX; pairs.len()];
            let live: Vec<usize> = (0..pairs.len()).filter(|&p| !trivial[p]).collect();
            for (col, &p) in live.iter().enumerate() {
                slot[p] = col;
            }
            let am = Array2::from_shape_fn((n, live.len()), |(i, c)| pairs[live[c]].0.as_slice()[i]);
            let bm = Array2::from_shape_fn((mm, live.len()), |(j, c)| pairs[live[c]].1.as_slice()[j]);
            let (u, v) = scaling_iterate(&k, &am, &bm, cfg)?;
            Ok(pairs
                .par_iter()
                .enumerate()
                .map(|(p, (a, b))| {
                    let (a, b) = (a.as_slice(), b.as_slice());
                    if trivial[p] {
                        return outer(a, b);
                    }
                    let (uc, vc) = (u.column(slot[p]), v.column(slot[p]));
                    let mut t = Array2::from_shape_fn((n, mm), |(i, j)| uc[i] * k[[i, j]] * vc[j]);
                    round_to_feasible(&mut t, a, b);
                    t
                })
                .collect())
        }
        _ => {
            let log_k = RowMajor::from_fn(n, mm, |i, j| -costs[[i, j]] / cfg.lambda);
            Ok(pairs
                .par_iter()
                .enumerate()
                .map(|(p, (a, b))| {
                    let (a, b) = (a.as_slice(), b.as_slice());
                    if trivial[p] {
                        return outer(a, b);
                    }
                    let mut t = log_iterate(&log_k, a, b, cfg);
                    round_to_feasible(&mut t, a, b);
                    t
                })
                .collect())
        }
    }
}

/// Entropic-regularized transport plan between `a` and `b`.
///
/// The reported cost is `sum T_ij M_ij` of the returned plan; the entropy term
/// is not included. Zero-weight bins are excluded from the updates and carry
/// zero rows/columns in the plan.
pub fn sinkhorn(a: &Histogram, b: &Histogram, m: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let mut plans = sinkhorn_plans(&[(a.clone(), b.clone())], m, cfg)?;
    Ok(plans.pop().expect("one pair in, one plan out"))
}

/// Plans for many pairs over the same support, sharing one kernel.
///
/// Without `tol` every pair sees exactly the updates a single call would.
/// With `tol` the scaling domain stops once every pair has converged.
pub fn sinkhorn_plans(pairs: &[(Histogram, Histogram)], m: &CostMatrix, cfg: &SinkhornConfig) -> Result<Vec<TransportPlan>> {
    solve(pairs, m, cfg, |p| p)
}

/// Transport costs for many pairs over the same support.
pub fn sinkhorn_batch(pairs: &[(Histogram, Histogram)], m: &CostMatrix, cfg: &SinkhornConfig) -> Result<Vec<f64>> {
    solve(pairs, m, cfg, |p| p.cost())
}
