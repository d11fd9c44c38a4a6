//! Fixed-support entropic Wasserstein barycenters by iterative Bregman
//! projections.
//!
//! Each input histogram `b_c` owns a coupling `diag(u_c) K diag(v_c)` whose
//! row marginal is pinned to `b_c`; the column marginals are projected onto
//! their weighted geometric mean, which converges to the barycenter.
//! The batched entry point stacks every input of every group into one
//! matrix, so the kernel products run once per sweep for the whole batch.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Zip};
use rayon::prelude::*;

use super::kernel::{log_sum_exp_shifted, RowMajor};
use super::sinkhorn::resolve_domain;
use super::{CostMatrix, Domain, Histogram, SinkhornConfig, HISTOGRAM_TOL};
use crate::error::{Error, Result};

/// Inputs and weights for one barycenter.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterGroup {
    histograms: Vec<Histogram>,
    weights: Vec<f64>,
}

impl BarycenterGroup {
    pub fn new(histograms: Vec<Histogram>, weights: Vec<f64>) -> Result<Self> {
        if histograms.is_empty() {
            return Err(Error::BadParameter("barycenter needs at least one histogram".into()));
        }
        if weights.len() != histograms.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} histograms",
                weights.len(),
                histograms.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::BadParameter("barycenter weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > HISTOGRAM_TOL {
            return Err(Error::BadParameter(format!("barycenter weights sum to {total}, not 1")));
        }
        Ok(Self { histograms, weights })
    }

    /// Equal weight on every input.
    pub fn uniform(histograms: Vec<Histogram>) -> Result<Self> {
        let n = histograms.len().max(1);
        Self::new(histograms, vec![1.0 / n as f64; n])
    }

    pub fn histograms(&self) -> &[Histogram] {
        &self.histograms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Regularized barycenter of `histograms` with weights `eta` under the square
/// cost `m`. The result is normalized to unit mass.
pub fn barycenter(histograms: &[Histogram], eta: &[f64], m: &CostMatrix, cfg: &SinkhornConfig) -> Result<Histogram> {
    let group = BarycenterGroup::new(histograms.to_vec(), eta.to_vec())?;
    let mut out = barycenter_batch(std::slice::from_ref(&group), m, cfg)?;
    Ok(out.pop().expect("one group in, one barycenter out"))
}

/// Barycenters of many groups over the same support. Groups may hold
/// different numbers of histograms.
pub fn barycenter_batch(groups: &[BarycenterGroup], m: &CostMatrix, cfg: &SinkhornConfig) -> Result<Vec<Histogram>> {
    cfg.validate()?;
    let (n, n2) = m.shape();
    if n != n2 {
        return Err(Error::Shape(format!("barycenter cost must be square, got {n}x{n2}")));
    }
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    for g in groups {
        if let Some(h) = g.histograms.iter().find(|h| h.len() != n) {
            return Err(Error::Shape(format!("histogram of length {} on a support of {n}", h.len())));
        }
    }
    let costs = m.costs();
    let raw = match resolve_domain(cfg, m.max())? {
        Domain::Scaling => {
            let k = costs.mapv(|c| (-c / cfg.lambda).exp());
            scaling_batch(&k, groups, cfg.iters)?
        }
        _ => {
            let log_k = RowMajor::from_fn(n, n, |i, j| -costs[[i, j]] / cfg.lambda);
            groups.par_iter().map(|g| log_group(&log_k, g, cfg.iters)).collect()
        }
    };
    raw.into_iter()
        .map(|p| {
            let total: f64 = p.iter().sum();
            if !(total > 0.0) || !total.is_finite() {
                return Err(Error::NumericalOverflow("barycenter lost all mass".into()));
            }
            Histogram::new(p.iter().map(|x| x / total).collect::<Vec<_>>())
        })
        .collect()
}

/// Splits a positive finite `x` into `m * 2^e` with `m` in `[1, 2)`.
fn split_exponent(x: f64) -> (f64, i64) {
    const EXP_MASK: u64 = 0x7ff << 52;
    let bits = x.to_bits();
    let raw = ((bits & EXP_MASK) >> 52) as i64;
    if raw == 0x7ff || x == 0.0 {
        return (x, 0);
    }
    if raw == 0 {
        // Subnormal: scale into the normal range first.
        let (m, e) = split_exponent(x * 2f64.powi(64));
        return (m, e - 64);
    }
    (f64::from_bits((bits & !EXP_MASK) | (1023 << 52)), raw - 1023)
}

/// `prod_c q_c^(1/N)` via a running product with the binary exponent kept
/// apart, so only one `ln`/`exp` pair is needed per entry.
fn uniform_geometric_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut mant, mut exp2, mut count) = (1.0f64, 0i64, 0usize);
    for q in values {
        let (m, e) = split_exponent(mant * q);
        mant = m;
        exp2 += e;
        count += 1;
    }
    if mant == 0.0 || !mant.is_finite() {
        return mant;
    }
    ((mant.ln() + exp2 as f64 * std::f64::consts::LN_2) / count as f64).exp()
}

fn scaling_batch(k: &Array2<f64>, groups: &[BarycenterGroup], iters: usize) -> Result<Vec<Vec<f64>>> {
    let n = k.nrows();
    let mut spans = Vec::with_capacity(groups.len());
    let mut cols = 0;
    for g in groups {
        spans.push(cols..cols + g.histograms.len());
        cols += g.histograms.len();
    }
    let uniform: Vec<bool> = groups
        .iter()
        .map(|g| g.weights.iter().all(|&w| w == g.weights[0]))
        .collect();
    let mut b = Array2::zeros((n, cols));
    for (g, span) in groups.iter().zip(&spans) {
        for (c, h) in span.clone().zip(&g.histograms) {
            b.column_mut(c).assign(h.weights());
        }
    }
    let mut v = Array2::<f64>::ones((n, cols));
    let mut u = Array2::<f64>::zeros((n, cols));
    let mut ktu = Array2::<f64>::zeros((n, cols));
    let mut p = Array2::<f64>::zeros((n, groups.len()));
    for _ in 0..iters {
        general_mat_mul(1.0, k, &v, 0.0, &mut u);
        Zip::from(&mut u).and(&b).for_each(|u, &b| *u = b / *u);
        general_mat_mul(1.0, &k.t(), &u, 0.0, &mut ktu);
        for (gi, (g, span)) in groups.iter().zip(&spans).enumerate() {
            for j in 0..n {
                let pj = if uniform[gi] {
                    uniform_geometric_mean(span.clone().map(|c| v[[j, c]] * ktu[[j, c]]))
                } else {
                    let mut lp = 0.0;
                    for (c, &eta) in span.clone().zip(&g.weights) {
                        if eta > 0.0 {
                            lp += eta * (v[[j, c]] * ktu[[j, c]]).ln();
                        }
                    }
                    lp.exp()
                };
                p[[j, gi]] = pj;
                for c in span.clone() {
                    v[[j, c]] = pj / ktu[[j, c]];
                }
            }
        }
    }
    if v.iter().chain(p.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NumericalOverflow(
            "barycenter scaling left the representable range; use the log domain".into(),
        ));
    }
    Ok(p.columns().into_iter().map(|c| c.to_vec()).collect())
}

fn log_group(log_k: &RowMajor, g: &BarycenterGroup, iters: usize) -> Vec<f64> {
    let n = log_k.rows;
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = g
        .histograms
        .iter()
        .map(|h| {
            let w = h.as_slice();
            ((0..n).filter(|&i| w[i] > 0.0).collect(), w.iter().map(|x| x.ln()).collect())
        })
        .collect();
    let cols = inputs.len();
    let mut lu = vec![vec![f64::NEG_INFINITY; n]; cols];
    let mut lv = vec![vec![0.0; n]; cols];
    let mut lktu = vec![vec![0.0; n]; cols];
    let mut lp = vec![0.0; n];
    for _ in 0..iters {
        for c in 0..cols {
            let (rows, log_b) = &inputs[c];
            for &i in rows {
                lu[c][i] = log_b[i] - log_sum_exp_shifted(log_k.row(i), &lv[c]);
            }
            for j in 0..n {
                lktu[c][j] = log_sum_exp_shifted(log_k.col(j), &lu[c]);
            }
        }
        for j in 0..n {
            let mut acc = 0.0;
            for c in 0..cols {
                let eta = g.weights[c];
                if eta > 0.0 {
                    acc += eta * (lv[c][j] + lktu[c][j]);
                }
            }
            lp[j] = acc;
            for c in 0..cols {
                lv[c][j] = acc - lktu[c][j];
            }
        }
    }
    let top = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    lp.iter().map(|x| (x - top).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grid_cost() -> CostMatrix {
        let x = [0.0f64, 0.5, 1.0];
        CostMatrix::new(Array2::from_shape_fn((3, 3), |(i, j)| (x[i] - x[j]).powi(2))).unwrap()
    }

    #[test]
    fn midpoint_of_two_diracs() {
        let m = grid_cost();
        let hs = [Histogram::dirac(3, 0), Histogram::dirac(3, 2)];
        for domain in [Domain::Log, Domain::Auto] {
            let cfg = SinkhornConfig::new(0.01, 500).with_domain(domain);
            let p = barycenter(&hs, &[0.5, 0.5], &m, &cfg).unwrap();
            assert!(p.as_slice()[1] >= 0.95, "{:?}", p);
        }
    }

    #[test]
    fn single_input_is_fixed() {
        let m = grid_cost();
        let h = Histogram::new(vec![0.2, 0.3, 0.5]).unwrap();
        let cfg = SinkhornConfig::new(1e-3 * m.median(), 200);
        let p = barycenter(std::slice::from_ref(&h), &[1.0], &m, &cfg).unwrap();
        assert!(p.total_variation(&h) < 1e-3);
    }

    #[test]
    fn domains_agree() {
        let m = grid_cost();
        let hs = [
            Histogram::new(vec![0.2, 0.3, 0.5]).unwrap(),
            Histogram::new(vec![0.6, 0.0, 0.4]).unwrap(),
        ];
        let cfg = SinkhornConfig::new(0.1, 300);
        let a = barycenter(&hs, &[0.3, 0.7], &m, &cfg.with_domain(Domain::Log)).unwrap();
        let b = barycenter(&hs, &[0.3, 0.7], &m, &cfg.with_domain(Domain::Scaling)).unwrap();
        assert!(a.total_variation(&b) < 1e-10);
    }

    #[test]
    fn exponent_split_and_geometric_mean() {
        assert_eq!(split_exponent(12.0), (1.5, 3));
        assert_eq!(split_exponent(f64::MIN_POSITIVE / 4.0), (1.0, -1024));
        let g = uniform_geometric_mean([1e-200, 1e-200, 1e-200, 8.0].into_iter());
        let want = (3.0 * 1e-200f64.ln() + 8f64.ln()) / 4.0;
        assert!((g.ln() - want).abs() < 1e-12);
        assert_eq!(uniform_geometric_mean([2.0, 0.0].into_iter()), 0.0);
    }

    #[test]
    fn errors() {
        let m = grid_cost();
        let cfg = SinkhornConfig::default();
        assert!(matches!(barycenter(&[], &[], &m, &cfg), Err(Error::BadParameter(_))));
        let short = Histogram::uniform(2);
        assert!(matches!(barycenter(&[short], &[1.0], &m, &cfg), Err(Error::Shape(_))));
        let rect = CostMatrix::new(array![[0.0, 1.0, 2.0]]).unwrap();
        assert!(matches!(
            barycenter(&[Histogram::uniform(1)], &[1.0], &rect, &cfg),
            Err(Error::Shape(_))
        ));
    }
}
