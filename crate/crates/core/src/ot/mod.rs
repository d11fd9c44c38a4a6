//! Discrete optimal transport: an exact solver for small instances,
//! entropic Sinkhorn distances and fixed-support regularized barycenters.
//!
//! All kernels are pure functions over read-only inputs; the batched entry
//! points reuse the exact per-item arithmetic of the single-item calls, so a
//! batch result equals the looped result bit for bit.

mod barycenter;
mod exact;
mod kernel;
mod sinkhorn;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub use barycenter::{barycenter, barycenter_batch, BarycenterGroup};
pub use exact::{exact_ot, EXACT_SIZE_LIMIT};
pub use sinkhorn::{sinkhorn, sinkhorn_batch, sinkhorn_plans, Domain, SinkhornConfig};

/// Tolerance on the unit-sum invariant.
pub const HISTOGRAM_TOL: f64 = 1e-9;

/// A probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram(Array1<f64>);

impl Histogram {
    pub fn new(weights: impl Into<Array1<f64>>) -> Result<Self> {
        let weights = weights.into();
        if weights.is_empty() {
            return Err(Error::BadInput("histogram is empty".into()));
        }
        if weights.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::BadInput("histogram weights must be finite and >= 0".into()));
        }
        let total = weights.sum();
        if (total - 1.0).abs() > HISTOGRAM_TOL {
            return Err(Error::BadInput(format!("histogram sums to {total}, not 1")));
        }
        Ok(Self(weights))
    }

    /// Scales nonnegative weights to unit sum.
    pub fn normalized(weights: impl Into<Array1<f64>>) -> Result<Self> {
        let weights = weights.into();
        let total = weights.sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::BadInput("histogram has no mass".into()));
        }
        Self::new(weights / total)
    }

    pub fn dirac(n: usize, at: usize) -> Self {
        let mut w = Array1::zeros(n);
        w[at] = 1.0;
        Self(w)
    }

    pub fn uniform(n: usize) -> Self {
        Self(Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("histograms are contiguous")
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self.0.iter().zip(other.0.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }
}

/// How raw costs were rescaled before transport.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Normalization {
    #[default]
    None,
    /// Divided by the median entry.
    Median,
    /// Replaced by `ln(1 + c)`.
    Log,
}

/// Record of the preprocessing applied to a cost matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Preprocessing {
    pub clip: Option<f64>,
    pub normalization: Normalization,
}

/// Ground costs between two supports.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    costs: Array2<f64>,
    p: u32,
    preprocessing: Preprocessing,
}

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        Self::with_meta(costs, 1, Preprocessing::default())
    }

    pub fn with_meta(costs: Array2<f64>, p: u32, preprocessing: Preprocessing) -> Result<Self> {
        if costs.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::BadInput("costs must be finite and >= 0".into()));
        }
        Ok(Self {
            costs,
            p,
            preprocessing,
        })
    }

    pub fn costs(&self) -> &Array2<f64> {
        &self.costs
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn preprocessing(&self) -> Preprocessing {
        self.preprocessing
    }

    pub fn shape(&self) -> (usize, usize) {
        self.costs.dim()
    }

    pub fn max(&self) -> f64 {
        self.costs.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.costs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn median(&self) -> f64 {
        median(self.costs.iter().copied())
    }
}

/// Median of a multiset; even counts take the mean of the two middle values.
pub fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Clips entries at `clip` (if given), then normalizes.
///
/// Median mode divides by the median entry and fails when that median is 0.
pub fn preprocess_cost(raw: &Array2<f64>, normalization: Normalization, clip: Option<f64>) -> Result<CostMatrix> {
    if raw.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
        return Err(Error::BadInput("raw costs must be finite and >= 0".into()));
    }
    if let Some(theta) = clip {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::BadParameter(format!("clip threshold must be positive, got {theta}")));
        }
    }
    let mut costs = match clip {
        Some(theta) => raw.mapv(|c| c.min(theta)),
        None => raw.clone(),
    };
    match normalization {
        Normalization::None => {}
        Normalization::Median => {
            let med = median(costs.iter().copied());
            if !(med > 0.0) {
                return Err(Error::DegenerateCost("median entry is zero".into()));
            }
            costs.mapv_inplace(|c| c / med);
        }
        Normalization::Log => costs.mapv_inplace(f64::ln_1p),
    }
    CostMatrix::with_meta(costs, 1, Preprocessing { clip, normalization })
}

/// A coupling between two histograms and its transport cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    coupling: Array2<f64>,
    cost: f64,
}

impl TransportPlan {
    pub(crate) fn from_coupling(coupling: Array2<f64>, costs: &Array2<f64>) -> Self {
        let cost = coupling.iter().zip(costs.iter()).map(|(t, c)| t * c).sum();
        Self { coupling, cost }
    }

    pub fn coupling(&self) -> &Array2<f64> {
        &self.coupling
    }

    /// `sum T_ij M_ij`, without any entropy term.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    /// Largest absolute deviation of the row and column sums from `a`, `b`.
    pub fn marginal_error(&self, a: &Histogram, b: &Histogram) -> f64 {
        let rows = self.coupling.sum_axis(ndarray::Axis(1));
        let cols = self.coupling.sum_axis(ndarray::Axis(0));
        let r = rows.iter().zip(a.weights()).map(|(x, y)| (x - y).abs());
        let c = cols.iter().zip(b.weights()).map(|(x, y)| (x - y).abs());
        r.chain(c).fold(0.0, f64::max)
    }
}

pub(crate) fn check_shapes(a: &Histogram, b: &Histogram, m: &CostMatrix) -> Result<()> {
    if m.shape() != (a.len(), b.len()) {
        return Err(Error::Shape(format!(
            "cost matrix is {:?}, histograms are {} and {}",
            m.shape(),
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn preprocessing_cases() {
        let raw = array![[0.0, 2.0], [4.0, 6.0]];
        assert_eq!(preprocess_cost(&raw, Normalization::None, None).unwrap().costs(), &raw);
        let med = preprocess_cost(&raw, Normalization::Median, None).unwrap();
        assert_eq!(med.costs(), &array![[0.0, 2.0 / 3.0], [4.0 / 3.0, 2.0]]);
        let clipped = preprocess_cost(&array![[1.0, 14.0], [3.0, 0.0]], Normalization::None, Some(10.0)).unwrap();
        assert_eq!(clipped.max(), 10.0);
        let log = preprocess_cost(&raw, Normalization::Log, None).unwrap();
        assert_eq!(log.costs()[[1, 1]], 7f64.ln());
        assert!(matches!(
            preprocess_cost(&Array2::zeros((2, 2)), Normalization::Median, None),
            Err(Error::DegenerateCost(_))
        ));
        // Clip happens before normalization.
        let both = preprocess_cost(&array![[1.0, 3.0, 100.0]], Normalization::Median, Some(5.0)).unwrap();
        assert_eq!(both.costs(), &array![[1.0 / 3.0, 1.0, 5.0 / 3.0]]);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median([3.0, 1.0, 2.0].into_iter()), 2.0);
        assert_eq!(median([0.0, 2.0, 4.0, 6.0].into_iter()), 3.0);
    }

    #[test]
    fn histogram_validation() {
        assert!(Histogram::new(vec![0.5, 0.5]).is_ok());
        assert!(Histogram::new(vec![0.5, 0.6]).is_err());
        assert!(Histogram::new(vec![-0.5, 1.5]).is_err());
        assert!(Histogram::new(Vec::<f64>::new()).is_err());
        assert_eq!(Histogram::normalized(vec![1.0, 3.0]).unwrap().as_slice(), &[0.25, 0.75]);
    }
}
