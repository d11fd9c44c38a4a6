//! Ground costs over atoms and the Context Mover's Distance between words
//! and sentences.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimates::{DistributionalEstimate, HistogramStore};
use crate::ot::{self, median, BarycenterGroup, CostMatrix, Histogram, Normalization, Preprocessing, SinkhornConfig};

/// Distance on the ground space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum Metric {
    #[default]
    Euclidean,
    /// Angle between vectors, `arccos` of the cosine similarity.
    Angular,
    /// Asymmetric entailment cost over log-odds vectors; the exponent is ignored.
    Entailment,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Angular => "angular",
            Metric::Entailment => "entailment",
        }
    }

    pub fn is_symmetric(self) -> bool {
        self != Metric::Entailment
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "angular" => Ok(Metric::Angular),
            "entailment" => Ok(Metric::Entailment),
            _ => Err(Error::BadParameter(format!("unknown metric {s:?}"))),
        }
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `1 / (1 + e^x)`, i.e. `sigma(-x)`.
fn sigmoid_neg(x: f64) -> f64 {
    if x >= 0.0 {
        let e = (-x).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `-sum_t sigma(-v_i[t]) * log sigma(-v_j[t])`.
pub fn entailment_cost(vi: &[f64], vj: &[f64]) -> f64 {
    debug_assert_eq!(vi.len(), vj.len());
    // log sigma(-x) = -softplus(x)
    vi.iter().zip(vj).map(|(&a, &b)| sigmoid_neg(a) * softplus(b)).sum()
}

fn raw_distance(metric: Metric, p: u32, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    match metric {
        Metric::Euclidean => {
            let d = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            Ok(d.powi(p as i32))
        }
        Metric::Angular => {
            let (nx, ny) = (x.dot(&x).sqrt(), y.dot(&y).sqrt());
            if nx == 0.0 || ny == 0.0 {
                return Err(Error::BadInput("angular metric is undefined for a zero vector".into()));
            }
            let cos = (x.dot(&y) / (nx * ny)).clamp(-1.0, 1.0);
            Ok(cos.acos().powi(p as i32))
        }
        Metric::Entailment => Ok(entailment_cost(
            x.as_slice().expect("atom rows are contiguous"),
            y.as_slice().expect("atom rows are contiguous"),
        )),
    }
}

/// Atoms of the ground space: `K` centroids followed by one point per word.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundSpace {
    atoms: Array2<f64>,
    k: usize,
    metric: Metric,
    p: u32,
    preprocessing: Preprocessing,
    /// Divisor used by median normalization.
    scale: f64,
}

impl GroundSpace {
    pub fn new(centroids: &Array2<f64>, points: &Array2<f64>, metric: Metric, p: u32) -> Result<Self> {
        if centroids.ncols() != points.ncols() && centroids.nrows() > 0 && points.nrows() > 0 {
            return Err(Error::Shape(format!(
                "centroids have dimension {}, points {}",
                centroids.ncols(),
                points.ncols()
            )));
        }
        if !(1..=2).contains(&p) {
            return Err(Error::BadParameter(format!("cost exponent must be 1 or 2, got {p}")));
        }
        let atoms = ndarray::concatenate(ndarray::Axis(0), &[centroids.view(), points.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(Error::BadInput("atom vectors must be finite".into()));
        }
        Ok(Self {
            atoms,
            k: centroids.nrows(),
            metric,
            p,
            preprocessing: Preprocessing::default(),
            scale: 1.0,
        })
    }

    /// Clips costs at `clip`, then normalizes. Median normalization divides
    /// every cost by one global constant: the median of the centroid-centroid
    /// cost matrix (after clipping).
    pub fn with_preprocessing(mut self, normalization: Normalization, clip: Option<f64>) -> Result<Self> {
        if let Some(theta) = clip {
            if !(theta > 0.0) || !theta.is_finite() {
                return Err(Error::BadParameter(format!("clip threshold must be positive, got {theta}")));
            }
        }
        self.preprocessing = Preprocessing { clip, normalization };
        self.scale = 1.0;
        if normalization == Normalization::Median {
            let k = self.k;
            let ids: Vec<u32> = if k > 0 {
                (0..k as u32).collect()
            } else {
                (0..self.atoms.nrows() as u32).collect()
            };
            let mut raw = Vec::with_capacity(ids.len() * ids.len());
            for &i in &ids {
                for &j in &ids {
                    raw.push(self.clipped(i as usize, j as usize)?);
                }
            }
            let med = median(raw.into_iter());
            if !(med > 0.0) {
                return Err(Error::DegenerateCost("median centroid cost is zero".into()));
            }
            self.scale = med;
        }
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn preprocessing(&self) -> Preprocessing {
        self.preprocessing
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    fn clipped(&self, i: usize, j: usize) -> Result<f64> {
        let c = raw_distance(self.metric, self.p, self.atoms.row(i), self.atoms.row(j))?;
        Ok(match self.preprocessing.clip {
            Some(theta) => c.min(theta),
            None => c,
        })
    }

    /// Preprocessed cost from atom `i` to atom `j`.
    pub fn cost(&self, i: u32, j: u32) -> Result<f64> {
        let n = self.atoms.nrows();
        for id in [i, j] {
            if id as usize >= n {
                return Err(Error::Index {
                    index: id as usize,
                    size: n,
                });
            }
        }
        let c = self.clipped(i as usize, j as usize)?;
        Ok(match self.preprocessing.normalization {
            Normalization::None => c,
            Normalization::Median => c / self.scale,
            Normalization::Log => c.ln_1p(),
        })
    }
}

/// Cost matrix between two lists of atoms.
pub fn ground_cost(space: &GroundSpace, support_a: &[u32], support_b: &[u32]) -> Result<CostMatrix> {
    let mut costs = Array2::zeros((support_a.len(), support_b.len()));
    for (r, &i) in support_a.iter().enumerate() {
        for (c, &j) in support_b.iter().enumerate() {
            costs[[r, c]] = space.cost(i, j)?;
        }
    }
    CostMatrix::with_meta(costs, space.p, space.preprocessing)
}

fn canonical_order(a: &DistributionalEstimate, b: &DistributionalEstimate) -> Ordering {
    a.support().cmp(b.support()).then_with(|| {
        a.weights()
            .iter()
            .zip(b.weights())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Sinkhorn cost of moving `source` onto `target`.
///
/// Under a symmetric metric the pair is put in a canonical order first, so
/// the result does not depend on argument order.
pub fn estimate_distance(
    source: &DistributionalEstimate,
    target: &DistributionalEstimate,
    space: &GroundSpace,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    let (a, b) = if space.metric.is_symmetric() && canonical_order(source, target) == Ordering::Greater {
        (target, source)
    } else {
        (source, target)
    };
    let m = ground_cost(space, a.support(), b.support())?;
    let ha = Histogram::new(a.weights().to_vec())?;
    let hb = Histogram::new(b.weights().to_vec())?;
    Ok(ot::sinkhorn(&ha, &hb, &m, cfg)?.cost())
}

fn lookup(store: &HistogramStore, w: usize) -> Result<&DistributionalEstimate> {
    store
        .get(w)
        .ok_or_else(|| Error::Oov(format!("word id {w} is not in the histogram store")))
}

/// Context Mover's Distance from word `w1` to word `w2`.
pub fn cmd(w1: usize, w2: usize, store: &HistogramStore, space: &GroundSpace, cfg: &SinkhornConfig) -> Result<f64> {
    estimate_distance(lookup(store, w1)?, lookup(store, w2)?, space, cfg)
}

/// Many word pairs, evaluated in parallel. Each entry matches [`cmd`].
pub fn cmd_pairs(
    pairs: &[(usize, usize)],
    store: &HistogramStore,
    space: &GroundSpace,
    cfg: &SinkhornConfig,
) -> Vec<Result<f64>> {
    pairs.par_iter().map(|&(a, b)| cmd(a, b, store, space, cfg)).collect()
}

/// A sentence represented as the barycenter of its words' estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEstimate {
    estimate: DistributionalEstimate,
    words: Vec<u32>,
}

impl SentenceEstimate {
    pub fn estimate(&self) -> &DistributionalEstimate {
        &self.estimate
    }

    /// In-vocabulary word ids that make up the sentence, in input order.
    pub fn words(&self) -> &[u32] {
        &self.words
    }
}

/// Context Mover's Barycenter of a sentence.
///
/// Word ids outside the store are skipped. `eta` (one weight per input word)
/// defaults to uniform and is renormalized over the kept words. The support
/// is the sorted union of the words' supports.
pub fn comb(
    sentence: &[usize],
    store: &HistogramStore,
    space: &GroundSpace,
    eta: Option<&[f64]>,
    cfg: &SinkhornConfig,
) -> Result<SentenceEstimate> {
    if let Some(eta) = eta {
        if eta.len() != sentence.len() {
            return Err(Error::Shape(format!("{} weights for {} words", eta.len(), sentence.len())));
        }
    }
    let kept: Vec<(usize, f64)> = sentence
        .iter()
        .enumerate()
        .filter(|(_, &w)| store.get(w).is_some())
        .map(|(i, &w)| (w, eta.map_or(1.0, |e| e[i])))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySentence);
    }
    let words: Vec<u32> = kept.iter().map(|&(w, _)| w as u32).collect();
    let first = kept[0].0;
    if kept.iter().all(|&(w, _)| w == first) {
        return Ok(SentenceEstimate {
            estimate: lookup(store, first)?.clone(),
            words,
        });
    }
    let total: f64 = kept.iter().map(|x| x.1).sum();
    if !(total > 0.0) || kept.iter().any(|x| !(x.1 >= 0.0)) {
        return Err(Error::BadParameter("sentence weights must be >= 0 with positive sum".into()));
    }
    let estimates: Vec<&DistributionalEstimate> = kept.iter().map(|&(w, _)| lookup(store, w)).collect::<Result<_>>()?;
    let mut support: Vec<u32> = estimates.iter().flat_map(|e| e.support().iter().copied()).collect();
    support.sort_unstable();
    support.dedup();
    let hists = estimates
        .iter()
        .map(|e| {
            let mut w = vec![0.0; support.len()];
            for (a, x) in e.iter() {
                w[support.binary_search(&a).expect("atom is in the union")] = x;
            }
            Histogram::new(w)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = kept.iter().map(|x| x.1 / total).collect();
    let m = ground_cost(space, &support, &support)?;
    let group = BarycenterGroup::new(hists, weights)?;
    let bary = ot::barycenter_batch(std::slice::from_ref(&group), &m, cfg)?.pop().expect("one group");
    let (s, w): (Vec<u32>, Vec<f64>) = support
        .iter()
        .zip(bary.as_slice())
        .filter(|(_, &x)| x > 0.0)
        .map(|(&a, &x)| (a, x))
        .unzip();
    let total: f64 = w.iter().sum();
    let w = w.into_iter().map(|x| x / total).collect();
    Ok(SentenceEstimate {
        estimate: DistributionalEstimate::new(s, w, words[0])?,
        words,
    })
}

/// Context Mover's Distance between two sentence estimates.
pub fn sentence_cmd(s1: &SentenceEstimate, s2: &SentenceEstimate, space: &GroundSpace, cfg: &SinkhornConfig) -> Result<f64> {
    estimate_distance(&s1.estimate, &s2.estimate, space, cfg)
}

/// The `k` candidates closest to `query`, ascending by distance, ties broken
/// by word id. The query is the transport source.
pub fn nearest_neighbors(
    query: &DistributionalEstimate,
    candidates: &[usize],
    k: usize,
    store: &HistogramStore,
    space: &GroundSpace,
    cfg: &SinkhornConfig,
) -> Result<Vec<(usize, f64)>> {
    if candidates.is_empty() {
        return Err(Error::BadParameter("candidate set is empty".into()));
    }
    if k > candidates.len() {
        return Err(Error::BadParameter(format!(
            "asked for {k} neighbors among {} candidates",
            candidates.len()
        )));
    }
    let mut scored = candidates
        .par_iter()
        .map(|&w| Ok((w, estimate_distance(query, lookup(store, w)?, space, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn entailment_hand_values() {
        assert!((entailment_cost(&[0.0], &[0.0]) - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert!((entailment_cost(&[2.0], &[0.0]) - 0.0826).abs() < 1e-4);
        assert!((entailment_cost(&[0.0], &[2.0]) - 1.0635).abs() < 1e-4);
        assert!(entailment_cost(&[-800.0], &[800.0]).is_finite());
    }

    #[test]
    fn euclidean_and_angular() {
        let c = array![[0.0, 0.0]];
        let pts = array![[3.0, 4.0], [1.0, 0.0], [0.0, 1.0]];
        let s = GroundSpace::new(&c, &pts, Metric::Euclidean, 1).unwrap();
        assert_eq!(s.cost(0, 1).unwrap(), 5.0);
        assert_eq!(s.cost(1, 1).unwrap(), 0.0);
        let a = GroundSpace::new(&c, &pts, Metric::Angular, 1).unwrap();
        assert!((a.cost(2, 3).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(matches!(a.cost(0, 1), Err(Error::BadInput(_))));
        assert!(matches!(s.cost(0, 9), Err(Error::Index { .. })));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::Euclidean, Metric::Angular, Metric::Entailment] {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("cosine".parse::<Metric>().is_err());
    }

    #[test]
    fn median_scale_is_global() {
        let c = array![[0.0], [1.0], [3.0]];
        let pts = array![[10.0]];
        let s = GroundSpace::new(&c, &pts, Metric::Euclidean, 1)
            .unwrap()
            .with_preprocessing(Normalization::Median, None)
            .unwrap();
        // centroid costs {0,1,3,1,0,2,3,2,0} have median 1
        assert_eq!(s.cost(0, 3).unwrap(), 10.0);
    }
}
