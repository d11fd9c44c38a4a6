//! Per-word histograms over representative contexts, the mixed estimate and
//! principal-component removal on point embeddings.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, ReadLe, WriteLe};
use crate::clustering::ClusteredSppmi;
use crate::error::{Error, Result};

/// Tolerance on the unit-sum invariant of a histogram.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A histogram over atoms. Ids below `K` are cluster centroids, id `K + w`
/// is the point embedding of word `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionalEstimate {
    support: Vec<u32>,
    weights: Vec<f64>,
    owner: u32,
}

impl DistributionalEstimate {
    pub fn new(support: Vec<u32>, weights: Vec<f64>, owner: u32) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} atoms but {} weights",
                support.len(),
                weights.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::BadInput("estimate has empty support".into()));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::BadInput("duplicate atom in support".into()));
        }
        if weights.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::BadInput("weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::BadInput(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            support,
            weights,
            owner,
        })
    }

    /// Unit mass on a single atom.
    pub fn dirac(atom: u32, owner: u32) -> Self {
        Self {
            support: vec![atom],
            weights: vec![1.0],
            owner,
        }
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn owner(&self) -> u32 {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn weight_of(&self, atom: u32) -> f64 {
        self.support
            .iter()
            .position(|&a| a == atom)
            .map_or(0.0, |i| self.weights[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    /// Total-variation distance, `0.5 * sum |p - q|` over the union support.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let mut diff = 0.0;
        for (a, w) in self.iter() {
            diff += (w - other.weight_of(a)).abs();
        }
        for (a, w) in other.iter() {
            if !self.support.contains(&a) {
                diff += w;
            }
        }
        0.5 * diff
    }
}

/// Normalizes one row of the clustered table over its nonzero entries.
pub fn build_estimate(word: usize, clustered: &ClusteredSppmi) -> Result<DistributionalEstimate> {
    let table = clustered.table();
    if word >= table.nrows() {
        return Err(Error::Index {
            index: word,
            size: table.nrows(),
        });
    }
    let row = table.row(word);
    let mass: f64 = row.sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMassWord(word));
    }
    let (support, weights): (Vec<u32>, Vec<f64>) = row
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(k, &x)| (k as u32, x / mass))
        .unzip();
    Ok(DistributionalEstimate {
        support,
        weights,
        owner: word as u32,
    })
}

/// Moves mass `m` onto the word's own point atom (`k + owner`) and scales
/// the remaining weights by `1 - m`.
pub fn mix_estimate(estimate: &DistributionalEstimate, m: f64, k: usize) -> Result<DistributionalEstimate> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::BadParameter(format!("mixing weight must lie in [0,1], got {m}")));
    }
    let own = binio::to_u32(k + estimate.owner as usize, "atom id")?;
    if m == 0.0 {
        return Ok(estimate.clone());
    }
    if m == 1.0 {
        return Ok(DistributionalEstimate::dirac(own, estimate.owner));
    }
    let mut support = Vec::with_capacity(estimate.len() + 1);
    let mut weights = Vec::with_capacity(estimate.len() + 1);
    let mut own_weight = m;
    for (a, w) in estimate.iter() {
        if a == own {
            own_weight += (1.0 - m) * w;
        } else {
            support.push(a);
            weights.push((1.0 - m) * w);
        }
    }
    support.push(own);
    weights.push(own_weight);
    Ok(DistributionalEstimate {
        support,
        weights,
        owner: estimate.owner,
    })
}

/// Estimates for every vocabulary word. Words whose row carries no mass are
/// represented by a Dirac on their own point atom.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramStore {
    k: usize,
    estimates: Vec<DistributionalEstimate>,
}

const HIST_MAGIC: &[u8; 8] = b"CMVHIST1";

impl HistogramStore {
    pub fn build(clustered: &ClusteredSppmi) -> Result<Self> {
        let k = clustered.k();
        let estimates = (0..clustered.vocab_size())
            .map(|w| match build_estimate(w, clustered) {
                Err(Error::ZeroMassWord(_)) => Ok(DistributionalEstimate::dirac((k + w) as u32, w as u32)),
                other => other,
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k, estimates })
    }

    pub fn from_estimates(k: usize, estimates: Vec<DistributionalEstimate>) -> Result<Self> {
        for (i, e) in estimates.iter().enumerate() {
            if e.owner as usize != i {
                return Err(Error::BadInput(format!("estimate {i} is owned by word {}", e.owner)));
            }
            let limit = k + estimates.len();
            if let Some(a) = e.support.iter().find(|&&a| a as usize >= limit) {
                return Err(Error::BadInput(format!("atom {a} exceeds atom count {limit}")));
            }
        }
        Ok(Self { k, estimates })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn get(&self, word: usize) -> Option<&DistributionalEstimate> {
        self.estimates.get(word)
    }

    pub fn estimates(&self) -> &[DistributionalEstimate] {
        &self.estimates
    }

    /// Every estimate mixed with its own point atom at weight `m`.
    pub fn mixed(&self, m: f64) -> Result<Self> {
        let estimates = self
            .estimates
            .iter()
            .map(|e| mix_estimate(e, m, self.k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k: self.k, estimates })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        let we = binio::write_err(path);
        w.write_all(HIST_MAGIC).map_err(&we)?;
        w.put_u32(binio::to_u32(self.len(), "vocabulary size")?).map_err(&we)?;
        w.put_u32(binio::to_u32(self.k, "cluster count")?).map_err(&we)?;
        for e in &self.estimates {
            w.put_u32(e.owner).map_err(&we)?;
            w.put_u32(e.len() as u32).map_err(&we)?;
            for (a, x) in e.iter() {
                w.put_u32(a).map_err(&we)?;
                w.put_f32(x as f32).map_err(&we)?;
            }
        }
        w.flush().map_err(&we)
    }

    /// Loads a store; weights are widened to f64 and renormalized to unit sum.
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        let re = binio::read_err(path);
        binio::expect_magic(&mut r, HIST_MAGIC, path)?;
        let v = r.u32_le().map_err(&re)? as usize;
        let k = r.u32_le().map_err(&re)? as usize;
        let mut estimates = Vec::with_capacity(v.min(1 << 20));
        for _ in 0..v {
            let owner = r.u32_le().map_err(&re)?;
            let nnz = r.u32_le().map_err(&re)? as usize;
            let mut support = Vec::with_capacity(nnz.min(1 << 16));
            let mut weights = Vec::with_capacity(nnz.min(1 << 16));
            for _ in 0..nnz {
                support.push(r.u32_le().map_err(&re)?);
                weights.push(r.f32_le().map_err(&re)? as f64);
            }
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Format(format!("{}: word {owner} has no mass", path.display())));
            }
            weights.iter_mut().for_each(|x| *x /= total);
            let e = DistributionalEstimate::new(support, weights, owner)
                .map_err(|e| Error::Format(format!("{}: word {owner}: {e}", path.display())))?;
            estimates.push(e);
        }
        binio::expect_eof(&mut r, path)?;
        Self::from_estimates(k, estimates).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Word point embeddings, optionally with their first principal direction
/// projected out.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimateTable {
    vectors: Array2<f64>,
    pc: Option<Array1<f64>>,
}

impl PointEstimateTable {
    pub fn new(vectors: Array2<f64>) -> Self {
        Self { vectors, pc: None }
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn pc(&self) -> Option<&Array1<f64>> {
        self.pc.as_ref()
    }
}

const PC_MAX_ITERS: usize = 20_000;

/// Top right-singular direction of the (uncentered) vector set by power
/// iteration on `X^T X`, sign-fixed so its largest component is positive.
pub fn first_principal_component(vectors: &Array2<f64>, seed: u64) -> Result<Array1<f64>> {
    let gram = vectors.t().dot(vectors);
    let d = gram.nrows();
    if d == 0 || gram.iter().all(|&x| x == 0.0) {
        return Err(Error::DegenerateInput("point estimates have rank 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array1::<f64>::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
    let norm = v.dot(&v).sqrt();
    v /= norm;
    let mut eig = 0.0f64;
    for _ in 0..PC_MAX_ITERS {
        let mut next = gram.dot(&v);
        let next_eig = v.dot(&next);
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            // The start vector was orthogonal to the whole row space.
            v = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
            let n = v.dot(&v).sqrt();
            v /= n;
            continue;
        }
        next /= norm;
        let step = (&next - &v).mapv(|x| x * x).sum().sqrt();
        let eig_change = (next_eig - eig).abs() / next_eig.abs().max(f64::MIN_POSITIVE);
        v = next;
        eig = next_eig;
        if eig_change <= 1e-9 && step <= 1e-12 {
            break;
        }
    }
    let lead = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if lead < 0.0 {
        v.mapv_inplace(|x| -x);
    }
    Ok(v)
}

/// Replaces every vector `v` by `v - (u.v) u` where `u` is the first
/// principal component, and records `u`.
pub fn remove_pc(points: &PointEstimateTable, seed: u64) -> Result<PointEstimateTable> {
    let u = first_principal_component(&points.vectors, seed)?;
    let mut vectors = points.vectors.clone();
    for mut row in vectors.outer_iter_mut() {
        let proj = row.dot(&u);
        row.scaled_add(-proj, &u);
    }
    Ok(PointEstimateTable { vectors, pc: Some(u) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn table(rows: Array2<f64>) -> ClusteredSppmi {
        ClusteredSppmi::new(rows, 0.0).unwrap()
    }

    #[test]
    fn build_estimate_cases() {
        let t = table(array![[2.0, 2.0, 0.0], [1.0, 3.0, 0.0], [0.0, 0.0, 0.0]]);
        let e = build_estimate(0, &t).unwrap();
        assert_eq!(e.support(), &[0, 1]);
        assert_eq!(e.weights(), &[0.5, 0.5]);
        let e = build_estimate(1, &t).unwrap();
        assert_eq!(e.weights(), &[0.25, 0.75]);
        assert!(matches!(build_estimate(2, &t), Err(Error::ZeroMassWord(2))));
        assert!(matches!(build_estimate(3, &t), Err(Error::Index { .. })));
    }

    #[test]
    fn store_falls_back_to_own_atom() {
        let t = table(array![[1.0, 0.0], [0.0, 0.0]]);
        let s = HistogramStore::build(&t).unwrap();
        assert_eq!(s.get(1).unwrap(), &DistributionalEstimate::dirac(2 + 1, 1));
    }

    #[test]
    fn mixing_cases() {
        let e = DistributionalEstimate::new(vec![0, 1], vec![0.5, 0.5], 4).unwrap();
        assert_eq!(mix_estimate(&e, 0.0, 10).unwrap(), e);
        assert_eq!(mix_estimate(&e, 1.0, 10).unwrap(), DistributionalEstimate::dirac(14, 4));
        let m = mix_estimate(&e, 0.4, 10).unwrap();
        assert_eq!(m.support(), &[0, 1, 14]);
        for (got, want) in m.weights().iter().zip([0.3, 0.3, 0.4]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(mix_estimate(&e, 1.2, 10).is_err());

        // Mixing a fallback Dirac keeps a Dirac.
        let d = DistributionalEstimate::dirac(14, 4);
        assert_eq!(mix_estimate(&d, 0.3, 10).unwrap().weights(), &[1.0]);
    }

    #[test]
    fn estimate_validation() {
        assert!(DistributionalEstimate::new(vec![0, 0], vec![0.5, 0.5], 0).is_err());
        assert!(DistributionalEstimate::new(vec![0, 1], vec![0.5, 0.6], 0).is_err());
        assert!(DistributionalEstimate::new(vec![0], vec![1.0, 0.0], 0).is_err());
    }

    #[test]
    fn rank_one_set_is_annihilated() {
        let u = array![0.6, 0.8];
        let rows: Vec<f64> = [1.0, -2.0, 3.5].iter().flat_map(|c| [c * u[0], c * u[1]]).collect();
        let p = PointEstimateTable::new(Array2::from_shape_vec((3, 2), rows).unwrap());
        let out = remove_pc(&p, 0).unwrap();
        assert!(out.vectors().iter().all(|x| x.abs() < 1e-12));
        let pc = out.pc().unwrap();
        assert!((pc.dot(pc) - 1.0).abs() < 1e-12);
        assert!((pc[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_table_is_degenerate() {
        let p = PointEstimateTable::new(Array2::zeros((3, 2)));
        assert!(matches!(remove_pc(&p, 0), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn histogram_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.bin");
        let t = table(array![[1.0, 3.0], [0.0, 0.0], [5.0, 0.0]]);
        let s = HistogramStore::build(&t).unwrap();
        s.save(&path).unwrap();
        assert_eq!(HistogramStore::load(&path).unwrap(), s);
    }
}
