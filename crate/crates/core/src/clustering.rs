//! Representative contexts: k-means over context embeddings, per-cluster
//! aggregation of SPPMI mass and the `beta` column normalization.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::{self, ReadLe, WriteLe};
use crate::cmd::Metric;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::ppmi::SppmiMatrix;

/// Dense vectors aligned to vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        if vectors.ncols() == 0 {
            return Err(Error::BadInput("embedding dimension must be at least 1".into()));
        }
        if let Some((i, _)) = vectors
            .outer_iter()
            .enumerate()
            .find(|(_, row)| row.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::BadInput(format!("embedding row {i} is not finite")));
        }
        Ok(Self { vectors })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("embedding rows have different lengths".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let n = if dim == 0 { 0 } else { flat.len() / dim };
        let vectors = Array2::from_shape_vec((n, dim), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(vectors)
    }

    /// Reads a GloVe-style text file (`token v1 ... vd` per line) and keeps the
    /// rows of `vocab`, in id order. Every vocabulary token must be present.
    /// A leading `count dim` header line, as written by word2vec, is skipped.
    pub fn load_aligned(path: &Path, vocab: &Vocabulary) -> Result<Self> {
        let r = binio::open(path)?;
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
        let mut dim: Option<usize> = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut fields = line.split_whitespace();
            let Some(tok) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if lineno == 0 && rest.len() == 1 && tok.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok() {
                continue;
            }
            let Some(id) = vocab.id(tok) else { continue };
            let values = rest
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| {
                    Error::Format(format!("{}:{}: non-numeric vector component", path.display(), lineno + 1))
                })?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(Error::Format(format!(
                        "{}:{}: expected {d} components, got {}",
                        path.display(),
                        lineno + 1,
                        values.len()
                    )))
                }
                Some(_) => {}
            }
            rows[id as usize] = Some(values);
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| {
                    Error::BadInput(format!(
                        "{}: no vector for vocabulary token {:?}",
                        path.display(),
                        vocab.token(i).unwrap_or_default()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(i)
    }
}

/// K centroids plus the context-to-cluster assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextClustering {
    centroids: Array2<f64>,
    assignment: Vec<u32>,
    metric: Metric,
    objective_trace: Vec<f64>,
}

const CLUSTER_MAGIC: &[u8; 8] = b"CMVCLUS1";

impl ContextClustering {
    pub fn new(centroids: Array2<f64>, assignment: Vec<u32>, metric: Metric) -> Result<Self> {
        let k = centroids.nrows();
        if let Some(bad) = assignment.iter().find(|&&a| a as usize >= k) {
            return Err(Error::BadClustering(format!("assignment {bad} exceeds cluster count {k}")));
        }
        Ok(Self {
            centroids,
            assignment,
            metric,
            objective_trace: Vec::new(),
        })
    }

    /// One cluster per context, centroid equal to the context vector.
    pub fn identity(embeddings: &EmbeddingTable, metric: Metric) -> Self {
        Self {
            centroids: embeddings.vectors().clone(),
            assignment: (0..embeddings.len() as u32).collect(),
            metric,
            objective_trace: vec![0.0],
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn centroids(&self) -> &Array2<f64> {
        &self.centroids
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// k-means objective after every assignment step (empty when loaded).
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    /// Sum of squared distances of each point to its assigned centroid, with
    /// points prepared the same way as during clustering.
    pub fn inertia(&self, embeddings: &EmbeddingTable) -> Result<f64> {
        let points = prepare_points(embeddings, self.metric)?;
        Ok(objective(&points, &self.centroids, &self.assignment))
    }

    /// Writes centroids as f32; `metric` is not part of the format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        let we = binio::write_err(path);
        w.write_all(CLUSTER_MAGIC).map_err(&we)?;
        w.put_u32(binio::to_u32(self.k(), "cluster count")?).map_err(&we)?;
        w.put_u32(binio::to_u32(self.dim(), "dimension")?).map_err(&we)?;
        for x in self.centroids.iter() {
            w.put_f32(*x as f32).map_err(&we)?;
        }
        for &a in &self.assignment {
            w.put_u32(a).map_err(&we)?;
        }
        w.flush().map_err(&we)
    }

    pub fn load(path: &Path, metric: Metric) -> Result<Self> {
        let mut r = binio::open(path)?;
        let re = binio::read_err(path);
        binio::expect_magic(&mut r, CLUSTER_MAGIC, path)?;
        let k = r.u32_le().map_err(&re)? as usize;
        let d = r.u32_le().map_err(&re)? as usize;
        let mut flat = Vec::with_capacity((k * d).min(1 << 24));
        for _ in 0..k * d {
            flat.push(r.f32_le().map_err(&re)? as f64);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
        if rest.len() % 4 != 0 {
            return Err(Error::Format(format!("{}: truncated assignment block", path.display())));
        }
        let assignment: Vec<u32> = rest
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let centroids = Array2::from_shape_vec((k, d), flat).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(centroids, assignment, metric).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Rows as clustered: unit-normalized for the angular metric, raw otherwise.
fn prepare_points(embeddings: &EmbeddingTable, metric: Metric) -> Result<Array2<f64>> {
    let mut points = embeddings.vectors().clone();
    if metric == Metric::Angular {
        for (i, mut row) in points.outer_iter_mut().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::BadInput(format!("zero vector at row {i} under angular metric")));
            }
            row.mapv_inplace(|x| x / norm);
        }
    }
    Ok(points)
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, lowest index on ties.
fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (k, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k as u32, d);
        }
    }
    best
}

fn objective(points: &Array2<f64>, centroids: &Array2<f64>, assignment: &[u32]) -> f64 {
    points
        .outer_iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, centroids.row(a as usize)))
        .sum()
}

fn kmeans_plus_plus(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = points
        .outer_iter()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Every remaining point duplicates a chosen one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        let c = points.row(next);
        for (slot, p) in d2.iter_mut().zip(points.outer_iter()) {
            *slot = slot.min(sq_dist(p, c));
        }
    }
    points.select(Axis(0), &chosen)
}

/// Lloyd's k-means with k-means++ seeding under squared Euclidean distance.
///
/// With [`Metric::Angular`] the points are unit-normalized first. Empty
/// clusters are reseeded with the point farthest from its centroid.
pub fn kmeans(
    embeddings: &EmbeddingTable,
    k: usize,
    seed: u64,
    max_iters: usize,
    metric: Metric,
) -> Result<ContextClustering> {
    let n = embeddings.len();
    if k == 0 || k > n {
        return Err(Error::BadParameter(format!("cluster count {k} must lie in 1..={n}")));
    }
    if max_iters == 0 {
        return Err(Error::BadParameter("max_iters must be positive".into()));
    }
    let points = prepare_points(embeddings, metric)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&points, k, &mut rng);
    let mut assignment: Vec<u32> = vec![u32::MAX; n];
    let mut trace = Vec::new();

    for _ in 0..max_iters {
        let nearest_all: Vec<(u32, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(points.row(i), &centroids))
            .collect();
        let changed = nearest_all
            .iter()
            .zip(&assignment)
            .any(|((a, _), old)| a != old);
        let mut dist: Vec<f64> = nearest_all.iter().map(|x| x.1).collect();
        assignment = nearest_all.into_iter().map(|x| x.0).collect();
        trace.push(dist.iter().sum());
        if !changed {
            break;
        }

        let mut sizes = vec![0usize; k];
        for &a in &assignment {
            sizes[a as usize] += 1;
        }
        for empty in 0..k {
            if sizes[empty] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| sizes[assignment[i] as usize] > 1)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                })
                .expect("k <= n leaves a cluster with two members");
            sizes[assignment[donor] as usize] -= 1;
            sizes[empty] = 1;
            assignment[donor] = empty as u32;
            dist[donor] = 0.0;
            centroids.row_mut(empty).assign(&points.row(donor));
        }

        let mut sums = Array2::<f64>::zeros((k, points.ncols()));
        for (p, &a) in points.outer_iter().zip(&assignment) {
            let mut row = sums.row_mut(a as usize);
            row += &p;
        }
        for (mut row, &size) in sums.outer_iter_mut().zip(&sizes) {
            row.mapv_inplace(|x| x / size as f64);
        }
        centroids = sums;
    }
    trace.push(objective(&points, &centroids, &assignment));

    Ok(ContextClustering {
        centroids,
        assignment,
        metric,
        objective_trace: trace,
    })
}

/// Word x cluster table of SPPMI mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredSppmi {
    table: Array2<f64>,
    beta: f64,
}

const CSPM_MAGIC: &[u8; 8] = b"CMVCSPM1";

impl ClusteredSppmi {
    /// Wraps a raw table; `beta` records the column normalization already
    /// applied (0 means none).
    pub fn new(table: Array2<f64>, beta: f64) -> Result<Self> {
        if table.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::BadInput("clustered table entries must be finite and >= 0".into()));
        }
        Ok(Self { table, beta })
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn k(&self) -> usize {
        self.table.ncols()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = binio::create(path)?;
        let we = binio::write_err(path);
        w.write_all(CSPM_MAGIC).map_err(&we)?;
        w.put_u32(binio::to_u32(self.vocab_size(), "vocabulary size")?).map_err(&we)?;
        w.put_u32(binio::to_u32(self.k(), "cluster count")?).map_err(&we)?;
        w.put_f64(self.beta).map_err(&we)?;
        for x in self.table.iter() {
            w.put_f32(*x as f32).map_err(&we)?;
        }
        w.flush().map_err(&we)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = binio::open(path)?;
        let re = binio::read_err(path);
        binio::expect_magic(&mut r, CSPM_MAGIC, path)?;
        let v = r.u32_le().map_err(&re)? as usize;
        let k = r.u32_le().map_err(&re)? as usize;
        let beta = r.f64_le().map_err(&re)?;
        let mut flat = Vec::with_capacity((v * k).min(1 << 24));
        for _ in 0..v * k {
            flat.push(r.f32_le().map_err(&re)? as f64);
        }
        binio::expect_eof(&mut r, path)?;
        let table = Array2::from_shape_vec((v, k), flat).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(table, beta).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// `table[w][k] = sum over contexts c in cluster k of SPPMI(w, c)`.
pub fn aggregate_sppmi(sppmi: &SppmiMatrix, clustering: &ContextClustering) -> Result<ClusteredSppmi> {
    let assignment = clustering.assignment();
    let mut table = Array2::<f64>::zeros((sppmi.vocab_size(), clustering.k()));
    for &(w, c, x) in sppmi.entries() {
        let cluster = *assignment.get(c as usize).ok_or_else(|| {
            Error::BadClustering(format!(
                "context {c} has no cluster ({} contexts assigned)",
                assignment.len()
            ))
        })?;
        table[[w as usize, cluster as usize]] += x;
    }
    Ok(ClusteredSppmi { table, beta: 0.0 })
}

/// Divides every column by `(column mass)^beta`; all-zero columns stay zero.
pub fn column_normalize(clustered: &ClusteredSppmi, beta: f64) -> Result<ClusteredSppmi> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::BadParameter(format!("beta must lie in [0,1], got {beta}")));
    }
    if beta == 0.0 {
        return Ok(clustered.clone());
    }
    let mut table = clustered.table.clone();
    for mut col in table.columns_mut() {
        let mass: f64 = col.sum();
        if mass > 0.0 {
            let denom = mass.powf(beta);
            col.mapv_inplace(|x| x / denom);
        }
    }
    Ok(ClusteredSppmi { table, beta })
}
