//! Library results checked against slow, independent recomputations.

use std::collections::HashMap;

use cmover::clustering::{aggregate_sppmi, column_normalize, kmeans, ContextClustering, EmbeddingTable};
use cmover::cmd::Metric;
use cmover::corpus::{accumulate_cooccurrences, build_vocabulary, SparseCoocMatrix, Weighting};
use cmover::ot::{
    barycenter, barycenter_batch, exact_ot, sinkhorn, sinkhorn_batch, BarycenterGroup, CostMatrix, Domain, Histogram,
    SinkhornConfig,
};
use cmover::ppmi::{compute_sppmi, SppmiMatrix};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_hist(rng: &mut ChaCha8Rng, n: usize, zero_prob: f64) -> Histogram {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < zero_prob { 0.0 } else { rng.random_range(0.01..1.0) })
            .collect();
        if w.iter().any(|&x| x > 0.0) {
            return Histogram::normalized(w).unwrap();
        }
    }
}

fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostMatrix {
    CostMatrix::new(Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..1.0))).unwrap()
}

#[test]
fn vocabulary_counts_match_a_plain_counter() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tokens: Vec<String> = (0..1000)
        .map(|_| {
            // skewed multinomial over 30 symbols
            let x: f64 = rng.random();
            format!("t{}", (x * x * 30.0) as usize)
        })
        .collect();
    let vocab = build_vocabulary(tokens.iter(), 1).unwrap();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for t in &tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut want: Vec<(&str, u64)> = counts.into_iter().collect();
    want.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let got: Vec<(&str, u64)> = vocab.tokens().iter().map(String::as_str).zip(vocab.counts().iter().copied()).collect();
    assert_eq!(got, want);
}

#[test]
fn cooccurrences_match_pair_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let words = ["a", "b", "c", "d", "e", "f", "g", "rare"];
    let mut lines = Vec::new();
    for _ in 0..10 {
        let len = rng.random_range(1..=40);
        let line: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
        lines.push(line.join(" "));
    }
    let all: Vec<&str> = lines.iter().flat_map(|l| l.split_whitespace()).collect();
    assert!(all.len() >= 100);
    // min_count 2 may drop "rare", which must still occupy positions
    let vocab = build_vocabulary(all.iter().copied(), 2).unwrap();
    for (window, weighting) in [(5usize, Weighting::InverseDistance), (3, Weighting::Uniform)] {
        let got = accumulate_cooccurrences(&lines, &vocab, window, weighting).unwrap();
        let mut want: HashMap<(u32, u32), f64> = HashMap::new();
        for line in &lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            for p in 0..toks.len() {
                for q in 0..toks.len() {
                    let d = p.abs_diff(q);
                    if d == 0 || d > window {
                        continue;
                    }
                    if let (Some(w), Some(c)) = (vocab.id(toks[p]), vocab.id(toks[q])) {
                        let inc = match weighting {
                            Weighting::InverseDistance => 1.0 / d as f64,
                            Weighting::Uniform => 1.0,
                        };
                        *want.entry((w, c)).or_default() += inc;
                    }
                }
            }
        }
        assert_eq!(got.nnz(), want.len());
        for (&(w, c), &v) in &want {
            assert!((got.get(w, c) - v).abs() <= 1e-12, "({w},{c}): {} vs {v}", got.get(w, c));
        }
        assert!(got.is_transpose_symmetric());
    }
}

#[test]
fn cooc_round_trip_of_many_random_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let v = 2000u32;
    let triples: Vec<(u32, u32, f64)> = (0..100_000)
        .map(|_| (rng.random_range(0..v), rng.random_range(0..v), rng.random_range(1e-3..10.0)))
        .collect();
    let m = SparseCoocMatrix::from_triples(triples, v, 5, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    m.save(&path).unwrap();
    assert_eq!(SparseCoocMatrix::load(&path).unwrap(), m);
}

#[test]
fn sppmi_rows_match_dense_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let v = 50usize;
    let counts = Array2::from_shape_fn((v, v), |_| {
        if rng.random::<f64>() < 0.3 {
            rng.random_range(1..50) as f64
        } else {
            0.0
        }
    });
    let triples: Vec<(u32, u32, f64)> = counts
        .indexed_iter()
        .filter(|(_, &x)| x > 0.0)
        .map(|((w, c), &x)| (w as u32, c as u32, x))
        .collect();
    let cooc = SparseCoocMatrix::from_triples(triples, v as u32, 0, false).unwrap();
    let (alpha, shift) = (0.55, 5.0);
    let s = compute_sppmi(&cooc, alpha, shift).unwrap();
    let col: Vec<f64> = (0..v).map(|c| counts.column(c).sum()).collect();
    let z: f64 = col.iter().map(|x| x.powf(alpha)).sum();
    for w in 0..v {
        let row_total = counts.row(w).sum();
        let want: Vec<(u32, f64)> = (0..v)
            .filter_map(|c| {
                let x = counts[[w, c]];
                if x == 0.0 {
                    return None;
                }
                let val = ((x * z) / (row_total * col[c].powf(alpha))).ln() - shift.ln();
                (val > 1e-15).then_some((c as u32, val))
            })
            .collect();
        let got = s.row(w).unwrap();
        assert_eq!(got.len(), want.len(), "row {w}");
        for ((gc, gv), (wc, wv)) in got.iter().zip(&want) {
            assert_eq!(gc, wc);
            assert!((gv - wv).abs() <= 1e-12);
        }
    }
}

fn lloyd(points: &[[f64; 2]], mut centers: Vec<[f64; 2]>) -> f64 {
    let d2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let nearest = |p: &[f64; 2], cs: &[[f64; 2]]| {
        (0..cs.len()).min_by(|&i, &j| d2(p, &cs[i]).total_cmp(&d2(p, &cs[j]))).unwrap()
    };
    let mut prev = Vec::new();
    for _ in 0..1000 {
        let assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if assign == prev {
            break;
        }
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<&[f64; 2]> = points.iter().zip(&assign).filter(|(_, &a)| a == k).map(|x| x.0).collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *c = [members.iter().map(|p| p[0]).sum::<f64>() / n, members.iter().map(|p| p[1]).sum::<f64>() / n];
            }
        }
        prev = assign;
    }
    points.iter().map(|p| d2(p, &centers[nearest(p, &centers)])).sum()
}

#[test]
fn kmeans_reaches_the_best_lloyd_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let blobs = [[0.0, 0.0], [4.0, 1.0], [1.0, 5.0]];
    let points: Vec<[f64; 2]> = (0..30)
        .map(|i| {
            let b = blobs[i % 3];
            [b[0] + rng.random_range(-1.5..1.5), b[1] + rng.random_range(-1.5..1.5)]
        })
        .collect();
    let mut oracle = f64::INFINITY;
    for i in 0..30 {
        for j in i + 1..30 {
            for k in j + 1..30 {
                oracle = oracle.min(lloyd(&points, vec![points[i], points[j], points[k]]));
            }
        }
    }
    let emb = EmbeddingTable::from_rows(points.iter().map(|p| p.to_vec()).collect()).unwrap();
    let ours = (0..10)
        .map(|seed| kmeans(&emb, 3, seed, 100, Metric::Euclidean).unwrap().inertia(&emb).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!((ours - oracle).abs() <= 1e-9, "kmeans {ours} vs oracle {oracle}");
}

#[test]
fn aggregation_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let v = 40usize;
    let k = 5usize;
    let dense = Array2::from_shape_fn((v, v), |_| {
        if rng.random::<f64>() < 0.4 {
            rng.random_range(0.01..3.0)
        } else {
            0.0
        }
    });
    let triples: Vec<(u32, u32, f64)> = dense
        .indexed_iter()
        .filter(|(_, &x)| x > 0.0)
        .map(|((w, c), &x)| (w as u32, c as u32, x))
        .collect();
    let sppmi = SppmiMatrix::from_triples(triples, v as u32, 1.0, 1.0).unwrap();
    let assignment: Vec<u32> = (0..v).map(|_| rng.random_range(0..k as u32)).collect();
    let centroids = Array2::from_shape_fn((k, 2), |(i, j)| (i * 2 + j) as f64);
    let clustering = ContextClustering::new(centroids, assignment.clone(), Metric::Euclidean).unwrap();
    let agg = aggregate_sppmi(&sppmi, &clustering).unwrap();
    for w in 0..v {
        for c in 0..k {
            let want: f64 = (0..v).filter(|&x| assignment[x] as usize == c).map(|x| dense[[w, x]]).sum();
            assert!((agg.table()[[w, c]] - want).abs() <= 1e-12);
        }
    }
    let normalized = column_normalize(&agg, 0.5).unwrap();
    for c in 0..k {
        let col: f64 = agg.table().column(c).sum();
        for w in 0..v {
            let want = if col > 0.0 { agg.table()[[w, c]] / col.sqrt() } else { 0.0 };
            assert!((normalized.table()[[w, c]] - want).abs() <= 1e-12);
        }
    }
}

fn lp_optimum(a: &Histogram, b: &Histogram, m: &CostMatrix) -> f64 {
    let (n, k) = m.shape();
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = (0..n)
        .map(|i| (0..k).map(|j| p.add_var(m.costs()[[i, j]], (0.0, f64::INFINITY))).collect())
        .collect();
    for i in 0..n {
        let row: Vec<_> = (0..k).map(|j| (vars[i][j], 1.0)).collect();
        p.add_constraint(row.as_slice(), ComparisonOp::Eq, a.as_slice()[i]);
    }
    // one column constraint is implied by the others
    for j in 0..k - 1 {
        let col: Vec<_> = (0..n).map(|i| (vars[i][j], 1.0)).collect();
        p.add_constraint(col.as_slice(), ComparisonOp::Eq, b.as_slice()[j]);
    }
    p.solve().unwrap().objective()
}

#[test]
fn exact_ot_matches_linear_program() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let (a, b) = (random_hist(&mut rng, 5, 0.2), random_hist(&mut rng, 6, 0.2));
        let m = random_cost(&mut rng, 5, 6);
        let plan = exact_ot(&a, &b, &m).unwrap();
        let lp = lp_optimum(&a, &b, &m);
        assert!((plan.cost() - lp).abs() <= 1e-9, "simplex {} vs lp {lp}", plan.cost());
        assert!(plan.marginal_error(&a, &b) <= 1e-9);
    }
}

#[test]
fn batched_distances_match_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let m = random_cost(&mut rng, 20, 20);
    let pairs: Vec<(Histogram, Histogram)> = (0..64)
        .map(|_| (random_hist(&mut rng, 20, 0.3), random_hist(&mut rng, 20, 0.3)))
        .collect();
    for domain in [Domain::Scaling, Domain::Log] {
        let cfg = SinkhornConfig::new(0.1, 100).with_domain(domain);
        let batch = sinkhorn_batch(&pairs, &m, &cfg).unwrap();
        for ((a, b), got) in pairs.iter().zip(&batch) {
            let want = sinkhorn(a, b, &m, &cfg).unwrap().cost();
            assert!((got - want).abs() <= 1e-10);
        }
    }
}

#[test]
fn batched_barycenters_match_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let m = random_cost(&mut rng, 30, 30);
    let groups: Vec<BarycenterGroup> = (0..32)
        .map(|g| {
            // mixed cardinalities and a non-uniform weighting every third group
            let size = 1 + g % 5;
            let hs: Vec<Histogram> = (0..size).map(|_| random_hist(&mut rng, 30, 0.3)).collect();
            if g % 3 == 0 {
                let w: Vec<f64> = (0..size).map(|_| rng.random_range(0.1..1.0)).collect();
                let t: f64 = w.iter().sum();
                BarycenterGroup::new(hs, w.iter().map(|x| x / t).collect()).unwrap()
            } else {
                BarycenterGroup::uniform(hs).unwrap()
            }
        })
        .collect();
    for domain in [Domain::Scaling, Domain::Log] {
        let cfg = SinkhornConfig::new(0.1, 100).with_domain(domain);
        let batch = barycenter_batch(&groups, &m, &cfg).unwrap();
        for (g, got) in groups.iter().zip(&batch) {
            let want = barycenter(g.histograms(), g.weights(), &m, &cfg).unwrap();
            assert!(got.total_variation(&want) <= 1e-10);
        }
    }
}
