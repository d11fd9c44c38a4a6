use cmover::clustering::{aggregate_sppmi, column_normalize, ContextClustering};
use cmover::cmd::{entailment_cost, estimate_distance, nearest_neighbors, GroundSpace, Metric};
use cmover::config::{RunConfig, TaskKind};
use cmover::corpus::{accumulate_cooccurrences, build_vocabulary_from_lines, SparseCoocMatrix, Weighting};
use cmover::estimates::{build_estimate, mix_estimate, DistributionalEstimate, HistogramStore};
use cmover::eval::{average_precision_at_all, pearson, spearman};
use cmover::ot::{exact_ot, sinkhorn, sinkhorn_batch, CostMatrix, Domain, Histogram, SinkhornConfig};
use cmover::ppmi::compute_sppmi;
use ndarray::Array2;
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.01f64..1.0], n)
        .prop_filter("some mass", |w| w.iter().any(|&x| x > 0.0))
}

fn hist(n: usize) -> impl Strategy<Value = Histogram> {
    weights(n).prop_map(|w| Histogram::normalized(w).unwrap())
}

fn cost(n: usize, m: usize) -> impl Strategy<Value = CostMatrix> {
    prop::collection::vec(0.0f64..1.0, n * m)
        .prop_map(move |v| CostMatrix::new(Array2::from_shape_vec((n, m), v).unwrap()).unwrap())
}

fn ot_instance() -> impl Strategy<Value = (Histogram, Histogram, CostMatrix)> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(n, m)| (hist(n), hist(m), cost(n, m)))
}

fn counts(v: usize) -> impl Strategy<Value = Vec<(u32, u32, f64)>> {
    prop::collection::vec(prop_oneof![2 => Just(0u32), 1 => 1u32..30], v * v).prop_map(move |c| {
        c.iter()
            .enumerate()
            .filter(|(_, &x)| x > 0)
            .map(|(i, &x)| ((i / v) as u32, (i % v) as u32, x as f64))
            .collect()
    })
}

fn corpus() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(0u8..6, 1..15), 1..12).prop_map(|lines| {
        lines
            .into_iter()
            .map(|l| l.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" "))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cooccurrence_is_symmetric_with_exact_total(lines in corpus(), window in 1usize..6) {
        let vocab = build_vocabulary_from_lines(lines.iter(), 1).unwrap();
        let c = accumulate_cooccurrences(&lines, &vocab, window, Weighting::InverseDistance).unwrap();
        prop_assert!(c.is_transpose_symmetric());
        let mut total = 0.0;
        for l in &lines {
            let n = l.split_whitespace().count();
            for p in 0..n {
                for q in 0..n {
                    let d = p.abs_diff(q);
                    if d > 0 && d <= window {
                        total += 1.0 / d as f64;
                    }
                }
            }
        }
        prop_assert!((c.total() - total).abs() <= 1e-9 * total.max(1.0));
    }

    #[test]
    fn sppmi_is_positive_and_monotone_in_shift(triples in counts(8), alpha in 0.0f64..=1.0, s1 in 1.0f64..4.0, ds in 0.0f64..6.0) {
        prop_assume!(!triples.is_empty());
        let cooc = SparseCoocMatrix::from_triples(triples, 8, 0, false).unwrap();
        let lo = compute_sppmi(&cooc, alpha, s1).unwrap();
        let hi = compute_sppmi(&cooc, alpha, s1 + ds).unwrap();
        let ppmi = compute_sppmi(&cooc, alpha, 1.0).unwrap();
        for &(w, c, v) in hi.entries() {
            prop_assert!(v > 0.0);
            prop_assert!(v <= lo.get(w, c));
        }
        for &(w, c, v) in lo.entries() {
            prop_assert!(v <= ppmi.get(w, c) + 1e-12);
        }
    }

    #[test]
    fn aggregation_conserves_mass_and_is_label_equivariant(triples in counts(10), assign in prop::collection::vec(0u32..3, 10), beta in 0.0f64..=1.0) {
        prop_assume!(!triples.is_empty());
        let cooc = SparseCoocMatrix::from_triples(triples, 10, 0, false).unwrap();
        let s = compute_sppmi(&cooc, 0.75, 1.0).unwrap();
        let centroids = Array2::from_shape_fn((3, 1), |(i, _)| i as f64);
        let agg = aggregate_sppmi(&s, &ContextClustering::new(centroids.clone(), assign.clone(), Metric::Euclidean).unwrap()).unwrap();
        for w in 0..10u32 {
            let want: f64 = s.row(w as usize).unwrap().iter().map(|x| x.1).sum();
            prop_assert!((agg.table().row(w as usize).sum() - want).abs() <= 1e-9);
        }
        let same = column_normalize(&agg, 0.0).unwrap();
        prop_assert_eq!(same.table(), agg.table());
        // relabel k -> 2 - k
        let flipped: Vec<u32> = assign.iter().map(|&k| 2 - k).collect();
        let agg2 = aggregate_sppmi(&s, &ContextClustering::new(centroids, flipped, Metric::Euclidean).unwrap()).unwrap();
        let a = column_normalize(&agg, beta).unwrap();
        let b = column_normalize(&agg2, beta).unwrap();
        for k in 0..3 {
            prop_assert_eq!(a.table().column(k), b.table().column(2 - k));
        }
    }

    #[test]
    fn estimates_live_on_the_simplex(row in weights(6), scale in 0.01f64..100.0, m in 0.0f64..=1.0) {
        let t1 = cmover::clustering::ClusteredSppmi::new(Array2::from_shape_vec((1, 6), row.clone()).unwrap(), 1.0).unwrap();
        let t2 = cmover::clustering::ClusteredSppmi::new(Array2::from_shape_vec((1, 6), row.iter().map(|x| x * scale).collect()).unwrap(), 1.0).unwrap();
        let e1 = build_estimate(0, &t1).unwrap();
        let e2 = build_estimate(0, &t2).unwrap();
        prop_assert!((e1.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(e1.support(), e2.support());
        for (x, y) in e1.weights().iter().zip(e2.weights()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let mixed = mix_estimate(&e1, m, 6).unwrap();
        prop_assert!((mixed.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(mixed.weights().iter().all(|&w| w >= 0.0));
        for (a, w) in e1.iter() {
            prop_assert!((mixed.weight_of(a) - (1.0 - m) * w).abs() <= 1e-12);
        }
    }

    #[test]
    fn plans_are_feasible_and_never_beat_the_optimum((a, b, m) in ot_instance(), lambda in prop::sample::select(vec![1e-3, 1e-2, 1e-1, 1.0])) {
        let cfg = SinkhornConfig::new(lambda, 200);
        let plan = sinkhorn(&a, &b, &m, &cfg).unwrap();
        prop_assert!(plan.marginal_error(&a, &b) <= 1e-6);
        prop_assert!(plan.cost() >= exact_ot(&a, &b, &m).unwrap().cost() - 1e-9);
    }

    #[test]
    fn swapped_pairs_cost_the_same_under_symmetric_costs(n in 1usize..7, seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        use rand::Rng;
        let pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = CostMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| (pts[i] - pts[j]).abs())).unwrap();
        let h = |rng: &mut rand_chacha::ChaCha8Rng| Histogram::normalized((0..n).map(|_| rng.random_range(0.05..1.0)).collect::<Vec<_>>()).unwrap();
        let (a, b) = (h(&mut rng), h(&mut rng));
        for domain in [Domain::Log, Domain::Scaling] {
            let cfg = SinkhornConfig::new(0.05, 300).with_domain(domain);
            let ab = sinkhorn(&a, &b, &m, &cfg).unwrap().cost();
            let ba = sinkhorn(&b, &a, &m, &cfg).unwrap().cost();
            prop_assert!((ab - ba).abs() <= 1e-10, "{} vs {}", ab, ba);
        }
    }

    #[test]
    fn batch_equals_loop(pairs in prop::collection::vec((hist(5), hist(5)), 1..10), m in cost(5, 5)) {
        let cfg = SinkhornConfig::new(0.1, 50);
        let batch = sinkhorn_batch(&pairs, &m, &cfg).unwrap();
        for ((a, b), got) in pairs.iter().zip(&batch) {
            prop_assert!((sinkhorn(a, b, &m, &cfg).unwrap().cost() - got).abs() <= 1e-10);
        }
    }

    #[test]
    fn entailment_cost_orders_with_both_arguments(vi in prop::collection::vec(-5.0f64..5.0, 3), vj in prop::collection::vec(-5.0f64..5.0, 3), t in 0usize..3, step in 0.0f64..3.0) {
        // cost = sum sigma(-vi) softplus(vj): non-decreasing in vj, non-increasing in vi
        let base = entailment_cost(&vi, &vj);
        let mut up_j = vj.clone();
        up_j[t] += step;
        prop_assert!(entailment_cost(&vi, &up_j) >= base);
        let mut up_i = vi.clone();
        up_i[t] += step;
        prop_assert!(entailment_cost(&up_i, &vj) <= base);
        prop_assert!(base >= 0.0);
    }

    #[test]
    fn correlations_are_affine_invariant(xs in prop::collection::vec(-10.0f64..10.0, 3..20), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x.sin() + i as f64 * 0.1).collect();
        let r = pearson(&xs, &ys);
        prop_assume!(r.is_ok());
        let moved: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
        prop_assert!((pearson(&moved, &ys).unwrap() - r.unwrap()).abs() <= 1e-12);
        prop_assert!((spearman(&moved, &ys).unwrap() - spearman(&xs, &ys).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn ap_ignores_monotone_transforms_and_oov_only_hurts(scores in prop::collection::vec(-3.0f64..3.0, 2..15), seed in any::<u64>()) {
        let labels: Vec<bool> = scores.iter().enumerate().map(|(i, _)| (seed >> (i % 64)) & 1 == 1).collect();
        prop_assume!(labels.iter().any(|&l| l));
        let oov: Vec<bool> = scores.iter().enumerate().map(|(i, _)| (seed >> ((i + 17) % 64)) & 3 == 0).collect();
        let ap = average_precision_at_all(&scores, &labels, &oov).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp() * 2.0 + 1.0).collect();
        prop_assert_eq!(average_precision_at_all(&exp, &labels, &oov).unwrap(), ap);
        // an OOV positive ranked first instead is an upper bound
        let best: Vec<f64> = scores.iter().zip(&oov).zip(&labels).map(|((&s, &o), &l)| if o && l { 1e9 } else { s }).collect();
        let no_oov: Vec<bool> = oov.iter().zip(&labels).map(|(&o, &l)| o && !l).collect();
        prop_assert!(ap <= average_precision_at_all(&best, &labels, &no_oov).unwrap() + 1e-12);
    }

    #[test]
    fn config_round_trips(task in prop::sample::select(vec![TaskKind::Sts, TaskKind::Wordsim, TaskKind::Hypernymy]), lambda in 1e-4f64..1.0, seed in any::<u64>(), clip in prop::option::of(0.5f64..20.0)) {
        let mut cfg = RunConfig::for_task(task);
        cfg.lambda = lambda;
        cfg.seed = seed;
        cfg.clip = clip;
        prop_assert_eq!(RunConfig::parse(&cfg.render()).unwrap(), cfg);
    }
}

fn line_space(n: usize) -> (GroundSpace, HistogramStore) {
    let centroids = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
    let points = Array2::from_shape_fn((n, 1), |(i, _)| (i as f64 * 0.37).sin());
    let space = GroundSpace::new(&centroids, &points, Metric::Euclidean, 1).unwrap();
    let estimates = (0..n)
        .map(|w| {
            let support: Vec<u32> = (0..n as u32).filter(|a| (a + w as u32) % 3 != 0).collect();
            let raw: Vec<f64> = support.iter().map(|&a| 1.0 + ((a as usize * 7 + w) % 5) as f64).collect();
            let t: f64 = raw.iter().sum();
            DistributionalEstimate::new(support, raw.iter().map(|x| x / t).collect(), w as u32).unwrap()
        })
        .collect();
    (space, HistogramStore::from_estimates(n, estimates).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cmd_is_symmetric_and_ranking_is_scale_free(w1 in 0usize..8, w2 in 0usize..8, scale in 0.1f64..10.0) {
        let (space, store) = line_space(8);
        let cfg = SinkhornConfig::new(0.05, 200);
        let (a, b) = (store.get(w1).unwrap(), store.get(w2).unwrap());
        let d12 = estimate_distance(a, b, &space, &cfg).unwrap();
        let d21 = estimate_distance(b, a, &space, &cfg).unwrap();
        prop_assert!((d12 - d21).abs() <= 1e-9);

        let scaled_centroids = Array2::from_shape_fn((8, 1), |(i, _)| scale * i as f64 / 8.0);
        let scaled_points = Array2::from_shape_fn((8, 1), |(i, _)| scale * (i as f64 * 0.37).sin());
        let scaled = GroundSpace::new(&scaled_centroids, &scaled_points, Metric::Euclidean, 1).unwrap();
        let scaled_cfg = SinkhornConfig::new(0.05 * scale, 200);
        let cands: Vec<usize> = (0..8).collect();
        let r1 = nearest_neighbors(a, &cands, 8, &store, &space, &cfg).unwrap();
        let r2 = nearest_neighbors(a, &cands, 8, &store, &scaled, &scaled_cfg).unwrap();
        for (x, y) in r1.iter().zip(&r2) {
            prop_assert!((x.1 * scale - y.1).abs() <= 1e-9 * scale.max(1.0));
        }
        let ids = |r: &[(usize, f64)]| r.iter().map(|x| x.0).collect::<Vec<_>>();
        // exact ties could legally swap, so compare only when distances are apart
        let gaps_ok = r1.windows(2).all(|w| (w[1].1 - w[0].1).abs() > 1e-9);
        if gaps_ok {
            prop_assert_eq!(ids(&r1), ids(&r2));
        }
    }

    #[test]
    fn comb_stays_on_the_simplex_within_the_support_union(words in prop::collection::vec(0usize..8, 1..5)) {
        let (space, store) = line_space(8);
        let s = cmover::cmd::comb(&words, &store, &space, None, &SinkhornConfig::new(0.05, 100)).unwrap();
        let e = s.estimate();
        prop_assert!((e.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for &a in e.support() {
            prop_assert!(words.iter().any(|&w| store.get(w).unwrap().support().contains(&a)));
        }
    }
}

#[test]
fn smaller_lambda_approaches_the_exact_cost() {
    let a = Histogram::normalized(vec![0.2, 0.5, 0.3, 0.0, 0.4]).unwrap();
    let b = Histogram::normalized(vec![0.1, 0.1, 0.6, 0.3, 0.2]).unwrap();
    let m = CostMatrix::new(Array2::from_shape_fn((5, 5), |(i, j)| ((i * 3 + j * 7) % 5) as f64 * 0.7 + (i as f64 - j as f64).abs())).unwrap();
    let exact = exact_ot(&a, &b, &m).unwrap().cost();
    let errs: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|f| {
            let cfg = SinkhornConfig::new(f * m.max(), 5000).with_domain(Domain::Log);
            (sinkhorn(&a, &b, &m, &cfg).unwrap().cost() - exact).abs()
        })
        .collect();
    assert!(errs[2] <= errs[1] && errs[2] <= errs[0], "{errs:?}");
}
