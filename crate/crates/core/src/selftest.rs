//! Quick built-in oracle checks, run by `cmover selftest`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmd::entailment_cost;
use crate::corpus::{accumulate_cooccurrences, build_vocabulary, SparseCoocMatrix, Weighting};
use crate::eval::{average_precision_at_all, pearson, spearman};
use crate::ot::{barycenter, exact_ot, sinkhorn, sinkhorn_batch, CostMatrix, Domain, Histogram, SinkhornConfig};
use crate::ppmi::compute_sppmi;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> std::result::Result<String, String>) -> Check {
    match f() {
        Ok(detail) => Check {
            name,
            passed: true,
            detail,
        },
        Err(detail) => Check {
            name,
            passed: false,
            detail,
        },
    }
}

fn random_hist(rng: &mut ChaCha8Rng, n: usize) -> Histogram {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    Histogram::normalized(w).expect("positive weights")
}

fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostMatrix {
    CostMatrix::new(Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..1.0))).expect("finite costs")
}

/// Runs every check; a failure never aborts the remaining ones.
pub fn run() -> Vec<Check> {
    let e = |x: crate::Error| x.to_string();
    vec![
        check("cooc_hand_trace", || {
            let vocab = build_vocabulary(["a", "b", "a"], 1).map_err(e)?;
            let c = accumulate_cooccurrences(&["a b a"], &vocab, 2, Weighting::InverseDistance).map_err(e)?;
            let (a, b) = (0, 1);
            let got = (c.get(a, b), c.get(b, a), c.get(a, a), c.nnz());
            if got == (2.0, 2.0, 1.0, 3) {
                Ok("(a,b)=2 (b,a)=2 (a,a)=1".into())
            } else {
                Err(format!("got {got:?}"))
            }
        }),
        check("sppmi_dense_oracle", || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let v = 12usize;
            let counts = Array2::from_shape_fn((v, v), |_| {
                if rng.random::<f64>() < 0.4 {
                    rng.random_range(1..20) as f64
                } else {
                    0.0
                }
            });
            let triples: Vec<(u32, u32, f64)> = counts
                .indexed_iter()
                .filter(|(_, &x)| x > 0.0)
                .map(|((w, c), &x)| (w as u32, c as u32, x))
                .collect();
            let cooc = SparseCoocMatrix::from_triples(triples, v as u32, 0, false).map_err(e)?;
            let (alpha, shift) = (0.75, 2.0);
            let s = compute_sppmi(&cooc, alpha, shift).map_err(e)?;
            let rows = counts.sum_axis(ndarray::Axis(1));
            let cols = counts.sum_axis(ndarray::Axis(0));
            let smoothed: f64 = cols.iter().filter(|&&c| c > 0.0).map(|c| c.powf(alpha)).sum();
            let mut worst = 0.0f64;
            for ((w, c), &x) in counts.indexed_iter() {
                let want = if x > 0.0 {
                    ((x * smoothed / (rows[w] * cols[c].powf(alpha))).ln() - shift.ln()).max(0.0)
                } else {
                    0.0
                };
                let want = if want > 1e-15 { want } else { 0.0 };
                worst = worst.max((s.get(w as u32, c as u32) - want).abs());
            }
            if worst <= 1e-12 {
                Ok(format!("max deviation {worst:.2e}"))
            } else {
                Err(format!("max deviation {worst:.2e}"))
            }
        }),
        check("sinkhorn_vs_exact", || {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
                let (a, b, c) = (random_hist(&mut rng, n), random_hist(&mut rng, m), random_cost(&mut rng, n, m));
                let cfg = SinkhornConfig::new(1e-3, 5000).with_domain(Domain::Log);
                let s = sinkhorn(&a, &b, &c, &cfg).map_err(e)?;
                let x = exact_ot(&a, &b, &c).map_err(e)?;
                worst = worst.max((s.cost() - x.cost()).abs());
                if s.marginal_error(&a, &b) > 1e-6 {
                    return Err("plan violates marginals".into());
                }
            }
            if worst <= 1e-2 {
                Ok(format!("max gap {worst:.2e}"))
            } else {
                Err(format!("max gap {worst:.2e}"))
            }
        }),
        check("batch_parity", || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let c = random_cost(&mut rng, 10, 10);
            let pairs: Vec<(Histogram, Histogram)> = (0..16)
                .map(|_| (random_hist(&mut rng, 10), random_hist(&mut rng, 10)))
                .collect();
            let cfg = SinkhornConfig::new(0.05, 200);
            let batch = sinkhorn_batch(&pairs, &c, &cfg).map_err(e)?;
            let mut worst = 0.0f64;
            for ((a, b), got) in pairs.iter().zip(&batch) {
                worst = worst.max((sinkhorn(a, b, &c, &cfg).map_err(e)?.cost() - got).abs());
            }
            if worst <= 1e-10 {
                Ok(format!("max deviation {worst:.2e}"))
            } else {
                Err(format!("max deviation {worst:.2e}"))
            }
        }),
        check("barycenter_midpoint", || {
            let x = [0.0f64, 0.5, 1.0];
            let c = CostMatrix::new(Array2::from_shape_fn((3, 3), |(i, j)| (x[i] - x[j]).powi(2))).map_err(e)?;
            let hs = [Histogram::dirac(3, 0), Histogram::dirac(3, 2)];
            let p = barycenter(&hs, &[0.5, 0.5], &c, &SinkhornConfig::new(0.01, 500)).map_err(e)?;
            let mid = p.as_slice()[1];
            if mid >= 0.95 {
                Ok(format!("midpoint mass {mid:.4}"))
            } else {
                Err(format!("midpoint mass {mid:.4}"))
            }
        }),
        check("entailment_hand_values", || {
            let v = [
                entailment_cost(&[0.0], &[0.0]),
                entailment_cost(&[2.0], &[0.0]),
                entailment_cost(&[0.0], &[2.0]),
            ];
            let want = [0.3466, 0.0826, 1.0635];
            if v.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-3) {
                Ok(format!("{:.4} {:.4} {:.4}", v[0], v[1], v[2]))
            } else {
                Err(format!("{v:?}"))
            }
        }),
        check("metric_hand_values", || {
            let ap = average_precision_at_all(&[3.0, 2.0, 1.0], &[true, false, true], &[false; 3]).map_err(e)?;
            let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).map_err(e)?;
            let rho = spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).map_err(e)?;
            let ok = (ap - 5.0 / 6.0).abs() <= 1e-12 && (r - 0.8).abs() <= 1e-9 && (rho - 0.75f64.sqrt()).abs() <= 1e-9;
            let detail = format!("ap={ap:.4} pearson={r:.4} spearman={rho:.4}");
            if ok {
                Ok(detail)
            } else {
                Err(detail)
            }
        }),
    ]
}
