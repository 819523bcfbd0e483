use subsample_nn::linalg::{matmul, DenseMatrix, DenseVector, Rng};
use subsample_nn::mc::{self, SampleMode, SamplePlan};

fn random(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gauss())
}

fn plan(p: &DenseVector, mode: SampleMode, picks: &[(usize, f64)]) -> SamplePlan {
    SamplePlan {
        probabilities: p.clone(),
        mode,
        indices: picks.iter().map(|x| x.0).collect(),
        scales: picks.iter().map(|x| x.1).collect(),
    }
}

/// Expectation and mean squared Frobenius error of the Bernoulli estimator,
/// summed over all 2^n keep patterns.
fn bernoulli_moments(a: &DenseMatrix, b: &DenseMatrix, p: &DenseVector, k: usize) -> (DenseMatrix, f64) {
    let n = a.cols();
    let exact = matmul(a, b).unwrap();
    let mut mean = DenseMatrix::zeros(a.rows(), b.cols());
    let mut mse = 0.0;
    for pattern in 0u32..(1 << n) {
        let mut weight = 1.0;
        let mut picks = Vec::new();
        for i in 0..n {
            if pattern & (1 << i) != 0 {
                weight *= p[i];
                picks.push((i, 1.0 / p[i]));
            } else {
                weight *= 1.0 - p[i];
            }
        }
        if weight == 0.0 {
            continue;
        }
        let est = mc::sampled_product(a, b, &plan(p, SampleMode::Bernoulli { budget: k }, &picks)).unwrap();
        mean.axpy(weight, &est);
        let d = est.sub(&exact).unwrap().frobenius_norm();
        mse += weight * d * d;
    }
    (mean, mse)
}

#[test]
fn bernoulli_estimator_is_unbiased_by_enumeration() {
    let mut rng = Rng::new(1, 0);
    for _ in 0..50 {
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let p = mc::optimal_probs_bernoulli(&a, &b, 2).unwrap();
        assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let (mean, mse) = bernoulli_moments(&a, &b, &p, 2);
        let exact = matmul(&a, &b).unwrap();
        assert!(mean.max_abs_diff(&exact) <= 1e-12, "{}", mean.max_abs_diff(&exact));
        let analytic = mc::bernoulli_error(&a, &b, p.as_slice()).unwrap();
        assert!((mse - analytic).abs() <= 1e-10 * analytic.max(1.0), "{mse} vs {analytic}");
    }
}

#[test]
fn bernoulli_unbiased_for_arbitrary_probabilities() {
    let mut rng = Rng::new(2, 0);
    let a = random(4, 5, &mut rng);
    let b = random(5, 2, &mut rng);
    let p: DenseVector = vec![0.1, 0.9, 0.5, 1.0, 0.3].into();
    let (mean, _) = bernoulli_moments(&a, &b, &p, 3);
    assert!(mean.max_abs_diff(&matmul(&a, &b).unwrap()) <= 1e-12);
}

#[test]
fn cr_estimator_is_unbiased_by_enumeration() {
    let mut rng = Rng::new(3, 0);
    for c in 1..=3usize {
        let a = random(3, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let p = mc::optimal_probs_cr(&a, &b).unwrap();
        let exact = matmul(&a, &b).unwrap();
        let n = a.cols();
        let mut mean = DenseMatrix::zeros(3, 3);
        let mut mse = 0.0;
        for seq in 0..n.pow(c as u32) {
            let mut rest = seq;
            let mut weight = 1.0;
            let mut picks = Vec::new();
            for _ in 0..c {
                let i = rest % n;
                rest /= n;
                weight *= p[i];
                picks.push((i, 1.0 / (c as f64 * p[i])));
            }
            let est = mc::sampled_product(&a, &b, &plan(&p, SampleMode::WithReplacement { samples: c }, &picks)).unwrap();
            mean.axpy(weight, &est);
            let d = est.sub(&exact).unwrap().frobenius_norm();
            mse += weight * d * d;
        }
        assert!(mean.max_abs_diff(&exact) <= 1e-12, "c={c}");
        // variance of the CR estimator: (Σ w_i² / p_i − ‖AB‖²_F) / c
        let w = mc::importance(&a, &b).unwrap();
        let s: f64 = w.iter().zip(p.iter()).map(|(w, p)| w * w / p).sum();
        let norm = exact.frobenius_norm();
        let analytic = (s - norm * norm) / c as f64;
        assert!((mse - analytic).abs() <= 1e-10 * analytic.max(1.0), "c={c}: {mse} vs {analytic}");
    }
}

/// Feasible Bernoulli probabilities: positive, at most 1, summing to `k`.
fn random_feasible(n: usize, k: usize, rng: &mut Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.01, 1.0).powi(3)).collect();
    mc::waterfill(&w, k)
}

#[test]
fn clipped_optimal_probabilities_beat_random_feasible_ones() {
    let mut rng = Rng::new(4, 0);
    for _ in 0..50 {
        let n = 3 + rng.below(10);
        let k = 1 + rng.below(n - 1);
        let a = random(1 + rng.below(6), n, &mut rng);
        let b = random(n, 1 + rng.below(6), &mut rng);
        let opt = mc::optimal_probs_bernoulli(&a, &b, k).unwrap();
        let best = mc::bernoulli_error(&a, &b, opt.as_slice()).unwrap();
        assert_eq!(mc::bernoulli_error(&a, &b, opt.as_slice()).unwrap(), best);
        for _ in 0..1000 {
            let q = random_feasible(n, k, &mut rng);
            assert!((q.iter().sum::<f64>() - k as f64).abs() < 1e-9);
            let e = mc::bernoulli_error(&a, &b, &q).unwrap();
            assert!(best <= e * (1.0 + 1e-12), "optimal {best} > random {e}");
            if (e - best).abs() <= 1e-12 * best {
                let dist = opt.iter().zip(&q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(dist < 1e-6, "equal error from a different distribution ({dist})");
            }
        }
    }
}

#[test]
fn clipping_caps_dominant_indices() {
    let a = DenseMatrix::from_rows(&[vec![100.0, 1.0, 1.0, 1.0]]).unwrap();
    let b = DenseMatrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![1.0]]).unwrap();
    let p = mc::optimal_probs_bernoulli(&a, &b, 2).unwrap();
    assert_eq!(p[0], 1.0);
    for i in 1..4 {
        assert!((p[i] - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn simulated_error_matches_formula() {
    let mut rng = Rng::new(5, 0);
    let a = random(6, 12, &mut rng);
    let b = random(12, 5, &mut rng);
    let exact = matmul(&a, &b).unwrap();
    let p = mc::optimal_probs_bernoulli(&a, &b, 4).unwrap();
    let analytic = mc::bernoulli_error(&a, &b, p.as_slice()).unwrap();
    let trials = 40_000;
    let mut mse = 0.0;
    let mut sizes = 0usize;
    for _ in 0..trials {
        let plan = mc::plan_bernoulli(&p, 4, &mut rng).unwrap();
        sizes += plan.len();
        let d = mc::sampled_product(&a, &b, &plan).unwrap().sub(&exact).unwrap().frobenius_norm();
        mse += d * d;
    }
    mse /= trials as f64;
    assert!((mse - analytic).abs() < 0.05 * analytic, "{mse} vs {analytic}");
    let mean_size = sizes as f64 / trials as f64;
    assert!((mean_size - 4.0).abs() < 0.05, "{mean_size}");
}
