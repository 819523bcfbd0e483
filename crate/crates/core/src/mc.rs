//! Monte-Carlo approximate matrix multiplication.
//!
//! Two estimators of `AB` over the shared dimension `n`:
//!
//! * column-row (CR) sampling: `c` draws with replacement from `p`, each draw
//!   contributing `A[:, i] B[i, :] / (c p_i)`;
//! * Bernoulli sampling: index `i` kept independently with probability `p_i`
//!   and weighted by `1 / p_i`, with `Σ p_i = k`.
//!
//! Both are unbiased. Probabilities are proportional to `‖A[:, i]‖ ‖B[i, :]‖`;
//! in the Bernoulli case they are capped at 1 and the capped mass is
//! redistributed by waterfilling.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{col_norms, flops, row_norms, DenseMatrix, DenseVector, MatRef, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    WithReplacement { samples: usize },
    Bernoulli { budget: usize },
}

/// Sampled indices of the shared dimension and the weight applied to each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePlan {
    pub probabilities: DenseVector,
    pub mode: SampleMode,
    pub indices: Vec<usize>,
    pub scales: Vec<f64>,
}

impl SamplePlan {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn check_shared<A: MatRef, B: MatRef>(op: &'static str, a: &A, b: &B) -> Result<()> {
    if a.cols() != b.rows() {
        return Err(Error::dim(
            op,
            format!("{}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    Ok(())
}

/// `‖A[:, i]‖ · ‖B[i, :]‖` for every shared index.
pub fn importance<A: MatRef, B: MatRef>(a: &A, b: &B) -> Result<Vec<f64>> {
    check_shared("importance", a, b)?;
    let ca = col_norms(a);
    let rb = row_norms(b);
    Ok(ca.iter().zip(rb.iter()).map(|(x, y)| x * y).collect())
}

/// Optimal CR sampling distribution; sums to 1.
pub fn optimal_probs_cr<A: MatRef, B: MatRef>(a: &A, b: &B) -> Result<DenseVector> {
    let w = importance(a, b)?;
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateInput(
            "every column/row norm product is zero".into(),
        ));
    }
    Ok(DenseVector::from(w.into_iter().map(|v| v / total).collect::<Vec<_>>()))
}

/// Optimal Bernoulli keep probabilities for an expected budget of `k` indices.
pub fn optimal_probs_bernoulli<A: MatRef, B: MatRef>(a: &A, b: &B, k: usize) -> Result<DenseVector> {
    check_shared("optimal_probs_bernoulli", a, b)?;
    let n = a.cols();
    if k == 0 || k > n {
        return Err(Error::param(format!("sample budget k={k} must be in 1..={n}")));
    }
    Ok(DenseVector::from(waterfill(&importance(a, b)?, k)))
}

/// Minimizer of `Σ (1 - p_i)/p_i · w_i²` subject to `Σ p_i = k`, `0 < p_i ≤ 1`
/// over the indices with `w_i > 0`. Zero-weight indices get `p_i = 0`. If at
/// most `k` weights are positive they all get probability 1.
pub fn waterfill(weights: &[f64], k: usize) -> Vec<f64> {
    let mut p = vec![0.0; weights.len()];
    let positive: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    if positive.len() <= k {
        for &i in &positive {
            p[i] = 1.0;
        }
        return p;
    }
    let mut clipped = vec![false; weights.len()];
    let mut n_clipped = 0usize;
    loop {
        let budget = (k - n_clipped) as f64;
        let free_mass: f64 = positive.iter().filter(|&&i| !clipped[i]).map(|&i| weights[i]).sum();
        let mut newly = false;
        for &i in &positive {
            if clipped[i] {
                continue;
            }
            let v = budget * weights[i] / free_mass;
            if v >= 1.0 {
                clipped[i] = true;
                n_clipped += 1;
                newly = true;
            }
        }
        if !newly {
            for &i in &positive {
                p[i] = if clipped[i] { 1.0 } else { budget * weights[i] / free_mass };
            }
            return p;
        }
    }
}

/// `E‖AB − A'B'‖²_F = Σ (1 − p_i)/p_i ‖A[:, i]‖² ‖B[i, :]‖²` for the Bernoulli estimator.
pub fn bernoulli_error<A: MatRef, B: MatRef>(a: &A, b: &B, p: &[f64]) -> Result<f64> {
    let w = importance(a, b)?;
    if p.len() != w.len() {
        return Err(Error::dim("bernoulli_error", "probability vector length"));
    }
    let mut err = 0.0;
    for (wi, &pi) in w.iter().zip(p) {
        if *wi == 0.0 {
            continue;
        }
        if pi <= 0.0 {
            return Ok(f64::INFINITY);
        }
        err += (1.0 - pi) / pi * wi * wi;
    }
    Ok(err)
}

/// Draw `c` indices with replacement from `p`; each carries weight `1/(c p_i)`.
pub fn plan_cr(p: &DenseVector, c: usize, rng: &mut Rng) -> Result<SamplePlan> {
    if c == 0 {
        return Err(Error::param("need at least one CR sample"));
    }
    let mut indices = Vec::with_capacity(c);
    let mut scales = Vec::with_capacity(c);
    for _ in 0..c {
        let i = rng.choice_weighted(p.as_slice())?;
        indices.push(i);
        scales.push(1.0 / (c as f64 * p[i]));
    }
    Ok(SamplePlan {
        probabilities: p.clone(),
        mode: SampleMode::WithReplacement { samples: c },
        indices,
        scales,
    })
}

/// Keep each index independently with probability `p_i`; kept ones carry `1/p_i`.
pub fn plan_bernoulli(p: &DenseVector, budget: usize, rng: &mut Rng) -> Result<SamplePlan> {
    let mut indices = Vec::new();
    let mut scales = Vec::new();
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 && rng.bernoulli(pi)? {
            indices.push(i);
            scales.push(1.0 / pi);
        }
    }
    Ok(SamplePlan {
        probabilities: p.clone(),
        mode: SampleMode::Bernoulli { budget },
        indices,
        scales,
    })
}

/// `Σ_j scales[j] · A[:, σ_j] B[σ_j, :]`. Counts `2·m·|σ|·p` FLOPs.
pub fn sampled_product<A: MatRef, B: MatRef>(a: &A, b: &B, plan: &SamplePlan) -> Result<DenseMatrix> {
    check_shared("sampled_product", a, b)?;
    let (m, p) = (a.rows(), b.cols());
    let mut out = DenseMatrix::zeros(m, p);
    let mut brow = vec![0.0; p];
    for (&t, &s) in plan.indices.iter().zip(&plan.scales) {
        for (j, v) in brow.iter_mut().enumerate() {
            *v = b.at(t, j);
        }
        for i in 0..m {
            let av = a.at(i, t) * s;
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out.row_mut(i).iter_mut().zip(&brow) {
                *o += av * bv;
            }
        }
    }
    flops::add(2 * (m * plan.len() * p) as u64);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFinite("sampled_product"))
    }
}

/// CR estimate of `AB` with the optimal distribution and `c` draws.
pub fn approx_matmul_cr<A: MatRef, B: MatRef>(a: &A, b: &B, c: usize, seed: u64) -> Result<DenseMatrix> {
    approx_matmul_cr_with(a, b, c, &mut Rng::new(seed, 0))
}

pub fn approx_matmul_cr_with<A: MatRef, B: MatRef>(
    a: &A,
    b: &B,
    c: usize,
    rng: &mut Rng,
) -> Result<DenseMatrix> {
    let p = optimal_probs_cr(a, b)?;
    let plan = plan_cr(&p, c, rng)?;
    sampled_product(a, b, &plan)
}

/// Bernoulli estimate of `AB` with the clipped-optimal probabilities for
/// budget `k`. Returns the plan so callers can inspect or reuse the sample.
pub fn approx_matmul_bernoulli<A: MatRef, B: MatRef>(
    a: &A,
    b: &B,
    k: usize,
    seed: u64,
) -> Result<(DenseMatrix, SamplePlan)> {
    approx_matmul_bernoulli_with(a, b, k, &mut Rng::new(seed, 0))
}

pub fn approx_matmul_bernoulli_with<A: MatRef, B: MatRef>(
    a: &A,
    b: &B,
    k: usize,
    rng: &mut Rng,
) -> Result<(DenseMatrix, SamplePlan)> {
    let p = optimal_probs_bernoulli(a, b, k)?;
    let plan = plan_bernoulli(&p, k, rng)?;
    let out = sampled_product(a, b, &plan)?;
    Ok((out, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matmul;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gauss())
    }

    #[test]
    fn cr_probs_direct_formula() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let p = optimal_probs_cr(&a, &DenseMatrix::identity(2)).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);

        let eq = DenseMatrix::from_rows(&[vec![1.0, -1.0, 1.0], vec![1.0, 1.0, -1.0]]).unwrap();
        let p = optimal_probs_cr(&eq, &eq.transpose()).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        assert!(matches!(
            optimal_probs_cr(&DenseMatrix::zeros(2, 2), &DenseMatrix::identity(2)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn cr_full_deterministic_plan_is_exact() {
        let mut rng = Rng::new(1, 1);
        let a = random(4, 5, &mut rng);
        let b = random(5, 3, &mut rng);
        let n = 5;
        let plan = SamplePlan {
            probabilities: DenseVector::from(vec![1.0 / n as f64; n]),
            mode: SampleMode::WithReplacement { samples: n },
            indices: (0..n).collect(),
            scales: vec![1.0; n],
        };
        let got = sampled_product(&a, &b, &plan).unwrap();
        assert!(got.max_abs_diff(&matmul(&a, &b).unwrap()) < 1e-12);
    }

    #[test]
    fn one_by_one_is_always_exact() {
        let a = DenseMatrix::from_vec(1, 1, vec![3.0]).unwrap();
        let b = DenseMatrix::from_vec(1, 1, vec![-2.5]).unwrap();
        for seed in 0..20 {
            let c = approx_matmul_cr(&a, &b, 1 + seed as usize % 3, seed).unwrap();
            assert!((c.get(0, 0) + 7.5).abs() < 1e-12);
            let (d, _) = approx_matmul_bernoulli(&a, &b, 1, seed).unwrap();
            assert!((d.get(0, 0) + 7.5).abs() < 1e-12);
        }
    }

    #[test]
    fn bernoulli_probs_edge_cases() {
        let mut rng = Rng::new(2, 2);
        let a = random(3, 4, &mut rng);
        let b = random(4, 2, &mut rng);
        let p = optimal_probs_bernoulli(&a, &b, 4).unwrap();
        assert!(p.iter().all(|&v| v == 1.0));
        assert!(matches!(optimal_probs_bernoulli(&a, &b, 5), Err(Error::Parameter(_))));
        assert!(optimal_probs_bernoulli(&a, &b, 0).is_err());

        let p = waterfill(&[2.0; 6], 3);
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let p = waterfill(&[10.0, 1.0, 1.0, 1.0], 2);
        assert_eq!(p[0], 1.0);
        for &v in &p[1..] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let p = waterfill(&[0.0, 3.0, 0.0, 1.0], 3);
        assert_eq!(p, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn waterfill_handles_cascading_clips() {
        let w = [100.0, 50.0, 1.0, 1.0, 1.0, 1.0];
        let p = waterfill(&w, 3);
        assert_eq!(&p[..2], &[1.0, 1.0]);
        assert!((p.iter().sum::<f64>() - 3.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn k_equal_n_bernoulli_is_exact() {
        let mut rng = Rng::new(3, 3);
        let a = random(3, 4, &mut rng);
        let b = random(4, 5, &mut rng);
        let (c, plan) = approx_matmul_bernoulli(&a, &b, 4, 9).unwrap();
        assert_eq!(plan.indices, vec![0, 1, 2, 3]);
        assert!(c.max_abs_diff(&matmul(&a, &b).unwrap()) < 1e-12);
    }

    #[test]
    fn bernoulli_flops_track_sample_size() {
        let mut rng = Rng::new(4, 4);
        let a = random(8, 64, &mut rng);
        let b = random(64, 8, &mut rng);
        let p = optimal_probs_bernoulli(&a, &b, 8).unwrap();
        let plan = plan_bernoulli(&p, 8, &mut rng).unwrap();
        let (_, t) = flops::measure(|| sampled_product(&a, &b, &plan).unwrap());
        assert_eq!(t.total_flops(), (2 * 8 * plan.len() * 8) as u64);
    }
}
