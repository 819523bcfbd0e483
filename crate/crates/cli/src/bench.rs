use anyhow::Result;
use clap::Args;
use subsample_nn::linalg::{flops, matmul, DenseMatrix, Rng};
use subsample_nn::mc;

use crate::usage;

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 32)]
    m: usize,
    /// Shared dimension.
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    p: usize,
    /// Expected number of sampled column-row pairs.
    #[arg(long = "k", default_value_t = 8)]
    k_samples: usize,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub struct BenchResult {
    pub exact_flops: u64,
    pub mean_sampled_flops: f64,
    pub overhead_flops: u64,
    pub analytic_error: f64,
    pub empirical_error: f64,
}

pub fn run(args: &BenchArgs) -> Result<BenchResult> {
    if args.m == 0 || args.n == 0 || args.p == 0 || args.trials == 0 {
        return Err(usage("m, n, p and trials must be positive"));
    }
    if args.k_samples == 0 || args.k_samples > args.n {
        return Err(usage(format!("k must be in 1..={}", args.n)));
    }
    let mut rng = Rng::new(args.seed, 0xbe7c);
    let a = DenseMatrix::from_fn(args.m, args.n, |_, _| rng.gauss());
    let b = DenseMatrix::from_fn(args.n, args.p, |_, _| rng.gauss());

    let (exact, cost) = flops::measure(|| matmul(&a, &b));
    let exact = exact?;
    let (probs, overhead) = flops::measure(|| mc::optimal_probs_bernoulli(&a, &b, args.k_samples));
    let probs = probs?;
    let analytic_error = mc::bernoulli_error(&a, &b, probs.as_slice())?;

    let mut err_sum = 0.0;
    let mut flop_sum = 0u64;
    for _ in 0..args.trials {
        let plan = mc::plan_bernoulli(&probs, args.k_samples, &mut rng)?;
        let (approx, c) = flops::measure(|| mc::sampled_product(&a, &b, &plan));
        flop_sum += c.total_flops();
        let d = approx?.sub(&exact)?.frobenius_norm();
        err_sum += d * d;
    }
    Ok(BenchResult {
        exact_flops: cost.total_flops(),
        mean_sampled_flops: flop_sum as f64 / args.trials as f64,
        overhead_flops: overhead.total_flops(),
        analytic_error,
        empirical_error: err_sum / args.trials as f64,
    })
}

pub fn cmd_matmul_bench(args: &BenchArgs) -> Result<u8> {
    let r = run(args)?;
    let gap = if r.analytic_error > 0.0 {
        (r.empirical_error - r.analytic_error).abs() / r.analytic_error
    } else {
        r.empirical_error
    };
    println!("shape: {}x{} * {}x{}, k={}, trials={}", args.m, args.n, args.n, args.p, args.k_samples, args.trials);
    println!("exact_flops: {}", r.exact_flops);
    println!("sampled_flops_mean: {:.1}", r.mean_sampled_flops);
    println!("probability_overhead_flops: {}", r.overhead_flops);
    println!("flop_ratio: {:.6}", r.mean_sampled_flops / r.exact_flops as f64);
    println!("analytic_error: {:.6e}", r.analytic_error);
    println!("empirical_error: {:.6e}", r.empirical_error);
    println!("relative_gap: {gap:.6}");
    Ok(0)
}
