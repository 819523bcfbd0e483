use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use subsample_nn::analysis::{
    build_theorem1_network, contribution_ratios, lemma1_error, random_linear_fixture, ratio_table_csv,
    theorem1_check, theorem1_ratio,
};
use subsample_nn::linalg::Rng;
use subsample_nn::Error;

use crate::{usage, EXIT_THEORY_FAIL};

const THEOREM_TOL: f64 = 1e-9;
const LEMMA_TOL: f64 = 1e-10;

#[derive(Args)]
pub struct TheoryArgs {
    /// Kept-to-omitted contribution ratios to test.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    c: Vec<usize>,
    /// Number of layers of the constructed network.
    #[arg(long, default_value_t = 6)]
    depth: usize,
    /// Layer width; must be divisible by c + 1 for every c. Defaults to the
    /// smallest such width times 2.
    #[arg(long)]
    width: Option<usize>,
    /// Random linear networks for the recursion check.
    #[arg(long, default_value_t = 100)]
    fixtures: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for `theorem1_c<c>.csv` tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn report(name: &str, ok: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

pub fn cmd_verify_theory(args: &TheoryArgs) -> Result<u8> {
    if args.c.is_empty() || args.c.contains(&0) {
        return Err(usage("every c must be a positive integer"));
    }
    if args.depth == 0 {
        return Err(usage("depth must be positive"));
    }
    let width = match args.width {
        Some(w) => w,
        None => 2 * args.c.iter().fold(1, |l, &c| l / gcd(l, c + 1) * (c + 1)),
    };
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
    }

    let mut all_ok = true;
    for &c in &args.c {
        let (model, sets, x) = match build_theorem1_network(c, args.depth, width) {
            Ok(f) => f,
            Err(e @ Error::Parameter(_)) => return Err(usage(e.to_string())),
            Err(e) => return Err(e.into()),
        };
        let split = contribution_ratios(&model, &x, &sets)?;
        let worst_split = split
            .iter()
            .flat_map(|v| v.iter())
            .map(|r| ((r - c as f64) / c as f64).abs())
            .fold(0.0, f64::max);
        all_ok &= report(
            &format!("c={c} contribution split"),
            worst_split <= 1e-12,
            format!("max relative deviation from c {worst_split:.2e}"),
        );

        let rows = theorem1_check(&model, &x, &sets, c)?;
        println!("c={c} width={width} error-to-estimate ratios");
        println!("{:>3}  {:>10}  {:>10}", "k", "measured", "closed form");
        for r in &rows {
            println!("{:>3}  {:>10.4}  {:>10.4}", r.k, r.measured, r.predicted);
        }
        let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        all_ok &= report(
            &format!("c={c} exponential law"),
            worst <= THEOREM_TOL,
            format!("max relative error {worst:.2e} over {} layers", rows.len()),
        );
        let increasing = rows.windows(2).all(|w| w[1].measured > w[0].measured);
        all_ok &= report(&format!("c={c} monotone growth"), increasing, "ratio strictly increases with depth".into());
        let first = (rows[0].measured - 1.0 / c as f64).abs();
        all_ok &= report(&format!("c={c} first layer"), first <= 1e-12, format!("ratio - 1/c = {first:.2e}"));
        let closed = (theorem1_ratio(c as f64, args.depth) - rows[args.depth - 1].measured).abs();
        all_ok &= report(
            &format!("c={c} depth {}", args.depth),
            closed <= THEOREM_TOL * theorem1_ratio(c as f64, args.depth),
            format!("((c+1)/c)^{} - 1 = {:.6}", args.depth, theorem1_ratio(c as f64, args.depth)),
        );

        if let Some(out) = &args.out {
            let table: Vec<(usize, f64)> = rows.iter().map(|r| (r.k, r.measured)).collect();
            fs::write(out.join(format!("theorem1_c{c}.csv")), ratio_table_csv(&table))?;
        }
    }

    let mut rng = Rng::new(args.seed, 0x1e55a);
    let mut worst = 0.0f64;
    for _ in 0..args.fixtures {
        let (model, x, sets) = random_linear_fixture(&mut rng, 4, 16)?;
        let profile = lemma1_error(&model, &x, &sets)?;
        worst = worst.max(profile.max_recursion_error(1e-8));
    }
    all_ok &= report(
        "recursion identity",
        worst <= LEMMA_TOL,
        format!("{} random linear networks, max relative error {worst:.2e}", args.fixtures),
    );

    Ok(if all_ok { 0 } else { EXIT_THEORY_FAIL })
}
