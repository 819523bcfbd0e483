use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use subsample_nn::analysis::TrainReport;
use subsample_nn::nn::{self, checkpoint};

use crate::config::{self, PolicyName, RunConfig};
use crate::{usage, RunArgs};

fn resolve_config(args: &RunArgs, extra: &[String]) -> Result<(RunConfig, PathBuf)> {
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(epochs) = args.epochs {
        overrides.push(format!("epochs={epochs}"));
    }
    if let Some(out) = &args.out {
        overrides.push(format!("out={}", serde_json::to_string(out)?));
    }
    overrides.extend_from_slice(extra);
    let cfg = config::load(args.config.as_deref(), &overrides).map_err(|e| usage(format!("{e:#}")))?;
    cfg.validate().map_err(|e| usage(format!("{e:#}")))?;
    let base = args
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok((cfg, base))
}

/// Train `cfg` and write every artifact into `cfg.out`.
pub fn execute(cfg: &RunConfig, base: &Path) -> Result<TrainReport> {
    let split = cfg.load_data(base)?;
    let mut model = cfg.build_model(&split)?;
    let report = nn::train(&mut model, &split, cfg.policy.kind(), &cfg.train_config())?;

    let out = &cfg.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = report.summary_json();
    summary["layer_dims"] = serde_json::to_value(&model.layer_dims)?;
    summary["dataset"] = serde_json::json!({
        "train": split.train.len(),
        "validation": split.validation.len(),
        "test": split.test.len(),
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    fs::write(out.join("timing.csv"), report.timing_csv())?;
    fs::write(out.join("confusion.csv"), report.confusion.to_csv())?;
    fs::write(out.join("labels.csv"), report.labels.to_csv())?;
    checkpoint::save(&model, out.join("checkpoint.bin"))?;
    checkpoint::save_meta(
        &checkpoint::CheckpointMeta {
            activation: model.hidden_activation,
            seed: cfg.seed,
            policy: report.policy.name().to_string(),
        },
        out.join("checkpoint.json"),
    )?;
    Ok(report)
}

pub fn cmd_train(args: &RunArgs) -> Result<u8> {
    let (cfg, base) = resolve_config(args, &[])?;
    let report = execute(&cfg, &base)?;
    println!("policy: {}", report.policy.name());
    for e in &report.epochs {
        println!("epoch {:>3}  validation accuracy {:.4}", e.epoch, e.validation_accuracy);
    }
    if let Some(f) = report.policy_stats.mean_active_fraction() {
        println!("mean active fraction: {f:.4}");
    }
    println!("total flops: {}", report.totals.total_flops());
    println!("accuracy: {:.4}", report.test_accuracy);
    println!("report: {}", cfg.out.display());
    Ok(0)
}

/// `(variant label, directory name, config overrides)`.
fn variants(vary: &str) -> Result<Vec<(String, String, Vec<String>)>> {
    let (name, list) = match vary.split_once('=') {
        Some((n, l)) => (n.trim(), Some(l)),
        None => (vary.trim(), None),
    };
    let values: Vec<String> = match (name, list) {
        ("layers", None) => (1..=7).map(|l| l.to_string()).collect(),
        (_, Some(l)) => l.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect(),
        (_, None) => return Err(usage(format!("`--vary {name}` needs a value list"))),
    };
    if values.is_empty() {
        return Err(usage("empty variant list"));
    }
    values
        .into_iter()
        .map(|v| {
            let set = match name {
                "layers" => {
                    v.parse::<usize>().map_err(|_| usage(format!("bad layer count `{v}`")))?;
                    format!("hidden_layers={v}")
                }
                "batch_size" => {
                    v.parse::<usize>().map_err(|_| usage(format!("bad batch size `{v}`")))?;
                    format!("batch_size={v}")
                }
                "policy" => {
                    v.parse::<PolicyName>().map_err(|e| usage(format!("{e:#}")))?;
                    format!("policy.kind={v}")
                }
                other => return Err(usage(format!("cannot vary `{other}`; use layers, batch_size or policy"))),
            };
            Ok((format!("{name}={v}"), format!("{name}-{v}"), vec![set]))
        })
        .collect()
}

pub fn thread_cap() -> usize {
    std::env::var("SUBSAMPLE_NN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn cmd_sweep(args: &RunArgs, vary: &str) -> Result<u8> {
    let variants = variants(vary)?;
    let (base_cfg, base) = resolve_config(args, &[])?;
    let mut jobs = Vec::with_capacity(variants.len());
    for (label, dir, sets) in &variants {
        let mut vargs = args.clone();
        vargs.out = Some(base_cfg.out.join(dir));
        let (cfg, _) = resolve_config(&vargs, sets)?;
        jobs.push((label.clone(), cfg));
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<TrainReport>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..thread_cap().min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((label, cfg)) = jobs.get(i) else { break };
                let r = execute(cfg, &base).with_context(|| format!("variant {label}"));
                if let Ok(rep) = &r {
                    eprintln!("{label}: accuracy {:.4}", rep.test_accuracy);
                }
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });

    let mut csv = String::from("variant,accuracy,total_seconds,total_flops\n");
    for ((label, _), r) in jobs.iter().zip(results.into_inner().unwrap()) {
        let rep = r.expect("every job ran")?;
        csv.push_str(&format!(
            "{label},{},{:.6},{}\n",
            rep.test_accuracy,
            rep.total_seconds(),
            rep.totals.total_flops()
        ));
    }
    fs::create_dir_all(&base_cfg.out)?;
    let merged = base_cfg.out.join("merged.csv");
    fs::write(&merged, &csv)?;
    print!("{csv}");
    println!("merged: {}", merged.display());
    Ok(0)
}
