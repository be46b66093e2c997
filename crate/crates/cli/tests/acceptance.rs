//! End-to-end acceptance run: one PASS/FAIL line per criterion.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use butterflow::data::DatasetSpec;
use butterflow::flow::split::HALF_LOG_TWO_PI;
use butterflow_cli::bench::{self, BenchOp, BenchSettings};
use butterflow_cli::checkpoint::Checkpoint;
use butterflow_cli::checks::{self, CheckResult};
use butterflow_cli::commands;
use butterflow_cli::config::{ButterflyLevels, InitKind, RunConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn from_check(r: &CheckResult) -> String {
    format!("{} max_err {:e} (tol {:e})", r.name, r.max_err, r.tol)
}

fn checks_outcome(results: &[CheckResult], limit: Option<Duration>) -> Outcome {
    let elapsed: Duration = results.iter().map(|r| r.elapsed).sum();
    let within = limit.is_none_or(|l| elapsed < l);
    let mut detail: Vec<String> = results.iter().map(from_check).collect();
    detail.push(match limit {
        Some(l) => format!("{:.2} s, limit {} s", elapsed.as_secs_f64(), l.as_secs()),
        None => format!("{:.2} s", elapsed.as_secs_f64()),
    });
    outcome(results.iter().all(CheckResult::passed) && within, detail.join("; "))
}

fn train_and_eval(dir: &Path, name: &str, config: &RunConfig) -> Result<f64, String> {
    let cfg_path = dir.join(format!("{name}.json"));
    std::fs::write(&cfg_path, config.to_json()).map_err(|e| e.to_string())?;
    let out = dir.join(name);
    let run = commands::train(&cfg_path, &out, None).map_err(|e| e.to_string())?;
    let report = commands::eval(&run.final_checkpoint, None).map_err(|e| e.to_string())?;
    Ok(report.nll_nats_per_dim)
}

/// Mean test-split NLL per dimension under a standard normal.
fn standard_normal_baseline(spec: &str) -> Result<f64, String> {
    let spec: DatasetSpec = spec.parse().map_err(|e: butterflow::Error| e.to_string())?;
    let data = spec.load().map_err(|e| e.to_string())?;
    let dim = data.shape.numel() as f64;
    let total: f64 = data
        .test
        .iter()
        .map(|x| x.iter().map(|v| HALF_LOG_TWO_PI + 0.5 * v * v).sum::<f64>())
        .sum();
    Ok(total / data.test.len() as f64 / dim)
}

fn two_rings(dir: &Path) -> Result<Outcome, String> {
    let dataset = "two_rings:n=4096,seed=0";
    let config = RunConfig {
        dataset: dataset.into(),
        steps: 4,
        coupling_channels: 32,
        butterfly_levels: ButterflyLevels::One(1),
        init: InitKind::Rot,
        lr: 3e-3,
        batch_size: 64,
        max_iters: 8000,
        eval_every: 1000,
        ..RunConfig::default()
    };
    let start = Instant::now();
    let nll = train_and_eval(dir, "two_rings", &config)?;
    let secs = start.elapsed().as_secs_f64();
    let baseline = standard_normal_baseline(dataset)?;
    Ok(outcome(
        nll <= baseline - 0.3 && config.max_iters <= 20_000 && secs < 300.0,
        format!(
            "test nll {nll:.4} vs baseline {baseline:.4} nats/dim (margin needed 0.3), {} iters, {secs:.1} s",
            config.max_iters
        ),
    ))
}

/// Trainable butterflies against the same model with butterflies frozen at
/// the identity, seeds 0..3.
fn ablation(dir: &Path, tag: &str, base: RunConfig, dataset: impl Fn(u64) -> String) -> Result<Vec<(f64, f64)>, String> {
    (0..3u64)
        .map(|seed| {
            let trained = RunConfig {
                dataset: dataset(seed),
                seed,
                init: InitKind::Id,
                train_butterfly: true,
                ..base.clone()
            };
            let frozen = RunConfig {
                train_butterfly: false,
                ..trained.clone()
            };
            Ok((
                train_and_eval(dir, &format!("{tag}_{seed}_trained"), &trained)?,
                train_and_eval(dir, &format!("{tag}_{seed}_frozen"), &frozen)?,
            ))
        })
        .collect()
}

fn permuted_gaussian(dir: &Path) -> Result<Outcome, String> {
    let base = RunConfig {
        steps: 4,
        coupling_channels: 32,
        butterfly_levels: ButterflyLevels::One(4),
        bidirectional: true,
        lr: 2e-3,
        batch_size: 64,
        max_iters: 4000,
        ..RunConfig::default()
    };
    let spec = |seed| format!("permuted_gaussian:dim=16,seed={seed}");
    let pairs = ablation(dir, "permuted_gaussian", base, spec)?;
    let mut pass = true;
    let mut detail = Vec::new();
    for (seed, (trained, frozen)) in pairs.iter().enumerate() {
        let data: DatasetSpec = spec(seed as u64).parse().map_err(|e: butterflow::Error| e.to_string())?;
        let truth = data.load().map_err(|e| e.to_string())?.truth.ok_or("dataset has no ground truth")?;
        let entropy = truth.entropy_per_dim();
        pass &= trained < frozen && *trained <= entropy + 0.5;
        detail.push(format!(
            "seed {seed}: trained {trained:.4}, frozen {frozen:.4}, entropy {entropy:.4}"
        ));
    }
    Ok(outcome(pass, detail.join("; ")))
}

fn periodic(dir: &Path) -> Result<Outcome, String> {
    let base = RunConfig {
        levels: 2,
        steps: 4,
        coupling_channels: 32,
        butterfly_levels: ButterflyLevels::One(5),
        bidirectional: true,
        lr: 2e-3,
        batch_size: 32,
        max_iters: 2000,
        ..RunConfig::default()
    };
    let pairs = ablation(dir, "periodic", base, |seed| format!("periodic1d:n=2048,seed={seed}"))?;
    let detail: Vec<String> = pairs
        .iter()
        .enumerate()
        .map(|(s, (t, f))| format!("seed {s}: trained {t:.4}, frozen {f:.4}"))
        .collect();
    Ok(outcome(pairs.iter().all(|(t, f)| t < f), detail.join("; ")))
}

fn scaling() -> Result<Outcome, String> {
    let settings = BenchSettings {
        reps: 30,
        levels: 2,
        block_size: 1,
    };
    let dims: Vec<usize> = (8..=16).map(|k| 1usize << k).collect();
    let mut detail = Vec::new();
    let mut pass = true;
    for op in [BenchOp::Matvec, BenchOp::Inverse] {
        let rows = dims
            .iter()
            .map(|&d| bench::run(op, d, 4, &settings))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let slope = bench::log_log_slope(&rows);
        pass &= (0.8..=1.4).contains(&slope);
        detail.push(format!("{} slope {slope:.3}", op.as_str()));
    }
    let blocks = [1usize, 2, 4, 8];
    let rows = blocks
        .iter()
        .map(|&c| {
            let s = BenchSettings {
                block_size: c,
                ..settings
            };
            bench::run(BenchOp::BlockwiseMatvec, 4096, 4, &s)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    // Same regression with C in place of D.
    let by_c: Vec<_> = rows
        .iter()
        .zip(blocks)
        .map(|(r, c)| bench::BenchRow { dim: c, ..r.clone() })
        .collect();
    let c_slope = bench::log_log_slope(&by_c);
    pass &= c_slope <= 2.0;
    detail.push(format!("blockwise_matvec slope in C {c_slope:.3} (limit 2)"));
    Ok(outcome(pass, detail.join("; ")))
}

fn checkpoint_and_determinism(dir: &Path) -> Result<Outcome, String> {
    let config = RunConfig {
        dataset: "permuted_gaussian:dim=8,n=512,seed=1".into(),
        steps: 2,
        coupling_channels: 16,
        butterfly_levels: ButterflyLevels::One(3),
        init: InitKind::Rot,
        ema: butterflow_cli::config::EmaKind::Butterfly,
        batch_size: 32,
        max_iters: 100,
        ..RunConfig::default()
    };
    let cfg_path = dir.join("determinism.json");
    std::fs::write(&cfg_path, config.to_json()).map_err(|e| e.to_string())?;
    let a = commands::train(&cfg_path, &dir.join("det_a"), None).map_err(|e| e.to_string())?;
    let b = commands::train(&cfg_path, &dir.join("det_b"), None).map_err(|e| e.to_string())?;
    let bytes_a = std::fs::read(&a.final_checkpoint).map_err(|e| e.to_string())?;
    let bytes_b = std::fs::read(&b.final_checkpoint).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::from_bytes(&bytes_a).map_err(|e| e.to_string())?;
    let round_trip = loaded.to_bytes() == bytes_a;
    let resaved = dir.join("resaved.bflw");
    loaded.save(&resaved).map_err(|e| e.to_string())?;
    let disk_round_trip = std::fs::read(&resaved).map_err(|e| e.to_string())? == bytes_a;
    let identical = bytes_a == bytes_b && loaded.iteration == 100;
    Ok(outcome(
        round_trip && disk_round_trip && identical,
        format!(
            "save/load/save identical: {}; two 100-iteration runs bitwise identical: {identical} ({} bytes)",
            round_trip && disk_round_trip,
            bytes_a.len()
        ),
    ))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let dir = dir.path();
    let check = |r: butterflow::Result<CheckResult>| r.map(|c| vec![c]).map_err(|e| e.to_string());
    type Criterion<'a> = (&'a str, Box<dyn Fn() -> Result<Outcome, String> + 'a>);
    let criteria: Vec<Criterion> = vec![
        (
            "determinant_oracle",
            Box::new(|| Ok(checks_outcome(&check(checks::factor_log_det())?, Some(Duration::from_secs(10))))),
        ),
        (
            "inverse_structure",
            Box::new(|| Ok(checks_outcome(&check(checks::factor_inverse())?, None))),
        ),
        (
            "permutation_representability",
            Box::new(|| Ok(checks_outcome(&check(checks::permutation_exact())?, Some(Duration::from_secs(30))))),
        ),
        (
            "circulant_construction",
            Box::new(|| Ok(checks_outcome(&check(checks::circulant_convolution())?, None))),
        ),
        (
            "blockwise_observations",
            Box::new(|| {
                let mut r = check(checks::blockwise_unit_block_bitwise())?;
                r.extend(check(checks::onebyone_kronecker())?);
                Ok(checks_outcome(&r, None))
            }),
        ),
        (
            "gradient_suite",
            Box::new(|| Ok(checks_outcome(&checks::gradients(10).map_err(|e| e.to_string())?, None))),
        ),
        (
            "change_of_variables",
            Box::new(|| {
                let mut r = check(checks::flow_change_of_variables())?;
                r.extend(check(checks::flow_density_integral())?);
                Ok(checks_outcome(&r, None))
            }),
        ),
        ("two_rings_training", Box::new(|| two_rings(dir))),
        ("permuted_gaussian_ablation", Box::new(|| permuted_gaussian(dir))),
        ("periodic_ablation", Box::new(|| periodic(dir))),
        ("complexity_scaling", Box::new(scaling)),
        ("checkpoint_and_determinism", Box::new(|| checkpoint_and_determinism(dir))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {name}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
