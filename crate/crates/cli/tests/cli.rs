use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use butterflow::butterfly::{invert_permutation, permute};
use butterflow::data::io::read_samples;
use butterflow::data::DatasetSpec;
use butterflow_cli::checkpoint::Checkpoint;
use butterflow_cli::commands;
use butterflow_cli::config::{ButterflyLevels, InitKind, RunConfig};
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_butterflow"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn small(dataset: &str, iters: u64) -> RunConfig {
    RunConfig {
        dataset: dataset.into(),
        steps: 2,
        coupling_channels: 8,
        butterfly_levels: ButterflyLevels::One(2),
        init: InitKind::Rot,
        batch_size: 16,
        max_iters: iters,
        ..RunConfig::default()
    }
}

fn write_config(dir: &Path, name: &str, c: &RunConfig) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, c.to_json()).unwrap();
    p
}

fn train(dir: &Path, name: &str, c: &RunConfig) -> PathBuf {
    let cfg = write_config(dir, &format!("{name}.json"), c);
    let out = dir.join(name);
    let o = bin(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (r#"{"dataset": "standard_normal:dim=8", "bogus": 1}"#, "bogus"),
        (r#"{"dataset": "standard_normal:dim=6", "butterfly_levels": 2}"#, "butterfly_levels"),
        (r#"{"dataset": "standard_normal:dim=8", "block_size": 3}"#, "block_size"),
        (r#"{"dataset": "nonsense"}"#, "dataset"),
        (r#"{"dataset": "standard_normal:dim=8", "lr": -1}"#, "lr"),
    ];
    for (i, (json, field)) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("c{i}.json"));
        std::fs::write(&cfg, json).unwrap();
        let o = bin(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
        assert_eq!(code(&o), 2, "{json}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{json}: {}", stderr(&o));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn zero_iterations_write_initial_checkpoint_and_empty_metrics() {
    let dir = TempDir::new().unwrap();
    let c = small("standard_normal:dim=8,n=64", 0);
    let out = train(dir.path(), "run", &c);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics, format!("{}\n", commands::METRICS_HEADER));
    let ckpt = Checkpoint::load(&out.join("ckpt_final.bflw")).unwrap();
    assert_eq!(ckpt.iteration, 0);
    assert_eq!(ckpt.config.as_ref(), Some(&c));
    let v = c.validate().unwrap();
    let init = butterflow::flow::FlowModel::new(v.flow).unwrap().export();
    for t in &init.tensors {
        assert_eq!(ckpt.tensors.get(&t.name), Some(t));
    }
}

#[test]
fn resume_without_iterations_keeps_the_payload() {
    let dir = TempDir::new().unwrap();
    let c = RunConfig {
        ckpt_every: 5,
        eval_every: 5,
        ..small("permuted_gaussian:dim=8,n=128", 10)
    };
    let out = train(dir.path(), "run", &c);
    assert!(out.join("ckpt_5.bflw").exists() && out.join("ckpt_10.bflw").exists());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows[0], "iter,split,nll_nats_per_dim,bpd,lr,elapsed_ms");
    assert_eq!(rows.len(), 1 + 10 + 2);
    assert!(rows.iter().skip(1).all(|r| r.split(',').count() == 6));

    let first = std::fs::read(out.join("ckpt_final.bflw")).unwrap();
    let cfg = write_config(dir.path(), "run.json", &c);
    let resumed = dir.path().join("resumed");
    let o = bin(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&resumed),
        "--resume",
        s(&out.join("ckpt_final.bflw")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let second = std::fs::read(resumed.join("ckpt_final.bflw")).unwrap();
    assert_eq!(first, second);
    assert_eq!(
        std::fs::read_to_string(resumed.join("metrics.csv")).unwrap(),
        format!("{}\n", commands::METRICS_HEADER)
    );
}

#[test]
fn resume_with_other_architecture_is_rejected() {
    let dir = TempDir::new().unwrap();
    let out = train(dir.path(), "run", &small("standard_normal:dim=8,n=64", 2));
    let other = RunConfig {
        coupling_channels: 12,
        ..small("standard_normal:dim=8,n=64", 4)
    };
    let cfg = write_config(dir.path(), "other.json", &other);
    let o = bin(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("x")),
        "--resume",
        s(&out.join("ckpt_final.bflw")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn divergent_training_aborts_with_exit_3() {
    let dir = TempDir::new().unwrap();
    let c = RunConfig {
        lr: 1e12,
        warmup_iters: 0,
        ..small("standard_normal:dim=8,n=256", 50)
    };
    let cfg = write_config(dir.path(), "c.json", &c);
    let o = bin(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(!dir.path().join("out/ckpt_final.bflw").exists());
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(metrics.contains("inf"));
}

/// A checkpoint whose flow is the identity map: no training, butterflies at
/// the identity and every coupling scale saturated at 1.
fn identity_checkpoint(dir: &Path, dim: usize) -> PathBuf {
    let c = RunConfig {
        init: InitKind::Id,
        ..small(&format!("standard_normal:dim={dim},n=64"), 0)
    };
    let out = train(dir, "identity", &c);
    let path = out.join("ckpt_final.bflw");
    let mut ckpt = Checkpoint::load(&path).unwrap();
    for t in &mut ckpt.tensors.tensors {
        if t.name.ends_with("coupling.net.l2.bias") {
            let half = t.data.len() / 2;
            t.data[..half].fill(100.0);
        }
    }
    ckpt.save(&path).unwrap();
    path
}

#[test]
fn eval_of_identity_model_matches_gaussian_entropy() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_checkpoint(dir.path(), 8);
    let args = ["eval", "--ckpt", s(&ckpt), "--dataset", "standard_normal:dim=8,n=40000,seed=3"];
    let a = bin(&args);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let report: serde_json::Value = serde_json::from_str(&stdout(&a)).unwrap();
    let nll = report["nll_nats_per_dim"].as_f64().unwrap();
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    assert!((nll - entropy).abs() <= 0.01, "{nll} vs {entropy}");
    assert_eq!(report["n"], 10_000);
    assert!(report.get("bpd").is_none());
    assert_eq!(stdout(&bin(&args)), stdout(&a));
}

#[test]
fn eval_reports_bpd_for_discrete_data() {
    let dir = TempDir::new().unwrap();
    let c = RunConfig {
        levels: 1,
        butterfly_levels: ButterflyLevels::One(1),
        ..small("permuted_patterns:side=4,n=64", 2)
    };
    let out = train(dir.path(), "patterns", &c);
    let o = bin(&["eval", "--ckpt", s(&out.join("ckpt_final.bflw"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report["bpd"].as_f64().unwrap().is_finite());
}

#[test]
fn eval_on_mismatched_shape_exits_2() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_checkpoint(dir.path(), 8);
    let o = bin(&["eval", "--ckpt", s(&ckpt), "--dataset", "standard_normal:dim=16"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn damaged_checkpoints_exit_2() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_checkpoint(dir.path(), 8);
    let bytes = std::fs::read(&ckpt).unwrap();
    let truncated = dir.path().join("truncated.bflw");
    std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    let magic = dir.path().join("magic.bflw");
    let mut bad = bytes.clone();
    bad[..5].copy_from_slice(b"NOPE!");
    std::fs::write(&magic, &bad).unwrap();
    for p in [&truncated, &magic] {
        let o = bin(&["eval", "--ckpt", s(p)]);
        assert_eq!(code(&o), 2, "{}", stderr(&o));
        assert!(stderr(&o).contains("corrupt checkpoint"), "{}", stderr(&o));
    }
}

#[test]
fn zero_temperature_identity_samples_are_zero_and_reimport() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_checkpoint(dir.path(), 8);
    let out = dir.path().join("zeros.bfd");
    let o = bin(&["sample", "--ckpt", s(&ckpt), "-n", "5", "--temperature", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let file = read_samples(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(file.data.len(), 5);
    assert!(file.data.iter().flatten().all(|v| *v == 0.0));

    let out = dir.path().join("s.bfd");
    let o = bin(&["sample", "--ckpt", s(&ckpt), "-n", "7", "--seed", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let spec: DatasetSpec = format!("file:path={}", out.display()).parse().unwrap();
    let ds = spec.load().unwrap();
    let direct = read_samples(std::fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(ds.test, direct.data);
    assert_eq!(ds.shape.numel(), 8);
}

#[test]
fn unscrambling_needs_a_stored_permutation() {
    let dir = TempDir::new().unwrap();
    let ckpt = identity_checkpoint(dir.path(), 8);
    let o = bin(&["sample", "--ckpt", s(&ckpt), "--unscramble", "--out", s(&dir.path().join("x.bfd"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let out = train(dir.path(), "perm", &small("permuted_gaussian:dim=8,n=64,seed=4", 3));
    let samples = dir.path().join("p.bfd");
    let ckpt = out.join("ckpt_final.bflw");
    let o = bin(&["sample", "--ckpt", s(&ckpt), "-n", "6", "--unscramble", "--out", s(&samples)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let raw = read_samples(std::fs::File::open(&samples).unwrap()).unwrap();
    let plain = read_samples(std::fs::File::open(commands::unscrambled_path(&samples)).unwrap()).unwrap();
    let perm = DatasetSpec::load(&"permuted_gaussian:dim=8,n=64,seed=4".parse().unwrap())
        .unwrap()
        .permutation
        .unwrap();
    let inv = invert_permutation(&perm);
    for (r, p) in raw.data.iter().zip(&plain.data) {
        assert_eq!(&permute(&inv, r), p);
        assert_eq!(&permute(&perm, p), r);
    }
}

#[test]
fn sample_code_length_is_self_consistent() {
    let dir = TempDir::new().unwrap();
    let c = RunConfig {
        butterfly_levels: ButterflyLevels::One(1),
        ..small("moons:n=512", 200)
    };
    let out = train(dir.path(), "run", &c);
    let ckpt = out.join("ckpt_final.bflw");
    let run = commands::load_run(&ckpt).unwrap();
    let model = run.trainer.eval_model().unwrap();
    let stats = |seed: u64| {
        let path = dir.path().join(format!("s{seed}.bfd"));
        commands::sample(&ckpt, 1000, seed, 1.0, &path, false).unwrap();
        let xs = read_samples(std::fs::File::open(&path).unwrap()).unwrap().data;
        let nll: Vec<f64> = xs.iter().map(|x| -model.log_prob(x).unwrap()).collect();
        let n = nll.len() as f64;
        let mean = nll.iter().sum::<f64>() / n;
        let var = nll.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var / n)
    };
    let (a, va) = stats(1);
    let (b, vb) = stats(2);
    assert!((a - b).abs() <= 3.0 * (va + vb).sqrt(), "{a} vs {b}");
}

#[test]
fn perm_decompose_reports_and_verifies() {
    let o = bin(&["perm-decompose", "--size", "2", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("factors: 2"));
    assert!(stdout(&o).contains("verified: true"));

    let o = bin(&["perm-decompose", "--size", "128", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("factors: 14"), "{}", stdout(&o));
    assert!(stdout(&o).contains("levels: 1,2,3,4,5,6,7,7,6,5,4,3,2,1"));

    let dir = TempDir::new().unwrap();
    let file = dir.path().join("id.txt");
    std::fs::write(&file, "0 1 2 3\n4,5,6,7\n").unwrap();
    let dump = dir.path().join("layer.bflw");
    let o = bin(&["perm-decompose", "--perm", s(&file), "--dump", s(&dump)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = Checkpoint::load(&dump).unwrap();
    assert!(ckpt.config.is_none());
    assert_eq!(ckpt.tensors.len(), 6);
    for t in &ckpt.tensors.tensors {
        assert!(t.data.chunks(4).all(|w| w == [1.0, 0.0, 0.0, 1.0]));
    }

    std::fs::write(&file, "0 0 1 2").unwrap();
    assert_eq!(code(&bin(&["perm-decompose", "--perm", s(&file)])), 2);
    assert_eq!(code(&bin(&["perm-decompose", "--size", "6", "--seed", "0"])), 2);
}

#[test]
fn verify_grad_suite_prints_only_gradient_rows() {
    let o = bin(&["verify", "--suite", "grad"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("check,max_err,tol,status"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols.len(), 4);
        assert!(cols[0].starts_with("grad_"));
        assert!(cols[1].parse::<f64>().is_ok() && cols[2].parse::<f64>().is_ok());
        assert_eq!(cols[3], "pass");
    }
}

#[test]
fn bench_writes_one_row_per_combination() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("b.csv");
    let o = bin(&[
        "bench", "--op", "matvec", "--dims", "256,512,1024", "--batch", "1,2", "--reps", "3", "--out", s(&csv),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "op,dim,batch,median_ns,iqr_ns");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("matvec,256,1,"));
    assert_eq!(code(&bin(&["bench", "--op", "fft", "--dims", "256"])), 2);
}

#[test]
fn inversion_pass_costs_about_a_forward_pass() {
    use butterflow_cli::bench::{run, BenchOp, BenchSettings};
    let s = BenchSettings {
        reps: 30,
        ..BenchSettings::default()
    };
    let fwd = run(BenchOp::Matvec, 8192, 4, &s).unwrap().median_ns;
    let inv = run(BenchOp::Inverse, 8192, 4, &s).unwrap().median_ns;
    assert!(inv <= 3.0 * fwd, "inverse {inv} ns vs forward {fwd} ns");
}
