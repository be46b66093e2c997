use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use butterflow::butterfly::{invert_permutation, perm_decompose, permutation_matrix, permute, ButterflyLayer};
use butterflow::data::io::write_samples;
use butterflow::data::{Dataset, DatasetSpec};
use butterflow::flow::{FlowModel, ParamKind, ParamTable, Tensor};
use butterflow::rng;
use butterflow::train::{mean_nll, threads_from_env, Metric, Trainer};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::bench::{self, BenchOp, BenchSettings, BenchRow};
use crate::checkpoint::Checkpoint;
use crate::checks::{self, CheckResult, Suite};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const METRICS_HEADER: &str = "iter,split,nll_nats_per_dim,bpd,lr,elapsed_ms";
pub const PERMUTATION_TENSOR: &str = "data.permutation";

pub fn metrics_row(m: &Metric) -> String {
    format!(
        "{},{},{},{},{},{}",
        m.iter,
        m.split.as_str(),
        m.nll_nats_per_dim,
        m.bpd.map(|b| b.to_string()).unwrap_or_default(),
        m.lr,
        m.elapsed_ms
    )
}

fn load_dataset(spec: &DatasetSpec, n_bits: u32) -> CliResult<Dataset> {
    let mut data = spec.load()?;
    if n_bits > 0 {
        data.n_bits = n_bits;
    }
    Ok(data)
}

fn checkpoint_of(trainer: &Trainer, config: &RunConfig, permutation: Option<&[usize]>) -> Checkpoint {
    let mut tensors = trainer.state();
    if let Some(p) = permutation {
        tensors.tensors.push(Tensor {
            name: PERMUTATION_TENSOR.into(),
            shape: vec![p.len()],
            kind: ParamKind::Buffer,
            data: p.iter().map(|&i| i as f64).collect(),
        });
    }
    Checkpoint {
        config: Some(config.clone()),
        iteration: trainer.iter(),
        tensors,
    }
}

/// A checkpoint's trainer, run config and stored data permutation.
pub struct Restored {
    pub config: RunConfig,
    pub trainer: Trainer,
    pub permutation: Option<Vec<usize>>,
}

fn restore(ckpt: &Checkpoint, config: &RunConfig, threads: usize) -> CliResult<Restored> {
    let v = config.validate()?;
    let (data, state): (Vec<Tensor>, Vec<Tensor>) = ckpt
        .tensors
        .tensors
        .iter()
        .cloned()
        .partition(|t| t.name.starts_with("data."));
    let permutation = match data.iter().find(|t| t.name == PERMUTATION_TENSOR) {
        Some(t) => {
            let p: Vec<usize> = t.data.iter().map(|&v| v as usize).collect();
            if t.data.iter().zip(&p).any(|(&v, &i)| v != i as f64) {
                return Err(CliError::CorruptCheckpoint("stored permutation is not integral".into()));
            }
            butterflow::butterfly::validate_permutation(&p)
                .map_err(|e| CliError::CorruptCheckpoint(format!("stored permutation: {e}")))?;
            Some(p)
        }
        None => None,
    };
    let model = FlowModel::new(v.flow)?;
    let mut train = config.train_config(threads);
    train.max_iters = config.max_iters;
    let trainer = Trainer::restore(model, train, &ParamTable { tensors: state })?;
    Ok(Restored {
        config: config.clone(),
        trainer,
        permutation,
    })
}

/// Loads a training checkpoint together with the run config it stores.
pub fn load_run(path: &Path) -> CliResult<Restored> {
    let ckpt = Checkpoint::load(path)?;
    let config = ckpt
        .config
        .clone()
        .ok_or_else(|| CliError::Usage(format!("{} holds no run config", path.display())))?;
    restore(&ckpt, &config, threads_from_env())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<Metric>,
    pub final_checkpoint: PathBuf,
}

pub fn train(config_path: &Path, out: &Path, resume: Option<&Path>) -> CliResult<TrainOutcome> {
    let config = RunConfig::load(config_path)?;
    let v = config.validate()?;
    let threads = threads_from_env();
    let data = load_dataset(&v.dataset, config.n_bits)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            restore(&ckpt, &config, threads)?.trainer
        }
        None => Trainer::new(FlowModel::new(v.flow)?, config.train_config(threads))?,
    };
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;

    let metrics_path = out.join("metrics.csv");
    let append = resume.is_some() && metrics_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&metrics_path)
        .map_err(|e| CliError::io(&metrics_path, e))?;
    let mut csv = BufWriter::new(file);
    if !append {
        writeln!(csv, "{METRICS_HEADER}").map_err(|e| CliError::io(&metrics_path, e))?;
    }

    let perm = data.permutation.clone();
    let mut side_error: Option<CliError> = None;
    let result = trainer.run(&data, |t, m| {
        if side_error.is_some() {
            return;
        }
        if let Err(e) = writeln!(csv, "{}", metrics_row(m)) {
            side_error = Some(CliError::io(&metrics_path, e));
            return;
        }
        let every = config.ckpt_every;
        if m.split == butterflow::train::MetricSplit::Train && every > 0 && t.iter() % every == 0 {
            let path = out.join(format!("ckpt_{}.bflw", t.iter()));
            if let Err(e) = checkpoint_of(t, &config, perm.as_deref()).save(&path) {
                side_error = Some(e);
            }
        }
    });
    csv.flush().map_err(|e| CliError::io(&metrics_path, e))?;
    let metrics = result?;
    if let Some(e) = side_error {
        return Err(e);
    }
    let final_checkpoint = out.join("ckpt_final.bflw");
    checkpoint_of(&trainer, &config, perm.as_deref()).save(&final_checkpoint)?;
    Ok(TrainOutcome {
        metrics,
        final_checkpoint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub nll_nats_per_dim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpd: Option<f64>,
    pub n: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

/// Test-split likelihood under the checkpoint's evaluation weights. Without
/// `dataset` the run's own dataset is used.
pub fn eval(ckpt: &Path, dataset: Option<&str>) -> CliResult<EvalReport> {
    let run = load_run(ckpt)?;
    let spec: DatasetSpec = match dataset {
        Some(s) => s.parse()?,
        None => run.config.dataset.parse()?,
    };
    let data = load_dataset(&spec, run.config.n_bits)?;
    let model = run.trainer.eval_model()?;
    if data.shape.numel() != model.dim() {
        return Err(butterflow::Error::ShapeMismatch(format!(
            "dataset shape {} does not match model shape {}",
            data.shape,
            model.shape()
        ))
        .into());
    }
    let nll = mean_nll(&model, &data.test)?;
    let dim = model.dim();
    Ok(EvalReport {
        nll_nats_per_dim: butterflow::flow::nats_per_dim(-nll, dim),
        bpd: (data.n_bits > 0).then(|| butterflow::flow::bits_per_dim(-nll, dim, data.n_bits)),
        n: data.test.len(),
    })
}

/// Path of the unscrambled companion of a sample file.
pub fn unscrambled_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".unscrambled");
    out.with_file_name(name)
}

fn write_bfdata(path: &Path, kind: &str, shape: butterflow::flow::Shape, xs: &[Vec<f64>]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_samples(&mut w, kind, shape, xs)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Writes `n` samples to `out`, plus an unscrambled copy when the run's
/// dataset was permuted. Returns the paths written.
pub fn sample(
    ckpt: &Path,
    n: usize,
    seed: u64,
    temperature: f64,
    out: &Path,
    unscramble: bool,
) -> CliResult<Vec<PathBuf>> {
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(CliError::Usage(format!("temperature {temperature} must be finite and non-negative")));
    }
    let run = load_run(ckpt)?;
    if unscramble && run.permutation.is_none() {
        return Err(CliError::Usage(format!(
            "{} stores no data permutation to unscramble with",
            ckpt.display()
        )));
    }
    let model = run.trainer.eval_model()?;
    let xs = model.sample(n, seed, temperature)?;
    write_bfdata(out, "samples", model.shape(), &xs)?;
    let mut written = vec![out.to_path_buf()];
    if let Some(p) = &run.permutation {
        let inv = invert_permutation(p);
        let plain: Vec<Vec<f64>> = xs.iter().map(|x| permute(&inv, x)).collect();
        let path = unscrambled_path(out);
        write_bfdata(&path, "samples_unscrambled", model.shape(), &plain)?;
        written.push(path);
    }
    Ok(written)
}

pub fn bench(
    op: BenchOp,
    dims: &[usize],
    batches: &[usize],
    settings: &BenchSettings,
    out: Option<&Path>,
) -> CliResult<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &dim in dims {
        for &batch in batches {
            rows.push(bench::run(op, dim, batch, settings)?);
        }
    }
    let mut text = String::from(bench::CSV_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e))?,
        None => print!("{text}"),
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct PermReport {
    pub size: usize,
    pub levels: Vec<usize>,
    pub max_err: f64,
}

impl std::fmt::Display for PermReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let levels: Vec<String> = self.levels.iter().map(|l| l.to_string()).collect();
        writeln!(f, "size: {}", self.size)?;
        writeln!(f, "factors: {}", self.levels.len())?;
        writeln!(f, "levels: {}", levels.join(","))?;
        write!(
            f,
            "verified: {} (max entry error {})",
            self.max_err == 0.0,
            self.max_err
        )
    }
}

/// Reads a permutation as whitespace- or comma-separated indices.
pub fn read_permutation(path: &Path) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Usage(format!("{}: '{s}' is not an index", path.display())))
        })
        .collect()
}

pub fn random_permutation(size: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..size).collect();
    p.shuffle(&mut rng::seeded(seed));
    p
}

/// Decomposes `perm` into switch-only factors and checks the product against
/// the permutation matrix entry for entry.
pub fn perm_decompose_cmd(perm: &[usize], dump: Option<&Path>) -> CliResult<PermReport> {
    let layer: ButterflyLayer<f64> = perm_decompose(perm)?;
    let d = perm.len();
    let expect = permutation_matrix::<f64>(perm);
    let mut max_err = 0.0f64;
    for c in 0..d {
        let mut e = vec![0.0; d];
        e[c] = 1.0;
        layer.apply_in_place(&mut e);
        for (r, v) in e.iter().enumerate() {
            max_err = max_err.max((v - expect[(r, c)]).abs());
        }
    }
    let switch_only = layer.factors().iter().all(|f| f.is_switch_only());
    let report = PermReport {
        size: d,
        levels: layer.levels().to_vec(),
        max_err: if switch_only { max_err } else { f64::INFINITY },
    };
    if let Some(path) = dump {
        let tensors = layer
            .factors()
            .iter()
            .enumerate()
            .map(|(j, f)| Tensor {
                name: format!("f{j}.weights"),
                shape: vec![f.weights().len(), 2, 2],
                kind: ParamKind::Butterfly,
                data: f.weights().iter().flatten().copied().collect(),
            })
            .collect();
        Checkpoint {
            config: None,
            iteration: 0,
            tensors: ParamTable { tensors },
        }
        .save(path)?;
    }
    if report.max_err != 0.0 {
        return Err(CliError::PermVerification(format!(
            "size {d}: max entry error {}{}",
            report.max_err,
            if switch_only { "" } else { " (non-switch factor)" }
        )));
    }
    Ok(report)
}

/// CSV of every check in `suite`, and an error naming the failures.
pub fn verify(suite: Suite) -> CliResult<(String, Vec<CheckResult>)> {
    let results = checks::run_suite(suite)?;
    let mut text = String::from(checks::CSV_HEADER);
    text.push('\n');
    for r in &results {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    Ok((text, results))
}

pub fn failures(results: &[CheckResult]) -> Option<CliError> {
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{} (max_err {:e}, tol {:e})", r.name, r.max_err, r.tol))
        .collect();
    (!failed.is_empty()).then(|| CliError::VerifyFailed(failed.join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unscrambled_name() {
        assert_eq!(unscrambled_path(Path::new("a/s.bfd")), Path::new("a/s.bfd.unscrambled"));
    }

    #[test]
    fn small_permutations_verify() {
        let r = perm_decompose_cmd(&[1, 0], None).unwrap();
        assert_eq!(r.levels.len(), 2);
        let r = perm_decompose_cmd(&random_permutation(128, 3), None).unwrap();
        assert_eq!(r.levels.len(), 14);
        assert!(r.to_string().contains("verified: true"));
    }
}
