use std::time::Instant;

use super::adam::AdamState;
use super::ema::{EmaMode, EmaState};
use super::grad::backward;
use super::schedule::LrSchedule;
use crate::data::{batch_indices, Dataset};
use crate::error::{invalid, Error, Result};
use crate::flow::{bits_per_dim, FlowModel, ParamKind, ParamTable, Tensor};

const MAX_BAD_ITERS: u32 = 5;
const STATE_PREFIXES: [&str; 4] = ["opt.backbone.", "opt.butterfly.", "ema.", "train."];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Schedule of the backbone group; the butterfly group shares its base
    /// rate and warmup but decays with `butterfly_lr_gamma`.
    pub schedule: LrSchedule,
    pub butterfly_lr_gamma: f64,
    pub batch_size: usize,
    pub max_iters: u64,
    pub ema: EmaMode,
    pub ema_decay: f64,
    pub train_butterfly: bool,
    /// Validation period in iterations; 0 validates only at the end.
    pub eval_every: u64,
    pub clip_norm: f64,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: LrSchedule::default(),
            butterfly_lr_gamma: 0.999997,
            batch_size: 64,
            max_iters: 1000,
            ema: EmaMode::None,
            ema_decay: 0.999,
            train_butterfly: true,
            eval_every: 0,
            clip_norm: 50.0,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(self.schedule.base.is_finite() && self.schedule.base >= 0.0) {
            return Err(invalid("lr must be finite and non-negative"));
        }
        for (name, v) in [
            ("lr_decay", self.schedule.decay),
            ("butterfly_lr_gamma", self.butterfly_lr_gamma),
            ("ema_decay", self.ema_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(invalid("clip_norm must be positive"));
        }
        Ok(())
    }

    pub fn butterfly_schedule(&self) -> LrSchedule {
        LrSchedule {
            decay: self.butterfly_lr_gamma,
            ..self.schedule
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricSplit {
    Train,
    Val,
}

impl MetricSplit {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricSplit::Train => "train",
            MetricSplit::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub iter: u64,
    pub split: MetricSplit,
    pub nll_nats_per_dim: f64,
    pub bpd: Option<f64>,
    pub lr: f64,
    pub elapsed_ms: u64,
}

pub struct Trainer {
    pub model: FlowModel,
    pub config: TrainConfig,
    iter: u64,
    backbone: AdamState,
    butterfly: AdamState,
    ema: EmaState,
    bad_streak: u32,
    started: Instant,
}

/// Splits a trainer state table into model tensors and optimizer/EMA state.
pub fn split_state(state: &ParamTable) -> (ParamTable, ParamTable) {
    let (extra, model): (Vec<Tensor>, Vec<Tensor>) = state
        .tensors
        .iter()
        .cloned()
        .partition(|t| STATE_PREFIXES.iter().any(|p| t.name.starts_with(p)));
    (ParamTable { tensors: model }, ParamTable { tensors: extra })
}

impl Trainer {
    pub fn new(model: FlowModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = model.export();
        Ok(Self {
            backbone: AdamState::new(&params, ParamKind::Backbone),
            butterfly: AdamState::new(&params, ParamKind::Butterfly),
            ema: EmaState::new(config.ema, config.ema_decay, &params),
            model,
            config,
            iter: 0,
            bad_streak: 0,
            started: Instant::now(),
        })
    }

    /// Rebuilds a trainer from [`Self::state`] output.
    pub fn restore(mut model: FlowModel, config: TrainConfig, state: &ParamTable) -> Result<Self> {
        let (params, extra) = split_state(state);
        model.import(&params)?;
        let mut t = Self::new(model, config)?;
        t.backbone.import(&params, "opt.backbone", &extra)?;
        t.butterfly.import(&params, "opt.butterfly", &extra)?;
        t.ema.import(&params, "ema", &extra)?;
        let iter = extra
            .get("train.iter")
            .ok_or_else(|| invalid("trainer state has no iteration counter"))?
            .data[0];
        if iter < 0.0 || iter.fract() != 0.0 {
            return Err(invalid(format!("bad iteration counter {iter}")));
        }
        t.iter = iter as u64;
        Ok(t)
    }

    /// Model parameters followed by optimizer moments, EMA shadows and the
    /// iteration counter.
    pub fn state(&self) -> ParamTable {
        let params = self.model.export();
        let mut v = params.tensors.clone();
        self.backbone.export(&params, "opt.backbone", &mut v);
        self.butterfly.export(&params, "opt.butterfly", &mut v);
        self.ema.export(&params, "ema", &mut v);
        v.push(Tensor {
            name: "train.iter".into(),
            shape: vec![1],
            kind: ParamKind::Buffer,
            data: vec![self.iter as f64],
        });
        ParamTable { tensors: v }
    }

    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub fn lr(&self) -> f64 {
        self.config.schedule.lr_at(self.iter)
    }

    /// Model with EMA shadows substituted, for evaluation.
    pub fn eval_model(&self) -> Result<FlowModel> {
        if self.config.ema == EmaMode::None {
            return Ok(self.model.clone());
        }
        let mut m = self.model.clone();
        m.import(&self.ema.apply(&self.model.export()))?;
        Ok(m)
    }

    /// Mean negative log-likelihood in nats per sample under the evaluation
    /// model.
    pub fn evaluate(&self, samples: &[Vec<f64>]) -> Result<f64> {
        mean_nll(&self.eval_model()?, samples)
    }

    fn batch(&self, data: &Dataset) -> Vec<Vec<f64>> {
        let n = data.train.len();
        let bs = self.config.batch_size.min(n);
        let per_epoch = (n / bs) as u64;
        let epoch = self.iter / per_epoch;
        let idx = &batch_indices(n, bs, self.config.seed, epoch)[(self.iter % per_epoch) as usize];
        idx.iter().map(|&i| data.train[i].clone()).collect()
    }

    fn metric(&self, split: MetricSplit, nll: f64, n_bits: u32) -> Metric {
        let dim = self.model.dim();
        Metric {
            iter: self.iter,
            split,
            nll_nats_per_dim: nll / dim as f64,
            bpd: (n_bits > 0).then(|| bits_per_dim(-nll, dim, n_bits)),
            lr: self.lr(),
            elapsed_ms: self.started.elapsed().as_millis() as u64,
        }
    }

    /// One optimisation step on the next training batch.
    pub fn step(&mut self, data: &Dataset) -> Result<Metric> {
        if data.train.is_empty() {
            return Err(invalid("training split is empty"));
        }
        if data.shape.numel() != self.model.dim() {
            return Err(Error::ShapeMismatch(format!(
                "dataset shape {} does not match model shape {}",
                data.shape,
                self.model.shape()
            )));
        }
        let batch = self.batch(data);
        if self.model.needs_init() {
            self.model.initialize(&batch)?;
            self.ema.reset(&self.model.export());
        }
        self.iter += 1;
        match self.update(&batch) {
            Ok(nll) => {
                self.bad_streak = 0;
                Ok(self.metric(MetricSplit::Train, nll, data.n_bits))
            }
            Err(e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. })) => {
                self.bad_streak += 1;
                log::warn!("iteration {}: {e}; update skipped", self.iter);
                if self.bad_streak >= MAX_BAD_ITERS {
                    return Err(Error::TrainingAborted(format!(
                        "{MAX_BAD_ITERS} consecutive non-finite iterations, last: {e}"
                    )));
                }
                Ok(self.metric(MetricSplit::Train, f64::INFINITY, data.n_bits))
            }
            Err(e) => Err(e),
        }
    }

    fn update(&mut self, batch: &[Vec<f64>]) -> Result<f64> {
        let (nll, mut grads) = backward(&self.model, batch, self.config.threads)?;
        if !nll.is_finite() {
            return Err(Error::NonFiniteLoss { layer: "batch".into() });
        }
        let mut sq = self.backbone.grad_sq_norm(&grads);
        if self.config.train_butterfly {
            sq += self.butterfly.grad_sq_norm(&grads);
        }
        let norm = sq.sqrt();
        if norm.is_finite() && norm > self.config.clip_norm {
            grads.scale(self.config.clip_norm / norm);
        }
        let mut params = self.model.export();
        let mut backbone = self.backbone.clone();
        backbone.step(&mut params, &grads, self.config.schedule.lr_at(self.iter))?;
        let mut butterfly = self.butterfly.clone();
        if self.config.train_butterfly {
            butterfly.step(&mut params, &grads, self.config.butterfly_schedule().lr_at(self.iter))?;
        }
        self.model.import(&params)?;
        self.backbone = backbone;
        self.butterfly = butterfly;
        self.ema.update(&params);
        Ok(nll)
    }

    /// Runs until `config.max_iters`, validating every `eval_every`
    /// iterations and after the last one. `on_metric` sees the trainer and
    /// each record as it is produced.
    pub fn run(&mut self, data: &Dataset, mut on_metric: impl FnMut(&Trainer, &Metric)) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        let start = self.iter;
        while self.iter < self.config.max_iters {
            let m = self.step(data)?;
            on_metric(self, &m);
            out.push(m);
            let every = self.config.eval_every;
            let last = self.iter == self.config.max_iters;
            if !data.val.is_empty() && (last || (every > 0 && self.iter.is_multiple_of(every))) {
                let nll = self.evaluate(&data.val)?;
                let m = self.metric(MetricSplit::Val, nll, data.n_bits);
                on_metric(self, &m);
                out.push(m);
            }
        }
        if self.iter > start {
            log::info!("trained {} iterations", self.iter - start);
        }
        Ok(out)
    }
}

/// Mean negative log-likelihood in nats per sample.
pub fn mean_nll(model: &FlowModel, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("no samples to evaluate"));
    }
    let mut total = 0.0;
    for x in samples {
        total += model.log_prob(x)?;
    }
    Ok(-total / samples.len() as f64)
}
