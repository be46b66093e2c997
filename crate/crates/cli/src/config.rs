use std::path::Path;

use butterflow::butterfly::Init;
use butterflow::data::DatasetSpec;
use butterflow::flow::{FlowConfig, LevelPlan, MixConfig, Shape};
use butterflow::train::{EmaMode, LrSchedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Maximum butterfly level: one value, or one per segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ButterflyLevels {
    One(usize),
    PerSegment(Vec<usize>),
}

impl ButterflyLevels {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            ButterflyLevels::One(m) => vec![*m],
            ButterflyLevels::PerSegment(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Id,
    Rot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmaKind {
    None,
    All,
    Butterfly,
}

/// One training run, as read from a JSON file. Missing fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: String,
    pub seed: u64,
    pub levels: usize,
    pub steps: usize,
    pub coupling_channels: usize,
    pub butterfly_levels: ButterflyLevels,
    pub butterfly_segments: Vec<usize>,
    pub bidirectional: bool,
    pub block_size: usize,
    pub init: InitKind,
    pub tied: bool,
    pub ema: EmaKind,
    pub ema_decay: f64,
    pub butterfly_lr_gamma: f64,
    pub lr: f64,
    pub warmup_iters: u64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_iters: u64,
    pub n_bits: u32,
    pub train_butterfly: bool,
    pub eval_every: u64,
    pub ckpt_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: String::new(),
            seed: 0,
            levels: 1,
            steps: 4,
            coupling_channels: 64,
            butterfly_levels: ButterflyLevels::One(1),
            butterfly_segments: Vec::new(),
            bidirectional: false,
            block_size: 1,
            init: InitKind::Id,
            tied: false,
            ema: EmaKind::None,
            ema_decay: 0.999,
            butterfly_lr_gamma: 0.999997,
            lr: 1e-3,
            warmup_iters: 10,
            lr_decay: 0.999997,
            batch_size: 64,
            max_iters: 1000,
            n_bits: 0,
            train_butterfly: true,
            eval_every: 0,
            ckpt_every: 0,
        }
    }
}

/// A config whose every field has been checked against the data shape.
#[derive(Debug, Clone)]
pub struct Validated {
    pub dataset: DatasetSpec,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub plan: Vec<LevelPlan>,
}

/// Config field an architecture error is about, judged from its message.
fn architecture_field(message: &str) -> &'static str {
    let m = message.to_lowercase();
    if m.contains("segment") {
        "butterfly_segments"
    } else if m.contains("tied") {
        "tied"
    } else if m.contains("block size") || m.contains("block_size") {
        "block_size"
    } else if m.contains("butterfly") {
        "butterfly_levels"
    } else if m.contains("coupling") {
        "coupling_channels"
    } else if m.contains("steps") && !m.contains("levels") {
        "steps"
    } else {
        "levels"
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("unknown field") || msg.contains("missing field"))
                .unwrap_or("<json>")
                .to_string();
            CliError::Config { field, message: msg }
        })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn mix(&self) -> MixConfig {
        MixConfig {
            block_size: self.block_size,
            butterfly_levels: self.butterfly_levels.to_vec(),
            segments: self.butterfly_segments.clone(),
            bidirectional: self.bidirectional,
            init: match self.init {
                InitKind::Id => Init::Identity,
                InitKind::Rot => Init::Rotation,
            },
            tied: self.tied,
        }
    }

    pub fn flow_config(&self, shape: Shape) -> FlowConfig {
        FlowConfig {
            shape,
            levels: self.levels,
            steps: self.steps,
            coupling_channels: self.coupling_channels,
            mix: self.mix(),
            seed: self.seed,
        }
    }

    pub fn train_config(&self, threads: usize) -> TrainConfig {
        TrainConfig {
            schedule: LrSchedule {
                base: self.lr,
                warmup_iters: self.warmup_iters,
                decay: self.lr_decay,
            },
            butterfly_lr_gamma: self.butterfly_lr_gamma,
            batch_size: self.batch_size,
            max_iters: self.max_iters,
            ema: match self.ema {
                EmaKind::None => EmaMode::None,
                EmaKind::All => EmaMode::All,
                EmaKind::Butterfly => EmaMode::Butterfly,
            },
            ema_decay: self.ema_decay,
            train_butterfly: self.train_butterfly,
            eval_every: self.eval_every,
            seed: self.seed,
            threads,
            ..TrainConfig::default()
        }
    }

    /// Checks every field without generating data or allocating parameters.
    pub fn validate(&self) -> CliResult<Validated> {
        let dataset: DatasetSpec = self
            .dataset
            .parse()
            .map_err(|e: butterflow::Error| CliError::config("dataset", e.to_string()))?;
        let shape = dataset
            .shape()
            .map_err(|e| CliError::config("dataset", e.to_string()))?;
        let positive = [
            ("levels", self.levels),
            ("steps", self.steps),
            ("coupling_channels", self.coupling_channels),
            ("block_size", self.block_size),
            ("batch_size", self.batch_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(CliError::config(field, "must be at least 1"));
            }
        }
        if self.butterfly_levels.to_vec().contains(&0) || self.butterfly_levels.to_vec().is_empty() {
            return Err(CliError::config("butterfly_levels", "levels must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(CliError::config("lr", "must be finite and non-negative"));
        }
        for (field, v) in [
            ("lr_decay", self.lr_decay),
            ("butterfly_lr_gamma", self.butterfly_lr_gamma),
            ("ema_decay", self.ema_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CliError::config(field, format!("{v} is outside [0, 1]")));
            }
        }
        if self.n_bits > 32 {
            return Err(CliError::config("n_bits", "at most 32 bits per value"));
        }
        let flow = self.flow_config(shape);
        let plan = flow.plan().map_err(|e| {
            let message = e.to_string();
            CliError::config(architecture_field(&message), message)
        })?;
        Ok(Validated {
            dataset,
            flow,
            train: self.train_config(1),
            plan,
        })
    }
}
