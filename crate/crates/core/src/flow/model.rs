use super::actnorm::ActNorm;
use super::coupling::{Coupling, CouplingTrace};
use super::mix::{Mix, MixGrad, MixTrace};
use super::params::{ParamTable, TensorSink, TensorSource};
use super::shape::Shape;
use super::split::{standard_normal_log_density, Split, SplitTrace};
use super::squeeze::{squeeze, unsqueeze};
use crate::blockwise::BlockwiseLayer;
use crate::butterfly::{level_schedule, ButterflyLayer, Init, SegmentedLayer};
use crate::error::{invalid, Error, Result};
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// Butterfly mixing configuration shared by every flow step.
#[derive(Debug, Clone, PartialEq)]
pub struct MixConfig {
    /// `1` selects scalar butterfly factors, larger values block-wise ones.
    pub block_size: usize,
    /// Maximum factor level; one entry, or one per segment.
    pub butterfly_levels: Vec<usize>,
    /// Segment lengths at the top level; empty means a single segment.
    pub segments: Vec<usize>,
    pub bidirectional: bool,
    pub init: Init,
    pub tied: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            block_size: 1,
            butterfly_levels: vec![1],
            segments: Vec::new(),
            bidirectional: false,
            init: Init::Identity,
            tied: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub shape: Shape,
    pub levels: usize,
    pub steps: usize,
    pub coupling_channels: usize,
    pub mix: MixConfig,
    pub seed: u64,
}

/// Resolved shapes of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPlan {
    pub input: Shape,
    pub shape: Shape,
    pub squeeze: bool,
    pub split: bool,
    /// Segment lengths at this level (a single entry without segmentation).
    pub segments: Vec<usize>,
    /// Maximum factor level per segment. Deeper levels have fewer units and
    /// use at most as many factor levels as their size allows.
    pub butterfly_levels: Vec<usize>,
}

impl FlowConfig {
    /// Resolves and validates every level without allocating parameters.
    pub fn plan(&self) -> Result<Vec<LevelPlan>> {
        if self.levels == 0 || self.steps == 0 {
            return Err(invalid("levels and steps must be at least 1"));
        }
        if self.coupling_channels == 0 {
            return Err(invalid("coupling_channels must be at least 1"));
        }
        let m = &self.mix;
        if m.butterfly_levels.is_empty() || m.butterfly_levels.contains(&0) {
            return Err(invalid("butterfly_levels must be positive"));
        }
        if m.block_size == 0 {
            return Err(invalid("block_size must be at least 1"));
        }
        if !m.segments.is_empty() {
            if m.block_size != 1 {
                return Err(invalid("segmented butterfly layers require block_size = 1"));
            }
            if m.butterfly_levels.len() != 1 && m.butterfly_levels.len() != m.segments.len() {
                return Err(invalid("butterfly_levels needs one entry or one per segment"));
            }
            if m.segments.iter().sum::<usize>() != self.shape.numel() {
                return Err(invalid(format!(
                    "segments {:?} do not sum to the data dimension {}",
                    m.segments,
                    self.shape.numel()
                )));
            }
        } else if m.butterfly_levels.len() != 1 {
            return Err(invalid("per-segment butterfly_levels given without segments"));
        }
        if m.tied && m.block_size != 1 {
            return Err(invalid("tied weights are only supported with block_size = 1"));
        }
        let mut plans = Vec::with_capacity(self.levels);
        let mut cur = self.shape;
        for l in 0..self.levels {
            let is_flat = matches!(cur, Shape::Flat(_));
            let shape = cur.squeezed().map_err(|e| invalid(format!("level {l}: {e}")))?;
            if shape.channels() % 2 != 0 {
                return Err(invalid(format!("level {l}: channel count {} is odd", shape.channels())));
            }
            let d = shape.numel();
            let segments = if m.segments.is_empty() {
                vec![d]
            } else {
                let div = 1usize << l;
                if m.segments.iter().any(|s| s % div != 0) {
                    return Err(invalid(format!("level {l}: segments {:?} not divisible by {div}", m.segments)));
                }
                m.segments.iter().map(|s| s / div).collect()
            };
            let mut tops = Vec::with_capacity(segments.len());
            for (i, &len) in segments.iter().enumerate() {
                let top = if m.butterfly_levels.len() == 1 {
                    m.butterfly_levels[0]
                } else {
                    m.butterfly_levels[i]
                };
                let units = len / m.block_size;
                if len % m.block_size != 0 {
                    return Err(invalid(format!("level {l}: block size {} does not divide {len}", m.block_size)));
                }
                if units < 2 || (l == 0 && (top >= usize::BITS as usize || !units.is_multiple_of(1usize << top))) {
                    return Err(invalid(format!(
                        "level {l}: {units} butterfly units are not divisible by 2^{top}"
                    )));
                }
                tops.push(top.min(units.trailing_zeros() as usize));
            }
            let split = l + 1 < self.levels;
            plans.push(LevelPlan {
                input: cur,
                shape,
                squeeze: !is_flat,
                split,
                segments,
                butterfly_levels: tops,
            });
            cur = if split { shape.half_channels()? } else { shape };
        }
        Ok(plans)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Squeeze(Shape),
    ActNorm(ActNorm),
    Mix(Mix),
    Coupling(Coupling),
    Split(Split),
}

/// Multi-scale flow: per level a squeeze (non-flat data), `K` steps of
/// actnorm, butterfly mixing and affine coupling, then a split on all but
/// the last level. The final prior is a standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    steps: Vec<Step>,
    names: Vec<String>,
}

/// Standardised latent variables: one residual per split, then the final
/// code.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub parts: Vec<Vec<f64>>,
}

impl Latents {
    pub fn flatten(&self) -> Vec<f64> {
        self.parts.concat()
    }
}

enum StepTrace {
    Squeeze,
    ActNorm(Vec<f64>),
    Mix(MixTrace),
    Coupling(CouplingTrace),
    Split(SplitTrace),
}

#[derive(Debug, Clone, PartialEq)]
enum StepGrad {
    None,
    ActNorm(ActNorm),
    Mix(MixGrad),
    Coupling(Coupling),
    Split(Split),
}

/// Per-step gradient accumulators for a [`FlowModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    steps: Vec<StepGrad>,
}

impl ModelGrad {
    pub fn add_assign(&mut self, other: &ModelGrad) {
        for (a, b) in self.steps.iter_mut().zip(&other.steps) {
            match (a, b) {
                (StepGrad::None, StepGrad::None) => {}
                (StepGrad::ActNorm(x), StepGrad::ActNorm(y)) => x.add_assign(y),
                (StepGrad::Mix(x), StepGrad::Mix(y)) => x.add_assign(y),
                (StepGrad::Coupling(x), StepGrad::Coupling(y)) => x.net.add_assign(&y.net),
                (StepGrad::Split(x), StepGrad::Split(y)) => x.add_assign(y),
                _ => unreachable!("gradient layouts differ"),
            }
        }
    }
}

fn derive_seed(seed: u64, index: u64) -> u64 {
    rng::stream(seed, index).random()
}

impl FlowModel {
    pub fn new(config: FlowConfig) -> Result<Self> {
        let plans = config.plan()?;
        let m = &config.mix;
        let schedule = |top: usize| level_schedule(top, m.bidirectional);
        let mut steps = Vec::new();
        let mut names = Vec::new();
        let mut counter = 0u64;
        let mut next_seed = || {
            counter += 1;
            derive_seed(config.seed, counter)
        };
        for (l, plan) in plans.iter().enumerate() {
            if plan.squeeze {
                steps.push(Step::Squeeze(plan.input));
                names.push(format!("level{l}.squeeze"));
            }
            let d = plan.shape.numel();
            for k in 0..config.steps {
                let prefix = format!("level{l}.step{k}");
                steps.push(Step::ActNorm(ActNorm::new(plan.shape.channels())));
                names.push(format!("{prefix}.actnorm"));
                let mix = if !m.segments.is_empty() {
                    let layers = plan
                        .segments
                        .iter()
                        .enumerate()
                        .map(|(i, &len)| {
                            let top = plan.butterfly_levels[i];
                            ButterflyLayer::with_levels(len, &schedule(top), m.init, next_seed(), m.tied)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Mix::Segmented(SegmentedLayer::new(layers)?)
                } else if m.block_size > 1 {
                    Mix::Blockwise(BlockwiseLayer::with_levels(
                        d,
                        m.block_size,
                        &schedule(plan.butterfly_levels[0]),
                        m.init,
                        next_seed(),
                    )?)
                } else {
                    Mix::Naive(ButterflyLayer::with_levels(
                        d,
                        &schedule(plan.butterfly_levels[0]),
                        m.init,
                        next_seed(),
                        m.tied,
                    )?)
                };
                steps.push(Step::Mix(mix));
                names.push(format!("{prefix}.mix"));
                let mut g = rng::seeded(next_seed());
                steps.push(Step::Coupling(Coupling::new(plan.shape, config.coupling_channels, &mut g)?));
                names.push(format!("{prefix}.coupling"));
            }
            if plan.split {
                steps.push(Step::Split(Split::new(plan.shape)?));
                names.push(format!("level{l}.split"));
            }
        }
        Ok(Self { config, steps, names })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn shape(&self) -> Shape {
        self.config.shape
    }

    pub fn dim(&self) -> usize {
        self.config.shape.numel()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn steps_mut(&mut self) -> &mut [Step] {
        &mut self.steps
    }

    pub fn step_names(&self) -> &[String] {
        &self.names
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "sample of length {} for model shape {}",
                x.len(),
                self.shape()
            )));
        }
        Ok(())
    }

    /// `log p(x)` and each layer's contribution (log-dets, split densities
    /// and the final prior), in evaluation order.
    pub fn log_prob_detailed(&self, x: &[f64]) -> Result<(f64, Vec<(String, f64)>)> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut parts = Vec::with_capacity(self.steps.len() + 1);
        for (step, name) in self.steps.iter().zip(&self.names) {
            let c = match step {
                Step::Squeeze(s) => {
                    cur = squeeze(*s, &cur)?;
                    0.0
                }
                Step::ActNorm(a) => {
                    let (y, ld) = a.forward(&cur)?;
                    cur = y;
                    ld
                }
                Step::Mix(m) => {
                    let (y, ld) = m.forward(&cur)?;
                    cur = y;
                    ld
                }
                Step::Coupling(c) => {
                    let (y, ld) = c.forward(&cur)?;
                    cur = y;
                    ld
                }
                Step::Split(s) => {
                    let (keep, lp) = s.forward(&cur)?;
                    cur = keep;
                    lp
                }
            };
            parts.push((name.clone(), c));
        }
        parts.push(("prior".to_string(), standard_normal_log_density(&cur)));
        let total = parts.iter().map(|p| p.1).sum();
        Ok((total, parts))
    }

    /// Smallest distance of any conditioner hidden pre-activation from the
    /// ReLU kink while evaluating `x`. The log-density is smooth in the
    /// parameters within this margin.
    pub fn relu_margin(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut margin = f64::INFINITY;
        for step in &self.steps {
            cur = match step {
                Step::Squeeze(s) => squeeze(*s, &cur)?,
                Step::ActNorm(a) => a.forward(&cur)?.0,
                Step::Mix(m) => m.forward(&cur)?.0,
                Step::Coupling(c) => {
                    let (y, _, t) = c.forward_trace(&cur)?;
                    margin = margin.min(t.relu_margin());
                    y
                }
                Step::Split(s) => s.forward(&cur)?.0,
            };
        }
        Ok(margin)
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_prob_detailed(x)?.0)
    }

    /// Maps `x` to standardised latents.
    pub fn encode(&self, x: &[f64]) -> Result<Latents> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut parts = Vec::new();
        for step in &self.steps {
            cur = match step {
                Step::Squeeze(s) => squeeze(*s, &cur)?,
                Step::ActNorm(a) => a.forward(&cur)?.0,
                Step::Mix(m) => m.forward(&cur)?.0,
                Step::Coupling(c) => c.forward(&cur)?.0,
                Step::Split(s) => {
                    let (keep, eps) = s.standardize(&cur)?;
                    parts.push(eps);
                    keep
                }
            };
        }
        parts.push(cur);
        Ok(Latents { parts })
    }

    /// Inverse of [`Self::encode`].
    pub fn decode(&self, latents: &Latents) -> Result<Vec<f64>> {
        let sizes = self.latent_sizes();
        if latents.parts.len() != sizes.len() || latents.parts.iter().zip(&sizes).any(|(p, &n)| p.len() != n) {
            return Err(Error::ShapeMismatch("latent sizes do not match the model".into()));
        }
        let mut parts = latents.parts.clone();
        let mut cur = parts.pop().expect("final latent");
        for step in self.steps.iter().rev() {
            cur = match step {
                Step::Squeeze(s) => unsqueeze(*s, &cur)?,
                Step::ActNorm(a) => a.inverse(&cur)?,
                Step::Mix(m) => m.inverse(&cur)?,
                Step::Coupling(c) => c.inverse(&cur)?,
                Step::Split(s) => {
                    let eps = parts.pop().expect("split latent");
                    s.inverse_standard(&cur, &eps)?
                }
            };
        }
        Ok(cur)
    }

    /// Sizes of the latent parts: one per split, then the final code.
    pub fn latent_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self
            .steps
            .iter()
            .filter_map(|s| match s {
                Step::Split(sp) => Some(sp.half().numel()),
                _ => None,
            })
            .collect();
        let used: usize = sizes.iter().sum();
        sizes.push(self.dim() - used);
        sizes
    }

    /// Draws `n` samples with latents `N(0, temperature^2)`; sample `i` uses
    /// its own stream of `seed`.
    pub fn sample(&self, n: usize, seed: u64, temperature: f64) -> Result<Vec<Vec<f64>>> {
        let sizes = self.latent_sizes();
        (0..n)
            .map(|i| {
                let mut g = rng::stream(seed, i as u64);
                let parts = sizes
                    .iter()
                    .map(|&k| {
                        (0..k)
                            .map(|_| temperature * g.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect();
                self.decode(&Latents { parts })
            })
            .collect()
    }

    /// Data-dependent initialisation of every actnorm not yet initialised.
    pub fn initialize(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        for x in batch {
            self.check_input(x)?;
        }
        if !self.needs_init() {
            return Ok(());
        }
        let mut states: Vec<Vec<f64>> = batch.to_vec();
        for step in self.steps.iter_mut() {
            if let Step::ActNorm(a) = step {
                if !a.initialized {
                    a.data_init(&states)?;
                }
            }
            for s in states.iter_mut() {
                *s = match &*step {
                    Step::Squeeze(sh) => squeeze(*sh, s)?,
                    Step::ActNorm(a) => a.forward(s)?.0,
                    Step::Mix(m) => m.forward(s)?.0,
                    Step::Coupling(c) => c.forward(s)?.0,
                    Step::Split(sp) => sp.forward(s)?.0,
                };
            }
        }
        Ok(())
    }

    pub fn needs_init(&self) -> bool {
        self.steps
            .iter()
            .any(|s| matches!(s, Step::ActNorm(a) if !a.initialized))
    }

    pub fn zero_grad(&self) -> ModelGrad {
        ModelGrad {
            steps: self
                .steps
                .iter()
                .map(|s| match s {
                    Step::Squeeze(_) => StepGrad::None,
                    Step::ActNorm(a) => StepGrad::ActNorm(a.zeros_like()),
                    Step::Mix(m) => StepGrad::Mix(m.zero_grad()),
                    Step::Coupling(c) => StepGrad::Coupling(c.zeros_like()),
                    Step::Split(s) => StepGrad::Split(s.zeros_like()),
                })
                .collect(),
        }
    }

    /// Adds `d log p(x) / d theta` into `grad` and returns `log p(x)`.
    /// A non-finite log-density is reported with the first offending layer.
    pub fn accumulate_grad(&self, x: &[f64], grad: &mut ModelGrad) -> Result<f64> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut traces = Vec::with_capacity(self.steps.len());
        let mut total = 0.0;
        for (step, name) in self.steps.iter().zip(&self.names) {
            let (y, c, t) = match step {
                Step::Squeeze(s) => (squeeze(*s, &cur)?, 0.0, StepTrace::Squeeze),
                Step::ActNorm(a) => {
                    let (y, ld) = a.forward(&cur)?;
                    (y, ld, StepTrace::ActNorm(std::mem::take(&mut cur)))
                }
                Step::Mix(m) => {
                    let (y, ld, t) = m.forward_trace(&cur)?;
                    (y, ld, StepTrace::Mix(t))
                }
                Step::Coupling(c) => {
                    let (y, ld, t) = c.forward_trace(&cur)?;
                    (y, ld, StepTrace::Coupling(t))
                }
                Step::Split(s) => {
                    let (keep, lp, t) = s.forward_trace(&cur)?;
                    (keep, lp, StepTrace::Split(t))
                }
            };
            if !c.is_finite() || y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { layer: name.clone() });
            }
            total += c;
            cur = y;
            traces.push(t);
        }
        let prior = standard_normal_log_density(&cur);
        if !prior.is_finite() {
            return Err(Error::NonFiniteLoss { layer: "prior".into() });
        }
        total += prior;
        let mut g: Vec<f64> = cur.iter().map(|z| -z).collect();
        for ((step, trace), sg) in self.steps.iter().zip(&traces).zip(grad.steps.iter_mut()).rev() {
            g = match (step, trace, sg) {
                (Step::Squeeze(s), StepTrace::Squeeze, _) => unsqueeze(*s, &g)?,
                (Step::ActNorm(a), StepTrace::ActNorm(x), StepGrad::ActNorm(ga)) => a.backward(x, &g, ga),
                (Step::Mix(m), StepTrace::Mix(t), StepGrad::Mix(gm)) => m.backward(t, &g, gm),
                (Step::Coupling(c), StepTrace::Coupling(t), StepGrad::Coupling(gc)) => c.backward(t, &g, gc),
                (Step::Split(s), StepTrace::Split(t), StepGrad::Split(gs)) => s.backward(t, &g, gs),
                _ => unreachable!("trace does not match step"),
            };
        }
        Ok(total)
    }

    /// Every parameter and buffer, in a fixed order.
    pub fn export(&self) -> ParamTable {
        let mut v = Vec::new();
        let mut sink = TensorSink::new(&mut v);
        for (step, name) in self.steps.iter().zip(&self.names) {
            let mut s = sink.scope(name);
            match step {
                Step::Squeeze(_) => {}
                Step::ActNorm(a) => a.export(&mut s),
                Step::Mix(m) => m.export(&mut s),
                Step::Coupling(c) => c.net.export(&mut s.scope("net")),
                Step::Split(sp) => sp.export(&mut s.scope("net")),
            }
        }
        ParamTable { tensors: v }
    }

    /// Gradient accumulators laid out exactly like [`Self::export`]; buffer
    /// entries are zero.
    pub fn grad_table(&self, grad: &ModelGrad) -> ParamTable {
        let mut v = Vec::new();
        let mut sink = TensorSink::new(&mut v);
        for ((step, name), g) in self.steps.iter().zip(&self.names).zip(&grad.steps) {
            let mut s = sink.scope(name);
            match (step, g) {
                (Step::Squeeze(_), _) => {}
                (Step::ActNorm(_), StepGrad::ActNorm(ga)) => ga.export(&mut s),
                (Step::Mix(m), StepGrad::Mix(gm)) => m.export_grad(gm, &mut s),
                (Step::Coupling(_), StepGrad::Coupling(gc)) => gc.net.export(&mut s.scope("net")),
                (Step::Split(_), StepGrad::Split(gs)) => gs.export(&mut s.scope("net")),
                _ => unreachable!("gradient layout does not match model"),
            }
        }
        ParamTable { tensors: v }
    }

    /// Adds `N(0, scale^2)` noise to every trainable parameter.
    pub fn perturb(&mut self, seed: u64, scale: f64) -> Result<()> {
        let mut table = self.export();
        let mut g = rng::seeded(seed);
        for t in table.tensors.iter_mut().filter(|t| t.is_trainable()) {
            for v in &mut t.data {
                *v += scale * g.sample::<f64, _>(StandardNormal);
            }
        }
        self.import(&table)
    }

    /// Loads parameters and buffers written by [`Self::export`].
    pub fn import(&mut self, table: &ParamTable) -> Result<()> {
        let mut src = TensorSource::new(table);
        for (step, name) in self.steps.iter_mut().zip(&self.names) {
            let mut s = src.scope(name);
            match step {
                Step::Squeeze(_) => {}
                Step::ActNorm(a) => a.import(&mut s)?,
                Step::Mix(m) => m.import(&mut s)?,
                Step::Coupling(c) => {
                    let mut n = s.scope("net");
                    c.net.import(&mut n)?;
                    s.sync(n);
                }
                Step::Split(sp) => {
                    let mut n = s.scope("net");
                    sp.import(&mut n)?;
                    s.sync(n);
                }
            }
            src.sync(s);
        }
        src.finish()
    }
}
