use super::grad::backward;
use super::trainer::mean_nll;
use crate::error::Result;
use crate::butterfly::Init;
use crate::flow::{FlowConfig, FlowModel, MixConfig, Shape};
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;

pub const REL_TOL: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;
pub const STEP: f64 = 1e-5;
/// Test points are redrawn until every ReLU pre-activation is at least this
/// far from its kink, so central differences see a smooth function.
pub const MIN_RELU_MARGIN: f64 = 1e-3;

/// Outcome of a central-difference gradient check. A coordinate passes when
/// `|analytic - numeric| <= REL_TOL * |analytic| + ABS_FLOOR`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|analytic - numeric| / (REL_TOL * |analytic| + ABS_FLOOR)`;
    /// at most 1 when every coordinate passes.
    pub max_ratio: f64,
    /// Largest relative error over coordinates with `|analytic| >= 1e-3`.
    pub max_rel_large: f64,
    /// Largest absolute error over all coordinates.
    pub max_abs: f64,
    /// Coordinate with the largest ratio.
    pub worst: String,
}

impl GradCheck {
    fn empty() -> Self {
        Self {
            checked: 0,
            max_ratio: 0.0,
            max_rel_large: 0.0,
            max_abs: 0.0,
            worst: String::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.max_ratio <= 1.0
    }

    fn record(&mut self, name: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = (analytic - numeric).abs();
        let ratio = err / (REL_TOL * analytic.abs() + ABS_FLOOR);
        if ratio > self.max_ratio || self.worst.is_empty() || ratio.is_nan() {
            self.max_ratio = if ratio.is_nan() { f64::INFINITY } else { ratio.max(self.max_ratio) };
            self.worst = name;
        }
        if analytic.abs() >= 1e-3 {
            self.max_rel_large = self.max_rel_large.max(err / analytic.abs());
        }
        self.max_abs = self.max_abs.max(err);
    }

    fn merge(self, other: GradCheck) -> GradCheck {
        let (worst, max_ratio) = if other.max_ratio > self.max_ratio {
            (other.worst, other.max_ratio)
        } else {
            (self.worst, self.max_ratio)
        };
        GradCheck {
            checked: self.checked + other.checked,
            max_ratio,
            max_rel_large: self.max_rel_large.max(other.max_rel_large),
            max_abs: self.max_abs.max(other.max_abs),
            worst,
        }
    }
}

/// Compares the analytic gradient of the mean negative log-likelihood on
/// `batch` against central differences with step `h`, coordinate by
/// coordinate over every trainable parameter.
pub fn check_gradients(model: &FlowModel, batch: &[Vec<f64>], h: f64) -> Result<GradCheck> {
    let (_, grads) = backward(model, batch, 1)?;
    let base = model.export();
    let mut probe = model.clone();
    let mut table = base.clone();
    let mut report = GradCheck::empty();
    for (ti, t) in base.tensors.iter().enumerate() {
        if !t.is_trainable() {
            continue;
        }
        for j in 0..t.numel() {
            let x0 = t.data[j];
            table.tensors[ti].data[j] = x0 + h;
            probe.import(&table)?;
            let up = mean_nll(&probe, batch)?;
            table.tensors[ti].data[j] = x0 - h;
            probe.import(&table)?;
            let down = mean_nll(&probe, batch)?;
            table.tensors[ti].data[j] = x0;
            report.record(format!("{}[{j}]", t.name), grads.tensors[ti].data[j], (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Model variants covering every layer kind on flat 8-dimensional data
/// with two steps per level.
pub fn standard_models() -> Vec<(&'static str, FlowConfig)> {
    let cfg = |levels: usize, mix: MixConfig| FlowConfig {
        shape: Shape::Flat(8),
        levels,
        steps: 2,
        coupling_channels: 6,
        mix,
        seed: 0,
    };
    let rot = |block_size: usize, m: usize| MixConfig {
        block_size,
        butterfly_levels: vec![m],
        init: Init::Rotation,
        ..MixConfig::default()
    };
    vec![
        ("naive", cfg(1, rot(1, 3))),
        (
            "naive_bidirectional",
            cfg(1, MixConfig { bidirectional: true, ..rot(1, 2) }),
        ),
        ("tied", cfg(1, MixConfig { tied: true, ..rot(1, 3) })),
        ("blockwise", cfg(1, MixConfig { bidirectional: true, ..rot(2, 2) })),
        (
            "segmented",
            cfg(
                1,
                MixConfig {
                    butterfly_levels: vec![2, 1],
                    segments: vec![4, 4],
                    ..rot(1, 2)
                },
            ),
        ),
        ("multiscale", cfg(2, rot(1, 2))),
    ]
}

/// Runs [`check_gradients`] at `points` random parameter settings of every
/// model in [`standard_models`]; the worst result per model is returned.
pub fn standard_suite(points: usize) -> Result<Vec<(&'static str, GradCheck)>> {
    let mut out = Vec::new();
    for (name, base) in standard_models() {
        let mut worst: Option<GradCheck> = None;
        for p in 0..points as u64 {
            let mut model = FlowModel::new(FlowConfig { seed: p, ..base.clone() })?;
            model.perturb(rng::stream(p, 1).random(), 0.2)?;
            let mut g = rng::stream(p, 2);
            let mut batch = Vec::new();
            while batch.len() < 4 {
                let x: Vec<f64> = (0..8).map(|_| g.sample::<f64, _>(StandardNormal)).collect();
                if model.relu_margin(&x)? >= MIN_RELU_MARGIN {
                    batch.push(x);
                }
            }
            let r = check_gradients(&model, &batch, STEP)?;
            worst = Some(match worst {
                None => r,
                Some(w) => w.merge(r),
            });
        }
        out.push((name, worst.expect("at least one point")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_matches_central_differences() {
        for (name, r) in standard_suite(10).unwrap() {
            assert!(r.checked > 50, "{name}");
            assert!(r.passed(), "{name}: {r:?}");
            assert!(r.max_rel_large < 1e-6, "{name}: {r:?}");
        }
    }
}
