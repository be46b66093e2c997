//! Multi-scale normalizing flow on `f64` data.

pub mod actnorm;
pub mod coupling;
pub mod mix;
pub mod model;
pub mod nn;
pub mod params;
pub mod shape;
pub mod split;
pub mod squeeze;

pub use model::{FlowConfig, FlowModel, Latents, LevelPlan, MixConfig, ModelGrad, Step};
pub use params::{ParamKind, ParamTable, Tensor};
pub use shape::Shape;

/// Negative log-likelihood in nats per dimension.
pub fn nats_per_dim(log_p: f64, dim: usize) -> f64 {
    -log_p / dim as f64
}

/// Bits per dimension for `n_bits`-quantised data under uniform
/// dequantisation to `[0, 1)`.
pub fn bits_per_dim(log_p: f64, dim: usize, n_bits: u32) -> f64 {
    (-log_p / std::f64::consts::LN_2 + dim as f64 * n_bits as f64) / dim as f64
}
