//! Invertible butterfly layers and a multi-scale normalizing flow built on them.

pub mod blockwise;
pub mod butterfly;
pub mod data;
pub mod dense;
pub mod error;
pub mod flow;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{RealScalar, Scalar};

pub type Factor = butterfly::ButterflyFactor<f64>;
pub type ComplexFactor = butterfly::ButterflyFactor<num_complex::Complex64>;
pub type Layer = butterfly::ButterflyLayer<f64>;
pub type ComplexLayer = butterfly::ButterflyLayer<num_complex::Complex64>;
pub type Segmented = butterfly::SegmentedLayer<f64>;
pub type BlockFactor = blockwise::BlockwiseFactor<f64>;
pub type BlockLayer = blockwise::BlockwiseLayer<f64>;
