//! Seeded synthetic datasets, dequantisation, batching and the `bfdata`
//! file format.

pub mod batch;
pub mod gaussian;
pub mod io;
pub mod patterns;
pub mod periodic;
pub mod spec;
pub mod toy2d;

pub use batch::{batch_indices, dequantize};
pub use gaussian::GaussianTruth;
pub use spec::DatasetSpec;

use crate::flow::Shape;

/// Train/validation/test splits of one synthetic family. Each split comes
/// from its own random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: String,
    pub shape: Shape,
    pub train: Vec<Vec<f64>>,
    pub val: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub seed: u64,
    /// Dataset-wide permutation applied to flattened samples, when any.
    pub permutation: Option<Vec<usize>>,
    /// Bits per value for quantised data, 0 for continuous data.
    pub n_bits: u32,
    pub truth: Option<GaussianTruth>,
}

/// Split sizes `n`, `n/4`, `n/4`, each at least one.
pub fn split_sizes(n: usize) -> [usize; 3] {
    [n, (n / 4).max(1), (n / 4).max(1)]
}

/// Stream ids used for the three splits.
pub(crate) const SPLIT_STREAMS: [u64; 3] = [1, 2, 3];
