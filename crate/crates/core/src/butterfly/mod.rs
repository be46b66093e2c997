//! Scalar-weight butterfly factors and layers.
//!
//! A level-`i` factor on `D` coordinates couples disjoint coordinate pairs
//! with independent 2x2 blocks, so matvec, log-determinant and inverse are all
//! O(D). Layers compose factors; [`perm_decompose`] and
//! [`circulant_to_butterfly`] build layers realising permutations and circular
//! convolutions.

mod circulant;
mod factor;
mod indexing;
mod layer;
mod perm;
mod segmented;

pub use circulant::{bit_reversal, circulant_to_butterfly, dft_layer};
pub use factor::{ButterflyFactor, Init, LogDet, PairBlock};
pub use indexing::PairIndexing;
pub use layer::{level_schedule, ButterflyLayer};
pub use perm::{invert_permutation, perm_decompose, permutation_matrix, permute, validate_permutation};
pub use segmented::SegmentedLayer;
