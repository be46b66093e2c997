use num_traits::Zero;

use super::{ButterflyFactor, Init, LogDet};
use crate::dense::DenseMatrix;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Level schedule `1..=M`, or `1..=M` followed by `M..=1` when bidirectional.
pub fn level_schedule(max_level: usize, bidirectional: bool) -> Vec<usize> {
    let mut levels: Vec<usize> = (1..=max_level).collect();
    if bidirectional {
        levels.extend((1..=max_level).rev());
    }
    levels
}

/// Composition `b_{a1} o b_{a2} o ... o b_{ak}` of butterfly factors.
///
/// Factors are stored left to right, so the last factor touches the input
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterflyLayer<T: Scalar> {
    dim: usize,
    factors: Vec<ButterflyFactor<T>>,
    levels: Vec<usize>,
}

impl<T: Scalar> ButterflyLayer<T> {
    pub fn new(dim: usize, factors: Vec<ButterflyFactor<T>>) -> Result<Self> {
        if dim < 2 {
            return Err(invalid(format!("layer dimension must be >= 2, got {dim}")));
        }
        if let Some(f) = factors.iter().find(|f| f.dim() != dim) {
            return Err(invalid(format!(
                "factor of dimension {} in a layer of dimension {dim}",
                f.dim()
            )));
        }
        let levels = factors.iter().map(|f| f.level()).collect();
        Ok(Self { dim, factors, levels })
    }

    /// Layer with one freshly initialised factor per entry of `levels`.
    /// Factor `j` is seeded with `seed + j`.
    pub fn with_levels(dim: usize, levels: &[usize], init: Init, seed: u64, tied: bool) -> Result<Self> {
        let factors = levels
            .iter()
            .enumerate()
            .map(|(j, &level)| ButterflyFactor::new(level, dim, init, seed.wrapping_add(j as u64), tied))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, factors)
    }

    pub fn standard(
        dim: usize,
        max_level: usize,
        bidirectional: bool,
        init: Init,
        seed: u64,
        tied: bool,
    ) -> Result<Self> {
        Self::with_levels(dim, &level_schedule(max_level, bidirectional), init, seed, tied)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn factors(&self) -> &[ButterflyFactor<T>] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [ButterflyFactor<T>] {
        &mut self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// `(b(x), log|det J_b|)`; O(kD).
    pub fn apply(&self, x: &[T]) -> Result<(Vec<T>, T::Real)> {
        let y = self.forward(x)?;
        Ok((y, self.log_det().log_abs))
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_len(x.len())?;
        let mut y = x.to_vec();
        self.apply_in_place(&mut y);
        Ok(y)
    }

    pub fn apply_in_place(&self, x: &mut [T]) {
        for f in self.factors.iter().rev() {
            f.apply_in_place(x);
        }
    }

    pub fn log_det(&self) -> LogDet<T> {
        self.factors
            .iter()
            .fold(LogDet::zero(), |acc, f| acc.compose(f.log_det()))
    }

    pub fn log_abs_det(&self) -> T::Real {
        self.factors
            .iter()
            .fold(T::Real::zero(), |acc, f| acc + f.log_det().log_abs)
    }

    /// Inverse layer: inverted factors in reverse order.
    pub fn inverse(&self) -> Result<Self> {
        let factors = self
            .factors
            .iter()
            .rev()
            .map(ButterflyFactor::invert)
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.dim, factors)
    }

    /// `b^{-1}(z)`, inverting factor by factor in O(kD).
    pub fn invert_apply(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len())?;
        let mut x = z.to_vec();
        for f in &self.factors {
            f.invert()?.apply_in_place(&mut x);
        }
        Ok(x)
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        self.factors
            .iter()
            .fold(DenseMatrix::identity(self.dim), |acc, f| acc.matmul(&f.to_dense()))
    }

    pub fn map_scalar<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> ButterflyLayer<U> {
        ButterflyLayer {
            dim: self.dim,
            factors: self.factors.iter().map(|x| x.map_scalar(f)).collect(),
            levels: self.levels.clone(),
        }
    }

    /// `self o other` (other applied first).
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(invalid("cannot compose layers of different dimension"));
        }
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        Self::new(self.dim, factors)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(invalid(format!(
                "vector length {n} does not match layer dimension {}",
                self.dim
            )));
        }
        Ok(())
    }
}
