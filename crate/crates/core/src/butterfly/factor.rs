use num_traits::{Float, FromPrimitive, Zero};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::PairIndexing;
use crate::dense::DenseMatrix;
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::scalar::{RealScalar, Scalar};

/// Initial value for freshly constructed factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Identity,
    /// Every 2x2 pair block is a rotation by an angle drawn uniformly from `(-pi, pi]`.
    Rotation,
}

/// Log-magnitude and sign (real) or phase (complex) of a determinant.
///
/// A singular operator has `log_abs == -inf` and a zero sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet<T: Scalar> {
    pub log_abs: T::Real,
    pub sign: T,
}

impl<T: Scalar> LogDet<T> {
    pub fn zero() -> Self {
        Self {
            log_abs: T::Real::zero(),
            sign: T::one(),
        }
    }

    pub fn is_singular(&self) -> bool {
        self.log_abs == T::Real::neg_infinity()
    }

    pub fn compose(self, other: Self) -> Self {
        Self {
            log_abs: self.log_abs + other.log_abs,
            sign: self.sign * other.sign,
        }
    }
}

/// One level-`i` butterfly factor: `D/2` independent 2x2 blocks
/// `[[w00, w01], [w10, w11]]` acting on the pairs of a [`PairIndexing`].
///
/// With `tied` set, every pair inside a level-one sub-block carries the same
/// four weights; the expanded per-pair storage is kept in sync by the setters.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterflyFactor<T: Scalar> {
    indexing: PairIndexing,
    weights: Vec<[T; 4]>,
    tied: bool,
}

pub type PairBlock<T> = [T; 4];

#[inline]
fn pair_det<T: Scalar>(w: &[T; 4]) -> T {
    w[0] * w[3] - w[1] * w[2]
}

impl<T: Scalar> ButterflyFactor<T> {
    pub fn new(level: usize, dim: usize, init: Init, seed: u64, tied: bool) -> Result<Self> {
        let indexing = PairIndexing::new(level, dim)?;
        match init {
            Init::Identity => Ok(Self::identity_with(indexing, tied)),
            Init::Rotation => {
                let n = if tied { indexing.sub_blocks() } else { indexing.num_pairs() };
                let mut rng = rng::seeded(seed);
                let pi = std::f64::consts::PI;
                // 1 - u lies in (0, 1], so the angle lies in (-pi, pi].
                let angles: Vec<f64> = (0..n)
                    .map(|_| pi - 2.0 * pi * rng.random::<f64>())
                    .collect();
                Self::rotation_with_angles(level, dim, &angles, tied)
            }
        }
    }

    pub fn identity(level: usize, dim: usize) -> Result<Self> {
        Ok(Self::identity_with(PairIndexing::new(level, dim)?, false))
    }

    fn identity_with(indexing: PairIndexing, tied: bool) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            indexing,
            weights: vec![[o, z, z, o]; indexing.num_pairs()],
            tied,
        }
    }

    /// Rotation-initialised factor with explicit angles: one per pair, or one
    /// per level-one sub-block when `tied`.
    pub fn rotation_with_angles(
        level: usize,
        dim: usize,
        angles: &[f64],
        tied: bool,
    ) -> Result<Self> {
        let indexing = PairIndexing::new(level, dim)?;
        let expected = if tied { indexing.sub_blocks() } else { indexing.num_pairs() };
        if angles.len() != expected {
            return Err(invalid(format!(
                "expected {expected} rotation angles, got {}",
                angles.len()
            )));
        }
        let blocks: Vec<[T; 4]> = angles
            .iter()
            .map(|&phi| {
                let (s, c) = phi.sin_cos();
                [
                    T::from_parts(c, 0.0),
                    T::from_parts(-s, 0.0),
                    T::from_parts(s, 0.0),
                    T::from_parts(c, 0.0),
                ]
            })
            .collect();
        let mut f = Self::identity_with(indexing, tied);
        if tied {
            f.set_tied_weights(&blocks)?;
        } else {
            f.weights = blocks;
        }
        Ok(f)
    }

    /// Factor with explicit per-pair blocks (untied).
    pub fn from_weights(level: usize, dim: usize, weights: Vec<[T; 4]>) -> Result<Self> {
        let indexing = PairIndexing::new(level, dim)?;
        if weights.len() != indexing.num_pairs() {
            return Err(invalid(format!(
                "expected {} pair blocks, got {}",
                indexing.num_pairs(),
                weights.len()
            )));
        }
        Ok(Self {
            indexing,
            weights,
            tied: false,
        })
    }

    /// Factor with i.i.d. standard normal weights (real and imaginary parts
    /// for complex scalars).
    pub fn random_normal<R: rand::Rng + ?Sized>(level: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let indexing = PairIndexing::new(level, dim)?;
        let weights = (0..indexing.num_pairs())
            .map(|_| {
                let mut b = [T::zero(); 4];
                for w in &mut b {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *w = T::from_parts(re, im);
                }
                b
            })
            .collect();
        Ok(Self {
            indexing,
            weights,
            tied: false,
        })
    }

    #[inline]
    pub fn indexing(&self) -> &PairIndexing {
        &self.indexing
    }

    #[inline]
    pub fn level(&self) -> usize {
        self.indexing.level()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.indexing.dim()
    }

    pub fn is_tied(&self) -> bool {
        self.tied
    }

    /// Per-pair blocks, always expanded (one per pair).
    pub fn weights(&self) -> &[[T; 4]] {
        &self.weights
    }

    /// Overwrite per-pair blocks. Not allowed on tied factors.
    pub fn set_weights(&mut self, weights: &[[T; 4]]) -> Result<()> {
        if self.tied {
            return Err(invalid("per-pair weights cannot be set on a tied factor"));
        }
        if weights.len() != self.weights.len() {
            return Err(invalid(format!(
                "expected {} pair blocks, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    /// Independent weights of a tied factor: one block per level-one sub-block.
    pub fn tied_weights(&self) -> Vec<[T; 4]> {
        let half = self.indexing.half();
        (0..self.indexing.sub_blocks())
            .map(|m| self.weights[m * half])
            .collect()
    }

    pub fn set_tied_weights(&mut self, blocks: &[[T; 4]]) -> Result<()> {
        if blocks.len() != self.indexing.sub_blocks() {
            return Err(invalid(format!(
                "expected {} tied blocks, got {}",
                self.indexing.sub_blocks(),
                blocks.len()
            )));
        }
        let half = self.indexing.half();
        for (k, w) in self.weights.iter_mut().enumerate() {
            *w = blocks[k / half];
        }
        Ok(())
    }

    /// `y = B x`. O(D).
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_len(x.len())?;
        let mut y = x.to_vec();
        self.apply_in_place(&mut y);
        Ok(y)
    }

    /// In-place `x <- B x`; panics on length mismatch.
    pub fn apply_in_place(&self, x: &mut [T]) {
        assert_eq!(x.len(), self.dim());
        let half = self.indexing.half();
        let block = self.indexing.block_size();
        let mut k = 0;
        for base in (0..x.len()).step_by(block) {
            let (lo, hi) = x[base..base + block].split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let w = &self.weights[k];
                let (xp, xq) = (*a, *b);
                *a = w[0] * xp + w[1] * xq;
                *b = w[2] * xp + w[3] * xq;
                k += 1;
            }
        }
    }

    pub fn pair_determinants(&self) -> impl Iterator<Item = T> + '_ {
        self.weights.iter().map(pair_det)
    }

    /// O(D) log-determinant: the product of the `D/2` pair determinants.
    pub fn log_det(&self) -> LogDet<T> {
        let mut log_abs = T::Real::zero();
        let mut sign = T::one();
        for d in self.pair_determinants() {
            let m = d.modulus();
            if m == T::Real::zero() {
                return LogDet {
                    log_abs: T::Real::neg_infinity(),
                    sign: T::zero(),
                };
            }
            log_abs += m.ln();
            sign *= d / T::from_real(m);
        }
        LogDet { log_abs, sign }
    }

    /// Inverse factor: same level, each pair block replaced by its 2x2 inverse.
    pub fn invert(&self) -> Result<Self> {
        let floor = T::Real::from_f64(1e-300).unwrap_or_else(T::Real::min_positive_value);
        let mut weights = Vec::with_capacity(self.weights.len());
        for (k, w) in self.weights.iter().enumerate() {
            let d = pair_det(w);
            if d.modulus() < floor || !d.finite() {
                return Err(Error::SingularFactor { pair: k });
            }
            let inv = T::one() / d;
            weights.push([w[3] * inv, -w[1] * inv, -w[2] * inv, w[0] * inv]);
        }
        Ok(Self {
            indexing: self.indexing,
            weights,
            tied: self.tied,
        })
    }

    /// True when every block is exactly `I` or the swap `[[0,1],[1,0]]`.
    pub fn is_switch_only(&self) -> bool {
        let (o, z) = (T::one(), T::zero());
        self.weights
            .iter()
            .all(|w| *w == [o, z, z, o] || *w == [z, o, o, z])
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.dim(), self.dim());
        for (k, (p, q)) in self.indexing.pairs().enumerate() {
            let w = &self.weights[k];
            m[(p, p)] = w[0];
            m[(p, q)] = w[1];
            m[(q, p)] = w[2];
            m[(q, q)] = w[3];
        }
        m
    }

    /// Elementwise scalar conversion, e.g. real switch factors to complex.
    pub fn map_scalar<U: Scalar>(&self, f: impl Fn(T) -> U) -> ButterflyFactor<U> {
        ButterflyFactor {
            indexing: self.indexing,
            weights: self.weights.iter().map(|w| w.map(&f)).collect(),
            tied: self.tied,
        }
    }

    /// Scale row `r` of the dense form by `d[r]`; the result is still a
    /// butterfly factor of the same level.
    pub fn scale_rows(&mut self, d: &[T]) {
        assert_eq!(d.len(), self.dim());
        for k in 0..self.weights.len() {
            let (p, q) = self.indexing.pair(k);
            let w = &mut self.weights[k];
            w[0] *= d[p];
            w[1] *= d[p];
            w[2] *= d[q];
            w[3] *= d[q];
        }
        self.tied = false;
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(invalid(format!(
                "vector length {n} does not match factor dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

impl<T: RealScalar> ButterflyFactor<T> {
    /// Reverse-mode step for `y = B x`: accumulates `B^T gy` into `gx` and
    /// `gy x^T` (restricted to the pair pattern) into `gw`.
    pub fn vjp(&self, x: &[T], gy: &[T], gx: &mut [T], gw: &mut [[T; 4]]) {
        for (k, (p, q)) in self.indexing.pairs().enumerate() {
            let w = &self.weights[k];
            let (gp, gq) = (gy[p], gy[q]);
            gx[p] += w[0] * gp + w[2] * gq;
            gx[q] += w[1] * gp + w[3] * gq;
            let g = &mut gw[k];
            g[0] += gp * x[p];
            g[1] += gp * x[q];
            g[2] += gq * x[p];
            g[3] += gq * x[q];
        }
    }

    /// Accumulates `scale * d log|det B| / dw` into `gw`, using
    /// `d log|ad - bc| / d(a, b, c, d) = (d, -c, -b, a) / (ad - bc)`.
    pub fn log_det_grad(&self, scale: T, gw: &mut [[T; 4]]) {
        for (w, g) in self.weights.iter().zip(gw.iter_mut()) {
            let s = scale / pair_det(w);
            g[0] += w[3] * s;
            g[1] -= w[2] * s;
            g[2] -= w[1] * s;
            g[3] += w[0] * s;
        }
    }

    /// Sums per-pair gradients into per-sub-block gradients for tied factors.
    pub fn reduce_tied(&self, per_pair: &[[T; 4]]) -> Vec<[T; 4]> {
        let half = self.indexing.half();
        let mut out = vec![[T::zero(); 4]; self.indexing.sub_blocks()];
        for (k, g) in per_pair.iter().enumerate() {
            let o = &mut out[k / half];
            for i in 0..4 {
                o[i] += g[i];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use num_traits::One;

    #[test]
    fn identity_has_unit_blocks_and_dense_identity() {
        let f = ButterflyFactor::<f64>::new(1, 8, Init::Identity, 0, false).unwrap();
        assert!(f.pair_determinants().all(|d| d == 1.0));
        assert_eq!(f.to_dense(), DenseMatrix::identity(8));
        assert_eq!(f.log_det(), LogDet { log_abs: 0.0, sign: 1.0 });
    }

    #[test]
    fn quarter_turn_rotation() {
        let f = ButterflyFactor::<f64>::rotation_with_angles(1, 2, &[std::f64::consts::FRAC_PI_2], false)
            .unwrap();
        let w = f.weights()[0];
        assert!((w[0]).abs() < 1e-16 && (w[3]).abs() < 1e-16);
        assert_eq!((w[1], w[2]), (-1.0, 1.0));
        assert!((pair_det(&w) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_init_is_seeded() {
        let a = ButterflyFactor::<f64>::new(2, 16, Init::Rotation, 7, false).unwrap();
        let b = ButterflyFactor::<f64>::new(2, 16, Init::Rotation, 7, false).unwrap();
        let c = ButterflyFactor::<f64>::new(2, 16, Init::Rotation, 8, false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for d in a.pair_determinants() {
            assert!((d - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hadamard_pairs_on_level_one() {
        let f = ButterflyFactor::from_weights(1, 4, vec![[1.0, 1.0, 1.0, -1.0]; 2]).unwrap();
        assert_eq!(f.matvec(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![4.0, 6.0, -2.0, -2.0]);
    }

    #[test]
    fn level_one_dense_pattern() {
        let f = ButterflyFactor::from_weights(1, 4, vec![[1.0, 2.0, 3.0, 4.0]; 2]).unwrap();
        let nz: Vec<(usize, usize)> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .filter(|&(r, c)| f.to_dense()[(r, c)] != 0.0)
            .collect();
        assert_eq!(
            nz,
            vec![(0, 0), (0, 2), (1, 1), (1, 3), (2, 0), (2, 2), (3, 1), (3, 3)]
        );
    }

    #[test]
    fn two_by_two_log_det() {
        let f = ButterflyFactor::from_weights(1, 2, vec![[2.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(f.log_det(), LogDet { log_abs: 0.0, sign: 1.0 });
        let g = ButterflyFactor::from_weights(1, 2, vec![[1.0, 2.0, 1.0, 1.0]]).unwrap();
        assert_eq!(g.log_det().sign, -1.0);
    }

    #[test]
    fn singular_factor_reports_negative_infinity() {
        let f = ButterflyFactor::from_weights(1, 4, vec![[1.0, 0.0, 0.0, 1.0], [1.0, 2.0, 2.0, 4.0]])
            .unwrap();
        assert!(f.log_det().is_singular());
        assert_eq!(f.invert(), Err(Error::SingularFactor { pair: 1 }));
    }

    #[test]
    fn diagonal_inverse() {
        let f = ButterflyFactor::from_weights(1, 2, vec![[2.0, 0.0, 0.0, 4.0]]).unwrap();
        let inv = f.invert().unwrap();
        assert_eq!(inv.weights()[0], [0.5, 0.0, 0.0, 0.25]);
        assert_eq!(inv.level(), 1);
    }

    #[test]
    fn matvec_length_mismatch() {
        let f = ButterflyFactor::<f64>::identity(1, 4).unwrap();
        assert!(matches!(f.matvec(&[1.0; 3]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn constructor_errors() {
        assert!(ButterflyFactor::<f64>::new(0, 8, Init::Identity, 0, false).is_err());
        assert!(ButterflyFactor::<f64>::new(3, 12, Init::Identity, 0, false).is_err());
    }

    #[test]
    fn tied_rotation_shares_weights_per_sub_block() {
        let f = ButterflyFactor::<f64>::new(2, 16, Init::Rotation, 3, true).unwrap();
        let tied = f.tied_weights();
        assert_eq!(tied.len(), 2);
        for (k, w) in f.weights().iter().enumerate() {
            assert_eq!(*w, tied[k / 4]);
        }
    }

    #[test]
    fn complex_log_det_phase() {
        let i = Complex64::new(0.0, 1.0);
        let f = ButterflyFactor::from_weights(1, 2, vec![[i, Complex64::zero(), Complex64::zero(), Complex64::one()]])
            .unwrap();
        let ld = f.log_det();
        assert!(ld.log_abs.abs() < 1e-15);
        assert!((ld.sign - i).norm() < 1e-15);
    }

    #[test]
    fn log_det_gradient_matches_closed_form() {
        let f = ButterflyFactor::from_weights(1, 2, vec![[2.0, 0.5, -1.0, 3.0]]).unwrap();
        let mut g = vec![[0.0; 4]];
        f.log_det_grad(1.0, &mut g);
        let det = 6.5;
        assert_eq!(g[0], [3.0 / det, 1.0 / det, -0.5 / det, 2.0 / det]);
    }
}
