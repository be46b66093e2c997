//! Block-wise invertible butterfly factors.
//!
//! Coordinates are grouped into `G = D / C` contiguous groups of `C`. Groups
//! are paired exactly like the coordinates of a naive level-`i` factor on `G`
//! points, and each group pair `(P, Q)` is mixed by a `2C x 2C` transform in
//! block-LDU form
//!
//! ```text
//! M = [[I, 0], [X, I]] . diag(Y, Z) . [[I, W], [0, I]]
//! ```
//!
//! with `Y`, `Z` in [`LuMatrix`] form. `det M = det Y det Z` is read off the
//! LU diagonals, so the factor is invertible for every parameter value and
//! its log-determinant is a plain sum.

mod lu;

pub use lu::LuMatrix;

use rand::Rng as _;

use crate::butterfly::{ButterflyFactor, Init, PairIndexing};
use crate::dense::DenseMatrix;
use crate::error::{invalid, Result};
use crate::rng;
use crate::scalar::RealScalar;

/// Parameters of one group pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPair<R: RealScalar> {
    pub x: DenseMatrix<R>,
    pub w: DenseMatrix<R>,
    pub y: LuMatrix<R>,
    pub z: LuMatrix<R>,
}

impl<R: RealScalar> BlockPair<R> {
    pub fn identity(c: usize) -> Self {
        Self {
            x: DenseMatrix::zeros(c, c),
            w: DenseMatrix::zeros(c, c),
            y: LuMatrix::identity(c),
            z: LuMatrix::identity(c),
        }
    }

    /// Per-channel rotation by `angles[c]` between `P_c` and `Q_c`, written in
    /// block-LDU form: `Y = diag(cos)`, `Z = diag(1/cos)`, `X = diag(tan)`,
    /// `W = diag(-tan)`. Needs `cos != 0`.
    pub fn rotation(angles: &[f64]) -> Self {
        let c = angles.len();
        let mut p = Self::identity(c);
        let cos: Vec<R> = angles.iter().map(|a| R::from_f64(a.cos()).unwrap()).collect();
        let inv_cos: Vec<R> = cos.iter().map(|&v| R::one() / v).collect();
        p.y = LuMatrix::diagonal(&cos);
        p.z = LuMatrix::diagonal(&inv_cos);
        for (i, a) in angles.iter().enumerate() {
            let t = R::from_f64(a.tan()).unwrap();
            p.x[(i, i)] = t;
            p.w[(i, i)] = -t;
        }
        p
    }

    pub fn block_size(&self) -> usize {
        self.x.rows()
    }

    /// Dense `2C x 2C` realisation `[[Y, Y W], [X Y, X Y W + Z]]`.
    pub fn realize(&self) -> DenseMatrix<R> {
        let c = self.block_size();
        let y = self.y.to_dense();
        let yw = y.matmul(&self.w);
        let xy = self.x.matmul(&y);
        let xyw = self.x.matmul(&yw);
        let z = self.z.to_dense();
        DenseMatrix::from_fn(2 * c, 2 * c, |r, col| match (r < c, col < c) {
            (true, true) => y[(r, col)],
            (true, false) => yw[(r, col - c)],
            (false, true) => xy[(r - c, col)],
            (false, false) => xyw[(r - c, col - c)] + z[(r - c, col - c)],
        })
    }

    pub fn log_abs_det(&self) -> R {
        self.y.log_abs_det() + self.z.log_abs_det()
    }

    /// Structured forward: `t = xp + W xq; up = Y t; uq = Z xq;
    /// yp = up; yq = X up + uq`.
    pub fn apply_structured(&self, xp: &[R], xq: &[R]) -> (Vec<R>, Vec<R>) {
        let wq = self.w.matvec(xq);
        let t: Vec<R> = xp.iter().zip(&wq).map(|(&a, &b)| a + b).collect();
        let up = self.y.to_dense().matvec(&t);
        let uq = self.z.to_dense().matvec(xq);
        let xu = self.x.matvec(&up);
        let yq = xu.iter().zip(&uq).map(|(&a, &b)| a + b).collect();
        (up, yq)
    }

    /// Inverse of [`Self::apply_structured`] using triangular solves.
    pub fn invert_structured(&self, yp: &[R], yq: &[R]) -> (Vec<R>, Vec<R>) {
        let xu = self.x.matvec(yp);
        let uq: Vec<R> = yq.iter().zip(&xu).map(|(&a, &b)| a - b).collect();
        let xq = self.z.solve(&uq);
        let t = self.y.solve(yp);
        let wq = self.w.matvec(&xq);
        let xp = t.iter().zip(&wq).map(|(&a, &b)| a - b).collect();
        (xp, xq)
    }
}

/// Gradients of one [`BlockPair`] in storage layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPairGrad<R> {
    pub x: Vec<R>,
    pub w: Vec<R>,
    pub y_lower: Vec<R>,
    pub y_upper: Vec<R>,
    pub y_log_s: Vec<R>,
    pub z_lower: Vec<R>,
    pub z_upper: Vec<R>,
    pub z_log_s: Vec<R>,
}

impl<R: RealScalar> BlockPair<R> {
    /// Pulls a cotangent `g` of the realised `2C x 2C` matrix back to the
    /// free parameters.
    pub fn backprop_realized(&self, g: &DenseMatrix<R>) -> BlockPairGrad<R> {
        let c = self.block_size();
        let sub = |r0: usize, c0: usize| DenseMatrix::from_fn(c, c, |r, col| g[(r0 + r, c0 + col)]);
        let (g_pp, g_pq, g_qp, g_qq) = (sub(0, 0), sub(0, c), sub(c, 0), sub(c, c));
        let y = self.y.to_dense();
        let wt = self.w.transpose();
        let xt = self.x.transpose();
        let add = |a: &DenseMatrix<R>, b: &DenseMatrix<R>| {
            DenseMatrix::from_fn(c, c, |r, col| a[(r, col)] + b[(r, col)])
        };
        // Shared term G_QP + G_QQ W^T.
        let a = add(&g_qp, &g_qq.matmul(&wt));
        let g_y = add(&add(&g_pp, &g_pq.matmul(&wt)), &xt.matmul(&a));
        let g_w = y.transpose().matmul(&add(&g_pq, &xt.matmul(&g_qq)));
        let g_x = a.matmul(&y.transpose());
        let (y_lower, y_upper, y_log_s) = self.y.backprop(&g_y);
        let (z_lower, z_upper, z_log_s) = self.z.backprop(&g_qq);
        BlockPairGrad {
            x: g_x.as_slice().to_vec(),
            w: g_w.as_slice().to_vec(),
            y_lower,
            y_upper,
            y_log_s,
            z_lower,
            z_upper,
            z_log_s,
        }
    }
}

/// Level-`i`, block-size-`C` factor on `D` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockwiseFactor<R: RealScalar> {
    groups: PairIndexing,
    block: usize,
    pairs: Vec<BlockPair<R>>,
    realized: Vec<DenseMatrix<R>>,
}

impl<R: RealScalar> BlockwiseFactor<R> {
    pub fn new(level: usize, dim: usize, block_size: usize, init: Init, seed: u64) -> Result<Self> {
        let groups = Self::group_indexing(level, dim, block_size)?;
        let n = groups.num_pairs();
        let pairs = match init {
            Init::Identity => vec![BlockPair::identity(block_size); n],
            Init::Rotation => {
                // The LDU form needs cos != 0; angles are kept in (-pi/4, pi/4].
                let mut g = rng::seeded(seed);
                let q = std::f64::consts::FRAC_PI_4;
                (0..n)
                    .map(|_| {
                        let angles: Vec<f64> = (0..block_size).map(|_| q - 2.0 * q * g.random::<f64>()).collect();
                        BlockPair::rotation(&angles)
                    })
                    .collect()
            }
        };
        Self::from_pairs(level, dim, block_size, pairs)
    }

    pub fn from_pairs(level: usize, dim: usize, block_size: usize, pairs: Vec<BlockPair<R>>) -> Result<Self> {
        let groups = Self::group_indexing(level, dim, block_size)?;
        if pairs.len() != groups.num_pairs() {
            return Err(invalid(format!(
                "expected {} block pairs, got {}",
                groups.num_pairs(),
                pairs.len()
            )));
        }
        if let Some(p) = pairs.iter().find(|p| p.block_size() != block_size) {
            return Err(invalid(format!(
                "block pair of size {} in a factor with block size {block_size}",
                p.block_size()
            )));
        }
        let realized = pairs.iter().map(BlockPair::realize).collect();
        Ok(Self {
            groups,
            block: block_size,
            pairs,
            realized,
        })
    }

    fn group_indexing(level: usize, dim: usize, block_size: usize) -> Result<PairIndexing> {
        if block_size == 0 || !dim.is_multiple_of(block_size) {
            return Err(invalid(format!(
                "block size {block_size} does not divide dimension {dim}"
            )));
        }
        PairIndexing::new(level, dim / block_size)
    }

    pub fn level(&self) -> usize {
        self.groups.level()
    }

    pub fn dim(&self) -> usize {
        self.groups.dim() * self.block
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn group_indexing_ref(&self) -> &PairIndexing {
        &self.groups
    }

    pub fn pairs(&self) -> &[BlockPair<R>] {
        &self.pairs
    }

    /// Mutate pair parameters; the realised cache is rebuilt afterwards.
    pub fn update_pairs(&mut self, f: impl FnOnce(&mut [BlockPair<R>])) {
        f(&mut self.pairs);
        self.realized = self.pairs.iter().map(BlockPair::realize).collect();
    }

    pub fn realized(&self) -> &[DenseMatrix<R>] {
        &self.realized
    }

    /// Coordinate offsets of the two groups of pair `k`.
    #[inline]
    pub fn pair_offsets(&self, k: usize) -> (usize, usize) {
        let (gp, gq) = self.groups.pair(k);
        (gp * self.block, gq * self.block)
    }

    /// `y = B x`, O(C D).
    pub fn matvec(&self, x: &[R]) -> Result<Vec<R>> {
        self.check_len(x.len())?;
        let mut y = x.to_vec();
        self.apply_in_place(&mut y);
        Ok(y)
    }

    pub fn apply_in_place(&self, x: &mut [R]) {
        let c = self.block;
        let mut v = vec![R::zero(); 2 * c];
        for (k, m) in self.realized.iter().enumerate() {
            let (op, oq) = self.pair_offsets(k);
            v[..c].copy_from_slice(&x[op..op + c]);
            v[c..].copy_from_slice(&x[oq..oq + c]);
            for r in 0..2 * c {
                let row = &m.as_slice()[r * 2 * c..(r + 1) * 2 * c];
                let mut acc = row[0] * v[0];
                for j in 1..2 * c {
                    acc += row[j] * v[j];
                }
                if r < c {
                    x[op + r] = acc;
                } else {
                    x[oq + r - c] = acc;
                }
            }
        }
    }

    /// Same map as [`Self::matvec`], evaluated through the LDU factors.
    pub fn matvec_structured(&self, x: &[R]) -> Result<Vec<R>> {
        self.check_len(x.len())?;
        let c = self.block;
        let mut y = x.to_vec();
        for (k, p) in self.pairs.iter().enumerate() {
            let (op, oq) = self.pair_offsets(k);
            let (yp, yq) = p.apply_structured(&x[op..op + c], &x[oq..oq + c]);
            y[op..op + c].copy_from_slice(&yp);
            y[oq..oq + c].copy_from_slice(&yq);
        }
        Ok(y)
    }

    /// Sum of the learned LU log-magnitudes; O(D), no factorisation.
    pub fn log_det(&self) -> R {
        self.pairs.iter().fold(R::zero(), |a, p| a + p.log_abs_det())
    }

    /// `B^{-1} z` with two triangular solves per pair, O(C D).
    pub fn invert_apply(&self, z: &[R]) -> Result<Vec<R>> {
        self.check_len(z.len())?;
        let mut x = z.to_vec();
        self.invert_in_place(&mut x);
        Ok(x)
    }

    pub fn invert_in_place(&self, z: &mut [R]) {
        let c = self.block;
        for (k, p) in self.pairs.iter().enumerate() {
            let (op, oq) = self.pair_offsets(k);
            let (xp, xq) = p.invert_structured(&z[op..op + c], &z[oq..oq + c]);
            z[op..op + c].copy_from_slice(&xp);
            z[oq..oq + c].copy_from_slice(&xq);
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<R> {
        let c = self.block;
        let mut out = DenseMatrix::zeros(self.dim(), self.dim());
        for (k, m) in self.realized.iter().enumerate() {
            let (op, oq) = self.pair_offsets(k);
            let idx = |i: usize| if i < c { op + i } else { oq + i - c };
            for r in 0..2 * c {
                for col in 0..2 * c {
                    out[(idx(r), idx(col))] = m[(r, col)];
                }
            }
        }
        out
    }

    /// For `C = 1`, the naive factor with the same realised 2x2 blocks.
    pub fn to_naive(&self) -> Result<ButterflyFactor<R>> {
        if self.block != 1 {
            return Err(invalid("only block size 1 has a naive equivalent"));
        }
        let weights = self
            .realized
            .iter()
            .map(|m| [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]])
            .collect();
        ButterflyFactor::from_weights(self.level(), self.dim(), weights)
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

/// Level-one block-wise factor acting as a 1x1 convolution: every group is
/// multiplied by the same `C x C` matrix. `groups` must be even.
pub fn onebyone_equivalent<R: RealScalar>(weights: &LuMatrix<R>, groups: usize) -> Result<BlockwiseFactor<R>> {
    let c = weights.n();
    if groups < 2 || !groups.is_multiple_of(2) {
        return Err(invalid(format!("group count {groups} must be even and >= 2")));
    }
    let pair = BlockPair {
        x: DenseMatrix::zeros(c, c),
        w: DenseMatrix::zeros(c, c),
        y: weights.clone(),
        z: weights.clone(),
    };
    BlockwiseFactor::from_pairs(1, groups * c, c, vec![pair; groups / 2])
}

/// Composition of block-wise factors sharing `(D, C)`; last factor first.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockwiseLayer<R: RealScalar> {
    factors: Vec<BlockwiseFactor<R>>,
    dim: usize,
    block: usize,
}

impl<R: RealScalar> BlockwiseLayer<R> {
    pub fn new(factors: Vec<BlockwiseFactor<R>>) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(invalid("block-wise layer needs at least one factor"));
        };
        let (dim, block) = (first.dim(), first.block_size());
        if factors.iter().any(|f| f.dim() != dim || f.block_size() != block) {
            return Err(invalid("block-wise factors must share dimension and block size"));
        }
        Ok(Self { factors, dim, block })
    }

    pub fn with_levels(dim: usize, block_size: usize, levels: &[usize], init: Init, seed: u64) -> Result<Self> {
        let factors = levels
            .iter()
            .enumerate()
            .map(|(j, &l)| BlockwiseFactor::new(l, dim, block_size, init, seed.wrapping_add(j as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn factors(&self) -> &[BlockwiseFactor<R>] {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut [BlockwiseFactor<R>] {
        &mut self.factors
    }

    pub fn levels(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.level()).collect()
    }

    pub fn apply(&self, x: &[R]) -> Result<(Vec<R>, R)> {
        if x.len() != self.dim {
            return Err(invalid(format!(
                "vector length {} does not match layer dimension {}",
                x.len(),
                self.dim
            )));
        }
        let mut y = x.to_vec();
        self.apply_in_place(&mut y);
        Ok((y, self.log_det()))
    }

    pub fn apply_in_place(&self, x: &mut [R]) {
        for f in self.factors.iter().rev() {
            f.apply_in_place(x);
        }
    }

    pub fn log_det(&self) -> R {
        self.factors.iter().fold(R::zero(), |a, f| a + f.log_det())
    }

    pub fn invert_apply(&self, z: &[R]) -> Result<Vec<R>> {
        if z.len() != self.dim {
            return Err(invalid("vector length does not match layer dimension"));
        }
        let mut x = z.to_vec();
        for f in &self.factors {
            f.invert_in_place(&mut x);
        }
        Ok(x)
    }

    pub fn to_dense(&self) -> DenseMatrix<R> {
        self.factors
            .iter()
            .fold(DenseMatrix::identity(self.dim), |acc, f| acc.matmul(&f.to_dense()))
    }
}
