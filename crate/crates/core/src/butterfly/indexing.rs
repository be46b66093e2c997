use crate::error::{invalid, Result};

/// Pair layout of a level-`i` butterfly factor on `D` coordinates.
///
/// The factor is block-diagonal with `2^(i-1)` level-one blocks of size
/// `block_size = D / 2^(i-1)`; inside block `m` coordinate `j` is coupled with
/// `j + half`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndexing {
    level: usize,
    dim: usize,
}

impl PairIndexing {
    pub fn new(level: usize, dim: usize) -> Result<Self> {
        if level < 1 {
            return Err(invalid(format!("butterfly level must be >= 1, got {level}")));
        }
        if dim < 2 {
            return Err(invalid(format!("butterfly dimension must be >= 2, got {dim}")));
        }
        if level >= usize::BITS as usize || !dim.is_multiple_of(1usize << level) {
            return Err(invalid(format!(
                "dimension {dim} is not divisible by 2^{level}"
            )));
        }
        Ok(Self { level, dim })
    }

    #[inline]
    pub fn level(&self) -> usize {
        self.level
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.dim >> (self.level - 1)
    }

    #[inline]
    pub fn half(&self) -> usize {
        self.block_size() / 2
    }

    /// Number of level-one sub-blocks, `2^(level-1)`.
    #[inline]
    pub fn sub_blocks(&self) -> usize {
        1 << (self.level - 1)
    }

    #[inline]
    pub fn num_pairs(&self) -> usize {
        self.dim / 2
    }

    /// Coordinates `(p, q)` of pair `k`, with `p < q`.
    #[inline]
    pub fn pair(&self, k: usize) -> (usize, usize) {
        let half = self.half();
        let p = (k / half) * self.block_size() + k % half;
        (p, p + half)
    }

    /// Sub-block that pair `k` belongs to.
    #[inline]
    pub fn sub_block_of(&self, k: usize) -> usize {
        k / self.half()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_pairs()).map(move |k| self.pair(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_one_couples_j_with_j_plus_half_dim() {
        let ix = PairIndexing::new(1, 8).unwrap();
        let pairs: Vec<_> = ix.pairs().collect();
        assert_eq!(pairs, vec![(0, 4), (1, 5), (2, 6), (3, 7)]);
    }

    #[test]
    fn deepest_level_couples_neighbours() {
        let ix = PairIndexing::new(3, 8).unwrap();
        let pairs: Vec<_> = ix.pairs().collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5), (6, 7)]);
    }

    #[test]
    fn pairs_partition_coordinates() {
        for dim in [2usize, 4, 12, 16, 48, 64] {
            for level in 1..=6 {
                let Ok(ix) = PairIndexing::new(level, dim) else {
                    assert!(dim % (1 << level) != 0);
                    continue;
                };
                let mut seen = vec![false; dim];
                for (p, q) in ix.pairs() {
                    assert!(!seen[p] && !seen[q]);
                    seen[p] = true;
                    seen[q] = true;
                }
                assert!(seen.iter().all(|&s| s));
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(PairIndexing::new(0, 8).is_err());
        assert!(PairIndexing::new(2, 6).is_err());
        assert!(PairIndexing::new(1, 1).is_err());
        assert!(PairIndexing::new(1, 3).is_err());
    }
}
