use super::ButterflyLayer;
use crate::dense::DenseMatrix;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Independent butterfly layers on contiguous segments of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedLayer<T: Scalar> {
    segments: Vec<ButterflyLayer<T>>,
    dim: usize,
}

impl<T: Scalar> SegmentedLayer<T> {
    pub fn new(segments: Vec<ButterflyLayer<T>>) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("segmented layer needs at least one segment"));
        }
        let dim = segments.iter().map(|s| s.dim()).sum();
        Ok(Self { segments, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[ButterflyLayer<T>] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [ButterflyLayer<T>] {
        &mut self.segments
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.dim()).collect()
    }

    /// Start offset of each segment.
    pub fn offsets(&self) -> Vec<usize> {
        self.segments
            .iter()
            .scan(0, |off, s| {
                let o = *off;
                *off += s.dim();
                Some(o)
            })
            .collect()
    }

    pub fn apply(&self, x: &[T]) -> Result<(Vec<T>, T::Real)> {
        self.check_len(x.len())?;
        let mut y = x.to_vec();
        self.apply_in_place(&mut y);
        Ok((y, self.log_abs_det()))
    }

    pub fn apply_in_place(&self, x: &mut [T]) {
        let mut off = 0;
        for s in &self.segments {
            s.apply_in_place(&mut x[off..off + s.dim()]);
            off += s.dim();
        }
    }

    pub fn log_abs_det(&self) -> T::Real {
        self.segments
            .iter()
            .fold(num_traits::Zero::zero(), |acc: T::Real, s| acc + s.log_abs_det())
    }

    pub fn invert_apply(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len())?;
        let mut out = Vec::with_capacity(z.len());
        let mut off = 0;
        for s in &self.segments {
            out.extend(s.invert_apply(&z[off..off + s.dim()])?);
            off += s.dim();
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let blocks: Vec<_> = self.segments.iter().map(|s| s.to_dense()).collect();
        DenseMatrix::block_diag(&blocks)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(invalid(format!(
                "vector length {n} does not match segmented dimension {}",
                self.dim
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::butterfly::{perm_decompose, Init};

    #[test]
    fn identity_segments() {
        let segs = [512usize, 256, 16]
            .iter()
            .zip([9usize, 8, 4])
            .map(|(&d, m)| ButterflyLayer::<f64>::standard(d, m, false, Init::Identity, 0, false).unwrap())
            .collect();
        let s = SegmentedLayer::new(segs).unwrap();
        assert_eq!(s.dim(), 784);
        let x: Vec<f64> = (0..784).map(|i| (i as f64).sin()).collect();
        assert_eq!(s.apply(&x).unwrap(), (x, 0.0));
    }

    #[test]
    fn swaps_stay_within_segments() {
        let swap = perm_decompose::<f64>(&[3, 2, 1, 0]).unwrap();
        let s = SegmentedLayer::new(vec![swap.clone(), swap]).unwrap();
        let (y, _) = s.apply(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(y, vec![4.0, 3.0, 2.0, 1.0, 8.0, 7.0, 6.0, 5.0]);
    }

    #[test]
    fn length_mismatch() {
        let l = ButterflyLayer::<f64>::standard(4, 1, false, Init::Identity, 0, false).unwrap();
        let s = SegmentedLayer::new(vec![l]).unwrap();
        assert!(s.apply(&[0.0; 5]).is_err());
    }
}
