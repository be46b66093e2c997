use crate::error::{invalid, Result};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;

/// Shuffled batches of one epoch; the last partial batch is dropped.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    if batch_size == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, epoch));
    order.chunks_exact(batch_size).map(<[usize]>::to_vec).collect()
}

/// `(x + u) / 2^n_bits` with `u ~ U[0, 1)`.
pub fn dequantize(values: &[f64], n_bits: u32, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if n_bits == 0 || n_bits > 31 {
        return Err(invalid(format!("n_bits must be in 1..=31, got {n_bits}")));
    }
    let levels = (1u64 << n_bits) as f64;
    values
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || v < 0.0 || v >= levels {
                return Err(invalid(format!("value {v} is not an integer in [0, {levels})")));
            }
            Ok((v + rng.random::<f64>()) / levels)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_partial_batch() {
        let b = batch_indices(103, 10, 1, 0);
        assert_eq!(b.len(), 10);
        assert!(b.iter().all(|x| x.len() == 10));
    }

    #[test]
    fn epochs_differ_but_reproduce() {
        assert_ne!(batch_indices(50, 5, 3, 0), batch_indices(50, 5, 3, 1));
        assert_eq!(batch_indices(50, 5, 3, 1), batch_indices(50, 5, 3, 1));
    }

    #[test]
    fn dequantize_top_bin() {
        let mut g = rng::seeded(0);
        for _ in 0..100 {
            let x = dequantize(&[255.0], 8, &mut g).unwrap()[0];
            assert!((255.0 / 256.0..1.0).contains(&x));
        }
        assert!(dequantize(&[256.0], 8, &mut g).is_err());
        assert!(dequantize(&[1.5], 8, &mut g).is_err());
    }
}
