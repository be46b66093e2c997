//! Circulant (periodic convolution) matrices as complex butterfly layers.
//!
//! `C = F^{-1} diag(F k) F`, with the DFT `F` factored as radix-2
//! decimation-in-time stages after a bit-reversal permutation. Each bit
//! reversal is routed through [`perm_decompose`], and `diag(F k) / D` is folded
//! into the first level-one stage of the forward transform.

use num_complex::Complex;
use num_traits::One;

use super::{perm_decompose, ButterflyFactor, ButterflyLayer};
use crate::error::{invalid, Result};
use crate::scalar::RealScalar;

pub fn bit_reversal(dim: usize) -> Vec<usize> {
    let bits = dim.trailing_zeros();
    (0..dim)
        .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
        .collect()
}

/// DIT stage at `level` (half-span `D / 2^level`): blocks `[[1, w], [1, -w]]`
/// with twiddles `w = exp(sign * 2 pi i j / (2 half))`.
fn dit_stage<R: RealScalar>(level: usize, dim: usize, sign: f64) -> Result<ButterflyFactor<Complex<R>>> {
    let half = dim >> level;
    let weights = (0..dim / 2)
        .map(|k| {
            let j = (k % half) as f64;
            let theta = sign * std::f64::consts::PI * j / half as f64;
            let w = Complex::new(R::from_f64(theta.cos()).unwrap(), R::from_f64(theta.sin()).unwrap());
            [Complex::one(), w, Complex::one(), -w]
        })
        .collect();
    ButterflyFactor::from_weights(level, dim, weights)
}

fn fft_stages<R: RealScalar>(dim: usize, sign: f64) -> Result<Vec<ButterflyFactor<Complex<R>>>> {
    let k = dim.trailing_zeros() as usize;
    (1..=k).map(|level| dit_stage(level, dim, sign)).collect()
}

fn bit_reversal_layer<R: RealScalar>(dim: usize) -> Result<ButterflyLayer<Complex<R>>> {
    Ok(perm_decompose::<R>(&bit_reversal(dim))?.map_scalar(|w| Complex::new(w, R::zero())))
}

/// Unnormalised forward DFT `X[j] = sum_n x[n] exp(-2 pi i j n / D)` as a
/// butterfly layer.
pub fn dft_layer<R: RealScalar>(dim: usize) -> Result<ButterflyLayer<Complex<R>>> {
    check_pow2(dim)?;
    let mut factors = fft_stages::<R>(dim, -1.0)?;
    factors.extend(bit_reversal_layer::<R>(dim)?.factors().iter().cloned());
    ButterflyLayer::new(dim, factors)
}

/// Complex butterfly layer realising `x -> kernel (*) x` (circular convolution).
pub fn circulant_to_butterfly<R: RealScalar>(kernel: &[Complex<R>]) -> Result<ButterflyLayer<Complex<R>>> {
    let dim = kernel.len();
    check_pow2(dim)?;
    let dft = dft_layer::<R>(dim)?;
    let spectrum = dft.forward(kernel)?;
    let scale = R::one() / R::from_usize(dim).unwrap();
    let diag: Vec<Complex<R>> = spectrum.iter().map(|&s| s * scale).collect();

    let bitrev = bit_reversal_layer::<R>(dim)?;
    let mut forward = fft_stages::<R>(dim, -1.0)?;
    forward[0].scale_rows(&diag);

    let mut factors = fft_stages::<R>(dim, 1.0)?;
    factors.extend(bitrev.factors().iter().cloned());
    factors.extend(forward);
    factors.extend(bitrev.factors().iter().cloned());
    ButterflyLayer::new(dim, factors)
}

fn check_pow2(dim: usize) -> Result<()> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(invalid(format!("size {dim} is not a power of two >= 2")));
    }
    Ok(())
}
