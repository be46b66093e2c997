//! Permutations as switch-only butterfly layers, routed with the Beneš
//! looping algorithm.
//!
//! Convention: a permutation `perm` maps input index `i` to output index
//! `perm[i]`, i.e. its matrix has `P[perm[i]][i] = 1` and `(P x)[perm[i]] = x[i]`.



use super::{ButterflyFactor, ButterflyLayer};
use crate::dense::DenseMatrix;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

pub fn validate_permutation(perm: &[usize]) -> Result<()> {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return Err(invalid("input is not a bijection on [0, D)"));
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn permutation_matrix<T: Scalar>(perm: &[usize]) -> DenseMatrix<T> {
    let mut m = DenseMatrix::zeros(perm.len(), perm.len());
    for (i, &p) in perm.iter().enumerate() {
        m[(p, i)] = T::one();
    }
    m
}

/// `(P x)[perm[i]] = x[i]`.
pub fn permute<T: Copy>(perm: &[usize], x: &[T]) -> Vec<T> {
    let mut y = x.to_vec();
    for (i, &p) in perm.iter().enumerate() {
        y[p] = x[i];
    }
    y
}

/// Switch settings of one Beneš network; `true` means the pair is swapped.
struct Routing {
    input: Vec<Vec<bool>>,
    output: Vec<Vec<bool>>,
    middle: Vec<bool>,
}

fn route(perm: &[usize], base: usize, depth: usize, r: &mut Routing) {
    let n = perm.len();
    if n == 2 {
        r.middle[base / 2] = perm[0] == 1;
        return;
    }
    let half = n / 2;
    let partner = |i: usize| if i < half { i + half } else { i - half };
    let inv = invert_permutation(perm);

    // 0 = upper sub-network, 1 = lower. Inputs sharing a switch, and outputs
    // sharing a switch, must use different sub-networks.
    let mut colour: Vec<Option<u8>> = vec![None; n];
    for start in 0..half {
        if colour[start].is_some() {
            continue;
        }
        let mut i = start;
        loop {
            colour[i] = Some(0);
            let ip = partner(i);
            colour[ip] = Some(1);
            let next = inv[partner(perm[ip])];
            if colour[next].is_some() {
                debug_assert_eq!(colour[next], Some(0));
                break;
            }
            i = next;
        }
    }

    let mut upper = vec![0; half];
    let mut lower = vec![0; half];
    for (i, c) in colour.iter().enumerate() {
        let dest = perm[i] % half;
        match c {
            Some(0) => upper[i % half] = dest,
            _ => lower[i % half] = dest,
        }
    }

    let pair0 = base / 2;
    for s in 0..half {
        r.input[depth][pair0 + s] = colour[s] != Some(0);
        r.output[depth][pair0 + s] = colour[inv[s]] != Some(0);
    }
    route(&upper, base, depth + 1, r);
    route(&lower, base + half, depth + 1, r);
}

fn switch_factor<T: Scalar>(level: usize, dim: usize, swaps: &[bool]) -> Result<ButterflyFactor<T>> {
    let (o, z) = (T::one(), T::zero());
    let weights = swaps
        .iter()
        .map(|&s| if s { [z, o, o, z] } else { [o, z, z, o] })
        .collect();
    ButterflyFactor::from_weights(level, dim, weights)
}

/// Decompose a permutation of `D = 2^k` elements into `2k` switch-only
/// factors with level schedule `1..=k, k..=1`. The factor adjacent to the
/// middle stage is always the identity.
pub fn perm_decompose<T: Scalar>(perm: &[usize]) -> Result<ButterflyLayer<T>> {
    let dim = perm.len();
    if dim < 2 || !dim.is_power_of_two() {
        return Err(invalid(format!("permutation size {dim} is not a power of two >= 2")));
    }
    validate_permutation(perm)?;
    let k = dim.trailing_zeros() as usize;
    let mut r = Routing {
        input: vec![vec![false; dim / 2]; k.saturating_sub(1)],
        output: vec![vec![false; dim / 2]; k.saturating_sub(1)],
        middle: vec![false; dim / 2],
    };
    route(perm, 0, 0, &mut r);

    let mut factors = Vec::with_capacity(2 * k);
    for (d, sw) in r.output.iter().enumerate() {
        factors.push(switch_factor(d + 1, dim, sw)?);
    }
    factors.push(switch_factor(k, dim, &r.middle)?);
    factors.push(ButterflyFactor::identity(k, dim)?);
    for (d, sw) in r.input.iter().enumerate().rev() {
        factors.push(switch_factor(d + 1, dim, sw)?);
    }
    ButterflyLayer::new(dim, factors)
}
