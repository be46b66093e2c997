use super::{split_sizes, Dataset, SPLIT_STREAMS};
use crate::butterfly::{invert_permutation, permute, validate_permutation};
use crate::dense::DenseMatrix;
use crate::error::{invalid, Result};
use crate::flow::Shape;
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

/// Exact law of `x = P A eps`, with `A` unit lower triangular and banded.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTruth {
    pub mixing: DenseMatrix<f64>,
    pub permutation: Vec<usize>,
}

/// Lower band: 0.9 on the first sub-diagonal, 0.5 on the second.
pub fn banded_mixing(dim: usize) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(dim, dim, |r, c| match r.wrapping_sub(c) {
        0 => 1.0,
        1 => 0.9,
        2 => 0.5,
        _ => 0.0,
    })
}

impl GaussianTruth {
    pub fn dim(&self) -> usize {
        self.permutation.len()
    }

    pub fn draw(&self, g: &mut impl Rng) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.dim()).map(|_| g.sample(StandardNormal)).collect();
        permute(&self.permutation, &self.mixing.matvec(&eps))
    }

    /// Exact log-density; `A` has unit diagonal so `log|det| = 0`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let y = permute(&invert_permutation(&self.permutation), x);
        let d = self.dim();
        let mut eps = vec![0.0; d];
        for i in 0..d {
            let mut s = y[i];
            for j in i.saturating_sub(2)..i {
                s -= self.mixing[(i, j)] * eps[j];
            }
            eps[i] = s / self.mixing[(i, i)];
        }
        let det: f64 = (0..d).map(|i| self.mixing[(i, i)].abs().ln()).sum();
        eps.iter()
            .map(|e| -0.5 * e * e - 0.5 * (2.0 * std::f64::consts::PI).ln())
            .sum::<f64>()
            - det
    }

    /// Differential entropy in nats per dimension.
    pub fn entropy_per_dim(&self) -> f64 {
        let d = self.dim() as f64;
        let det: f64 = (0..self.dim()).map(|i| self.mixing[(i, i)].abs().ln()).sum();
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + det / d
    }
}

pub fn permuted_gaussian(dim: usize, n: usize, seed: u64, identity: bool) -> Result<Dataset> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(invalid(format!("dimension {dim} is not a power of two")));
    }
    let mut permutation: Vec<usize> = (0..dim).collect();
    if !identity {
        permutation.shuffle(&mut rng::stream(seed, 0));
    }
    validate_permutation(&permutation)?;
    let truth = GaussianTruth {
        mixing: banded_mixing(dim),
        permutation: permutation.clone(),
    };
    let [a, b, c] = split_sizes(n.max(1));
    let draw = |k: usize, s: u64| {
        let mut g = rng::stream(seed, s);
        (0..k).map(|_| truth.draw(&mut g)).collect::<Vec<_>>()
    };
    Ok(Dataset {
        kind: "permuted_gaussian".into(),
        shape: Shape::Flat(dim),
        train: draw(a, SPLIT_STREAMS[0]),
        val: draw(b, SPLIT_STREAMS[1]),
        test: draw(c, SPLIT_STREAMS[2]),
        seed,
        permutation: Some(permutation),
        n_bits: 0,
        truth: Some(truth),
    })
}
