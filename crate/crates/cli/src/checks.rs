//! Oracle checks shared by `verify` and the acceptance run. Each check
//! reports its largest error next to the tolerance it must meet.

use std::time::{Duration, Instant};

use butterflow::blockwise::{onebyone_equivalent, BlockPair, BlockwiseFactor, LuMatrix};
use butterflow::butterfly::{
    circulant_to_butterfly, perm_decompose, permutation_matrix, ButterflyFactor, ButterflyLayer, Init, PairIndexing,
};
use butterflow::dense::DenseMatrix;
use butterflow::flow::split::HALF_LOG_TWO_PI;
use butterflow::flow::{FlowConfig, FlowModel, MixConfig, Shape};
use butterflow::oracle::{circular_convolution, dense_log_abs_det_real, kron_identity, numerical_jacobian};
use butterflow::rng;
use butterflow::train::gradcheck;
use butterflow::Result;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_err: f64,
    pub tol: f64,
    pub elapsed: Duration,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_err <= self.tol
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{}",
            self.name,
            self.max_err,
            self.tol,
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

pub const CSV_HEADER: &str = "check,max_err,tol,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Core,
    Blockwise,
    Flow,
    Grad,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "core" => Ok(Suite::Core),
            "blockwise" => Ok(Suite::Blockwise),
            "flow" => Ok(Suite::Flow),
            "grad" => Ok(Suite::Grad),
            "all" => Ok(Suite::All),
            _ => Err(format!("unknown suite '{s}' (core, blockwise, flow, grad, all)")),
        }
    }
}

fn timed(name: &str, tol: f64, f: impl FnOnce() -> Result<f64>) -> Result<CheckResult> {
    let start = Instant::now();
    let max_err = f()?;
    Ok(CheckResult {
        name: name.to_string(),
        max_err: if max_err.is_nan() { f64::INFINITY } else { max_err },
        tol,
        elapsed: start.elapsed(),
    })
}

pub fn run_suite(suite: Suite) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Core | Suite::All) {
        out.push(factor_log_det()?);
        out.push(factor_inverse()?);
        out.push(permutation_exact()?);
        out.push(circulant_convolution()?);
    }
    if matches!(suite, Suite::Blockwise | Suite::All) {
        out.push(blockwise_unit_block_bitwise()?);
        out.push(onebyone_kronecker()?);
        out.push(blockwise_dense()?);
    }
    if matches!(suite, Suite::Flow | Suite::All) {
        out.push(flow_change_of_variables()?);
        out.push(flow_density_integral()?);
        out.push(flow_round_trip()?);
    }
    if matches!(suite, Suite::Grad | Suite::All) {
        out.extend(gradients(10)?);
    }
    Ok(out)
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn normal_vec(g: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| g.sample(StandardNormal)).collect()
}

fn dims(from: usize, to: usize) -> impl Iterator<Item = usize> {
    (from.trailing_zeros()..=to.trailing_zeros()).map(|k| 1usize << k)
}

/// Relative error of the pairwise log-determinant against dense LU, over
/// 100 random factors for every power-of-two `D` in `2..=256` and every
/// level.
pub fn factor_log_det() -> Result<CheckResult> {
    timed("factor_log_det", 1e-10, || {
        let mut worst = 0.0f64;
        for d in dims(2, 256) {
            for level in 1..=d.trailing_zeros() as usize {
                let mut g = rng::stream(d as u64, level as u64);
                for _ in 0..100 {
                    let f = ButterflyFactor::<f64>::random_normal(level, d, &mut g)?;
                    let fast = f.log_det().log_abs;
                    let dense = dense_log_abs_det_real(&f.to_dense());
                    worst = worst.max((fast - dense).abs() / dense.abs());
                }
            }
        }
        Ok(worst)
    })
}

/// Sparsity of a level-`level` factor: same block, same offset in the half.
fn allowed(ix: &PairIndexing, r: usize, c: usize) -> bool {
    let block = ix.block_size();
    r / block == c / block && (r % block) % ix.half() == (c % block) % ix.half()
}

/// `||B B^{-1} - I||_inf` (maximum row sum) over random factors whose pair
/// determinants are at least 1e-6 in magnitude; a pattern or level change
/// of the inverse counts as an infinite error.
pub fn factor_inverse() -> Result<CheckResult> {
    timed("factor_inverse", 1e-10, || {
        let mut worst = 0.0f64;
        for d in dims(2, 256) {
            for level in 1..=d.trailing_zeros() as usize {
                let mut g = rng::stream(1000 + d as u64, level as u64);
                for _ in 0..100 {
                    let f = ButterflyFactor::<f64>::random_normal(level, d, &mut g)?;
                    if f.pair_determinants().any(|det| det.abs() < 1e-6) {
                        continue;
                    }
                    let inv = f.invert()?;
                    if inv.level() != level {
                        return Ok(f64::INFINITY);
                    }
                    let dense_inv = inv.to_dense();
                    for r in 0..d {
                        for c in 0..d {
                            if dense_inv[(r, c)] != 0.0 && !allowed(f.indexing(), r, c) {
                                return Ok(f64::INFINITY);
                            }
                        }
                    }
                    let mut product = DenseMatrix::zeros(d, d);
                    for c in 0..d {
                        let col: Vec<f64> = (0..d).map(|r| dense_inv[(r, c)]).collect();
                        for (r, v) in f.matvec(&col)?.into_iter().enumerate() {
                            product[(r, c)] = v - if r == c { 1.0 } else { 0.0 };
                        }
                    }
                    for r in 0..d {
                        worst = worst.max((0..d).map(|c| product[(r, c)].abs()).sum());
                    }
                }
            }
        }
        Ok(worst)
    })
}

/// 200 random permutations per `D` in `4..=128`: switch-only factors whose
/// product equals the permutation matrix entry for entry.
pub fn permutation_exact() -> Result<CheckResult> {
    timed("permutation_exact", 0.0, || {
        let mut worst = 0.0f64;
        for d in dims(4, 128) {
            let mut g = rng::stream(2024, d as u64);
            for _ in 0..200 {
                let mut p: Vec<usize> = (0..d).collect();
                p.shuffle(&mut g);
                let layer: ButterflyLayer<f64> = perm_decompose(&p)?;
                let k = d.trailing_zeros() as usize;
                if layer.len() != 2 * k || !layer.factors().iter().all(|f| f.is_switch_only()) {
                    return Ok(f64::INFINITY);
                }
                let expect = permutation_matrix::<f64>(&p);
                for c in 0..d {
                    let mut e = vec![0.0; d];
                    e[c] = 1.0;
                    layer.apply_in_place(&mut e);
                    for (r, v) in e.iter().enumerate() {
                        worst = worst.max((v - expect[(r, c)]).abs());
                    }
                }
            }
        }
        Ok(worst)
    })
}

/// Circulant butterfly layers against direct circular convolution, random
/// complex kernels and inputs, `D` in `8..=1024`.
pub fn circulant_convolution() -> Result<CheckResult> {
    timed("circulant_convolution", 1e-8, || {
        let mut worst = 0.0f64;
        for d in dims(8, 1024) {
            let mut g = rng::stream(77, d as u64);
            let mut cvec = |n: usize| -> Vec<Complex64> {
                (0..n)
                    .map(|_| Complex64::new(g.sample(StandardNormal), g.sample(StandardNormal)))
                    .collect()
            };
            for _ in 0..5 {
                let kernel = cvec(d);
                let x = cvec(d);
                let layer = circulant_to_butterfly(&kernel)?;
                let y = layer.forward(&x)?;
                let direct = circular_convolution(&kernel, &x);
                for (a, b) in y.iter().zip(&direct) {
                    worst = worst.max((a - b).norm());
                }
            }
        }
        Ok(worst)
    })
}

fn random_lu(c: usize, g: &mut impl Rng) -> LuMatrix<f64> {
    let mut m = LuMatrix::identity(c);
    for i in 0..c {
        for j in 0..c {
            let v = 0.5 * g.sample::<f64, _>(StandardNormal);
            if i > j {
                m.lower[i * c + j] = v;
            } else if i < j {
                m.upper[i * c + j] = v;
            }
        }
        m.log_s[i] = 0.3 * g.sample::<f64, _>(StandardNormal);
        m.sign[i] = if g.random::<bool>() { 1.0 } else { -1.0 };
    }
    m
}

fn random_pair(c: usize, g: &mut impl Rng) -> BlockPair<f64> {
    BlockPair {
        y: random_lu(c, g),
        z: random_lu(c, g),
        x: DenseMatrix::from_fn(c, c, |_, _| 0.5 * g.sample::<f64, _>(StandardNormal)),
        w: DenseMatrix::from_fn(c, c, |_, _| 0.5 * g.sample::<f64, _>(StandardNormal)),
    }
}

fn random_blockwise(level: usize, dim: usize, c: usize, g: &mut impl Rng) -> Result<BlockwiseFactor<f64>> {
    let pairs = (0..dim / c / 2).map(|_| random_pair(c, g)).collect();
    BlockwiseFactor::from_pairs(level, dim, c, pairs)
}

/// Block size one against the scalar factor with the same weights; any
/// difference in the matvec bits is an error.
pub fn blockwise_unit_block_bitwise() -> Result<CheckResult> {
    timed("blockwise_unit_block_bitwise", 0.0, || {
        let mut worst = 0.0f64;
        for d in dims(2, 64) {
            for level in 1..=d.trailing_zeros() as usize {
                let mut g = rng::stream(5, (d * 16 + level) as u64);
                for _ in 0..10 {
                    let b = random_blockwise(level, d, 1, &mut g)?;
                    let naive = b.to_naive()?;
                    let x = normal_vec(&mut g, d);
                    let (yb, yn) = (b.matvec(&x)?, naive.matvec(&x)?);
                    if yb.iter().zip(&yn).any(|(p, q)| p.to_bits() != q.to_bits()) {
                        worst = worst.max(max_abs(&yb, &yn).max(f64::MIN_POSITIVE));
                    }
                }
            }
        }
        Ok(worst)
    })
}

/// The 1x1-convolution form equals `I_G (x) W`.
pub fn onebyone_kronecker() -> Result<CheckResult> {
    timed("onebyone_kronecker", 1e-12, || {
        let mut worst = 0.0f64;
        let mut g = rng::seeded(31);
        for c in 1..=4 {
            for groups in [2usize, 4, 8, 16] {
                let w = random_lu(c, &mut g);
                let f = onebyone_equivalent(&w, groups)?;
                let expect = kron_identity(groups, &w.to_dense());
                worst = worst.max(f.to_dense().max_abs_diff(&expect));
            }
        }
        Ok(worst)
    })
}

/// Block-wise matvec, log-determinant and inverse against the dense
/// realisation, `C` in 1..4.
pub fn blockwise_dense() -> Result<CheckResult> {
    timed("blockwise_dense", 1e-9, || {
        let mut worst = 0.0f64;
        for c in 1..=4usize {
            for dim in [8usize, 16, 24, 32, 48, 64] {
                if dim % (2 * c) != 0 {
                    continue;
                }
                let groups = dim / c;
                for level in 1..=groups.trailing_zeros() as usize {
                    let mut g = rng::stream(c as u64, (dim * 8 + level) as u64);
                    for _ in 0..10 {
                        let f = random_blockwise(level, dim, c, &mut g)?;
                        let dense = f.to_dense();
                        let x = normal_vec(&mut g, dim);
                        let y = f.matvec(&x)?;
                        worst = worst.max(max_abs(&y, &dense.matvec(&x)));
                        let ld = dense_log_abs_det_real(&dense);
                        worst = worst.max((f.log_det() - ld).abs() / ld.abs().max(1.0));
                        worst = worst.max(max_abs(&f.invert_apply(&y)?, &x));
                    }
                }
            }
        }
        Ok(worst)
    })
}

fn flow_config(shape: Shape, levels: usize, steps: usize, mix: MixConfig, seed: u64) -> FlowConfig {
    FlowConfig {
        shape,
        levels,
        steps,
        coupling_channels: 8,
        mix,
        seed,
    }
}

fn rot(m: usize, block_size: usize) -> MixConfig {
    MixConfig {
        block_size,
        butterfly_levels: vec![m],
        bidirectional: true,
        init: Init::Rotation,
        ..MixConfig::default()
    }
}

/// Change of variables through the standardised latents, with the Jacobian
/// assembled by central differences.
fn dense_log_prob(model: &FlowModel, x: &[f64]) -> Result<f64> {
    let enc = |v: &[f64]| model.encode(v).map(|l| l.flatten());
    let z = enc(x)?;
    let jac = numerical_jacobian(|v| enc(v).expect("encodable"), x, 1e-5);
    let prior: f64 = z.iter().map(|v| -HALF_LOG_TWO_PI - 0.5 * v * v).sum();
    Ok(prior + dense_log_abs_det_real(&jac))
}

/// Model log-density against the dense numerical Jacobian for every mixing
/// kind and layout with at most 16 dimensions. Parameters are perturbed by
/// 0.1 so the models stay plausible densities; larger perturbations of the
/// split priors give log-densities near -1e7, where central differences
/// carry no 1e-6 information.
pub fn flow_change_of_variables() -> Result<CheckResult> {
    timed("flow_change_of_variables", 1e-6, || {
        let segmented = MixConfig {
            segments: vec![4, 4],
            ..rot(1, 1)
        };
        let cases = [
            (Shape::Flat(2), 1, rot(1, 1)),
            (Shape::Flat(8), 1, rot(3, 1)),
            (Shape::Flat(8), 2, rot(3, 1)),
            (Shape::Flat(8), 2, rot(1, 2)),
            (Shape::Flat(8), 1, segmented),
            (Shape::Flat(16), 2, rot(2, 2)),
            (Shape::Seq { channels: 2, length: 8 }, 2, rot(2, 1)),
            (
                Shape::Image {
                    channels: 1,
                    height: 4,
                    width: 4,
                },
                2,
                rot(2, 1),
            ),
        ];
        let mut worst = 0.0f64;
        for (i, (shape, levels, mix)) in cases.into_iter().enumerate() {
            let mut m = FlowModel::new(flow_config(shape, levels, 2, mix, i as u64))?;
            m.perturb(40 + i as u64, 0.1)?;
            let mut g = rng::stream(41, i as u64);
            for _ in 0..3 {
                let x = normal_vec(&mut g, shape.numel());
                worst = worst.max((m.log_prob(&x)? - dense_log_prob(&m, &x)?).abs());
            }
        }
        Ok(worst)
    })
}

/// Midpoint-rule mass of a random two-dimensional model on `[-8, 8]^2`.
pub fn flow_density_integral() -> Result<CheckResult> {
    timed("flow_density_integral", 1e-2, || {
        let mut m = FlowModel::new(flow_config(Shape::Flat(2), 1, 3, rot(1, 1), 8))?;
        m.perturb(9, 0.2)?;
        let n = 800;
        let h = 16.0 / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = [-8.0 + (i as f64 + 0.5) * h, -8.0 + (j as f64 + 0.5) * h];
                mass += m.log_prob(&x)?.exp() * h * h;
            }
        }
        Ok((mass - 1.0).abs())
    })
}

/// `decode(encode(x))` against `x` over every layout and mixing kind.
pub fn flow_round_trip() -> Result<CheckResult> {
    timed("flow_round_trip", 1e-7, || {
        let cases = [
            (Shape::Flat(16), rot(3, 1)),
            (Shape::Flat(16), rot(2, 2)),
            (Shape::Seq { channels: 2, length: 16 }, rot(3, 2)),
            (
                Shape::Image {
                    channels: 2,
                    height: 4,
                    width: 4,
                },
                rot(2, 1),
            ),
        ];
        let mut worst = 0.0f64;
        for (shape, mix) in cases {
            for seed in 0..20u64 {
                let mut m = FlowModel::new(flow_config(shape, 2, 2, mix.clone(), seed))?;
                m.perturb(seed + 100, 0.1)?;
                let x = normal_vec(&mut rng::seeded(seed), shape.numel());
                let back = m.decode(&m.encode(&x)?)?;
                worst = worst.max(max_abs(&x, &back));
            }
        }
        Ok(worst)
    })
}

/// One row per model variant. The error is the largest
/// `|analytic - numeric| / (1e-5 |analytic| + 1e-8)`, so the tolerance is 1.
pub fn gradients(points: usize) -> Result<Vec<CheckResult>> {
    let start = Instant::now();
    let rows = gradcheck::standard_suite(points)?;
    let elapsed = start.elapsed() / rows.len().max(1) as u32;
    Ok(rows
        .into_iter()
        .map(|(name, r)| CheckResult {
            name: format!("grad_{name}"),
            max_err: r.max_ratio,
            tol: 1.0,
            elapsed,
        })
        .collect())
}
