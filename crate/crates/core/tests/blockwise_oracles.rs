use butterflow::blockwise::{onebyone_equivalent, BlockPair, BlockwiseFactor, BlockwiseLayer, LuMatrix};
use butterflow::butterfly::{ButterflyFactor, Init};
use butterflow::dense::DenseMatrix;
use butterflow::oracle::{dense_log_abs_det_real, kron_identity};
use butterflow::rng;
use rand::Rng;
use rand_distr::StandardNormal;

fn normal(g: &mut impl Rng) -> f64 {
    g.sample(StandardNormal)
}

fn random_pair(c: usize, g: &mut impl Rng) -> BlockPair<f64> {
    let mut p = BlockPair::identity(c);
    let lu = |g: &mut dyn rand::RngCore| {
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
    };
    p.y = lu(g);
    p.z = lu(g);
    p.x = DenseMatrix::from_fn(c, c, |_, _| 0.5 * normal(g));
    p.w = DenseMatrix::from_fn(c, c, |_, _| 0.5 * normal(g));
    p
}

fn random_factor(level: usize, dim: usize, c: usize, seed: u64) -> BlockwiseFactor<f64> {
    let mut g = rng::seeded(seed);
    let groups = dim / c;
    let pairs = (0..groups / 2).map(|_| random_pair(c, &mut g)).collect();
    BlockwiseFactor::from_pairs(level, dim, c, pairs).unwrap()
}

fn random_vec(seed: u64, n: usize) -> Vec<f64> {
    let mut g = rng::seeded(seed);
    (0..n).map(|_| normal(&mut g)).collect()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Checks that every `(j, jhat)` channel slice has the naive level-`i`
/// pattern on `G` points, and nothing else is non-zero.
fn satisfies_submatrix_condition(dense: &DenseMatrix<f64>, level: usize, c: usize) -> bool {
    let d = dense.rows();
    let g = d / c;
    let block = g >> (level - 1);
    let half = block / 2;
    for r in 0..d {
        for col in 0..d {
            let (lr, lc) = (r / c, col / c);
            let allowed = lr / block == lc / block && (lr % block) % half == (lc % block) % half;
            if !allowed && dense[(r, col)] != 0.0 {
                return false;
            }
        }
    }
    true
}

#[test]
fn figure_three_configuration_identity() {
    for level in 1..=3 {
        let f = BlockwiseFactor::<f64>::new(level, 24, 3, Init::Identity, 0).unwrap();
        assert_eq!(f.to_dense(), DenseMatrix::identity(24));
    }
}

#[test]
fn submatrix_condition_on_seeded_rotation() {
    let f = BlockwiseFactor::<f64>::new(2, 16, 2, Init::Rotation, 9).unwrap();
    assert!(satisfies_submatrix_condition(&f.to_dense(), 2, 2));
    for level in 1..=3 {
        let r = random_factor(level, 24, 3, level as u64);
        assert!(satisfies_submatrix_condition(&r.to_dense(), level, 3));
    }
}

#[test]
fn block_size_one_matches_naive_bitwise() {
    for seed in 0..20 {
        let b = random_factor(2, 16, 1, seed);
        let naive: ButterflyFactor<f64> = b.to_naive().unwrap();
        let x = random_vec(seed + 100, 16);
        assert_eq!(b.matvec(&x).unwrap(), naive.matvec(&x).unwrap());
        assert!((b.log_det() - naive.log_det().log_abs).abs() <= 1e-12);
        let inv_b = b.invert_apply(&x).unwrap();
        let inv_n = naive.invert().unwrap().matvec(&x).unwrap();
        assert!(max_abs(&inv_b, &inv_n) <= 1e-10);
    }
}

#[test]
fn dense_oracle_agreement() {
    for c in 1..=4usize {
        for dim in [8usize, 16, 24, 32, 48, 64] {
            if dim % (2 * c) != 0 {
                continue;
            }
            let groups = dim / c;
            for level in 1..=3usize {
                if groups % (1 << level) != 0 {
                    continue;
                }
                for seed in 0..50u64 {
                    let f = random_factor(level, dim, c, seed * 31 + level as u64);
                    let dense = f.to_dense();
                    let x = random_vec(seed, dim);
                    let y = f.matvec(&x).unwrap();
                    assert!(max_abs(&y, &dense.matvec(&x)) <= 1e-11);
                    let ys = f.matvec_structured(&x).unwrap();
                    assert!(max_abs(&y, &ys) <= 1e-12);
                    let ld = dense_log_abs_det_real(&dense);
                    assert!((f.log_det() - ld).abs() <= 1e-9 * ld.abs().max(1.0));
                    let back = f.invert_apply(&y).unwrap();
                    assert!(max_abs(&back, &x) <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn log_det_is_finite_for_extreme_parameters() {
    let mut f = random_factor(1, 8, 2, 3);
    f.update_pairs(|pairs| {
        for p in pairs {
            p.y.log_s = vec![-300.0, 250.0];
            p.z.upper = vec![1e200; 4];
        }
    });
    assert!(f.log_det().is_finite());
}

#[test]
fn one_by_one_equals_kronecker() {
    let mut g = rng::seeded(5);
    let w = loop {
        let m = DenseMatrix::from_fn(3, 3, |_, _| normal(&mut g));
        if let Ok(lu) = LuMatrix::from_dense(&m) {
            break (m, lu);
        }
    };
    let f = onebyone_equivalent(&w.1, 16).unwrap();
    assert!(f.to_dense().max_abs_diff(&kron_identity(16, &w.0)) <= 1e-12);
    let eye = onebyone_equivalent(&LuMatrix::<f64>::identity(3), 8).unwrap();
    assert_eq!(eye.to_dense(), DenseMatrix::identity(24));
}

#[test]
fn layer_round_trip_and_log_det() {
    let factors = (1..=3).map(|l| random_factor(l, 32, 4, l as u64 + 40)).collect();
    let layer = BlockwiseLayer::new(factors).unwrap();
    let x = random_vec(1, 32);
    let (y, ld) = layer.apply(&x).unwrap();
    let dense = layer.to_dense();
    assert!(max_abs(&y, &dense.matvec(&x)) <= 1e-10);
    let expect = dense_log_abs_det_real(&dense);
    assert!((ld - expect).abs() <= 1e-9 * expect.abs().max(1.0));
    assert!(max_abs(&layer.invert_apply(&y).unwrap(), &x) <= 1e-9);
}
