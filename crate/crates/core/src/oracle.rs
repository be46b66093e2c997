//! Dense reference computations used to cross-check the structured fast
//! paths. Everything here is deliberately naive (O(D^2) or O(D^3)) and shares
//! no code with the kernels it checks; the LU factorisation comes from
//! `nalgebra`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dense::DenseMatrix;
use crate::scalar::Scalar;

fn to_nalgebra<T: Scalar>(m: &DenseMatrix<T>) -> DMatrix<Complex64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)].to_c64())
}

/// `log|det M|` via partial-pivot LU; `-inf` for exactly singular input.
pub fn dense_log_abs_det<T: Scalar>(m: &DenseMatrix<T>) -> f64 {
    assert_eq!(m.rows(), m.cols());
    let lu = to_nalgebra(m).lu();
    lu.u().diagonal().iter().map(|d| d.norm().ln()).sum()
}

/// `log|det M|` for a real matrix, computed in real arithmetic.
pub fn dense_log_abs_det_real(m: &DenseMatrix<f64>) -> f64 {
    assert_eq!(m.rows(), m.cols());
    let a = DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)]);
    a.lu().u().diagonal().iter().map(|d| d.abs().ln()).sum()
}

/// Dense inverse, `None` when singular.
pub fn dense_inverse(m: &DenseMatrix<f64>) -> Option<DenseMatrix<f64>> {
    let a = DMatrix::from_fn(m.rows(), m.cols(), |r, c| m[(r, c)]);
    let inv = a.try_inverse()?;
    Some(DenseMatrix::from_fn(m.rows(), m.cols(), |r, c| inv[(r, c)]))
}

/// `C[n][m] = k[(n - m) mod D]`.
pub fn circulant_matrix(kernel: &[Complex64]) -> DenseMatrix<Complex64> {
    let d = kernel.len();
    DenseMatrix::from_fn(d, d, |n, m| kernel[(n + d - m) % d])
}

/// Direct O(D^2) circular convolution `y[n] = sum_m k[(n - m) mod D] x[m]`.
pub fn circular_convolution(kernel: &[Complex64], x: &[Complex64]) -> Vec<Complex64> {
    let d = kernel.len();
    assert_eq!(d, x.len());
    (0..d)
        .map(|n| (0..d).map(|m| kernel[(n + d - m) % d] * x[m]).sum())
        .collect()
}

/// `I_G (x) W`.
pub fn kron_identity(groups: usize, w: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    let c = w.rows();
    DenseMatrix::from_fn(groups * c, groups * c, |r, col| {
        if r / c == col / c {
            w[(r % c, col % c)]
        } else {
            0.0
        }
    })
}

/// Central-difference Jacobian `J[i][j] = d f_i / d x_j`.
pub fn numerical_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DenseMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = DenseMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Max-norm of `A - I`.
pub fn distance_to_identity<T: Scalar>(a: &DenseMatrix<T>) -> f64 {
    a.max_abs_diff(&DenseMatrix::identity(a.rows())).to_c64().re
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_of_diagonal() {
        let m = DenseMatrix::from_fn(3, 3, |r, c| if r == c { (r + 2) as f64 } else { 0.0 });
        assert!((dense_log_abs_det(&m) - 24f64.ln()).abs() < 1e-14);
        assert!((dense_log_abs_det_real(&m) - 24f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn jacobian_of_linear_map() {
        let j = numerical_jacobian(|x| vec![2.0 * x[0] + x[1], -x[1]], &[0.3, 0.4], 1e-5);
        assert!((j[(0, 0)] - 2.0).abs() < 1e-9);
        assert!((j[(0, 1)] - 1.0).abs() < 1e-9);
        assert!((j[(1, 1)] + 1.0).abs() < 1e-9);
    }
}
