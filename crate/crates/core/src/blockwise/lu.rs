use crate::dense::DenseMatrix;
use crate::error::{invalid, Result};
use crate::scalar::RealScalar;

/// Invertible `n x n` matrix stored as `P L (U + diag(sign * exp(log_s)))`.
///
/// `P` and `sign` are fixed at construction; `L` is unit lower triangular
/// (only the strict lower part is stored), `U` strictly upper triangular.
/// The diagonal never vanishes, so the matrix is invertible for every
/// parameter value and `log|det| = sum(log_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LuMatrix<R: RealScalar> {
    n: usize,
    /// Column `i` of `P` is `e_{perm[i]}`.
    pub perm: Vec<usize>,
    /// Row-major `n x n`; entries on or above the diagonal are ignored.
    pub lower: Vec<R>,
    /// Row-major `n x n`; entries on or below the diagonal are ignored.
    pub upper: Vec<R>,
    pub sign: Vec<R>,
    pub log_s: Vec<R>,
}

impl<R: RealScalar> LuMatrix<R> {
    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![R::one(); n])
    }

    /// Diagonal matrix; panics on a zero entry.
    pub fn diagonal(d: &[R]) -> Self {
        let n = d.len();
        assert!(d.iter().all(|v| *v != R::zero()), "zero on LU diagonal");
        Self {
            n,
            perm: (0..n).collect(),
            lower: vec![R::zero(); n * n],
            upper: vec![R::zero(); n * n],
            sign: d.iter().map(|v| v.signum()).collect(),
            log_s: d.iter().map(|v| v.abs().ln()).collect(),
        }
    }

    /// Partial-pivot LU of an invertible square matrix.
    pub fn from_dense(a: &DenseMatrix<R>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(invalid("LU parameterisation needs a square matrix"));
        }
        let mut m = a.clone();
        let mut rows: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| m[(i, k)].abs().partial_cmp(&m[(j, k)].abs()).unwrap())
                .unwrap();
            if m[(piv, k)] == R::zero() || !m[(piv, k)].is_finite() {
                return Err(invalid("matrix is singular"));
            }
            if piv != k {
                for c in 0..n {
                    let t = m[(k, c)];
                    m[(k, c)] = m[(piv, c)];
                    m[(piv, c)] = t;
                }
                rows.swap(k, piv);
            }
            for i in k + 1..n {
                let f = m[(i, k)] / m[(k, k)];
                m[(i, k)] = f;
                for c in k + 1..n {
                    let v = m[(k, c)];
                    m[(i, c)] -= f * v;
                }
            }
        }
        // Row i of L U is row rows[i] of A, so A = P (L U) with P e_i = e_{rows[i]}.
        let mut lu = Self::identity(n);
        lu.perm = rows;
        for i in 0..n {
            for j in 0..n {
                if i > j {
                    lu.lower[i * n + j] = m[(i, j)];
                } else if i < j {
                    lu.upper[i * n + j] = m[(i, j)];
                }
            }
            lu.sign[i] = m[(i, i)].signum();
            lu.log_s[i] = m[(i, i)].abs().ln();
        }
        Ok(lu)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn diag(&self, i: usize) -> R {
        self.sign[i] * self.log_s[i].exp()
    }

    pub fn log_abs_det(&self) -> R {
        self.log_s.iter().fold(R::zero(), |a, &b| a + b)
    }

    /// `U + diag(sign * exp(log_s))` as a dense upper-triangular matrix.
    pub fn upper_with_diag(&self) -> DenseMatrix<R> {
        let n = self.n;
        DenseMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => self.upper[i * n + j],
            std::cmp::Ordering::Equal => self.diag(i),
            std::cmp::Ordering::Greater => R::zero(),
        })
    }

    pub fn unit_lower(&self) -> DenseMatrix<R> {
        let n = self.n;
        DenseMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lower[i * n + j],
            std::cmp::Ordering::Equal => R::one(),
            std::cmp::Ordering::Less => R::zero(),
        })
    }

    pub fn to_dense(&self) -> DenseMatrix<R> {
        let lu = self.unit_lower().matmul(&self.upper_with_diag());
        let n = self.n;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(self.perm[i], j)] = lu[(i, j)];
            }
        }
        out
    }

    /// `A^{-1} y` by two triangular solves.
    pub fn solve(&self, y: &[R]) -> Vec<R> {
        let n = self.n;
        let mut a: Vec<R> = (0..n).map(|i| y[self.perm[i]]).collect();
        for i in 0..n {
            let mut s = a[i];
            for j in 0..i {
                s -= self.lower[i * n + j] * a[j];
            }
            a[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = a[i];
            for j in i + 1..n {
                s -= self.upper[i * n + j] * a[j];
            }
            a[i] = s / self.diag(i);
        }
        a
    }

    /// Gradients of `<G, A>` with respect to the free parameters, given the
    /// cotangent `G` of the realised matrix: returns `(g_lower, g_upper,
    /// g_log_s)` in the same row-major layout as the storage.
    pub fn backprop(&self, g: &DenseMatrix<R>) -> (Vec<R>, Vec<R>, Vec<R>) {
        let n = self.n;
        // H = P^T G.
        let h = DenseMatrix::from_fn(n, n, |i, j| g[(self.perm[i], j)]);
        let g_l = h.matmul(&self.upper_with_diag().transpose());
        let g_u = self.unit_lower().transpose().matmul(&h);
        let mut gl = vec![R::zero(); n * n];
        let mut gu = vec![R::zero(); n * n];
        let mut gs = vec![R::zero(); n];
        for i in 0..n {
            for j in 0..n {
                if i > j {
                    gl[i * n + j] = g_l[(i, j)];
                } else if i < j {
                    gu[i * n + j] = g_u[(i, j)];
                }
            }
            gs[i] = g_u[(i, i)] * self.diag(i);
        }
        (gl, gu, gs)
    }
}
