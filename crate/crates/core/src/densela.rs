//! Minimal dense linear algebra on row-major `f64` matrices.
//!
//! Everything the rest of the crate needs: products, norms, a cyclic Jacobi
//! eigensolver for symmetric matrices, and the inverse square root used for
//! whitening. Dimensions here stay in the hundreds, so the kernels favour
//! determinism and robustness over raw speed.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: max |s_ij - s_ji| = {max_asymmetry:e}")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("power iteration did not converge after {iterations} iterations (last estimate {last:e})")]
    NotConverged { iterations: usize, last: f64 },
    #[error("Jacobi sweeps did not converge (off-diagonal mass {off_diagonal:e})")]
    EigNotConverged { off_diagonal: f64 },
    #[error("rank deficient: smallest/largest eigenvalue = {smallest:e}/{largest:e} = {ratio:e}")]
    RankDeficient {
        smallest: f64,
        largest: f64,
        ratio: f64,
    },
    #[error("zero matrix has no dominant singular direction")]
    ZeroMatrix,
    #[error("whitening invariant violated: ||X X^T / m - I||_F = {deviation:e}")]
    NotWhitened { deviation: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Like [`DenseMatrix::new`] but also rejects NaN/Inf entries. Used on I/O paths.
    pub fn new_finite(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::new(rows, cols, data)?;
        m.check_finite()?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    ///
    /// Panics if the rows are ragged; intended for literals and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    /// Copies the given columns into a new `rows x idx.len()` matrix.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn scale_in_place(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: f64, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op: "axpy",
                left: self.shape(),
                right: other.shape(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "hcat",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        }))
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(LinalgError::NonFinite {
                row: k / self.cols.max(1),
                col: k % self.cols.max(1),
            }),
            None => Ok(()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Sum of elementwise products, `tr(self^T other)`.
    pub fn frobenius_dot(&self, other: &Self) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op: "frobenius_dot",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Largest `|s_ij - s_ji|`; only meaningful for square matrices.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = self.row(i).iter().take(8).map(|v| format!("{v:.6e}")).collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

/// Matrix product `a * b`.
///
/// Each entry is accumulated over the inner index in ascending order, starting
/// from `0.0`, so the result is bit-identical to the textbook triple loop. The
/// i-k-j loop order keeps the innermost loop contiguous and vectorizable
/// without changing that order.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, p) = (a.rows, b.cols);
    let mut out = DenseMatrix::zeros(n, p);
    for i in 0..n {
        let out_row = &mut out.data[i * p..(i + 1) * p];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let b_row = &b.data[k * p..(k + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// Blocked product `a * b` for large operands.
///
/// Deterministic for a given build and shape, but the summation order differs
/// from [`matmul`], so results agree only to rounding.
pub fn matmul_blocked(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "matmul_blocked",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    gemm(
        a.rows,
        a.cols,
        b.cols,
        StridedRef::row_major(&a.data, a.cols),
        StridedRef::row_major(&b.data, b.cols),
        &mut out.data,
        0.0,
    );
    Ok(out)
}

/// Read-only view of a matrix buffer with explicit row and column strides.
#[derive(Clone, Copy)]
pub struct StridedRef<'a> {
    pub data: &'a [f64],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> StridedRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_offset(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n` and row-major `c: m x n`.
pub fn gemm(m: usize, k: usize, n: usize, a: StridedRef, b: StridedRef, c: &mut [f64], beta: f64) {
    assert!(c.len() >= m * n, "output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.max_offset(m, k) < a.data.len(), "lhs view out of bounds");
        assert!(b.max_offset(k, n) < b.data.len(), "rhs view out of bounds");
    }
    // SAFETY: the bounds of every view were checked above and `c` does not alias the inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a * b^T` without materializing the transpose.
pub fn matmul_transpose_b(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(LinalgError::DimensionMismatch {
            op: "matmul_transpose_b",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(DenseMatrix::from_fn(a.rows, b.rows, |i, j| {
        a.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum()
    }))
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn vector_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Result of a converged power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value by power iteration on `a^T a`.
///
/// Starts from the normalized all-ones vector; if that vector lies in the
/// null space of `a` the standard basis vectors are tried in order. Stops when
/// the relative change of the estimate drops below `tol`.
pub fn spectral_norm(a: &DenseMatrix, tol: f64, max_iter: usize) -> Result<SpectralNorm> {
    let n = a.cols;
    if n == 0 || a.rows == 0 || a.max_abs() == 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    // Rank-one or thin matrices reduce exactly to a vector norm.
    if a.rows == 1 {
        return Ok(SpectralNorm {
            value: vector_norm(&a.data),
            iterations: 0,
            converged: true,
        });
    }
    if n == 1 {
        return Ok(SpectralNorm {
            value: frobenius_norm(a),
            iterations: 0,
            converged: true,
        });
    }

    let apply = |v: &[f64], av: &mut Vec<f64>, out: &mut Vec<f64>| {
        av.clear();
        av.extend((0..a.rows).map(|i| a.row(i).iter().zip(v).map(|(x, y)| x * y).sum::<f64>()));
        out.clear();
        out.resize(n, 0.0);
        for (i, &s) in av.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(a.row(i)) {
                *o += s * x;
            }
        }
    };

    let mut av = Vec::with_capacity(a.rows);
    let mut next = Vec::with_capacity(n);
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    apply(&v, &mut av, &mut next);
    let mut fallback = 0;
    while vector_norm(&next) == 0.0 {
        if fallback == n {
            return Err(LinalgError::ZeroMatrix);
        }
        v = vec![0.0; n];
        v[fallback] = 1.0;
        fallback += 1;
        apply(&v, &mut av, &mut next);
    }

    // Rayleigh quotient of a^T a at a unit vector is ||a v||^2.
    let mut estimate = vector_norm(&av);
    for it in 1..=max_iter {
        let norm = vector_norm(&next);
        v.iter_mut().zip(&next).for_each(|(vi, &ni)| *vi = ni / norm);
        apply(&v, &mut av, &mut next);
        let updated = vector_norm(&av);
        if (updated - estimate).abs() <= tol * updated {
            return Ok(SpectralNorm {
                value: updated,
                iterations: it,
                converged: true,
            });
        }
        estimate = updated;
    }
    Err(LinalgError::NotConverged {
        iterations: max_iter,
        last: estimate,
    })
}

/// Spectral norm with tolerances suitable for monitoring and envelope checks.
pub fn spectral_norm_default(a: &DenseMatrix) -> Result<f64> {
    spectral_norm(a, 1e-14, 200_000).map(|s| s.value)
}

#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, aligned with `values`.
    pub vectors: DenseMatrix,
}

impl SymEig {
    /// `V diag(f(lambda)) V^T`, symmetrized.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let v = &self.vectors;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += v[(i, k)] * fv[k] * v[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        out
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// `tol` is relative: symmetry is checked against `tol * max(1, max|s|)` and the
/// sweeps stop once the off-diagonal Frobenius mass falls below `tol * ||s||_F`.
pub fn sym_eig(s: &DenseMatrix, tol: f64) -> Result<SymEig> {
    if s.rows != s.cols {
        return Err(LinalgError::NotSquare {
            rows: s.rows,
            cols: s.cols,
        });
    }
    let n = s.rows;
    let asym = s.max_asymmetry();
    if asym > tol * s.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric { max_asymmetry: asym });
    }

    // Work on the symmetrized copy.
    let mut a = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    let mut v = DenseMatrix::identity(n);
    let scale = frobenius_norm(&a);
    let threshold = tol * scale;

    let off_mass = |a: &DenseMatrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        acc.sqrt()
    };

    let mut off = off_mass(&a);
    let mut sweeps = 0;
    while off > threshold && scale > 0.0 {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::EigNotConverged { off_diagonal: off });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        off = off_mass(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEig { values, vectors })
}

/// Tolerance used for the eigendecompositions behind whitening.
pub const EIG_TOL: f64 = 1e-15;

/// `s^{-1/2}` for a symmetric positive definite `s`.
///
/// Fails with [`LinalgError::RankDeficient`] when the smallest eigenvalue is not
/// above `rank_tol` times the largest.
pub fn inv_sqrt_psd(s: &DenseMatrix, rank_tol: f64) -> Result<DenseMatrix> {
    let eig = sym_eig(s, EIG_TOL)?;
    check_rank(&eig, rank_tol)?;
    Ok(eig.reconstruct_with(|l| 1.0 / l.sqrt()))
}

/// `s^{1/2}` for a symmetric positive semidefinite `s` (negative rounding noise clamped).
pub fn sqrt_psd(s: &DenseMatrix) -> Result<DenseMatrix> {
    let eig = sym_eig(s, EIG_TOL)?;
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

pub(crate) fn check_rank(eig: &SymEig, rank_tol: f64) -> Result<()> {
    let largest = eig.values.first().copied().unwrap_or(0.0);
    let smallest = eig.values.last().copied().unwrap_or(0.0);
    if !(largest > 0.0) || smallest <= rank_tol * largest {
        return Err(LinalgError::RankDeficient {
            smallest,
            largest,
            ratio: if largest > 0.0 { smallest / largest } else { 0.0 },
        });
    }
    Ok(())
}

/// Relative tolerance on `X X^T = m I` accepted by [`pinv_whitened`].
pub const WHITENING_TOL: f64 = 1e-6;

/// Deviation `||X X^T / m - I||_F` of a whitened data matrix.
pub fn whitening_deviation(x_tilde: &DenseMatrix, m: usize) -> f64 {
    let gram = matmul_transpose_b(x_tilde, x_tilde).expect("square gram");
    let d = gram.rows();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            let e = gram[(i, j)] / m as f64 - target;
            acc += e * e;
        }
    }
    acc.sqrt()
}

/// Pseudo-inverse of whitened data, `X^T / m`, exact when `X X^T = m I`.
pub fn pinv_whitened(x_tilde: &DenseMatrix, m: usize) -> Result<DenseMatrix> {
    let deviation = whitening_deviation(x_tilde, m);
    if deviation > WHITENING_TOL * (x_tilde.rows() as f64).sqrt() {
        return Err(LinalgError::NotWhitened { deviation });
    }
    Ok(x_tilde.transpose().scale(1.0 / m as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut sum = 0.0;
                for k in 0..a.cols() {
                    sum += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = sum;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_example() {
        let a = random(3, 3, 1);
        assert_eq!(matmul(&DenseMatrix::identity(3), &a).unwrap(), a);
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = DenseMatrix::from_rows(&[&[0.0], &[1.0]]);
        assert_eq!(
            matmul(&a, &b).unwrap(),
            DenseMatrix::from_rows(&[&[2.0], &[4.0]])
        );
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let a = random(7, 5, 2);
        let b = random(5, 3, 3);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn blocked_matmul_agrees_to_rounding() {
        let a = random(37, 19, 4);
        let b = random(19, 23, 5);
        let exact = matmul(&a, &b).unwrap();
        let fast = matmul_blocked(&a, &b).unwrap();
        assert!(frobenius_norm(&exact.sub(&fast).unwrap()) < 1e-13 * frobenius_norm(&exact));
        let mut c = vec![0.0; 19 * 19];
        gemm(19, 37, 19, StridedRef::transposed(a.as_slice(), 19), StridedRef::row_major(a.as_slice(), 19), &mut c, 0.0);
        let ata = matmul(&a.transpose(), &a).unwrap();
        for (x, y) in c.iter().zip(ata.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let err = matmul(&random(2, 3, 1), &random(2, 3, 1)).unwrap_err();
        assert_eq!(
            err,
            LinalgError::DimensionMismatch {
                op: "matmul",
                left: (2, 3),
                right: (2, 3)
            }
        );
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(frobenius_norm(&DenseMatrix::zeros(3, 4)), 0.0);
        assert_relative_eq!(frobenius_norm(&DenseMatrix::identity(3)), 3f64.sqrt());
        assert_eq!(frobenius_norm(&DenseMatrix::from_rows(&[&[3.0, 4.0]])), 5.0);
    }

    #[test]
    fn spectral_norm_examples() {
        let s = spectral_norm(&DenseMatrix::identity(4), 1e-12, 100).unwrap();
        assert_relative_eq!(s.value, 1.0, epsilon = 1e-12);
        let s = spectral_norm(&DenseMatrix::from_diag(&[3.0, 1.0]), 1e-14, 1000).unwrap();
        assert_relative_eq!(s.value, 3.0, epsilon = 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn spectral_norm_falls_back_when_start_vector_is_in_null_space() {
        // All-ones is annihilated by this matrix.
        let a = DenseMatrix::from_rows(&[&[1.0, -1.0], &[2.0, -2.0]]);
        let s = spectral_norm(&a, 1e-14, 1000).unwrap();
        assert_relative_eq!(s.value, frobenius_norm(&a), max_relative = 1e-12);
    }

    #[test]
    fn spectral_norm_agrees_with_jacobi() {
        let a = random(6, 4, 7);
        let tol = 1e-12;
        let s = spectral_norm(&a, tol, 100_000).unwrap();
        let ata = matmul(&a.transpose(), &a).unwrap();
        let eig = sym_eig(&ata, 1e-15).unwrap();
        assert_relative_eq!(s.value, eig.values[0].sqrt(), max_relative = 10.0 * tol);
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        let a = random(6, 6, 9);
        match spectral_norm(&a, 1e-300, 3) {
            Err(LinalgError::NotConverged { iterations: 3, last }) => assert!(last > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sym_eig_examples() {
        let e = sym_eig(&DenseMatrix::from_diag(&[2.0, 1.0]), 1e-14).unwrap();
        assert_eq!(e.values, vec![2.0, 1.0]);
        assert_relative_eq!(e.vectors[(0, 0)].abs(), 1.0);
        let e = sym_eig(&DenseMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]), 1e-14).unwrap();
        assert_relative_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn sym_eig_reconstructs_random_psd() {
        let a = random(8, 8, 11);
        let s = matmul(&a, &a.transpose()).unwrap();
        let tol = 1e-13;
        let e = sym_eig(&s, tol).unwrap();
        let back = e.reconstruct_with(|l| l);
        let resid = frobenius_norm(&back.sub(&s).unwrap()) / frobenius_norm(&s);
        assert!(resid < 10.0 * tol, "residual {resid:e}");
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let s = DenseMatrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]);
        match sym_eig(&s, 1e-10) {
            Err(LinalgError::NotSymmetric { max_asymmetry }) => assert_eq!(max_asymmetry, 2.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inv_sqrt_examples() {
        let m = inv_sqrt_psd(&DenseMatrix::identity(3), 1e-8).unwrap();
        assert!(frobenius_norm(&m.sub(&DenseMatrix::identity(3)).unwrap()) < 1e-14);
        let m = inv_sqrt_psd(&DenseMatrix::from_diag(&[4.0, 9.0]), 1e-8).unwrap();
        assert_relative_eq!(m[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(m[(1, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn inv_sqrt_self_consistency() {
        let a = random(6, 6, 5);
        let sigma = matmul(&a, &a.transpose())
            .unwrap()
            .add(&DenseMatrix::identity(6))
            .unwrap();
        let m = inv_sqrt_psd(&sigma, 1e-8).unwrap();
        let msm = matmul(&matmul(&m, &sigma).unwrap(), &m).unwrap();
        assert!(frobenius_norm(&msm.sub(&DenseMatrix::identity(6)).unwrap()) < 1e-8);
        assert!(m.max_asymmetry() < 1e-10);
    }

    #[test]
    fn inv_sqrt_rank_deficient() {
        let s = DenseMatrix::from_diag(&[1.0, 1e-12]);
        assert!(matches!(
            inv_sqrt_psd(&s, 1e-8),
            Err(LinalgError::RankDeficient { .. })
        ));
    }

    #[test]
    fn pinv_of_scaled_identity() {
        let m = 4;
        let x = DenseMatrix::identity(m).scale((m as f64).sqrt());
        let p = pinv_whitened(&x, m).unwrap();
        let expected = DenseMatrix::identity(m).scale(1.0 / (m as f64).sqrt());
        assert!(frobenius_norm(&p.sub(&expected).unwrap()) < 1e-15);
    }

    #[test]
    fn pinv_rejects_unwhitened() {
        let x = random(3, 10, 1);
        assert!(matches!(
            pinv_whitened(&x, 10),
            Err(LinalgError::NotWhitened { .. })
        ));
    }
}
