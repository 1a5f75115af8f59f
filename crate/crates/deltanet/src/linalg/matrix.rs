//! Dense row-major `f64` matrix.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Dense 2-D array of `f64`, stored row-major.
///
/// Row-major layout is fixed and part of the serialized format: entry `(r, c)`
/// lives at `data[r * cols + c]`, and the CSV form writes one row per line.
/// Values are immutable once built unless explicitly mutated through
/// `data_mut`/`IndexMut`; all operations below return new matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data; errors unless `data.len() == rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("data length {} != {}x{}", data.len(), rows, cols),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Entries drawn i.i.d. uniform on `[lo, hi)` from the given generator.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    /// `self * other`. Errors when `self.cols != other.rows`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(gemm(self, other, false, false))
    }

    /// `self * other^T`. Errors when `self.cols != other.cols`.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_nt",
                format!(
                    "{}x{} * ({}x{})^T",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(gemm(self, other, false, true))
    }

    /// `self^T * other`. Errors when `self.rows != other.rows`.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "matmul_tn",
                format!(
                    "({}x{})^T * {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(gemm(self, other, true, false))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("hadamard", other, |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn scale_assign(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Rows scaled by per-row factors: `diag(factors) * self`.
    pub fn scale_rows(&self, factors: &[f64]) -> Matrix {
        assert_eq!(factors.len(), self.rows);
        let mut out = self.clone();
        for (r, &f) in factors.iter().enumerate() {
            for v in out.row_mut(r) {
                *v *= f;
            }
        }
        out
    }

    /// Copy of columns `[c0, c1)` as a new matrix.
    pub fn sub_columns(&self, c0: usize, c1: usize) -> Matrix {
        assert!(c0 <= c1 && c1 <= self.cols);
        let mut out = Matrix::zeros(self.rows, c1 - c0);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[c0..c1]);
        }
        out
    }

    /// Writes `m` into columns starting at `c0`.
    pub fn paste_columns(&mut self, c0: usize, m: &Matrix) {
        assert!(c0 + m.cols <= self.cols);
        assert_eq!(self.rows, m.rows);
        for r in 0..self.rows {
            self.row_mut(r)[c0..c0 + m.cols].copy_from_slice(m.row(r));
        }
    }

    /// Lower-triangular part of a square matrix.
    ///
    /// With `strict` the diagonal is zeroed as well (offset -1); otherwise the
    /// diagonal is kept (inclusive mask).
    pub fn tril(&self, strict: bool) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::shape(
                "tril",
                format!("matrix must be square, got {}x{}", self.rows, self.cols),
            ));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let lo = if strict { r } else { r + 1 };
            for c in lo..self.cols {
                out[(r, c)] = 0.0;
            }
        }
        Ok(out)
    }

    /// Each row divided by `max(norm, eps)`; zero rows stay zero for eps > 0.
    pub fn l2_normalize_rows(&self, eps: f64) -> Matrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            let row = out.row_mut(r);
            let n = crate::linalg::norm2(row);
            let denom = n.max(eps);
            for v in row {
                *v /= denom;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn abs_max(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Largest absolute entry difference; both matrices must share a shape.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape(
                op,
                format!(
                    "{}x{} vs {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(Matrix {
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
}

impl Default for Matrix {
    fn default() -> Self {
        Matrix::zeros(0, 0)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// `a (^T?) * b (^T?)` through `matrixmultiply::dgemm`; transposes are handled
/// with strides so nothing is materialized. Dimensions are checked by callers.
fn gemm(a: &Matrix, b: &Matrix, ta: bool, tb: bool) -> Matrix {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force triple loop; the oracle `matmul` is checked against.
    fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for p in 0..a.cols() {
                    acc += a[(i, p)] * b[(p, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let mut rng = Rng::new(1);
        let x = Matrix::random_uniform(3, 5, -1.0, 1.0, &mut rng);
        let i3 = Matrix::identity(3);
        assert_eq!(i3.matmul(&x).unwrap(), x);
    }

    #[test]
    fn matmul_hand_computed_2x2() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_against_triple_loop_oracle() {
        let mut rng = Rng::new(42);
        let a = Matrix::random_uniform(7, 5, -2.0, 2.0, &mut rng);
        let b = Matrix::random_uniform(5, 3, -2.0, 2.0, &mut rng);
        let got = a.matmul(&b).unwrap();
        let want = matmul_naive(&a, &b);
        assert!(got.max_abs_diff(&want) <= 1e-13);
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn transposed_variants_match_explicit_transpose() {
        let mut rng = Rng::new(7);
        let a = Matrix::random_uniform(6, 4, -1.0, 1.0, &mut rng);
        let b = Matrix::random_uniform(5, 4, -1.0, 1.0, &mut rng);
        let c = Matrix::random_uniform(6, 3, -1.0, 1.0, &mut rng);
        let nt = a.matmul_nt(&b).unwrap();
        assert!(nt.max_abs_diff(&a.matmul(&b.transpose()).unwrap()) <= 1e-13);
        let tn = a.matmul_tn(&c).unwrap();
        assert!(tn.max_abs_diff(&a.transpose().matmul(&c).unwrap()) <= 1e-13);
    }

    #[test]
    fn tril_strict_of_identity_is_zero() {
        let t = Matrix::identity(4).tril(true).unwrap();
        assert_eq!(t.abs_max(), 0.0);
    }

    #[test]
    fn tril_inclusive_keeps_diagonal() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = a.tril(false).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn tril_strict_all_ones_counts_below_diagonal() {
        let j4 = Matrix::from_fn(4, 4, |_, _| 1.0);
        let t = j4.tril(true).unwrap();
        assert_eq!(t.sum(), 6.0);
    }

    #[test]
    fn tril_rejects_non_square() {
        assert!(Matrix::zeros(2, 3).tril(false).is_err());
    }

    #[test]
    fn l2_normalize_row_3_4() {
        let m = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let n = m.l2_normalize_rows(1e-6);
        assert!((n[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((n[(0, 1)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_zero_row_stays_zero() {
        let m = Matrix::zeros(1, 4);
        let n = m.l2_normalize_rows(1e-6);
        assert_eq!(n.abs_max(), 0.0);
    }

    #[test]
    fn l2_normalize_random_rows_have_unit_norm() {
        let mut rng = Rng::new(3);
        let m = Matrix::random_uniform(8, 16, -1.0, 1.0, &mut rng);
        let n = m.l2_normalize_rows(1e-6);
        for r in 0..8 {
            assert!((crate::linalg::norm2(n.row(r)) - 1.0).abs() <= 1e-12);
        }
    }
}
