//! Minimal dense linear algebra: the row-major [`Matrix`] workhorse, triangular
//! solves, activation scalars, a deterministic [`Rng`], and CSV serialization.
//!
//! Everything downstream (recurrent forms, chunkwise kernels, gradients, the
//! trainable layer) is built from this module. All arithmetic is `f64`.

mod csv;
mod matrix;
mod rng;

pub use csv::{load_matrix_csv, read_matrix_csv, save_matrix_csv, write_matrix_csv};
pub use matrix::Matrix;
pub use rng::Rng;

use crate::error::{Error, Result};

/// Dot product of two equally sized slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm of a slice.
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`, elementwise over equally sized slices.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Logistic sigmoid `1 / (1 + e^-x)`.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU activation `x * sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of SiLU with respect to its input.
pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Solves `(I + strict_lower(l)) * X = b` by forward substitution.
///
/// Only the strictly lower triangle of `l` is read; the diagonal is taken as
/// an implicit 1 and anything above it is ignored. `b` may have any number of
/// columns, so a single call solves against a whole right-hand-side block.
pub fn solve_unit_lower_triangular(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    if l.cols() != n {
        return Err(Error::shape(
            "solve_unit_lower_triangular",
            format!("l must be square, got {}x{}", l.rows(), l.cols()),
        ));
    }
    if b.rows() != n {
        return Err(Error::shape(
            "solve_unit_lower_triangular",
            format!("rhs has {} rows, expected {}", b.rows(), n),
        ));
    }
    let mut x = b.clone();
    for i in 0..n {
        let (solved, rest) = x.data_mut().split_at_mut(i * b.cols());
        let row_i = &mut rest[..b.cols()];
        for j in 0..i {
            let lij = l[(i, j)];
            if lij != 0.0 {
                axpy(-lij, &solved[j * b.cols()..(j + 1) * b.cols()], row_i);
            }
        }
    }
    Ok(x)
}

/// Solves `(I + strict_lower(l))^T * X = b` by backward substitution.
///
/// Reads the same strictly lower storage as [`solve_unit_lower_triangular`];
/// the transposed system is upper triangular with unit diagonal.
pub fn solve_unit_lower_transposed(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    if l.cols() != n {
        return Err(Error::shape(
            "solve_unit_lower_transposed",
            format!("l must be square, got {}x{}", l.rows(), l.cols()),
        ));
    }
    if b.rows() != n {
        return Err(Error::shape(
            "solve_unit_lower_transposed",
            format!("rhs has {} rows, expected {}", b.rows(), n),
        ));
    }
    let mut x = b.clone();
    for i in (0..n).rev() {
        let (head, tail) = x.data_mut().split_at_mut((i + 1) * b.cols());
        let row_i = &mut head[i * b.cols()..];
        for j in i + 1..n {
            // (l^T)[i, j] = l[j, i]
            let lji = l[(j, i)];
            if lji != 0.0 {
                axpy(-lji, &tail[(j - i - 1) * b.cols()..(j - i) * b.cols()], row_i);
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_at_zero_and_asymptote() {
        assert_eq!(silu(0.0), 0.0);
        assert!((silu(20.0) - 20.0).abs() < 1e-6);
    }

    #[test]
    fn silu_matches_high_precision_value() {
        // sigmoid(-1) = 1/(1+e) = 0.26894142136999512...
        let expected = -0.268_941_421_369_995_1;
        assert!((silu(-1.0) - expected).abs() <= 1e-12);
    }

    #[test]
    fn silu_deriv_matches_central_difference() {
        let h = 1e-6;
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((silu_deriv(x) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn unit_lower_solve_identity_system() {
        let l = Matrix::zeros(3, 3);
        let b = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = solve_unit_lower_triangular(&l, &b).unwrap();
        assert_eq!(x.data(), b.data());
    }

    #[test]
    fn unit_lower_solve_closed_form_2x2() {
        // l21 = a: x = [b1, b2 - a*b1]
        let a = 0.75;
        let mut l = Matrix::zeros(2, 2);
        l[(1, 0)] = a;
        let b = Matrix::from_vec(2, 1, vec![2.0, 5.0]).unwrap();
        let x = solve_unit_lower_triangular(&l, &b).unwrap();
        assert_eq!(x[(0, 0)], 2.0);
        assert_eq!(x[(1, 0)], 5.0 - a * 2.0);
    }

    #[test]
    fn unit_lower_solve_ignores_diagonal_and_upper() {
        let mut l = Matrix::zeros(2, 2);
        l[(0, 0)] = 99.0;
        l[(0, 1)] = -7.0;
        l[(1, 1)] = 42.0;
        l[(1, 0)] = 0.5;
        let b = Matrix::from_vec(2, 1, vec![1.0, 1.0]).unwrap();
        let x = solve_unit_lower_triangular(&l, &b).unwrap();
        assert_eq!(x[(0, 0)], 1.0);
        assert_eq!(x[(1, 0)], 0.5);
    }

    #[test]
    fn transposed_solve_multiplies_back() {
        let mut rng = Rng::new(11);
        let n = 8;
        let l = Matrix::random_uniform(n, n, -1.0, 1.0, &mut rng);
        // only strict lower is semantic
        let b = Matrix::random_uniform(n, 3, -1.0, 1.0, &mut rng);
        let x = solve_unit_lower_transposed(&l, &b).unwrap();
        // build (I + strict_lower)^T explicitly and multiply back
        let mut m = l.tril(true).unwrap().transpose();
        for i in 0..n {
            m[(i, i)] += 1.0;
        }
        let back = m.matmul(&x).unwrap();
        assert!(back.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn solve_shape_errors() {
        let l = Matrix::zeros(3, 2);
        let b = Matrix::zeros(3, 1);
        assert!(solve_unit_lower_triangular(&l, &b).is_err());
        let l = Matrix::zeros(3, 3);
        let b = Matrix::zeros(2, 1);
        assert!(solve_unit_lower_triangular(&l, &b).is_err());
        assert!(solve_unit_lower_transposed(&l, &b).is_err());
    }
}
