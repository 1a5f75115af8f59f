//! Independent reference implementations used only to check the real ones.
//!
//! Everything here trades speed for obviousness and stays off the code paths
//! it certifies: matrix products are explicit triple loops, inverses are
//! Gauss-Jordan, the recurrence is written entry by entry, and the attention
//! matrix is assembled from materialized Householder products. If an oracle
//! and its production counterpart agree, they agree for structural reasons,
//! not because they share code.

use crate::linalg::Matrix;
use crate::recurrent::HeadSequence;

/// Triple-loop matrix product.
pub fn matmul_naive(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
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

/// Gauss-Jordan inverse with partial pivoting. Panics on singular input;
/// the matrices this checks (unit lower triangular plus small perturbations)
/// are always invertible.
pub fn gauss_jordan_inverse(a: &Matrix) -> Matrix {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut work = a.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| {
                work[(r1, col)]
                    .abs()
                    .partial_cmp(&work[(r2, col)].abs())
                    .unwrap()
            })
            .unwrap();
        let pivot = work[(pivot_row, col)];
        assert!(pivot.abs() > 1e-300, "singular matrix in oracle inverse");
        if pivot_row != col {
            for j in 0..n {
                let tmp = work[(col, j)];
                work[(col, j)] = work[(pivot_row, j)];
                work[(pivot_row, j)] = tmp;
                let tmp = inv[(col, j)];
                inv[(col, j)] = inv[(pivot_row, j)];
                inv[(pivot_row, j)] = tmp;
            }
        }
        let scale = 1.0 / work[(col, col)];
        for j in 0..n {
            work[(col, j)] *= scale;
            inv[(col, j)] *= scale;
        }
        for r in 0..n {
            if r != col {
                let factor = work[(r, col)];
                if factor != 0.0 {
                    for j in 0..n {
                        work[(r, j)] -= factor * work[(col, j)];
                        inv[(r, j)] -= factor * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

/// Materialized, ordered product of generalized Householder transitions:
/// `(I - beta_1 k_1 k_1^T)(I - beta_2 k_2 k_2^T) ... (I - beta_r k_r k_r^T)`
/// built one factor at a time.
pub fn householder_product_explicit(k: &Matrix, beta: &[f64], upto: usize) -> Matrix {
    let d = k.cols();
    let mut p = Matrix::identity(d);
    for t in 0..upto {
        let mut factor = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                factor[(i, j)] -= beta[t] * k[(t, i)] * k[(t, j)];
            }
        }
        p = matmul_naive(&p, &factor);
    }
    p
}

/// Attention matrix assembled entrywise from the unrolled recurrence:
/// `A[i][j] = beta_j * k_j^T P_{j+1..i} q_i` for `j <= i`, zero otherwise.
/// The `beta_j` factor is what the masked `(Q K^T) T` matrix form carries
/// inside `T`. Cost is quartic in the sequence length; small inputs only.
pub fn attention_matrix_elementwise(seq: &HeadSequence) -> Matrix {
    let l = seq.len();
    let d = seq.d_k();
    let mut a = Matrix::zeros(l, l);
    for i in 0..l {
        for j in 0..=i {
            // P over positions j+1 ..= i (empty product = identity)
            let mut p = Matrix::identity(d);
            for t in j + 1..=i {
                let mut factor = Matrix::identity(d);
                for r in 0..d {
                    for c in 0..d {
                        factor[(r, c)] -= seq.beta[t] * seq.k[(t, r)] * seq.k[(t, c)];
                    }
                }
                p = matmul_naive(&p, &factor);
            }
            let mut acc = 0.0;
            for r in 0..d {
                for c in 0..d {
                    acc += seq.k[(j, r)] * p[(r, c)] * seq.q[(i, c)];
                }
            }
            a[(i, j)] = seq.beta[j] * acc;
        }
    }
    a
}

/// Causal depthwise convolution written as the direct per-element sum.
pub fn causal_conv_direct(x: &Matrix, filter: &Matrix) -> Matrix {
    let (l, d) = (x.rows(), x.cols());
    let width = filter.cols();
    assert_eq!(filter.rows(), d);
    let mut y = Matrix::zeros(l, d);
    for t in 0..l {
        for c in 0..d {
            let mut acc = 0.0;
            for j in 0..width {
                let src = t as isize - (width as isize - 1) + j as isize;
                if src >= 0 {
                    acc += filter[(c, j)] * x[(src as usize, c)];
                }
            }
            y[(t, c)] = acc;
        }
    }
    y
}
