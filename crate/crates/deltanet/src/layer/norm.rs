//! Per-position RMS normalization with a learned per-channel gain.

use crate::linalg::{dot, Matrix};

pub const RMS_EPS: f64 = 1e-6;

/// `y[t][c] = gain[c] * x[t][c] / sqrt(mean_c(x[t]^2) + eps)`, rowwise.
pub fn rmsnorm_rows(x: &Matrix, gain: &[f64]) -> Matrix {
    assert_eq!(gain.len(), x.cols());
    let d = x.cols() as f64;
    let mut y = Matrix::zeros(x.rows(), x.cols());
    for t in 0..x.rows() {
        let row = x.row(t);
        let inv = 1.0 / (dot(row, row) / d + RMS_EPS).sqrt();
        let out = y.row_mut(t);
        for c in 0..row.len() {
            out[c] = gain[c] * row[c] * inv;
        }
    }
    y
}

/// Adjoints of [`rmsnorm_rows`]: `(dx, dgain)`.
pub fn rmsnorm_rows_backward(x: &Matrix, gain: &[f64], dy: &Matrix) -> (Matrix, Vec<f64>) {
    assert_eq!(gain.len(), x.cols());
    let d = x.cols() as f64;
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut dgain = vec![0.0; x.cols()];
    for t in 0..x.rows() {
        let row = x.row(t);
        let dyr = dy.row(t);
        let inv = 1.0 / (dot(row, row) / d + RMS_EPS).sqrt();
        // s = sum_c dy_c g_c x_c; dx_j = inv*dy_j*g_j - inv^3 * s * x_j / d
        let mut s = 0.0;
        for c in 0..row.len() {
            s += dyr[c] * gain[c] * row[c];
            dgain[c] += dyr[c] * row[c] * inv;
        }
        let dxr = dx.row_mut(t);
        for c in 0..row.len() {
            dxr[c] = inv * dyr[c] * gain[c] - inv * inv * inv * s * row[c] / d;
        }
    }
    (dx, dgain)
}
