//! Causal depthwise convolution ("short convolution").
//!
//! Each channel is filtered independently with a small causal kernel; the
//! input is zero-padded on the left so position `t` sees only positions
//! `<= t`. The last filter tap multiplies the current position, so the
//! impulse filter `[0, 0, 0, 1]` is the identity and `[0, 0, 1, 0]` is a
//! one-step shift, the degenerate shift-SSM case.

use crate::linalg::Matrix;

/// `y[t][c] = sum_j filter[c][j] * x[t - (W-1) + j][c]`, zero left padding.
///
/// `filter` is `channels x width` with one row per channel of `x`.
pub fn causal_depthwise_conv(x: &Matrix, filter: &Matrix) -> Matrix {
    assert_eq!(filter.rows(), x.cols(), "one filter row per channel");
    let (l, d) = (x.rows(), x.cols());
    let width = filter.cols();
    let mut y = Matrix::zeros(l, d);
    for t in 0..l {
        let lo = (width - 1).saturating_sub(t);
        for j in lo..width {
            let src = t + j + 1 - width;
            let x_row = x.row(src);
            let y_row = y.row_mut(t);
            for c in 0..d {
                y_row[c] += filter[(c, j)] * x_row[c];
            }
        }
    }
    y
}

/// Adjoints of [`causal_depthwise_conv`]: gradients for the input and filter.
pub fn causal_depthwise_conv_backward(
    x: &Matrix,
    filter: &Matrix,
    dy: &Matrix,
) -> (Matrix, Matrix) {
    let (l, d) = (x.rows(), x.cols());
    let width = filter.cols();
    let mut dx = Matrix::zeros(l, d);
    let mut dfilter = Matrix::zeros(d, width);
    for t in 0..l {
        let lo = (width - 1).saturating_sub(t);
        for j in lo..width {
            let src = t + j + 1 - width;
            let dy_row = dy.row(t);
            let x_row = x.row(src);
            let dx_row = dx.row_mut(src);
            for c in 0..d {
                dx_row[c] += filter[(c, j)] * dy_row[c];
                dfilter[(c, j)] += x_row[c] * dy_row[c];
            }
        }
    }
    (dx, dfilter)
}

/// Filter that leaves the input unchanged: all weight on the current tap.
pub fn impulse_filter(channels: usize, width: usize) -> Matrix {
    let mut f = Matrix::zeros(channels, width);
    for c in 0..channels {
        f[(c, width - 1)] = 1.0;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::finite_difference_grad;
    use crate::linalg::Rng;
    use crate::verify::oracle;

    #[test]
    fn impulse_filter_is_identity() {
        let mut rng = Rng::new(60);
        let x = Matrix::random_uniform(7, 3, -1.0, 1.0, &mut rng);
        let y = causal_depthwise_conv(&x, &impulse_filter(3, 4));
        assert_eq!(x, y);
    }

    #[test]
    fn shift_filter_delays_by_one() {
        let mut rng = Rng::new(61);
        let x = Matrix::random_uniform(5, 2, -1.0, 1.0, &mut rng);
        let mut f = Matrix::zeros(2, 4);
        f[(0, 2)] = 1.0;
        f[(1, 2)] = 1.0;
        let y = causal_depthwise_conv(&x, &f);
        assert!(y.row(0).iter().all(|&v| v == 0.0));
        for t in 1..5 {
            assert_eq!(y.row(t), x.row(t - 1));
        }
    }

    #[test]
    fn matches_direct_sum_oracle() {
        let mut rng = Rng::new(62);
        let x = Matrix::random_uniform(9, 5, -2.0, 2.0, &mut rng);
        let f = Matrix::random_uniform(5, 4, -1.0, 1.0, &mut rng);
        let y = causal_depthwise_conv(&x, &f);
        let y_ref = oracle::causal_conv_direct(&x, &f);
        assert!(y.max_abs_diff(&y_ref) <= 1e-13);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(63);
        let (l, d, w) = (6, 3, 4);
        let x = Matrix::random_uniform(l, d, -1.0, 1.0, &mut rng);
        let f = Matrix::random_uniform(d, w, -1.0, 1.0, &mut rng);
        // loss = sum(conv(x, f)^2)
        let (dx, df) = {
            let y = causal_depthwise_conv(&x, &f);
            causal_depthwise_conv_backward(&x, &f, &y.scale(2.0))
        };
        let loss = |xv: &[f64], fv: &[f64]| {
            let xm = Matrix::from_vec(l, d, xv.to_vec()).unwrap();
            let fm = Matrix::from_vec(d, w, fv.to_vec()).unwrap();
            let y = causal_depthwise_conv(&xm, &fm);
            y.data().iter().map(|v| v * v).sum::<f64>()
        };
        let fd_x = finite_difference_grad(|xv| loss(xv, f.data()), x.data(), 1e-6).unwrap();
        let fd_f = finite_difference_grad(|fv| loss(x.data(), fv), f.data(), 1e-6).unwrap();
        for (a, n) in dx.data().iter().zip(&fd_x) {
            assert!((a - n).abs() <= 1e-7 * a.abs().max(1.0));
        }
        for (a, n) in df.data().iter().zip(&fd_f) {
            assert!((a - n).abs() <= 1e-7 * a.abs().max(1.0));
        }
    }
}
