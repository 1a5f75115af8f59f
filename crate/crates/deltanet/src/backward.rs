//! Analytic reverse-mode gradients for the delta-rule forwards.
//!
//! The forward map is `S_t = S_{t-1}(I - b_t k_t k_t^T) + b_t v_t k_t^T`,
//! `o_t = S_t q_t`. Differentiating each step and accumulating the state
//! adjoint `G_t = dL/dS_t` backward in time gives, per token,
//!
//! ```text
//! G_t   += dO_t q_t^T                     dq_t = S_t^T dO_t
//! dv_t   = b_t G_t k_t                    db_t = (v_t - S_{t-1} k_t)^T G_t k_t
//! dk_t   = b_t (G_t^T (v_t - S_{t-1} k_t) - S_{t-1}^T G_t k_t)
//! G_{t-1} = G_t (I - b_t k_t k_t^T)
//! ```
//!
//! The chunkwise backward pushes the same adjoint through the chunk-level
//! equations instead (UT transform included), so it touches only chunk-sized
//! intermediates plus the chunk-boundary states. Boundary states are the only
//! state-sized values it stores: ceil(L/C) of them, recompute covering the
//! rest. Nothing here is transcribed from a closed-form source; correctness
//! is pinned by the central-difference oracle in [`finite_difference_grad`]
//! and by recurrent/chunkwise cross-agreement.

use crate::chunkwise::ChunkedSequence;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, solve_unit_lower_transposed, solve_unit_lower_triangular, Matrix};
use crate::recurrent::{HeadSequence, StateMatrix};

/// Gradients with respect to a head's stacked inputs.
#[derive(Debug, Clone)]
pub struct GradBundle {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    pub dbeta: Vec<f64>,
}

impl GradBundle {
    pub fn zeros(l: usize, d_k: usize, d_v: usize) -> Self {
        GradBundle {
            dq: Matrix::zeros(l, d_k),
            dk: Matrix::zeros(l, d_k),
            dv: Matrix::zeros(l, d_v),
            dbeta: vec![0.0; l],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dq.is_finite()
            && self.dk.is_finite()
            && self.dv.is_finite()
            && self.dbeta.iter().all(|b| b.is_finite())
    }
}

/// Reverse-mode through the token-by-token recurrence.
///
/// `d_out` is the cotangent of the stacked outputs, `ds_final` that of the
/// final state. Hidden states are recomputed by a fresh forward sweep rather
/// than taken from the caller. Returns input gradients and the adjoint of the
/// initial state.
pub fn delta_recurrent_backward(
    seq: &HeadSequence,
    s0: &StateMatrix,
    d_out: &Matrix,
    ds_final: &StateMatrix,
) -> Result<(GradBundle, StateMatrix)> {
    seq.check_dims("delta_recurrent_backward")?;
    let l = seq.len();
    let (dk_dim, dv_dim) = (seq.d_k(), seq.d_v());
    if d_out.rows() != l || d_out.cols() != dv_dim {
        return Err(Error::shape(
            "delta_recurrent_backward",
            format!("d_out {}x{}, expected {}x{}", d_out.rows(), d_out.cols(), l, dv_dim),
        ));
    }
    if ds_final.d_v() != dv_dim || ds_final.d_k() != dk_dim {
        return Err(Error::shape(
            "delta_recurrent_backward",
            "ds_final does not match state shape".to_string(),
        ));
    }

    // recompute and keep every state; this is the clarity-first oracle path
    let mut states: Vec<Matrix> = Vec::with_capacity(l + 1);
    states.push(s0.matrix().clone());
    for t in 0..l {
        let prev = states.last().unwrap();
        let k = seq.k.row(t);
        let beta = seq.beta[t];
        let mut next = prev.clone();
        for i in 0..dv_dim {
            let err = beta * (dot(prev.row(i), k) - seq.v[(t, i)]);
            let row = next.row_mut(i);
            for (j, &kj) in k.iter().enumerate() {
                row[j] -= err * kj;
            }
        }
        states.push(next);
    }

    let mut grads = GradBundle::zeros(l, dk_dim, dv_dim);
    let mut g = ds_final.matrix().clone();
    for t in (0..l).rev() {
        let q = seq.q.row(t);
        let k = seq.k.row(t);
        let beta = seq.beta[t];
        let d_o = d_out.row(t);
        let s_prev = &states[t];
        let s_cur = &states[t + 1];

        // o_t = S_t q_t
        for i in 0..dv_dim {
            axpy(d_o[i], q, g.row_mut(i));
        }
        let dq = grads.dq.row_mut(t);
        for i in 0..dv_dim {
            axpy(d_o[i], s_cur.row(i), dq);
        }

        // S_t = S_{t-1}(I - b k k^T) + b v k^T
        let gk: Vec<f64> = (0..dv_dim).map(|i| dot(g.row(i), k)).collect();
        let err: Vec<f64> = (0..dv_dim)
            .map(|i| seq.v[(t, i)] - dot(s_prev.row(i), k))
            .collect();
        for i in 0..dv_dim {
            grads.dv[(t, i)] = beta * gk[i];
        }
        grads.dbeta[t] = dot(&err, &gk);
        {
            let dk_row = grads.dk.row_mut(t);
            for i in 0..dv_dim {
                axpy(beta * err[i], g.row(i), dk_row);
                axpy(-beta * gk[i], s_prev.row(i), dk_row);
            }
        }
        for i in 0..dv_dim {
            axpy(-beta * gk[i], k, g.row_mut(i));
        }
    }
    Ok((grads, StateMatrix::from_matrix(g)))
}

/// Reverse-mode through the chunkwise-parallel forward.
///
/// Stores only the chunk-boundary states from a forward sweep (one
/// [`StateMatrix`] per chunk) and recomputes every intra-chunk quantity --
/// the UT factors `T`, `W`, `U`, the masked attention block, and the
/// state-corrected pseudo-values -- inside the reverse sweep. Numerically
/// equal to [`delta_recurrent_backward`] on the same inputs.
pub fn chunkwise_delta_backward(
    seq: &ChunkedSequence,
    s0: &StateMatrix,
    d_out: &Matrix,
    ds_final: &StateMatrix,
) -> Result<(GradBundle, StateMatrix)> {
    let (dk_dim, dv_dim) = (seq.d_k(), seq.d_v());
    let l = seq.orig_len();
    let c = seq.chunk_size();
    if s0.d_k() != dk_dim || s0.d_v() != dv_dim {
        return Err(Error::shape(
            "chunkwise_delta_backward",
            "s0 does not match sequence dims".to_string(),
        ));
    }
    if d_out.rows() != l || d_out.cols() != dv_dim {
        return Err(Error::shape(
            "chunkwise_delta_backward",
            format!("d_out {}x{}, expected {}x{}", d_out.rows(), d_out.cols(), l, dv_dim),
        ));
    }
    if ds_final.d_v() != dv_dim || ds_final.d_k() != dk_dim {
        return Err(Error::shape(
            "chunkwise_delta_backward",
            "ds_final does not match state shape".to_string(),
        ));
    }

    // forward sweep: keep only the state entering each chunk
    let mut boundaries: Vec<StateMatrix> = Vec::with_capacity(seq.n_chunks());
    {
        let mut st = s0.matrix().transpose();
        for chunk in seq.chunks() {
            boundaries.push(StateMatrix::from_matrix(st.transpose()));
            let dec = crate::chunkwise::ut_transform(&chunk.k, &chunk.v, &chunk.beta)?;
            let x = dec.u.sub(&dec.w.matmul(&st)?)?;
            st.add_assign(&chunk.k.matmul_tn(&x)?);
        }
    }

    let mut grads = GradBundle::zeros(l, dk_dim, dv_dim);
    // adjoint of the transposed state (d_k x d_v), matching the chunk algebra
    let mut g = ds_final.matrix().transpose();
    for (ci, chunk) in seq.chunks().iter().enumerate().rev() {
        let start = ci * c;
        let st = boundaries[ci].matrix().transpose();

        // recompute the intra-chunk forward quantities
        let k_beta = chunk.k.scale_rows(&chunk.beta);
        let a_strict = k_beta.matmul_nt(&chunk.k)?.tril(true)?;
        let mut diag = Matrix::zeros(chunk.beta.len(), chunk.beta.len());
        for i in 0..chunk.beta.len() {
            diag[(i, i)] = chunk.beta[i];
        }
        let t_mat = solve_unit_lower_triangular(&a_strict, &diag)?;
        let w = t_mat.matmul(&chunk.k)?;
        let u = t_mat.matmul(&chunk.v)?;
        let x = u.sub(&w.matmul(&st)?)?;
        let attn = chunk.q.matmul_nt(&chunk.k)?.tril(false)?;

        // cotangent rows for this chunk; padded tail rows stay zero
        let mut d_o = Matrix::zeros(chunk.q.rows(), dv_dim);
        for r in 0..chunk.q.rows() {
            if start + r < l {
                d_o.row_mut(r).copy_from_slice(d_out.row(start + r));
            }
        }

        // o = Q st + attn x ; st' = st + K^T x ; x = U - W st
        let dx = chunk.k.matmul(&g)?.add(&attn.matmul_tn(&d_o)?)?;
        let d_attn = d_o.matmul_nt(&x)?.tril(false)?;
        let dw = dx.matmul_nt(&st)?.scale(-1.0);
        let du = &dx;
        let mut dq_chunk = d_o.matmul_nt(&st)?;
        dq_chunk.add_assign(&d_attn.matmul(&chunk.k)?);
        let mut dk_chunk = x.matmul_nt(&g)?;
        dk_chunk.add_assign(&d_attn.matmul_tn(&chunk.q)?);
        dk_chunk.add_assign(&t_mat.matmul_tn(&dw)?);
        let dv_chunk = t_mat.matmul_tn(du)?;

        // through the UT transform: T = (I + A)^{-1} diag(beta)
        let dt = dw.matmul_nt(&chunk.k)?.add(&du.matmul_nt(&chunk.v)?)?;
        let z = solve_unit_lower_transposed(&a_strict, &dt)?;
        let da = z.matmul_nt(&t_mat)?.scale(-1.0).tril(true)?;
        let dk_beta = da.matmul(&chunk.k)?;
        dk_chunk.add_assign(&da.matmul_tn(&k_beta)?);
        dk_chunk.add_assign(&dk_beta.scale_rows(&chunk.beta));

        let mut db_chunk = vec![0.0; chunk.beta.len()];
        for i in 0..chunk.beta.len() {
            db_chunk[i] = z[(i, i)] + dot(dk_beta.row(i), chunk.k.row(i));
        }

        // adjoint of the chunk-initial state
        g.add_assign(&chunk.q.matmul_tn(&d_o)?);
        g.add_assign(&w.matmul_tn(&dx)?.scale(-1.0));

        for r in 0..chunk.q.rows() {
            let pos = start + r;
            if pos < l {
                grads.dq.row_mut(pos).copy_from_slice(dq_chunk.row(r));
                grads.dk.row_mut(pos).copy_from_slice(dk_chunk.row(r));
                grads.dv.row_mut(pos).copy_from_slice(dv_chunk.row(r));
                grads.dbeta[pos] = db_chunk[r];
            }
        }
    }
    Ok((grads, StateMatrix::from_matrix(g.transpose())))
}

/// Central finite differences: `g_i = (f(x + h e_i) - f(x - h e_i)) / 2h`.
///
/// Errors if `f` returns a non-finite value at any probe point.
pub fn finite_difference_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::domain("finite_difference_grad", "h must be positive"));
    }
    let mut x = x0.to_vec();
    let mut grad = Vec::with_capacity(x0.len());
    for i in 0..x0.len() {
        let orig = x[i];
        x[i] = orig + h;
        let f_plus = f(&x);
        x[i] = orig - h;
        let f_minus = f(&x);
        x[i] = orig;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_difference_grad",
            });
        }
        grad.push((f_plus - f_minus) / (2.0 * h));
    }
    Ok(grad)
}
