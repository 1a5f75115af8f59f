//! WY representation, UT transform, and the chunkwise-parallel forms.
//!
//! Unrolling the delta recurrence over a chunk of `C` tokens gives a product
//! of generalized Householder transitions. The WY representation expresses
//! that product additively,
//!
//! ```text
//! P_r = (I - b_1 k_1 k_1^T) ... (I - b_r k_r k_r^T) = I - sum_i w_i k_i^T
//! ```
//!
//! with companion vectors `u_i` playing the same role for the state
//! contribution `H_r = sum_i u_i k_i^T`. The `w`/`u` vectors satisfy a
//! sequential recursion; the UT transform turns that recursion into one unit
//! lower-triangular solve plus matrix products,
//!
//! ```text
//! T = (I + tril(diag(b) K K^T, -1))^{-1} diag(b),   W = T K,   U = T V,
//! ```
//!
//! after which a whole chunk advances with a handful of products:
//!
//! ```text
//! X = U - W S^T                                  (pseudo-values vs. state)
//! O = Q S^T + (Q K^T . M) X                      (M inclusive lower tri)
//! S' = S + X^T K
//! ```
//!
//! `C = 1` recovers the recurrence, `C = L` the fully parallel form; every
//! chunk size yields the same outputs as [`delta_recurrent_forward`], which is
//! the central equivalence this crate's test suites keep pinned down.
//!
//! [`delta_recurrent_forward`]: crate::recurrent::delta_recurrent_forward

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_unit_lower_triangular, Matrix};
use crate::recurrent::{HeadSequence, StateMatrix};

/// Per-chunk WY/UT factors.
///
/// `t` is exactly lower triangular with the chunk's beta values on its
/// diagonal; row `r` of `w` and `u` equals the corresponding recursion vector.
#[derive(Debug, Clone)]
pub struct ChunkDecomposition {
    /// `C x C` lower-triangular UT factor.
    pub t: Matrix,
    /// `C x d_k` stacked `w` vectors.
    pub w: Matrix,
    /// `C x d_v` stacked `u` vectors.
    pub u: Matrix,
}

/// A sequence split into fixed-size chunks, zero-padded at the tail.
///
/// Padded positions carry zero `q`/`k`/`v` rows and `beta = 0`, which the
/// delta rule treats as a no-op, so padding changes neither the outputs of
/// real positions nor the final state.
#[derive(Debug, Clone)]
pub struct ChunkedSequence {
    chunks: Vec<HeadSequence>,
    chunk_size: usize,
    orig_len: usize,
    pad_len: usize,
}

impl ChunkedSequence {
    pub fn new(seq: &HeadSequence, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::domain("ChunkedSequence::new", "chunk size must be >= 1"));
        }
        seq.check_dims("ChunkedSequence::new")?;
        let l = seq.len();
        let n_chunks = l.div_ceil(chunk_size).max(1);
        let padded = n_chunks * chunk_size;
        let pad_len = padded - l;

        let mut chunks = Vec::with_capacity(n_chunks);
        for c in 0..n_chunks {
            let start = c * chunk_size;
            let take = chunk_size.min(l.saturating_sub(start));
            let mut q = Matrix::zeros(chunk_size, seq.d_k());
            let mut k = Matrix::zeros(chunk_size, seq.d_k());
            let mut v = Matrix::zeros(chunk_size, seq.d_v());
            let mut beta = vec![0.0; chunk_size];
            for r in 0..take {
                q.row_mut(r).copy_from_slice(seq.q.row(start + r));
                k.row_mut(r).copy_from_slice(seq.k.row(start + r));
                v.row_mut(r).copy_from_slice(seq.v.row(start + r));
                beta[r] = seq.beta[start + r];
            }
            chunks.push(HeadSequence { q, k, v, beta });
        }
        Ok(ChunkedSequence {
            chunks,
            chunk_size,
            orig_len: l,
            pad_len,
        })
    }

    pub fn chunks(&self) -> &[HeadSequence] {
        &self.chunks
    }

    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn orig_len(&self) -> usize {
        self.orig_len
    }

    pub fn pad_len(&self) -> usize {
        self.pad_len
    }

    pub fn d_k(&self) -> usize {
        self.chunks[0].d_k()
    }

    pub fn d_v(&self) -> usize {
        self.chunks[0].d_v()
    }

    /// Concatenates the chunks back, dropping padding.
    pub fn reassemble(&self) -> HeadSequence {
        let (dk, dv) = (self.d_k(), self.d_v());
        let mut q = Matrix::zeros(self.orig_len, dk);
        let mut k = Matrix::zeros(self.orig_len, dk);
        let mut v = Matrix::zeros(self.orig_len, dv);
        let mut beta = vec![0.0; self.orig_len];
        for (c, chunk) in self.chunks.iter().enumerate() {
            for r in 0..self.chunk_size {
                let pos = c * self.chunk_size + r;
                if pos < self.orig_len {
                    q.row_mut(pos).copy_from_slice(chunk.q.row(r));
                    k.row_mut(pos).copy_from_slice(chunk.k.row(r));
                    v.row_mut(pos).copy_from_slice(chunk.v.row(r));
                    beta[pos] = chunk.beta[r];
                }
            }
        }
        HeadSequence { q, k, v, beta }
    }
}

/// The sequential WY recursion:
/// `w_r = b_r (k_r - sum_{i<r} w_i (k_i . k_r))`, likewise `u_r` over `v`.
///
/// Returns the stacked `(W, U)`. This is the reference construction; the UT
/// transform must reproduce it and is checked against it.
pub fn wy_decompose_recursive(k: &Matrix, v: &Matrix, beta: &[f64]) -> Result<(Matrix, Matrix)> {
    let c = check_chunk_dims("wy_decompose_recursive", k, v, beta)?;
    let mut w = Matrix::zeros(c, k.cols());
    let mut u = Matrix::zeros(c, v.cols());
    for r in 0..c {
        let mut wr = k.row(r).to_vec();
        let mut ur = v.row(r).to_vec();
        for i in 0..r {
            let kik = dot(k.row(i), k.row(r));
            crate::linalg::axpy(-kik, w.row(i), &mut wr);
            crate::linalg::axpy(-kik, u.row(i), &mut ur);
        }
        for x in &mut wr {
            *x *= beta[r];
        }
        for x in &mut ur {
            *x *= beta[r];
        }
        w.row_mut(r).copy_from_slice(&wr);
        u.row_mut(r).copy_from_slice(&ur);
    }
    Ok((w, u))
}

/// The UT transform: the WY vectors through one triangular solve.
///
/// `T = (I + tril(diag(beta) K K^T, -1))^{-1} diag(beta)`, `W = T K`,
/// `U = T V`. The inverse is never formed; the unit lower-triangular system is
/// solved by forward substitution against the diagonal right-hand side.
pub fn ut_transform(k: &Matrix, v: &Matrix, beta: &[f64]) -> Result<ChunkDecomposition> {
    let c = check_chunk_dims("ut_transform", k, v, beta)?;
    let k_beta = k.scale_rows(beta);
    let a = k_beta.matmul_nt(k)?.tril(true)?;
    let mut diag = Matrix::zeros(c, c);
    for i in 0..c {
        diag[(i, i)] = beta[i];
    }
    let t = solve_unit_lower_triangular(&a, &diag)?;
    let w = t.matmul(k)?;
    let u = t.matmul(v)?;
    Ok(ChunkDecomposition { t, w, u })
}

/// Reconstructs the Householder product from its WY factors:
/// `P = I - W^T K = (I - b_1 k_1 k_1^T) ... (I - b_C k_C k_C^T)`.
///
/// `w` must come from a decomposition of `(k, beta)`; the base case
/// `w_1 = b_1 k_1` is checked as a cheap guard against mismatched arguments.
pub fn householder_product_wy(k: &Matrix, beta: &[f64], w: &Matrix) -> Result<Matrix> {
    if w.rows() != k.rows() || w.cols() != k.cols() || beta.len() != k.rows() {
        return Err(Error::shape(
            "householder_product_wy",
            format!(
                "k {}x{}, w {}x{}, beta {}",
                k.rows(),
                k.cols(),
                w.rows(),
                w.cols(),
                beta.len()
            ),
        ));
    }
    if k.rows() > 0 {
        let scale = k.row(0).iter().map(|x| x.abs()).fold(1.0f64, f64::max);
        for j in 0..k.cols() {
            if (w[(0, j)] - beta[0] * k[(0, j)]).abs() > 1e-8 * scale {
                return Err(Error::domain(
                    "householder_product_wy",
                    "w is not a WY decomposition of (k, beta): w_1 != beta_1 k_1",
                ));
            }
        }
    }
    let mut p = w.matmul_tn(k)?.scale(-1.0);
    for i in 0..k.cols() {
        p[(i, i)] += 1.0;
    }
    Ok(p)
}

/// Chunkwise-parallel delta-rule forward.
///
/// Equivalent to [`delta_recurrent_forward`] on the unchunked sequence for
/// every chunk size; per-chunk cost is `O(C^2 d + C d^2)`. Returns the outputs
/// for the original (unpadded) positions and the final state.
///
/// The recurrence here is written against the transposed state `S^T`
/// (`d_k x d_v`), which is the orientation the chunk equations use; the
/// conversion from and to the crate-wide `d_v x d_k` [`StateMatrix`] happens
/// once, at entry and exit.
///
/// [`delta_recurrent_forward`]: crate::recurrent::delta_recurrent_forward
pub fn chunkwise_delta_forward(
    seq: &ChunkedSequence,
    s0: &StateMatrix,
) -> Result<(Matrix, StateMatrix)> {
    check_chunk_state(seq, s0, "chunkwise_delta_forward")?;
    let mut st = s0.matrix().transpose(); // d_k x d_v
    let mut out = Matrix::zeros(seq.orig_len(), seq.d_v());
    for (c, chunk) in seq.chunks().iter().enumerate() {
        let dec = ut_transform(&chunk.k, &chunk.v, &chunk.beta)?;
        let x = dec.u.sub(&dec.w.matmul(&st)?)?;
        let attn = chunk.q.matmul_nt(&chunk.k)?.tril(false)?;
        let o = chunk.q.matmul(&st)?.add(&attn.matmul(&x)?)?;
        st.add_assign(&chunk.k.matmul_tn(&x)?);
        copy_chunk_rows(&mut out, &o, c * seq.chunk_size());
    }
    Ok((out, StateMatrix::from_matrix(st.transpose())))
}

/// Fully parallel form: the causal attention matrix `A = (Q K^T . M) T` over
/// the whole sequence, with `T` the full-length UT factor, and `O = A V`.
///
/// `A` is exactly lower triangular. Building `T` costs a cubic triangular
/// solve in `L`, so this form is for inspection and cross-checking at small
/// lengths, not for long sequences.
pub fn parallel_attention_matrix(seq: &HeadSequence) -> Result<(Matrix, Matrix)> {
    seq.check_dims("parallel_attention_matrix")?;
    let dec = ut_transform(&seq.k, &seq.v, &seq.beta)?;
    let attn = seq.q.matmul_nt(&seq.k)?.tril(false)?;
    let a = attn.matmul(&dec.t)?;
    let o = a.matmul(&seq.v)?;
    Ok((a, o))
}

/// Chunkwise form of vanilla linear attention:
/// `O = Q S^T + (Q K^T . M) V`, `S' = S + V^T K`. The baseline the delta
/// variants are benchmarked against.
pub fn chunkwise_linear_attention_forward(
    seq: &ChunkedSequence,
    s0: &StateMatrix,
) -> Result<(Matrix, StateMatrix)> {
    check_chunk_state(seq, s0, "chunkwise_linear_attention_forward")?;
    let mut st = s0.matrix().transpose();
    let mut out = Matrix::zeros(seq.orig_len(), seq.d_v());
    for (c, chunk) in seq.chunks().iter().enumerate() {
        let attn = chunk.q.matmul_nt(&chunk.k)?.tril(false)?;
        let o = chunk.q.matmul(&st)?.add(&attn.matmul(&chunk.v)?)?;
        st.add_assign(&chunk.k.matmul_tn(&chunk.v)?);
        copy_chunk_rows(&mut out, &o, c * seq.chunk_size());
    }
    Ok((out, StateMatrix::from_matrix(st.transpose())))
}

fn copy_chunk_rows(out: &mut Matrix, chunk_out: &Matrix, start: usize) {
    for r in 0..chunk_out.rows() {
        let pos = start + r;
        if pos < out.rows() {
            out.row_mut(pos).copy_from_slice(chunk_out.row(r));
        }
    }
}

fn check_chunk_dims(op: &'static str, k: &Matrix, v: &Matrix, beta: &[f64]) -> Result<usize> {
    let c = k.rows();
    if v.rows() != c || beta.len() != c {
        return Err(Error::shape(
            op,
            format!("k rows {}, v rows {}, beta {}", c, v.rows(), beta.len()),
        ));
    }
    Ok(c)
}

fn check_chunk_state(seq: &ChunkedSequence, s0: &StateMatrix, op: &'static str) -> Result<()> {
    if s0.d_k() != seq.d_k() || s0.d_v() != seq.d_v() {
        return Err(Error::shape(
            op,
            format!(
                "state {}x{} does not match sequence d_v={} d_k={}",
                s0.d_v(),
                s0.d_k(),
                seq.d_v(),
                seq.d_k()
            ),
        ));
    }
    Ok(())
}
