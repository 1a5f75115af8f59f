//! Token-by-token reference implementations.
//!
//! The delta rule treats the state as a fast-weight memory and corrects it
//! toward the incoming value: `S_t = S_{t-1} - beta_t (S_{t-1} k_t - v_t) k_t^T`,
//! equivalently `S_{t-1} (I - beta_t k_t k_t^T) + beta_t v_t k_t^T`. Vanilla
//! linear attention keeps only the additive half: `S_t = S_{t-1} + v_t k_t^T`.
//! Both read out as `o_t = S_t q_t`.
//!
//! These loops are deliberately plain: one step per token, no fusion, no
//! batching. They are the oracle the chunkwise and parallel forms are checked
//! against, and the baseline the benchmark compares to.
//!
//! The state orientation is fixed crate-wide as `d_v x d_k` with `o = S q`.
//! The chunkwise module occasionally works with the transpose internally and
//! converts at its boundaries.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, Matrix, Rng};

use std::sync::atomic::{AtomicUsize, Ordering};

/// Per-head stacked inputs: queries, keys, values (`L x d` each) and the
/// per-token writing strength `beta` (length `L`, in `[0, 1]`).
///
/// Fields are public so tests and gradient checks can perturb individual
/// entries; [`HeadSequence::validate`] checks the invariants after such edits.
#[derive(Debug, Clone)]
pub struct HeadSequence {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub beta: Vec<f64>,
}

impl HeadSequence {
    pub fn new(q: Matrix, k: Matrix, v: Matrix, beta: Vec<f64>) -> Result<Self> {
        let seq = HeadSequence { q, k, v, beta };
        seq.check_dims("HeadSequence::new")?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.q.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_k(&self) -> usize {
        self.k.cols()
    }

    pub fn d_v(&self) -> usize {
        self.v.cols()
    }

    pub(crate) fn check_dims(&self, op: &'static str) -> Result<()> {
        let l = self.q.rows();
        if self.k.rows() != l || self.v.rows() != l || self.beta.len() != l {
            return Err(Error::shape(
                op,
                format!(
                    "row counts differ: q {}, k {}, v {}, beta {}",
                    l,
                    self.k.rows(),
                    self.v.rows(),
                    self.beta.len()
                ),
            ));
        }
        if self.q.cols() != self.k.cols() {
            return Err(Error::shape(
                op,
                format!("q cols {} != k cols {}", self.q.cols(), self.k.cols()),
            ));
        }
        Ok(())
    }

    /// Full invariant check: consistent dims, finite entries, beta in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        self.check_dims("HeadSequence::validate")?;
        if !(self.q.is_finite() && self.k.is_finite() && self.v.is_finite()) {
            return Err(Error::NonFinite {
                op: "HeadSequence::validate",
            });
        }
        for (t, &b) in self.beta.iter().enumerate() {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::domain(
                    "HeadSequence::validate",
                    format!("beta[{t}] = {b} outside [0, 1]"),
                ));
            }
        }
        Ok(())
    }

    /// Random sequence with arbitrary (unnormalized) entries; beta in `[0, 1)`.
    pub fn random(l: usize, d_k: usize, d_v: usize, rng: &mut Rng) -> Self {
        HeadSequence {
            q: Matrix::random_uniform(l, d_k, -1.0, 1.0, rng),
            k: Matrix::random_uniform(l, d_k, -1.0, 1.0, rng),
            v: Matrix::random_uniform(l, d_v, -1.0, 1.0, rng),
            beta: (0..l).map(|_| rng.next_f64()).collect(),
        }
    }

    /// Random sequence with L2-normalized query/key rows, matching what the
    /// neural layer feeds the kernel.
    pub fn random_normalized(l: usize, d_k: usize, d_v: usize, rng: &mut Rng) -> Self {
        let mut seq = Self::random(l, d_k, d_v, rng);
        seq.q = seq.q.l2_normalize_rows(1e-6);
        seq.k = seq.k.l2_normalize_rows(1e-6);
        seq
    }
}

static STATE_LIVE: AtomicUsize = AtomicUsize::new(0);
static STATE_PEAK: AtomicUsize = AtomicUsize::new(0);

/// Instrumentation for the fast-weight state allocation contract.
///
/// Every live [`StateMatrix`] is counted; `peak()` reports the high-water mark
/// since the last [`reset_peak`](state_count::reset_peak). The chunkwise
/// backward promises to hold only the chunk-boundary states plus a constant,
/// and its test asserts that through these counters. Counts are process-wide,
/// so measurements need a process (or test binary) to themselves.
pub mod state_count {
    use super::*;

    pub fn live() -> usize {
        STATE_LIVE.load(Ordering::Relaxed)
    }

    pub fn peak() -> usize {
        STATE_PEAK.load(Ordering::Relaxed)
    }

    pub fn reset_peak() {
        STATE_PEAK.store(STATE_LIVE.load(Ordering::Relaxed), Ordering::Relaxed);
    }

    pub(super) fn on_create() {
        let live = STATE_LIVE.fetch_add(1, Ordering::Relaxed) + 1;
        STATE_PEAK.fetch_max(live, Ordering::Relaxed);
    }

    pub(super) fn on_drop() {
        STATE_LIVE.fetch_sub(1, Ordering::Relaxed);
    }
}

/// The fast-weight memory `S`, shape `d_v x d_k`, read out as `o = S q`.
#[derive(Debug)]
pub struct StateMatrix {
    m: Matrix,
}

impl StateMatrix {
    pub fn zeros(d_v: usize, d_k: usize) -> Self {
        Self::from_matrix(Matrix::zeros(d_v, d_k))
    }

    pub fn from_matrix(m: Matrix) -> Self {
        state_count::on_create();
        StateMatrix { m }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn into_matrix(mut self) -> Matrix {
        std::mem::take(&mut self.m)
    }

    pub fn d_v(&self) -> usize {
        self.m.rows()
    }

    pub fn d_k(&self) -> usize {
        self.m.cols()
    }

    /// Memory read-out `S q`.
    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        assert_eq!(q.len(), self.d_k());
        (0..self.d_v()).map(|i| dot(self.m.row(i), q)).collect()
    }
}

impl Clone for StateMatrix {
    fn clone(&self) -> Self {
        Self::from_matrix(self.m.clone())
    }
}

impl Drop for StateMatrix {
    fn drop(&mut self) {
        state_count::on_drop();
    }
}

/// One delta-rule update: `S' = S - beta (S k - v) k^T`.
///
/// The input state is left untouched. `beta = 0` returns the state unchanged;
/// `beta = 1` with a unit-norm key removes the old association completely, so
/// `S' k = v` exactly.
pub fn delta_step(state: &StateMatrix, k: &[f64], v: &[f64], beta: f64) -> Result<StateMatrix> {
    if k.len() != state.d_k() || v.len() != state.d_v() {
        return Err(Error::shape(
            "delta_step",
            format!(
                "state {}x{}, k {}, v {}",
                state.d_v(),
                state.d_k(),
                k.len(),
                v.len()
            ),
        ));
    }
    let mut next = state.m.clone();
    for i in 0..state.d_v() {
        let err = beta * (dot(state.m.row(i), k) - v[i]);
        let row = next.row_mut(i);
        for (j, &kj) in k.iter().enumerate() {
            row[j] -= err * kj;
        }
    }
    Ok(StateMatrix::from_matrix(next))
}

/// Runs the delta-rule recurrence over a whole sequence from state `s0`,
/// producing the stacked outputs `o_t = S_t q_t` and the final state.
///
/// Cost is `O(L d_k d_v)` with a strictly sequential time loop.
pub fn delta_recurrent_forward(
    seq: &HeadSequence,
    s0: &StateMatrix,
) -> Result<(Matrix, StateMatrix)> {
    seq.check_dims("delta_recurrent_forward")?;
    check_state(s0, seq, "delta_recurrent_forward")?;
    let mut state = s0.clone();
    let mut out = Matrix::zeros(seq.len(), seq.d_v());
    for t in 0..seq.len() {
        state = delta_step(&state, seq.k.row(t), seq.v.row(t), seq.beta[t])?;
        let o = state.apply(seq.q.row(t));
        out.row_mut(t).copy_from_slice(&o);
    }
    Ok((out, state))
}

/// Vanilla linear attention: `S_t = S_{t-1} + v_t k_t^T`, `o_t = S_t q_t`.
/// The beta gate is ignored.
pub fn linear_attention_recurrent_forward(
    seq: &HeadSequence,
    s0: &StateMatrix,
) -> Result<(Matrix, StateMatrix)> {
    seq.check_dims("linear_attention_recurrent_forward")?;
    check_state(s0, seq, "linear_attention_recurrent_forward")?;
    let mut state = s0.clone();
    let mut out = Matrix::zeros(seq.len(), seq.d_v());
    for t in 0..seq.len() {
        let k = seq.k.row(t);
        let v = seq.v.row(t);
        let mut next = state.m.clone();
        for i in 0..next.rows() {
            let vi = v[i];
            let row = next.row_mut(i);
            for (j, &kj) in k.iter().enumerate() {
                row[j] += vi * kj;
            }
        }
        state = StateMatrix::from_matrix(next);
        let o = state.apply(seq.q.row(t));
        out.row_mut(t).copy_from_slice(&o);
    }
    Ok((out, state))
}

fn check_state(s0: &StateMatrix, seq: &HeadSequence, op: &'static str) -> Result<()> {
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

/// Checks the spectrum of the transition `I - beta k k^T`.
///
/// Returns the analytic non-unit eigenvalue `1 - beta * ||k||^2` together with
/// a residual that verifies it: the larger of
/// `||(I - beta k k^T) k - (1 - beta ||k||^2) k||` and the deviation of a
/// deterministically chosen vector orthogonal to `k` from being fixed. Every
/// direction orthogonal to `k` has eigenvalue exactly 1.
pub fn transition_spectrum_check(k: &[f64], beta: f64) -> Result<(f64, f64)> {
    let n2 = dot(k, k);
    if n2 == 0.0 {
        return Err(Error::domain(
            "transition_spectrum_check",
            "key must be nonzero",
        ));
    }
    let eig = 1.0 - beta * n2;

    // residual on k itself: (I - beta k k^T) k = (1 - beta ||k||^2) k exactly,
    // up to rounding
    let mut res_k = 0.0f64;
    for (i, &ki) in k.iter().enumerate() {
        let applied = ki - beta * k[i] * n2;
        res_k += (applied - eig * ki) * (applied - eig * ki);
    }
    let mut residual = res_k.sqrt();

    // a vector orthogonal to k: take the basis vector least aligned with k and
    // project out the k component
    if k.len() > 1 {
        let (arg_min, _) = k
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap();
        let mut p: Vec<f64> = k.iter().map(|&ki| -k[arg_min] * ki / n2).collect();
        p[arg_min] += 1.0;
        let pn = norm2(&p);
        if pn > 0.0 {
            let kp = dot(k, &p);
            // (I - beta k k^T) p - p = -beta (k . p) k
            let res_orth = beta.abs() * kp.abs() * n2.sqrt() / pn;
            residual = residual.max(res_orth);
        }
    }
    Ok((eig, residual))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(mut v: Vec<f64>) -> Vec<f64> {
        let n = norm2(&v);
        for x in &mut v {
            *x /= n;
        }
        v
    }

    #[test]
    fn delta_step_beta_zero_is_identity() {
        let mut rng = Rng::new(1);
        let s = StateMatrix::from_matrix(Matrix::random_uniform(3, 4, -1.0, 1.0, &mut rng));
        let k = vec![0.3, -0.2, 0.9, 0.1];
        let v = vec![1.0, 2.0, 3.0];
        let s2 = delta_step(&s, &k, &v, 0.0).unwrap();
        assert_eq!(s.matrix(), s2.matrix());
    }

    #[test]
    fn delta_step_writes_outer_product_from_zero_state() {
        // S = 0, beta = 1, k = e1: S' = v e1^T
        let s = StateMatrix::zeros(2, 3);
        let k = vec![1.0, 0.0, 0.0];
        let v = vec![5.0, -2.0];
        let s2 = delta_step(&s, &k, &v, 1.0).unwrap();
        let want = Matrix::from_vec(2, 3, vec![5.0, 0.0, 0.0, -2.0, 0.0, 0.0]).unwrap();
        assert_eq!(s2.matrix(), &want);
    }

    #[test]
    fn delta_step_beta_one_reads_back_exactly() {
        // with beta = 1 and a unit key, the old value is completely removed
        let mut rng = Rng::new(2);
        let s = StateMatrix::from_matrix(Matrix::random_uniform(4, 4, -2.0, 2.0, &mut rng));
        let k = unit(vec![0.3, -0.5, 0.7, 0.1]);
        let v = vec![1.5, -0.25, 0.0, 2.0];
        let s2 = delta_step(&s, &k, &v, 1.0).unwrap();
        let read = s2.apply(&k);
        for (a, b) in read.iter().zip(&v) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn delta_step_shape_error() {
        let s = StateMatrix::zeros(2, 3);
        assert!(delta_step(&s, &[1.0, 0.0], &[0.0, 0.0], 0.5).is_err());
        assert!(delta_step(&s, &[1.0, 0.0, 0.0], &[0.0], 0.5).is_err());
    }

    #[test]
    fn forward_single_step_retrieval() {
        // L = 1, s0 = 0, beta = 1, q = k unit norm: o1 = v1
        let k = unit(vec![0.6, -0.3, 0.4]);
        let q = Matrix::from_vec(1, 3, k.clone()).unwrap();
        let km = Matrix::from_vec(1, 3, k).unwrap();
        let v = Matrix::from_vec(1, 2, vec![2.0, -1.0]).unwrap();
        let seq = HeadSequence::new(q, km, v, vec![1.0]).unwrap();
        let (o, _) = delta_recurrent_forward(&seq, &StateMatrix::zeros(2, 3)).unwrap();
        assert!((o[(0, 0)] - 2.0).abs() <= 1e-12);
        assert!((o[(0, 1)] + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn forward_all_beta_zero_gives_zero_output() {
        let mut rng = Rng::new(3);
        let mut seq = HeadSequence::random(5, 4, 3, &mut rng);
        seq.beta = vec![0.0; 5];
        let (o, s) = delta_recurrent_forward(&seq, &StateMatrix::zeros(3, 4)).unwrap();
        assert_eq!(o.abs_max(), 0.0);
        assert_eq!(s.matrix().abs_max(), 0.0);
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        // hand-rolled per-element loop with no matrix types at all
        let mut rng = Rng::new(4);
        let l = 3;
        let (dk, dv) = (2, 2);
        let seq = HeadSequence::random(l, dk, dv, &mut rng);
        let mut s = vec![vec![0.0f64; dk]; dv];
        let mut o_ref = vec![vec![0.0f64; dv]; l];
        for t in 0..l {
            let mut pred = vec![0.0f64; dv];
            for (i, p) in pred.iter_mut().enumerate() {
                for j in 0..dk {
                    *p += s[i][j] * seq.k[(t, j)];
                }
            }
            for i in 0..dv {
                for j in 0..dk {
                    s[i][j] -= seq.beta[t] * (pred[i] - seq.v[(t, i)]) * seq.k[(t, j)];
                }
            }
            for i in 0..dv {
                for j in 0..dk {
                    o_ref[t][i] += s[i][j] * seq.q[(t, j)];
                }
            }
        }
        let (o, _) = delta_recurrent_forward(&seq, &StateMatrix::zeros(dv, dk)).unwrap();
        for t in 0..l {
            for i in 0..dv {
                assert!((o[(t, i)] - o_ref[t][i]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn linear_attention_single_step() {
        let mut rng = Rng::new(5);
        let seq = HeadSequence::random(1, 3, 2, &mut rng);
        let (o, _) = linear_attention_recurrent_forward(&seq, &StateMatrix::zeros(2, 3)).unwrap();
        let kq = dot(seq.k.row(0), seq.q.row(0));
        assert!((o[(0, 0)] - seq.v[(0, 0)] * kq).abs() <= 1e-14);
        assert!((o[(0, 1)] - seq.v[(0, 1)] * kq).abs() <= 1e-14);
    }

    #[test]
    fn linear_attention_orthogonal_keys_retrieve_scaled_value() {
        // keys e1, e2; query k2 at the end retrieves v2 * ||k2||^2
        let k = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let q = Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let v = Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.5, 0.25]).unwrap();
        let seq = HeadSequence::new(q, k, v, vec![1.0, 1.0]).unwrap();
        let (o, _) = linear_attention_recurrent_forward(&seq, &StateMatrix::zeros(2, 2)).unwrap();
        assert!((o[(1, 0)] - 0.5 * 9.0).abs() <= 1e-12);
        assert!((o[(1, 1)] - 0.25 * 9.0).abs() <= 1e-12);
    }

    #[test]
    fn linear_attention_matches_masked_parallel_form() {
        let mut rng = Rng::new(6);
        let seq = HeadSequence::random(8, 4, 4, &mut rng);
        let (o, _) = linear_attention_recurrent_forward(&seq, &StateMatrix::zeros(4, 4)).unwrap();
        let attn = seq.q.matmul_nt(&seq.k).unwrap().tril(false).unwrap();
        let o_par = attn.matmul(&seq.v).unwrap();
        assert!(o.max_abs_diff(&o_par) <= 1e-11 * o.abs_max().max(1.0));
    }

    #[test]
    fn spectrum_projection_case() {
        let k = unit(vec![0.5, 0.5, -0.5, 0.5]);
        let (eig, res) = transition_spectrum_check(&k, 1.0).unwrap();
        assert!(eig.abs() <= 1e-12);
        assert!(res <= 1e-12);
    }

    #[test]
    fn spectrum_beta_zero_is_identity() {
        let k = vec![0.1, 0.2, -0.3];
        let (eig, res) = transition_spectrum_check(&k, 0.0).unwrap();
        assert_eq!(eig, 1.0);
        assert!(res <= 1e-15);
    }

    #[test]
    fn spectrum_half_beta_unit_key() {
        let mut rng = Rng::new(8);
        let k = unit((0..6).map(|_| rng.uniform(-1.0, 1.0)).collect());
        let (eig, res) = transition_spectrum_check(&k, 0.5).unwrap();
        assert!((eig - 0.5).abs() <= 1e-12);
        assert!(res <= 1e-12);
    }

    #[test]
    fn spectrum_zero_key_is_domain_error() {
        assert!(transition_spectrum_check(&[0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn state_boundedness_over_long_random_run() {
        // normalized keys, bounded values, beta in [0, 1]: entries stay small
        let mut rng = Rng::new(9);
        let d = 8;
        let mut state = StateMatrix::zeros(d, d);
        for _ in 0..10_000 {
            let k = unit((0..d).map(|_| rng.uniform(-1.0, 1.0)).collect());
            let v: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let beta = rng.next_f64();
            state = delta_step(&state, &k, &v, beta).unwrap();
            assert!(state.matrix().is_finite());
        }
        assert!(state.matrix().abs_max() < 1e3);
    }

    #[test]
    fn orthonormal_keys_retrieve_exactly() {
        // write (e_i, v_i) with beta = 1, query e_j retrieves v_j
        let d = 4;
        let k = Matrix::identity(d);
        let q = Matrix::identity(d);
        let mut rng = Rng::new(10);
        let v = Matrix::random_uniform(d, d, -1.0, 1.0, &mut rng);
        let seq = HeadSequence::new(q, k.clone(), v.clone(), vec![1.0; d]).unwrap();
        let (_, s) = delta_recurrent_forward(&seq, &StateMatrix::zeros(d, d)).unwrap();
        for j in 0..d {
            let got = s.apply(k.row(j));
            for i in 0..d {
                assert!((got[i] - v[(j, i)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rebinding_contrast_between_delta_and_hebbian() {
        // same key bound twice with beta = 1: delta retrieves the newest
        // value, linear attention the sum of both
        let k = unit(vec![0.2, -0.4, 0.6, 0.1]);
        let q = Matrix::from_vec(3, 4, [k.clone(), k.clone(), k.clone()].concat()).unwrap();
        let km = q.clone();
        let va = vec![1.0, 2.0, 3.0];
        let vb = vec![-0.5, 0.25, 1.0];
        let v = Matrix::from_vec(3, 3, [va.clone(), vb.clone(), vec![0.0; 3]].concat()).unwrap();
        let mut seq = HeadSequence::new(q, km, v, vec![1.0, 1.0, 0.0]).unwrap();
        let (o, _) = delta_recurrent_forward(&seq, &StateMatrix::zeros(3, 4)).unwrap();
        for i in 0..3 {
            assert!((o[(2, i)] - vb[i]).abs() <= 1e-10, "delta keeps newest");
        }
        seq.beta = vec![1.0, 1.0, 1.0];
        let (o, _) = linear_attention_recurrent_forward(&seq, &StateMatrix::zeros(3, 4)).unwrap();
        for i in 0..3 {
            assert!(
                (o[(2, i)] - (va[i] + vb[i])).abs() <= 1e-10,
                "hebbian sums collisions"
            );
        }
    }

    #[test]
    fn validate_rejects_beta_out_of_range() {
        let mut rng = Rng::new(11);
        let mut seq = HeadSequence::random(3, 2, 2, &mut rng);
        seq.beta[1] = 1.5;
        assert!(seq.validate().is_err());
    }
}
