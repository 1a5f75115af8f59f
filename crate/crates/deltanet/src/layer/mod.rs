//! The DeltaNet neural layer and a small trainable model around it.
//!
//! Per token the layer projects the input to queries, keys, values and a
//! per-head writing strength, optionally passes q/k/v through a short causal
//! convolution, applies SiLU to q/k and L2-normalizes them per head, runs the
//! chunkwise delta-rule mixer per head, RMS-normalizes each head's output
//! with a learned gain, concatenates, and projects back:
//!
//! ```text
//! k_t = silu(W_K x_t) / ||silu(W_K x_t)||      (per head, after optional conv)
//! beta_t = sigmoid(W_beta x_t + b_beta)        (one gate per head)
//! o_t from the chunkwise delta rule, then out = W_O . rmsnorm(o)
//! ```
//!
//! L2-normalized keys keep every eigenvalue of the state transition inside
//! the unit disc, which is what makes deep stacks of these layers stable.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod model;
pub mod mqar;
pub mod norm;
pub mod train;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::{causal_depthwise_conv, causal_depthwise_conv_backward, impulse_filter};
pub use model::{cross_entropy_at, GradMap, Model, ModelConfig};
pub use mqar::{load_instances_jsonl, mqar_generate, save_instances_jsonl, MqarInstance, MqarTask};
pub use norm::{rmsnorm_rows, rmsnorm_rows_backward};
pub use train::{mqar_eval, mqar_train, TrainConfig, TrainReport};

use crate::backward::chunkwise_delta_backward;
use crate::chunkwise::{chunkwise_delta_forward, ChunkedSequence};
use crate::error::{Error, Result};
use crate::linalg::{norm2, sigmoid, silu, silu_deriv, Matrix, Rng};
use crate::recurrent::{HeadSequence, StateMatrix};

/// Kernel width of the short convolution.
pub const CONV_WIDTH: usize = 4;
/// Guard for the L2 normalization of query/key rows.
pub const L2_EPS: f64 = 1e-6;

/// Depthwise causal filters for the three projection streams, one
/// `d_model x 4` filter bank each.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

/// Parameters of one DeltaNet mixing layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    /// `d_model x n_heads`: one writing-strength logit per head.
    pub w_beta: Matrix,
    /// `1 x n_heads` bias of the writing-strength logit.
    pub b_beta: Matrix,
    pub conv: Option<ConvParams>,
    pub w_o: Matrix,
    /// `1 x d_model` per-channel gain of the per-head output norm.
    pub out_norm_gain: Matrix,
    pub n_heads: usize,
}

impl LayerParams {
    /// Seeded initialization: uniform `(-a, a)` with `a = sqrt(6/(fan_in+fan_out))`
    /// for projections, impulse (identity) convolution filters, unit output
    /// gains, and the beta bias set so the initial writing strength is 0.9.
    pub fn init(d_model: usize, n_heads: usize, use_conv: bool, rng: &mut Rng) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config {
                field: "n_heads".into(),
                msg: format!("d_model {d_model} must be divisible by n_heads {n_heads}"),
            });
        }
        let a = (6.0 / (2.0 * d_model as f64)).sqrt();
        let a_beta = (6.0 / (d_model + n_heads) as f64).sqrt();
        // sigmoid(2.1972...) = 0.9: start with strong writes so recall
        // circuits can form early
        let beta_bias = (0.9f64 / 0.1).ln();
        Ok(LayerParams {
            w_q: Matrix::random_uniform(d_model, d_model, -a, a, rng),
            w_k: Matrix::random_uniform(d_model, d_model, -a, a, rng),
            w_v: Matrix::random_uniform(d_model, d_model, -a, a, rng),
            w_beta: Matrix::random_uniform(d_model, n_heads, -a_beta, a_beta, rng),
            b_beta: Matrix::from_fn(1, n_heads, |_, _| beta_bias),
            conv: use_conv.then(|| ConvParams {
                q: impulse_filter(d_model, CONV_WIDTH),
                k: impulse_filter(d_model, CONV_WIDTH),
                v: impulse_filter(d_model, CONV_WIDTH),
            }),
            w_o: Matrix::random_uniform(d_model, d_model, -a, a, rng),
            out_norm_gain: Matrix::from_fn(1, d_model, |_, _| 1.0),
            n_heads,
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.n_heads
    }
}

/// Everything the projection computed, kept for the backward pass.
pub struct ProjectionCache {
    /// Pre-conv projections; only kept when the convolution is enabled.
    q_raw: Option<Matrix>,
    k_raw: Option<Matrix>,
    v_raw: Option<Matrix>,
    /// Post-conv, pre-activation.
    q_pre: Matrix,
    k_pre: Matrix,
    /// SiLU outputs, before per-head L2 normalization.
    q_act: Matrix,
    k_act: Matrix,
    /// Pre-sigmoid beta logits, `L x n_heads`.
    beta_z: Matrix,
    /// Final per-head kernel inputs.
    pub heads: Vec<HeadSequence>,
}

/// Projects a sequence of residual-stream vectors into per-head kernel inputs.
///
/// Rows of `x` are tokens. Query/key rows come out L2-normalized per head
/// (zero rows stay zero under the eps guard); values are the raw, optionally
/// convolved projection; `beta` is the per-head sigmoid gate.
pub fn qkv_beta_projection(x: &Matrix, params: &LayerParams) -> Result<Vec<HeadSequence>> {
    Ok(project_cached(x, params)?.heads)
}

pub(crate) fn project_cached(x: &Matrix, params: &LayerParams) -> Result<ProjectionCache> {
    let d = params.d_model();
    if x.cols() != d {
        return Err(Error::shape(
            "qkv_beta_projection",
            format!("x has {} cols, layer d_model is {}", x.cols(), d),
        ));
    }
    let q_proj = x.matmul(&params.w_q)?;
    let k_proj = x.matmul(&params.w_k)?;
    let v_proj = x.matmul(&params.w_v)?;

    let (q_raw, k_raw, v_raw, q_pre, k_pre, v_pre) = match &params.conv {
        Some(c) => {
            let q_pre = causal_depthwise_conv(&q_proj, &c.q);
            let k_pre = causal_depthwise_conv(&k_proj, &c.k);
            let v_pre = causal_depthwise_conv(&v_proj, &c.v);
            (Some(q_proj), Some(k_proj), Some(v_proj), q_pre, k_pre, v_pre)
        }
        None => (None, None, None, q_proj, k_proj, v_proj),
    };

    let q_act = q_pre.map(silu);
    let k_act = k_pre.map(silu);

    let mut beta_z = x.matmul(&params.w_beta)?;
    for r in 0..beta_z.rows() {
        for h in 0..params.n_heads {
            beta_z[(r, h)] += params.b_beta[(0, h)];
        }
    }

    let dh = params.d_head();
    let mut heads = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let (c0, c1) = (h * dh, (h + 1) * dh);
        heads.push(HeadSequence {
            q: q_act.sub_columns(c0, c1).l2_normalize_rows(L2_EPS),
            k: k_act.sub_columns(c0, c1).l2_normalize_rows(L2_EPS),
            v: v_pre.sub_columns(c0, c1),
            beta: beta_z.column(h).iter().map(|&z| sigmoid(z)).collect(),
        });
    }
    Ok(ProjectionCache {
        q_raw,
        k_raw,
        v_raw,
        q_pre,
        k_pre,
        q_act,
        k_act,
        beta_z,
        heads,
    })
}

/// Forward result with enough retained state to run the backward pass.
pub struct LayerForward {
    pub output: Matrix,
    /// Per-head mixer outputs before the output norm, `L x d_head` each.
    pub mixer_outputs: Vec<Matrix>,
    proj: ProjectionCache,
    normed: Matrix,
}

/// One full DeltaNet layer: projection, per-head chunkwise mixing, per-head
/// RMS output norm, concatenation, output projection.
pub fn deltanet_layer_forward(x: &Matrix, params: &LayerParams, chunk_size: usize) -> Result<Matrix> {
    Ok(layer_forward_cached(x, params, chunk_size)?.output)
}

pub(crate) fn layer_forward_cached(
    x: &Matrix,
    params: &LayerParams,
    chunk_size: usize,
) -> Result<LayerForward> {
    let proj = project_cached(x, params)?;
    let (dh, l) = (params.d_head(), x.rows());
    let mut mixer_outputs = Vec::with_capacity(params.n_heads);
    let mut normed = Matrix::zeros(l, params.d_model());
    for (h, head) in proj.heads.iter().enumerate() {
        let chunked = ChunkedSequence::new(head, chunk_size)?;
        let s0 = StateMatrix::zeros(dh, dh);
        let (o, _) = chunkwise_delta_forward(&chunked, &s0)?;
        let gain = &params.out_norm_gain.row(0)[h * dh..(h + 1) * dh];
        normed.paste_columns(h * dh, &rmsnorm_rows(&o, gain));
        mixer_outputs.push(o);
    }
    let output = normed.matmul(&params.w_o)?;
    Ok(LayerForward {
        output,
        mixer_outputs,
        proj,
        normed,
    })
}

/// Backward through [`layer_forward_cached`]. Parameter gradients are
/// accumulated into `grads` under `prefix`; the return value is the gradient
/// with respect to the layer input.
pub(crate) fn layer_backward(
    x: &Matrix,
    params: &LayerParams,
    fwd: &LayerForward,
    d_output: &Matrix,
    chunk_size: usize,
    grads: &mut GradMap,
    prefix: &str,
) -> Result<Matrix> {
    let (dh, l, d) = (params.d_head(), x.rows(), params.d_model());

    // out = normed . W_O
    grad_acc(grads, format!("{prefix}.w_o"), fwd.normed.matmul_tn(d_output)?);
    let d_normed = d_output.matmul_nt(&params.w_o)?;

    // per-head output norm and mixer
    let mut d_gain = Matrix::zeros(1, d);
    let mut d_qhat = Matrix::zeros(l, d);
    let mut d_khat = Matrix::zeros(l, d);
    let mut d_v = Matrix::zeros(l, d);
    let mut d_beta = Matrix::zeros(l, params.n_heads);
    for (h, head) in fwd.proj.heads.iter().enumerate() {
        let (c0, c1) = (h * dh, (h + 1) * dh);
        let gain = &params.out_norm_gain.row(0)[c0..c1];
        let (d_mix, d_g) =
            rmsnorm_rows_backward(&fwd.mixer_outputs[h], gain, &d_normed.sub_columns(c0, c1));
        d_gain.row_mut(0)[c0..c1].copy_from_slice(&d_g);

        let chunked = ChunkedSequence::new(head, chunk_size)?;
        let s0 = StateMatrix::zeros(dh, dh);
        let ds_final = StateMatrix::zeros(dh, dh);
        let (bundle, _) = chunkwise_delta_backward(&chunked, &s0, &d_mix, &ds_final)?;
        d_qhat.paste_columns(c0, &bundle.dq);
        d_khat.paste_columns(c0, &bundle.dk);
        d_v.paste_columns(c0, &bundle.dv);
        for t in 0..l {
            d_beta[(t, h)] = bundle.dbeta[t];
        }
    }
    grad_acc(grads, format!("{prefix}.out_norm_gain"), d_gain);

    // L2 normalization of q/k rows, per head
    let d_q_act = l2_normalize_backward(&fwd.proj.q_act, &d_qhat, dh);
    let d_k_act = l2_normalize_backward(&fwd.proj.k_act, &d_khat, dh);

    // SiLU on q/k
    let mut d_q_pre = d_q_act;
    let mut d_k_pre = d_k_act;
    for (dst, src) in d_q_pre.data_mut().iter_mut().zip(fwd.proj.q_pre.data()) {
        *dst *= silu_deriv(*src);
    }
    for (dst, src) in d_k_pre.data_mut().iter_mut().zip(fwd.proj.k_pre.data()) {
        *dst *= silu_deriv(*src);
    }
    let d_v_pre = d_v;

    // beta gate: beta = sigmoid(z)
    let mut d_z = d_beta;
    for (dst, src) in d_z.data_mut().iter_mut().zip(fwd.proj.beta_z.data()) {
        let s = sigmoid(*src);
        *dst *= s * (1.0 - s);
    }
    grad_acc(grads, format!("{prefix}.w_beta"), x.matmul_tn(&d_z)?);
    let mut db_beta = Matrix::zeros(1, params.n_heads);
    for t in 0..l {
        for h in 0..params.n_heads {
            db_beta[(0, h)] += d_z[(t, h)];
        }
    }
    grad_acc(grads, format!("{prefix}.b_beta"), db_beta);
    let mut dx = d_z.matmul_nt(&params.w_beta)?;

    // optional convolution, then the three projections
    let (d_q_proj, d_k_proj, d_v_proj) = match &params.conv {
        Some(c) => {
            let (dq, dcq) =
                causal_depthwise_conv_backward(fwd.proj.q_raw.as_ref().unwrap(), &c.q, &d_q_pre);
            let (dk, dck) =
                causal_depthwise_conv_backward(fwd.proj.k_raw.as_ref().unwrap(), &c.k, &d_k_pre);
            let (dv, dcv) =
                causal_depthwise_conv_backward(fwd.proj.v_raw.as_ref().unwrap(), &c.v, &d_v_pre);
            grad_acc(grads, format!("{prefix}.conv_q"), dcq);
            grad_acc(grads, format!("{prefix}.conv_k"), dck);
            grad_acc(grads, format!("{prefix}.conv_v"), dcv);
            (dq, dk, dv)
        }
        None => (d_q_pre, d_k_pre, d_v_pre),
    };
    grad_acc(grads, format!("{prefix}.w_q"), x.matmul_tn(&d_q_proj)?);
    grad_acc(grads, format!("{prefix}.w_k"), x.matmul_tn(&d_k_proj)?);
    grad_acc(grads, format!("{prefix}.w_v"), x.matmul_tn(&d_v_proj)?);
    dx.add_assign(&d_q_proj.matmul_nt(&params.w_q)?);
    dx.add_assign(&d_k_proj.matmul_nt(&params.w_k)?);
    dx.add_assign(&d_v_proj.matmul_nt(&params.w_v)?);
    Ok(dx)
}

/// Backward of per-head-slice row normalization `y = u / max(||u||, eps)`,
/// applied blockwise over head slices of width `d_head`.
fn l2_normalize_backward(u_full: &Matrix, dy_full: &Matrix, d_head: usize) -> Matrix {
    let mut du_full = Matrix::zeros(u_full.rows(), u_full.cols());
    let n_heads = u_full.cols() / d_head;
    for t in 0..u_full.rows() {
        for h in 0..n_heads {
            let (c0, c1) = (h * d_head, (h + 1) * d_head);
            let u = &u_full.row(t)[c0..c1];
            let dy = &dy_full.row(t)[c0..c1];
            let n = norm2(u);
            let du = &mut du_full.row_mut(t)[c0..c1];
            if n >= L2_EPS {
                // y = u/n: du = (dy - y (y . dy)) / n
                let mut ydy = 0.0;
                for i in 0..u.len() {
                    ydy += u[i] / n * dy[i];
                }
                for i in 0..u.len() {
                    du[i] = (dy[i] - u[i] / n * ydy) / n;
                }
            } else {
                for i in 0..u.len() {
                    du[i] = dy[i] / L2_EPS;
                }
            }
        }
    }
    du_full
}

/// Accumulates a gradient contribution under a parameter name.
pub fn grad_acc(grads: &mut GradMap, name: String, m: Matrix) {
    match grads.get_mut(&name) {
        Some(g) => g.add_assign(&m),
        None => {
            grads.insert(name, m);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    fn test_params(d_model: usize, n_heads: usize, use_conv: bool, seed: u64) -> LayerParams {
        let mut rng = Rng::new(seed);
        LayerParams::init(d_model, n_heads, use_conv, &mut rng).unwrap()
    }

    #[test]
    fn zero_input_gives_half_beta_and_guarded_keys() {
        let params = test_params(8, 2, false, 70);
        let x = Matrix::zeros(5, 8);
        let mut params = params;
        params.b_beta = Matrix::zeros(1, 2);
        let heads = qkv_beta_projection(&x, &params).unwrap();
        for head in &heads {
            for &b in &head.beta {
                assert_eq!(b, 0.5, "sigmoid(0)");
            }
            assert_eq!(head.k.abs_max(), 0.0, "zero rows stay zero under eps");
            assert_eq!(head.q.abs_max(), 0.0);
        }
    }

    #[test]
    fn projected_keys_are_unit_norm() {
        let params = test_params(16, 4, false, 71);
        let mut rng = Rng::new(72);
        let x = Matrix::random_uniform(12, 16, -1.0, 1.0, &mut rng);
        let heads = qkv_beta_projection(&x, &params).unwrap();
        for head in &heads {
            for t in 0..12 {
                let nk = norm2(head.k.row(t));
                let nq = norm2(head.q.row(t));
                assert!((nk - 1.0).abs() <= 1e-10, "k row norm {nk}");
                assert!((nq - 1.0).abs() <= 1e-10, "q row norm {nq}");
            }
        }
    }

    #[test]
    fn impulse_conv_equals_no_conv() {
        let no_conv = test_params(8, 2, false, 73);
        let mut with_conv = no_conv.clone();
        with_conv.conv = Some(ConvParams {
            q: impulse_filter(8, CONV_WIDTH),
            k: impulse_filter(8, CONV_WIDTH),
            v: impulse_filter(8, CONV_WIDTH),
        });
        let mut rng = Rng::new(74);
        let x = Matrix::random_uniform(6, 8, -1.0, 1.0, &mut rng);
        let a = deltanet_layer_forward(&x, &no_conv, 4).unwrap();
        let b = deltanet_layer_forward(&x, &with_conv, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beta_forced_to_zero_silences_the_layer() {
        let mut params = test_params(8, 2, false, 75);
        params.w_beta = Matrix::zeros(8, 2);
        // sigmoid(-1e9) underflows to exactly 0: no writes ever happen
        params.b_beta = Matrix::from_fn(1, 2, |_, _| -1e9);
        let mut rng = Rng::new(76);
        let x = Matrix::random_uniform(6, 8, -1.0, 1.0, &mut rng);
        let out = deltanet_layer_forward(&x, &params, 4).unwrap();
        assert_eq!(out.abs_max(), 0.0);
    }

    #[test]
    fn single_head_layer_matches_direct_kernel_call() {
        let params = test_params(8, 1, false, 77);
        let mut rng = Rng::new(78);
        let x = Matrix::random_uniform(10, 8, -1.0, 1.0, &mut rng);
        let fwd = layer_forward_cached(&x, &params, 4).unwrap();
        let heads = qkv_beta_projection(&x, &params).unwrap();
        let chunked = ChunkedSequence::new(&heads[0], 4).unwrap();
        let (o, _) = chunkwise_delta_forward(&chunked, &StateMatrix::zeros(8, 8)).unwrap();
        assert!(fwd.mixer_outputs[0].max_abs_diff(&o) <= 1e-12);
        let manual = rmsnorm_rows(&o, params.out_norm_gain.row(0))
            .matmul(&params.w_o)
            .unwrap();
        assert!(fwd.output.max_abs_diff(&manual) <= 1e-12);
    }

    #[test]
    fn layer_is_causal_bit_for_bit() {
        let params = test_params(8, 2, true, 79);
        let mut rng = Rng::new(80);
        let x = Matrix::random_uniform(12, 8, -1.0, 1.0, &mut rng);
        let base = deltanet_layer_forward(&x, &params, 4).unwrap();
        for t in [3usize, 7, 11] {
            let mut x2 = x.clone();
            for c in 0..8 {
                x2[(t, c)] += 0.5;
            }
            let out = deltanet_layer_forward(&x2, &params, 4).unwrap();
            for r in 0..t {
                assert_eq!(out.row(r), base.row(r), "row {r} must be untouched");
            }
        }
    }

    #[test]
    fn head_permutation_permutes_mixer_outputs() {
        let params = test_params(12, 3, false, 81);
        let mut rng = Rng::new(82);
        let x = Matrix::random_uniform(9, 12, -1.0, 1.0, &mut rng);
        let dh = params.d_head();

        // rotate head blocks of every per-head parameter by one
        let perm = [1usize, 2, 0]; // new head h reads old head perm[h]
        let mut permuted = params.clone();
        for h in 0..3 {
            let src = perm[h];
            permuted
                .w_q
                .paste_columns(h * dh, &params.w_q.sub_columns(src * dh, (src + 1) * dh));
            permuted
                .w_k
                .paste_columns(h * dh, &params.w_k.sub_columns(src * dh, (src + 1) * dh));
            permuted
                .w_v
                .paste_columns(h * dh, &params.w_v.sub_columns(src * dh, (src + 1) * dh));
            permuted
                .w_beta
                .paste_columns(h, &params.w_beta.sub_columns(src, src + 1));
            permuted.b_beta[(0, h)] = params.b_beta[(0, src)];
        }
        let base = layer_forward_cached(&x, &params, 4).unwrap();
        let swapped = layer_forward_cached(&x, &permuted, 4).unwrap();
        for h in 0..3 {
            assert!(
                swapped.mixer_outputs[h].max_abs_diff(&base.mixer_outputs[perm[h]]) <= 1e-12,
                "head {h} should reproduce original head {}",
                perm[h]
            );
        }
    }

    #[test]
    fn layer_output_is_chunk_size_invariant() {
        let params = test_params(16, 2, true, 83);
        let mut rng = Rng::new(84);
        let x = Matrix::random_uniform(64, 16, -1.0, 1.0, &mut rng);
        let base = deltanet_layer_forward(&x, &params, 1).unwrap();
        for c in [16usize, 64] {
            let out = deltanet_layer_forward(&x, &params, c).unwrap();
            assert!(out.max_abs_diff(&base) <= 1e-10, "C={c}");
        }
    }

    #[test]
    fn unit_norm_contract_into_kernel() {
        let params = test_params(8, 2, true, 85);
        let mut rng = Rng::new(86);
        let x = Matrix::random_uniform(20, 8, -2.0, 2.0, &mut rng);
        let cache = project_cached(&x, &params).unwrap();
        for (h, head) in cache.heads.iter().enumerate() {
            for t in 0..20 {
                let n = norm2(head.k.row(t));
                let pre = norm2(&cache.k_act.row(t)[h * 4..(h + 1) * 4]);
                assert!(
                    (1.0 - 1e-8..=1.0 + 1e-8).contains(&n) || pre < L2_EPS,
                    "head {h} t {t}: norm {n}, pre {pre}"
                );
            }
        }
    }

    #[test]
    fn layer_backward_matches_finite_differences() {
        // end-to-end through the layer: loss = sum(out^2)
        let (l, d, heads) = (6, 8, 2);
        let params = test_params(d, heads, true, 87);
        let mut rng = Rng::new(88);
        let x = Matrix::random_uniform(l, d, -1.0, 1.0, &mut rng);

        let fwd = layer_forward_cached(&x, &params, 4).unwrap();
        let mut grads = GradMap::new();
        let dx = layer_backward(&x, &params, &fwd, &fwd.output.scale(2.0), 4, &mut grads, "t")
            .unwrap();

        let loss_at = |x_m: &Matrix, p: &LayerParams| {
            let out = deltanet_layer_forward(x_m, p, 4).unwrap();
            out.data().iter().map(|v| v * v).sum::<f64>()
        };
        let fd_x = crate::backward::finite_difference_grad(
            |xv| loss_at(&Matrix::from_vec(l, d, xv.to_vec()).unwrap(), &params),
            x.data(),
            1e-5,
        )
        .unwrap();
        for (i, (a, n)) in dx.data().iter().zip(&fd_x).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / denom <= 1e-5, "dx[{i}]: {a} vs {n}");
        }

        // spot-check a few parameter gradients through the same loss
        for name in ["t.w_k", "t.w_beta", "t.conv_v", "t.out_norm_gain", "t.w_o"] {
            let analytic = grads.get(name).unwrap().clone();
            let current: Matrix = match name {
                "t.w_k" => params.w_k.clone(),
                "t.w_beta" => params.w_beta.clone(),
                "t.conv_v" => params.conv.as_ref().unwrap().v.clone(),
                "t.out_norm_gain" => params.out_norm_gain.clone(),
                "t.w_o" => params.w_o.clone(),
                _ => unreachable!(),
            };
            let fd = crate::backward::finite_difference_grad(
                |pv| {
                    let mut p2 = params.clone();
                    let m = Matrix::from_vec(current.rows(), current.cols(), pv.to_vec()).unwrap();
                    match name {
                        "t.w_k" => p2.w_k = m,
                        "t.w_beta" => p2.w_beta = m,
                        "t.conv_v" => p2.conv.as_mut().unwrap().v = m,
                        "t.out_norm_gain" => p2.out_norm_gain = m,
                        "t.w_o" => p2.w_o = m,
                        _ => unreachable!(),
                    }
                    loss_at(&x, &p2)
                },
                current.data(),
                1e-5,
            )
            .unwrap();
            for (i, (a, n)) in analytic.data().iter().zip(&fd).enumerate() {
                let denom = a.abs().max(n.abs()).max(1e-6);
                assert!((a - n).abs() / denom <= 1e-5, "{name}[{i}]: {a} vs {n}");
            }
        }
        // every parameter got a gradient entry: w_q/k/v/o, w_beta, b_beta,
        // conv_q/k/v, out_norm_gain
        assert_eq!(grads.len(), 10, "expected 10 named parameter grads");
        // q . q = 1 after normalization, so dot with itself is constant: the
        // projection still receives gradient through the value/beta paths
        assert!(dot(dx.data(), dx.data()) > 0.0);
    }
}
