//! Property suites: every cross-form equivalence and invariant in the crate,
//! run against the independent oracles and reported as machine-readable
//! checks. This is what `deltanet check` executes.
//!
//! Reports are deterministic functions of (suite, seed, sizes): reruns with
//! the same arguments serialize to identical bytes. Anything wall-clock
//! related deliberately stays out of the report.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::backward::{
    chunkwise_delta_backward, delta_recurrent_backward, finite_difference_grad,
};
use crate::chunkwise::{
    chunkwise_delta_forward, chunkwise_linear_attention_forward, parallel_attention_matrix,
    ut_transform, wy_decompose_recursive, ChunkedSequence,
};
use crate::error::{Error, Result};
use crate::layer::{
    deltanet_layer_forward, impulse_filter, qkv_beta_projection, ConvParams, LayerParams,
    CONV_WIDTH,
};
use crate::linalg::{norm2, silu, solve_unit_lower_triangular, Matrix, Rng};
use crate::recurrent::{
    delta_recurrent_forward, delta_step, linear_attention_recurrent_forward,
    transition_spectrum_check, HeadSequence, StateMatrix,
};
use crate::verify::oracle;

/// One oracle comparison or invariant check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_err: f64,
    pub tolerance: f64,
    pub cases: usize,
}

/// Environment stamp carried in every report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fingerprint {
    pub precision: String,
    pub threads: usize,
    pub seed: u64,
    pub sizes: String,
}

/// Result of one suite run. `passed` iff every contained check passed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: u32,
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Linalg,
    Recurrent,
    Wy,
    Chunkwise,
    Grad,
    Layer,
    All,
}

impl Suite {
    pub const ALL_NAMES: &'static [&'static str] = &[
        "linalg",
        "recurrent",
        "wy",
        "chunkwise",
        "grad",
        "layer",
        "all",
    ];
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linalg" => Ok(Suite::Linalg),
            "recurrent" => Ok(Suite::Recurrent),
            "wy" => Ok(Suite::Wy),
            "chunkwise" => Ok(Suite::Chunkwise),
            "grad" => Ok(Suite::Grad),
            "layer" => Ok(Suite::Layer),
            "all" => Ok(Suite::All),
            other => Err(Error::Config {
                field: "suite".into(),
                msg: format!("unknown suite `{other}`, expected one of {:?}", Suite::ALL_NAMES),
            }),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Linalg => "linalg",
            Suite::Recurrent => "recurrent",
            Suite::Wy => "wy",
            Suite::Chunkwise => "chunkwise",
            Suite::Grad => "grad",
            Suite::Layer => "layer",
            Suite::All => "all",
        };
        f.write_str(s)
    }
}

/// Workload scaling for a suite run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteSize {
    Small,
    Default,
    Large,
}

impl FromStr for SuiteSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(SuiteSize::Small),
            "default" => Ok(SuiteSize::Default),
            "large" => Ok(SuiteSize::Large),
            other => Err(Error::Config {
                field: "sizes".into(),
                msg: format!("unknown sizes `{other}`, expected small|default|large"),
            }),
        }
    }
}

impl fmt::Display for SuiteSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteSize::Small => "small",
            SuiteSize::Default => "default",
            SuiteSize::Large => "large",
        })
    }
}

struct Workload {
    seeds: usize,
    long_run: usize,
    spectrum_cases: usize,
    grad_instances: usize,
    seq_len: usize,
}

impl SuiteSize {
    fn workload(self) -> Workload {
        match self {
            SuiteSize::Small => Workload {
                seeds: 10,
                long_run: 2_000,
                spectrum_cases: 200,
                grad_instances: 5,
                seq_len: 32,
            },
            SuiteSize::Default => Workload {
                seeds: 50,
                long_run: 10_000,
                spectrum_cases: 1_000,
                grad_instances: 20,
                seq_len: 64,
            },
            SuiteSize::Large => Workload {
                seeds: 200,
                long_run: 20_000,
                spectrum_cases: 5_000,
                grad_instances: 50,
                seq_len: 128,
            },
        }
    }
}

/// Collects (name, observed error, tolerance, cases) triples.
struct Checks(Vec<CheckResult>);

impl Checks {
    fn push(&mut self, name: impl Into<String>, max_err: f64, tolerance: f64, cases: usize) {
        let max_err = if max_err == 0.0 { 0.0 } else { max_err }; // normalize -0.0
        self.0.push(CheckResult {
            name: name.into(),
            passed: max_err.is_finite() && max_err <= tolerance,
            max_err,
            tolerance,
            cases,
        });
    }
}

/// Runs one suite (or all of them) and assembles the report.
pub fn run_suite(suite: Suite, seed: u64, sizes: SuiteSize, threads: usize) -> Result<ReportBundle> {
    let mut checks = Checks(Vec::new());
    let w = sizes.workload();
    let base = Rng::new(seed);
    match suite {
        Suite::Linalg => suite_linalg(&mut checks, &base, &w)?,
        Suite::Recurrent => suite_recurrent(&mut checks, &base, &w)?,
        Suite::Wy => suite_wy(&mut checks, &base, &w)?,
        Suite::Chunkwise => suite_chunkwise(&mut checks, &base, &w)?,
        Suite::Grad => suite_grad(&mut checks, &base, &w)?,
        Suite::Layer => suite_layer(&mut checks, &base, &w)?,
        Suite::All => {
            suite_linalg(&mut checks, &base, &w)?;
            suite_recurrent(&mut checks, &base, &w)?;
            suite_wy(&mut checks, &base, &w)?;
            suite_chunkwise(&mut checks, &base, &w)?;
            suite_grad(&mut checks, &base, &w)?;
            suite_layer(&mut checks, &base, &w)?;
        }
    }
    let passed = checks.0.iter().all(|c| c.passed);
    Ok(ReportBundle {
        schema: 1,
        suite: suite.to_string(),
        passed,
        checks: checks.0,
        fingerprint: Fingerprint {
            precision: "f64".into(),
            threads,
            seed,
            sizes: sizes.to_string(),
        },
    })
}

fn suite_linalg(checks: &mut Checks, base: &Rng, w: &Workload) -> Result<()> {
    // matmul against the triple-loop oracle
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x11 + s);
        let (m, k, n) = (
            1 + rng.range(24),
            1 + rng.range(24),
            1 + rng.range(24),
        );
        let a = Matrix::random_uniform(m, k, -2.0, 2.0, &mut rng);
        let b = Matrix::random_uniform(k, n, -2.0, 2.0, &mut rng);
        err = err.max(a.matmul(&b)?.max_abs_diff(&oracle::matmul_naive(&a, &b)));
    }
    checks.push("linalg/matmul_vs_triple_loop", err, 1e-12, w.seeds);

    // associativity (A B) C = A (B C), relative
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x12 + s);
        let dims: Vec<usize> = (0..4).map(|_| 1 + rng.range(32)).collect();
        let a = Matrix::random_uniform(dims[0], dims[1], -1.0, 1.0, &mut rng);
        let b = Matrix::random_uniform(dims[1], dims[2], -1.0, 1.0, &mut rng);
        let c = Matrix::random_uniform(dims[2], dims[3], -1.0, 1.0, &mut rng);
        let left = a.matmul(&b)?.matmul(&c)?;
        let right = a.matmul(&b.matmul(&c)?)?;
        let denom = left.abs_max().max(1.0);
        err = err.max(left.max_abs_diff(&right) / denom);
    }
    checks.push("linalg/matmul_associativity", err, 1e-10, w.seeds);

    // triangular solve, multiply back
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x13 + s);
        let n = 1 + rng.range(16);
        let l = Matrix::random_uniform(n, n, -1.0, 1.0, &mut rng);
        let b = Matrix::random_uniform(n, 1 + rng.range(8), -1.0, 1.0, &mut rng);
        let x = solve_unit_lower_triangular(&l, &b)?;
        let mut sys = l.tril(true)?;
        for i in 0..n {
            sys[(i, i)] += 1.0;
        }
        let back = sys.matmul(&x)?;
        err = err.max(back.max_abs_diff(&b) / b.abs_max().max(1.0));
    }
    checks.push("linalg/unit_lower_solve_roundtrip", err, 1e-11, w.seeds);

    // solve against the Gauss-Jordan explicit inverse
    let err = {
        let mut rng = base.fork(0x14);
        let n = 16;
        let l = Matrix::random_uniform(n, n, -0.8, 0.8, &mut rng);
        let b = Matrix::random_uniform(n, 4, -1.0, 1.0, &mut rng);
        let x = solve_unit_lower_triangular(&l, &b)?;
        let mut sys = l.tril(true)?;
        for i in 0..n {
            sys[(i, i)] += 1.0;
        }
        let x_ref = oracle::matmul_naive(&oracle::gauss_jordan_inverse(&sys), &b);
        x.max_abs_diff(&x_ref) / x_ref.abs_max().max(1.0)
    };
    checks.push("linalg/solve_vs_explicit_inverse", err, 1e-12, 1);

    // RNG determinism: same seed, same stream
    let mut err = 0.0f64;
    {
        let mut a = Rng::new(base.seed());
        let mut b = Rng::new(base.seed());
        for _ in 0..10_000 {
            if a.next_u64() != b.next_u64() {
                err = 1.0;
            }
        }
    }
    checks.push("linalg/rng_determinism", err, 0.0, 10_000);

    // silu against frozen scalar values: silu(-1) = -1/(1+e), silu(0) = 0
    let expected = -0.268_941_421_369_995_1;
    let err = (silu(-1.0) - expected).abs().max(silu(0.0).abs());
    checks.push("linalg/silu_scalar_oracle", err, 1e-12, 2);

    // row normalization produces unit rows
    let mut err = 0.0f64;
    {
        let mut rng = base.fork(0x15);
        let m = Matrix::random_uniform(8, 16, -1.0, 1.0, &mut rng).l2_normalize_rows(1e-6);
        for r in 0..8 {
            err = err.max((norm2(m.row(r)) - 1.0).abs());
        }
    }
    checks.push("linalg/l2_normalize_unit_rows", err, 1e-12, 8);
    Ok(())
}

fn suite_recurrent(checks: &mut Checks, base: &Rng, w: &Workload) -> Result<()> {
    // delta forward against a per-element scalar loop
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x21 + s);
        let (l, dk, dv) = (1 + rng.range(12), 1 + rng.range(8), 1 + rng.range(8));
        let seq = HeadSequence::random(l, dk, dv, &mut rng);
        let (o, _) = delta_recurrent_forward(&seq, &StateMatrix::zeros(dv, dk))?;
        let mut state = vec![vec![0.0f64; dk]; dv];
        for t in 0..l {
            let mut pred = vec![0.0f64; dv];
            for (i, p) in pred.iter_mut().enumerate() {
                for j in 0..dk {
                    *p += state[i][j] * seq.k[(t, j)];
                }
            }
            for i in 0..dv {
                for j in 0..dk {
                    state[i][j] -= seq.beta[t] * (pred[i] - seq.v[(t, i)]) * seq.k[(t, j)];
                }
            }
            for i in 0..dv {
                let mut o_ref = 0.0;
                for j in 0..dk {
                    o_ref += state[i][j] * seq.q[(t, j)];
                }
                err = err.max((o[(t, i)] - o_ref).abs());
            }
        }
    }
    checks.push("recurrent/delta_vs_scalar_loop", err, 1e-13, w.seeds);

    // linear attention against the masked parallel form
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x22 + s);
        let (l, d) = (8, 4 + rng.range(4));
        let seq = HeadSequence::random(l, d, d, &mut rng);
        let (o, _) = linear_attention_recurrent_forward(&seq, &StateMatrix::zeros(d, d))?;
        let o_ref = seq.q.matmul_nt(&seq.k)?.tril(false)?.matmul(&seq.v)?;
        err = err.max(o.max_abs_diff(&o_ref) / o_ref.abs_max().max(1.0));
    }
    checks.push("recurrent/linear_attn_vs_parallel", err, 1e-11, w.seeds);

    // beta=1 retrieval with orthonormal keys is exact
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x23 + s);
        let d = 4 + rng.range(8);
        let keys = Matrix::identity(d);
        let values = Matrix::random_uniform(d, d, -1.0, 1.0, &mut rng);
        let seq = HeadSequence::new(keys.clone(), keys.clone(), values.clone(), vec![1.0; d])?;
        let (_, state) = delta_recurrent_forward(&seq, &StateMatrix::zeros(d, d))?;
        for j in 0..d {
            let got = state.apply(keys.row(j));
            for i in 0..d {
                err = err.max((got[i] - values[(j, i)]).abs());
            }
        }
    }
    checks.push("recurrent/orthonormal_retrieval", err, 1e-10, w.seeds);

    // rebinding: delta keeps the newest value, hebbian sums both
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x24 + s);
        let d = 4 + rng.range(6);
        let mut key = vec![0.0; d];
        for x in &mut key {
            *x = rng.uniform(-1.0, 1.0);
        }
        let n = norm2(&key);
        for x in &mut key {
            *x /= n;
        }
        let va: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let vb: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let q = Matrix::from_vec(3, d, [key.clone(), key.clone(), key.clone()].concat())?;
        let v = Matrix::from_vec(3, d, [va.clone(), vb.clone(), vec![0.0; d]].concat())?;
        let seq = HeadSequence::new(q.clone(), q.clone(), v, vec![1.0, 1.0, 0.0])?;
        let (o, _) = delta_recurrent_forward(&seq, &StateMatrix::zeros(d, d))?;
        for i in 0..d {
            err = err.max((o[(2, i)] - vb[i]).abs());
        }
        let mut seq2 = seq.clone();
        seq2.beta = vec![1.0, 1.0, 1.0];
        let (o2, _) = linear_attention_recurrent_forward(&seq2, &StateMatrix::zeros(d, d))?;
        for i in 0..d {
            err = err.max((o2[(2, i)] - va[i] - vb[i]).abs());
        }
    }
    checks.push("recurrent/rebinding_contrast", err, 1e-10, w.seeds);

    // long-run boundedness with normalized keys
    let mut max_entry = 0.0f64;
    {
        let mut rng = base.fork(0x25);
        let d = 8;
        let mut state = StateMatrix::zeros(d, d);
        for _ in 0..w.long_run {
            let mut key: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let n = norm2(&key);
            for x in &mut key {
                *x /= n;
            }
            let val: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let beta = rng.next_f64();
            state = delta_step(&state, &key, &val, beta)?;
        }
        max_entry = max_entry.max(state.matrix().abs_max());
    }
    checks.push("recurrent/state_boundedness", max_entry, 1e3, w.long_run);

    // transition spectrum: analytic eigenvalue, orthogonal fixing, projection
    let mut err = 0.0f64;
    {
        let mut rng = base.fork(0x26);
        for _ in 0..w.spectrum_cases {
            let d = 2 + rng.range(14);
            let mut key: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let n = norm2(&key);
            for x in &mut key {
                *x /= n;
            }
            let beta = rng.next_f64();
            let (eig, residual) = transition_spectrum_check(&key, beta)?;
            err = err.max(residual).max((eig - (1.0 - beta)).abs());
        }
    }
    checks.push("recurrent/transition_spectrum", err, 1e-12, w.spectrum_cases);
    Ok(())
}

fn suite_wy(checks: &mut Checks, base: &Rng, w: &Workload) -> Result<()> {
    let mut err_wy_ut = 0.0f64;
    let mut err_t = 0.0f64;
    let mut err_p = 0.0f64;
    let mut err_struct = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x31 + s);
        let c = 1 + rng.range(32);
        let d = 1 + rng.range(16);
        let k = Matrix::random_uniform(c, d, -1.0, 1.0, &mut rng).l2_normalize_rows(1e-6);
        let v = Matrix::random_uniform(c, d, -1.0, 1.0, &mut rng);
        let beta: Vec<f64> = (0..c).map(|_| rng.next_f64()).collect();

        let (w_rec, u_rec) = wy_decompose_recursive(&k, &v, &beta)?;
        let dec = ut_transform(&k, &v, &beta)?;
        err_wy_ut = err_wy_ut
            .max(dec.w.max_abs_diff(&w_rec))
            .max(dec.u.max_abs_diff(&u_rec));

        // T against explicit inverse
        let k_beta = k.scale_rows(&beta);
        let mut sys = oracle::matmul_naive(&k_beta, &k.transpose()).tril(true)?;
        for i in 0..c {
            sys[(i, i)] += 1.0;
        }
        let mut diag = Matrix::zeros(c, c);
        for i in 0..c {
            diag[(i, i)] = beta[i];
        }
        let t_ref = oracle::matmul_naive(&oracle::gauss_jordan_inverse(&sys), &diag);
        err_t = err_t.max(dec.t.max_abs_diff(&t_ref) / t_ref.abs_max().max(1.0));

        // P reconstruction against ordered Householder product
        let p = crate::chunkwise::householder_product_wy(&k, &beta, &w_rec)?;
        err_p = err_p.max(p.max_abs_diff(&oracle::householder_product_explicit(&k, &beta, c)));

        // structure: exactly lower triangular with beta diagonal
        for i in 0..c {
            err_struct = err_struct.max((dec.t[(i, i)] - beta[i]).abs());
            for j in i + 1..c {
                err_struct = err_struct.max(dec.t[(i, j)].abs());
            }
        }
    }
    checks.push("wy/recursive_vs_ut", err_wy_ut, 1e-11, w.seeds);
    checks.push("wy/t_vs_explicit_inverse", err_t, 1e-10, w.seeds);
    checks.push("wy/p_vs_householder_product", err_p, 1e-11, w.seeds);
    checks.push("wy/t_structure_exact", err_struct, 0.0, w.seeds);
    Ok(())
}

fn suite_chunkwise(checks: &mut Checks, base: &Rng, w: &Workload) -> Result<()> {
    // recurrent vs chunkwise across chunk sizes, divisible or not
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x41 + s);
        let l = w.seq_len;
        let d = 8 + rng.range(9);
        let seq = HeadSequence::random_normalized(l, d, d, &mut rng);
        let s0 = StateMatrix::zeros(d, d);
        let (o_ref, s_ref) = delta_recurrent_forward(&seq, &s0)?;
        for c in [1usize, 4, 7, 16, l] {
            let chunked = ChunkedSequence::new(&seq, c)?;
            let (o, sf) = chunkwise_delta_forward(&chunked, &s0)?;
            err = err
                .max(o.max_abs_diff(&o_ref))
                .max(sf.matrix().max_abs_diff(s_ref.matrix()));
        }
    }
    checks.push("chunkwise/delta_vs_recurrent", err, 1e-10, w.seeds);

    // chunk-size invariance, directly between two chunkings
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x42 + s);
        let l = 64;
        let seq = HeadSequence::random_normalized(l, 8, 8, &mut rng);
        let s0 = StateMatrix::zeros(8, 8);
        let (o_a, _) = chunkwise_delta_forward(&ChunkedSequence::new(&seq, 4)?, &s0)?;
        let (o_b, _) = chunkwise_delta_forward(&ChunkedSequence::new(&seq, 64)?, &s0)?;
        err = err.max(o_a.max_abs_diff(&o_b));
    }
    checks.push("chunkwise/chunk_size_invariance", err, 1e-10, w.seeds);

    // fully parallel form vs recurrent, plus exact causality of A
    let mut err = 0.0f64;
    let mut causal_err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x43 + s);
        let l = 32;
        let d = 4 + rng.range(8);
        let seq = HeadSequence::random_normalized(l, d, d, &mut rng);
        let (a, o) = parallel_attention_matrix(&seq)?;
        let (o_ref, _) = delta_recurrent_forward(&seq, &StateMatrix::zeros(d, d))?;
        err = err.max(o.max_abs_diff(&o_ref));
        for i in 0..l {
            for j in i + 1..l {
                causal_err = causal_err.max(a[(i, j)].abs());
            }
        }
    }
    checks.push("chunkwise/parallel_vs_recurrent", err, 1e-10, w.seeds);
    checks.push("chunkwise/parallel_strict_causality", causal_err, 0.0, w.seeds);

    // elementwise unrolled oracle for the attention matrix (cubic; small L)
    let mut err = 0.0f64;
    for s in 0..(w.seeds / 5).max(1) as u64 {
        let mut rng = base.fork(0x44 + s);
        let seq = HeadSequence::random_normalized(10, 4, 4, &mut rng);
        let (a, _) = parallel_attention_matrix(&seq)?;
        err = err.max(a.max_abs_diff(&oracle::attention_matrix_elementwise(&seq)));
    }
    checks.push(
        "chunkwise/attention_elementwise_oracle",
        err,
        1e-11,
        (w.seeds / 5).max(1),
    );

    // padding is a no-op
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x45 + s);
        let l = 13 + rng.range(19);
        let seq = HeadSequence::random_normalized(l, 8, 8, &mut rng);
        let s0 = StateMatrix::zeros(8, 8);
        let (o_ref, s_ref) = delta_recurrent_forward(&seq, &s0)?;
        let chunked = ChunkedSequence::new(&seq, 8)?;
        let (o, sf) = chunkwise_delta_forward(&chunked, &s0)?;
        err = err
            .max(o.max_abs_diff(&o_ref))
            .max(sf.matrix().max_abs_diff(s_ref.matrix()));
    }
    checks.push("chunkwise/padding_no_op", err, 1e-10, w.seeds);

    // streaming: half sequence, carry state, second half
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x46 + s);
        let l = 32;
        let d = 8;
        let seq = HeadSequence::random_normalized(l, d, d, &mut rng);
        let s0 = StateMatrix::zeros(d, d);
        let (o_full, s_full) = chunkwise_delta_forward(&ChunkedSequence::new(&seq, 8)?, &s0)?;
        let half = l / 2;
        let take = |m: &Matrix, lo: usize, hi: usize| {
            Matrix::from_fn(hi - lo, m.cols(), |r, c| m[(lo + r, c)])
        };
        let first = HeadSequence {
            q: take(&seq.q, 0, half),
            k: take(&seq.k, 0, half),
            v: take(&seq.v, 0, half),
            beta: seq.beta[..half].to_vec(),
        };
        let second = HeadSequence {
            q: take(&seq.q, half, l),
            k: take(&seq.k, half, l),
            v: take(&seq.v, half, l),
            beta: seq.beta[half..].to_vec(),
        };
        let (o1, s_mid) = chunkwise_delta_forward(&ChunkedSequence::new(&first, 8)?, &s0)?;
        let (o2, s_end) = chunkwise_delta_forward(&ChunkedSequence::new(&second, 8)?, &s_mid)?;
        for r in 0..half {
            for cc in 0..d {
                err = err.max((o1[(r, cc)] - o_full[(r, cc)]).abs());
                err = err.max((o2[(r, cc)] - o_full[(half + r, cc)]).abs());
            }
        }
        err = err.max(s_end.matrix().max_abs_diff(s_full.matrix()));
    }
    checks.push("chunkwise/streaming_consistency", err, 1e-11, w.seeds);

    // chunkwise linear attention vs its recurrent form
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x47 + s);
        let l = w.seq_len;
        let seq = HeadSequence::random_normalized(l, 8, 8, &mut rng);
        let s0 = StateMatrix::zeros(8, 8);
        let (o, sf) = chunkwise_linear_attention_forward(&ChunkedSequence::new(&seq, 16)?, &s0)?;
        let (o_ref, s_ref) = linear_attention_recurrent_forward(&seq, &s0)?;
        let denom = o_ref.abs_max().max(1.0);
        err = err
            .max(o.max_abs_diff(&o_ref) / denom)
            .max(sf.matrix().max_abs_diff(s_ref.matrix()) / denom);
    }
    checks.push("chunkwise/linear_attn_vs_recurrent", err, 1e-10, w.seeds);
    Ok(())
}

fn suite_grad(checks: &mut Checks, base: &Rng, w: &Workload) -> Result<()> {
    // recurrent backward vs central differences. The comparison is the mixed
    // gradcheck criterion |a - fd| <= atol + rtol*max(|a|,|fd|) with
    // rtol = 1e-6, atol = 1e-8; the recorded error is the worst ratio of the
    // two sides (pass iff <= 1). The loss is mean-normalized so the FD
    // roundoff floor (eps*|loss|/h) sits far below atol. Normalized keys keep
    // the transition spectrum in the unit disc, so the forward stays
    // well-conditioned over 32 iterated steps.
    let mut worst_mixed = 0.0f64;
    let mut err_forms = 0.0f64;
    for s in 0..w.grad_instances as u64 {
        let mut rng = base.fork(0x51 + s);
        let l = 4 + rng.range(29); // <= 32
        let dk = 2 + rng.range(15); // <= 16
        let dv = 2 + rng.range(15);
        let seq = HeadSequence::random_normalized(l, dk, dv, &mut rng);
        let s0 = StateMatrix::from_matrix(Matrix::random_uniform(dv, dk, -0.5, 0.5, &mut rng));
        let scale = 1.0 / (l * dv) as f64;
        let (o, sf) = delta_recurrent_forward(&seq, &s0)?;
        let d_out = o.scale(2.0 * scale);
        let ds_final = StateMatrix::from_matrix(sf.matrix().scale(2.0 * scale));
        let (gr, ds0_r) = delta_recurrent_backward(&seq, &s0, &d_out, &ds_final)?;

        // chunkwise backward must agree with the recurrent one
        for c in [1usize, 4, 8, l] {
            let chunked = ChunkedSequence::new(&seq, c)?;
            let (gc, ds0_c) = chunkwise_delta_backward(&chunked, &s0, &d_out, &ds_final)?;
            err_forms = err_forms
                .max(gc.dq.max_abs_diff(&gr.dq))
                .max(gc.dk.max_abs_diff(&gr.dk))
                .max(gc.dv.max_abs_diff(&gr.dv))
                .max(ds0_c.matrix().max_abs_diff(ds0_r.matrix()));
            for t in 0..l {
                err_forms = err_forms.max((gc.dbeta[t] - gr.dbeta[t]).abs());
            }
        }

        // finite differences over every input coordinate
        let mut x0 = Vec::new();
        x0.extend_from_slice(seq.q.data());
        x0.extend_from_slice(seq.k.data());
        x0.extend_from_slice(seq.v.data());
        x0.extend_from_slice(&seq.beta);
        x0.extend_from_slice(s0.matrix().data());
        let fd = finite_difference_grad(
            |x| {
                let mut at = 0;
                let mut take = |n: usize| {
                    let s = x[at..at + n].to_vec();
                    at += n;
                    s
                };
                let seq2 = HeadSequence {
                    q: Matrix::from_vec(l, dk, take(l * dk)).unwrap(),
                    k: Matrix::from_vec(l, dk, take(l * dk)).unwrap(),
                    v: Matrix::from_vec(l, dv, take(l * dv)).unwrap(),
                    beta: take(l),
                };
                let s02 =
                    StateMatrix::from_matrix(Matrix::from_vec(dv, dk, take(dv * dk)).unwrap());
                let (o2, sf2) = delta_recurrent_forward(&seq2, &s02).unwrap();
                (o2.data().iter().map(|v| v * v).sum::<f64>()
                    + sf2.matrix().data().iter().map(|v| v * v).sum::<f64>())
                    * scale
            },
            &x0,
            1e-5,
        )?;
        let analytic: Vec<f64> = [
            gr.dq.data(),
            gr.dk.data(),
            gr.dv.data(),
            &gr.dbeta,
            ds0_r.matrix().data(),
        ]
        .concat();
        for (&a, &n) in analytic.iter().zip(&fd) {
            let mixed = (a - n).abs() / (1e-8 + 1e-6 * a.abs().max(n.abs()));
            worst_mixed = worst_mixed.max(mixed);
        }
    }
    checks.push("grad/fd_mixed_tolerance_ratio", worst_mixed, 1.0, w.grad_instances);
    checks.push("grad/chunkwise_vs_recurrent", err_forms, 1e-9, w.grad_instances);

    // adjoint linearity in the cotangent
    let mut err = 0.0f64;
    {
        let mut rng = base.fork(0x52);
        let seq = HeadSequence::random(8, 4, 4, &mut rng);
        let s0 = StateMatrix::zeros(4, 4);
        let d_out = Matrix::random_uniform(8, 4, -1.0, 1.0, &mut rng);
        let zero = StateMatrix::zeros(4, 4);
        let (g1, _) = delta_recurrent_backward(&seq, &s0, &d_out, &zero)?;
        let alpha = 2.5;
        let (g2, _) = delta_recurrent_backward(&seq, &s0, &d_out.scale(alpha), &zero)?;
        err = err
            .max(g2.dq.max_abs_diff(&g1.dq.scale(alpha)))
            .max(g2.dk.max_abs_diff(&g1.dk.scale(alpha)))
            .max(g2.dv.max_abs_diff(&g1.dv.scale(alpha)));
    }
    checks.push("grad/adjoint_linearity", err, 1e-12, 1);
    Ok(())
}

fn suite_layer(checks: &mut Checks, base: &Rng, w: &Workload) -> Result<()> {
    let mk_params = |seed: u64, d: usize, heads: usize, conv: bool| {
        let mut rng = Rng::new(seed);
        LayerParams::init(d, heads, conv, &mut rng).unwrap()
    };

    // unit-norm contract on q/k entering the kernel
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x61 + s);
        let params = mk_params(rng.next_u64(), 16, 4, false);
        let x = Matrix::random_uniform(12, 16, -2.0, 2.0, &mut rng);
        let heads = qkv_beta_projection(&x, &params)?;
        for head in &heads {
            for t in 0..12 {
                let n = norm2(head.k.row(t));
                if n > 0.0 {
                    err = err.max((n - 1.0).abs());
                }
                let nq = norm2(head.q.row(t));
                if nq > 0.0 {
                    err = err.max((nq - 1.0).abs());
                }
            }
        }
    }
    checks.push("layer/unit_norm_contract", err, 1e-8, w.seeds);

    // causality: perturbing token t leaves earlier outputs bit-identical
    let mut err = 0.0f64;
    {
        let mut rng = base.fork(0x62);
        let params = mk_params(rng.next_u64(), 16, 2, true);
        let x = Matrix::random_uniform(16, 16, -1.0, 1.0, &mut rng);
        let out = deltanet_layer_forward(&x, &params, 4)?;
        for t in [4usize, 9, 15] {
            let mut x2 = x.clone();
            for c in 0..16 {
                x2[(t, c)] += 0.25;
            }
            let out2 = deltanet_layer_forward(&x2, &params, 4)?;
            for r in 0..t {
                for c in 0..16 {
                    if out[(r, c)] != out2[(r, c)] {
                        err = 1.0;
                    }
                }
            }
        }
    }
    checks.push("layer/causality_bit_exact", err, 0.0, 3);

    // end-to-end chunk size invariance
    let mut err = 0.0f64;
    for s in 0..(w.seeds / 5).max(1) as u64 {
        let mut rng = base.fork(0x63 + s);
        let params = mk_params(rng.next_u64(), 16, 2, false);
        let x = Matrix::random_uniform(64, 16, -1.0, 1.0, &mut rng);
        let base_out = deltanet_layer_forward(&x, &params, 1)?;
        for c in [16usize, 64] {
            err = err.max(deltanet_layer_forward(&x, &params, c)?.max_abs_diff(&base_out));
        }
    }
    checks.push(
        "layer/chunk_size_invariance",
        err,
        1e-10,
        (w.seeds / 5).max(1),
    );

    // impulse convolution is exactly a no-op
    let err = {
        let mut rng = base.fork(0x64);
        let no_conv = mk_params(rng.next_u64(), 8, 2, false);
        let mut with_conv = no_conv.clone();
        with_conv.conv = Some(ConvParams {
            q: impulse_filter(8, CONV_WIDTH),
            k: impulse_filter(8, CONV_WIDTH),
            v: impulse_filter(8, CONV_WIDTH),
        });
        let x = Matrix::random_uniform(10, 8, -1.0, 1.0, &mut rng);
        let a = deltanet_layer_forward(&x, &no_conv, 4)?;
        let b = deltanet_layer_forward(&x, &with_conv, 4)?;
        a.max_abs_diff(&b)
    };
    checks.push("layer/impulse_conv_identity", err, 0.0, 1);

    // convolution against the direct-sum oracle
    let mut err = 0.0f64;
    for s in 0..w.seeds as u64 {
        let mut rng = base.fork(0x65 + s);
        let x = Matrix::random_uniform(9, 5, -2.0, 2.0, &mut rng);
        let f = Matrix::random_uniform(5, CONV_WIDTH, -1.0, 1.0, &mut rng);
        let y = crate::layer::causal_depthwise_conv(&x, &f);
        err = err.max(y.max_abs_diff(&oracle::causal_conv_direct(&x, &f)));
    }
    checks.push("layer/conv_vs_direct_oracle", err, 1e-13, w.seeds);

    // layer gradcheck against finite differences through sum(out^2)
    let mut err = 0.0f64;
    {
        let mut rng = base.fork(0x66);
        let (l, d) = (6, 8);
        let params = mk_params(rng.next_u64(), d, 2, true);
        let x = Matrix::random_uniform(l, d, -1.0, 1.0, &mut rng);
        let fwd = crate::layer::layer_forward_cached(&x, &params, 4)?;
        let mut grads = crate::layer::GradMap::new();
        let dx = crate::layer::layer_backward(
            &x,
            &params,
            &fwd,
            &fwd.output.scale(2.0),
            4,
            &mut grads,
            "p",
        )?;
        let fd = finite_difference_grad(
            |xv| {
                let xm = Matrix::from_vec(l, d, xv.to_vec()).unwrap();
                deltanet_layer_forward(&xm, &params, 4)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            },
            x.data(),
            1e-5,
        )?;
        for (a, n) in dx.data().iter().zip(&fd) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            err = err.max((a - n).abs() / denom);
        }
    }
    checks.push("layer/input_gradcheck", err, 1e-5, 1);

    // silence check: beta forced to zero zeroes the layer output
    let err = {
        let mut rng = base.fork(0x67);
        let mut params = mk_params(rng.next_u64(), 8, 2, false);
        params.w_beta = Matrix::zeros(8, 2);
        params.b_beta = Matrix::from_fn(1, 2, |_, _| -1e9);
        let x = Matrix::random_uniform(6, 8, -1.0, 1.0, &mut rng);
        deltanet_layer_forward(&x, &params, 4)?.abs_max()
    };
    checks.push("layer/zero_beta_silences", err, 0.0, 1);
    Ok(())
}
