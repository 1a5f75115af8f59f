//! Wall-time comparison of the sequence-mixing forms.
//!
//! Every configuration row runs on identical seeded inputs, so the checksum
//! column doubles as a cross-form equivalence guard: a kernel that got faster
//! by getting wrong answers changes its checksum. Timings are medians over
//! `reps` runs after `warmup` discarded runs.
//!
//! Input construction and chunk encoding happen outside the timed region:
//! splitting a stacked sequence into chunk blocks is a relabeling of the same
//! rows (the GPU formulation does it with a free reshape), not work the
//! algorithm performs. What is timed is the forward pass, or the forward plus
//! reverse pass when `backward` is set. The backward comparison is the one
//! that exercises the memory behavior the chunkwise algorithm exists for: the
//! recurrent form materializes one state per token while the chunkwise form
//! keeps only chunk boundaries and recomputes the rest.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backward::{chunkwise_delta_backward, delta_recurrent_backward};
use crate::chunkwise::{
    chunkwise_delta_forward, chunkwise_linear_attention_forward, ChunkedSequence,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::recurrent::{delta_recurrent_forward, HeadSequence, StateMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchForm {
    Recurrent,
    Chunkwise,
    LinearAttnChunkwise,
}

impl BenchForm {
    pub const ALL: &'static [BenchForm] = &[
        BenchForm::Recurrent,
        BenchForm::Chunkwise,
        BenchForm::LinearAttnChunkwise,
    ];
}

impl fmt::Display for BenchForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchForm::Recurrent => "recurrent",
            BenchForm::Chunkwise => "chunkwise",
            BenchForm::LinearAttnChunkwise => "linear-attn-chunkwise",
        })
    }
}

impl FromStr for BenchForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recurrent" => Ok(BenchForm::Recurrent),
            "chunkwise" => Ok(BenchForm::Chunkwise),
            "linear-attn-chunkwise" => Ok(BenchForm::LinearAttnChunkwise),
            other => Err(Error::Config {
                field: "form".into(),
                msg: format!("unknown form `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub form: BenchForm,
    pub l: usize,
    pub c: usize,
    pub d_head: usize,
    pub n_heads: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Time the training step (forward plus analytic backward) instead of the
    /// forward alone. Not supported for the linear-attention baseline.
    pub backward: bool,
}

/// One measured row. `wall_time_s` is the median single-run time; the
/// checksum is the plain sum of all forward output entries across heads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRecord {
    pub form: String,
    pub l: usize,
    pub c: usize,
    pub d_head: usize,
    pub n_heads: usize,
    pub wall_time_s: f64,
    pub tokens_per_s: f64,
    pub checksum: f64,
}

/// Seeded inputs for one configuration; the same `(seed, l, d_head, head)`
/// always yields the same sequences regardless of the form measured.
pub fn bench_inputs(seed: u64, l: usize, d_head: usize, n_heads: usize) -> Vec<HeadSequence> {
    let base = Rng::new(seed);
    (0..n_heads)
        .map(|h| {
            let mut rng = base.fork(0xBE0 + h as u64);
            HeadSequence::random_normalized(l, d_head, d_head, &mut rng)
        })
        .collect()
}

struct Prepared {
    seqs: Vec<HeadSequence>,
    chunked: Vec<ChunkedSequence>,
    d_out: Vec<Matrix>,
}

fn prepare(cfg: &BenchConfig) -> Result<Prepared> {
    let seqs = bench_inputs(cfg.seed, cfg.l, cfg.d_head, cfg.n_heads);
    let chunked = match cfg.form {
        BenchForm::Recurrent => Vec::new(),
        _ => seqs
            .iter()
            .map(|s| ChunkedSequence::new(s, cfg.c))
            .collect::<Result<_>>()?,
    };
    let d_out = if cfg.backward {
        // fixed, seeded output cotangent shared across forms
        let mut rng = Rng::new(cfg.seed).fork(0xD0);
        seqs.iter()
            .map(|s| Matrix::random_uniform(s.len(), s.d_v(), -1.0, 1.0, &mut rng))
            .collect()
    } else {
        Vec::new()
    };
    Ok(Prepared {
        seqs,
        chunked,
        d_out,
    })
}

fn run_form(cfg: &BenchConfig, p: &Prepared) -> Result<Vec<Matrix>> {
    let mut outs = Vec::with_capacity(p.seqs.len());
    for h in 0..p.seqs.len() {
        let seq = &p.seqs[h];
        let s0 = StateMatrix::zeros(seq.d_v(), seq.d_k());
        let out = match cfg.form {
            BenchForm::Recurrent => {
                let (o, _) = delta_recurrent_forward(seq, &s0)?;
                if cfg.backward {
                    let ds = StateMatrix::zeros(seq.d_v(), seq.d_k());
                    let _ = delta_recurrent_backward(seq, &s0, &p.d_out[h], &ds)?;
                }
                o
            }
            BenchForm::Chunkwise => {
                let (o, _) = chunkwise_delta_forward(&p.chunked[h], &s0)?;
                if cfg.backward {
                    let ds = StateMatrix::zeros(seq.d_v(), seq.d_k());
                    let _ = chunkwise_delta_backward(&p.chunked[h], &s0, &p.d_out[h], &ds)?;
                }
                o
            }
            BenchForm::LinearAttnChunkwise => {
                chunkwise_linear_attention_forward(&p.chunked[h], &s0)?.0
            }
        };
        outs.push(out);
    }
    Ok(outs)
}

/// Runs one benchmark configuration and returns its record.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchRecord> {
    if cfg.reps == 0 {
        return Err(Error::Config {
            field: "reps".into(),
            msg: "need at least one timed repetition".into(),
        });
    }
    if cfg.l == 0 || cfg.c == 0 || cfg.d_head == 0 || cfg.n_heads == 0 {
        return Err(Error::Config {
            field: "sizes".into(),
            msg: "all sizes must be >= 1".into(),
        });
    }
    if cfg.backward && cfg.form == BenchForm::LinearAttnChunkwise {
        return Err(Error::Config {
            field: "backward".into(),
            msg: "backward timing covers the delta-rule forms only".into(),
        });
    }
    let prepared = prepare(cfg)?;
    for _ in 0..cfg.warmup {
        run_form(cfg, &prepared)?;
    }
    let mut times = Vec::with_capacity(cfg.reps);
    let mut last = Vec::new();
    for _ in 0..cfg.reps {
        let t0 = Instant::now();
        last = run_form(cfg, &prepared)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let wall_time_s = times[times.len() / 2];
    let checksum: f64 = last.iter().map(|o| o.sum()).sum();
    Ok(BenchRecord {
        form: cfg.form.to_string(),
        l: cfg.l,
        c: cfg.c,
        d_head: cfg.d_head,
        n_heads: cfg.n_heads,
        wall_time_s,
        tokens_per_s: (cfg.l * cfg.n_heads) as f64 / wall_time_s,
        checksum,
    })
}

/// Paired comparison of the recurrent and chunkwise delta forms.
///
/// Each repetition times both forms back to back on the same inputs and
/// records the per-rep time ratio; the returned speedup is the median of
/// those ratios. On a machine with background interference this is far more
/// stable than comparing two independently measured medians, because a slow
/// window hits both halves of a pair. Also checks output equality.
pub fn run_paired_speedup(cfg: &BenchConfig) -> Result<PairedSpeedup> {
    if cfg.reps == 0 {
        return Err(Error::Config {
            field: "reps".into(),
            msg: "need at least one timed repetition".into(),
        });
    }
    let rec_cfg = BenchConfig {
        form: BenchForm::Recurrent,
        ..cfg.clone()
    };
    let chunk_cfg = BenchConfig {
        form: BenchForm::Chunkwise,
        ..cfg.clone()
    };
    let p_rec = prepare(&rec_cfg)?;
    let p_chunk = prepare(&chunk_cfg)?;
    for _ in 0..cfg.warmup {
        run_form(&rec_cfg, &p_rec)?;
        run_form(&chunk_cfg, &p_chunk)?;
    }
    let mut ratios = Vec::with_capacity(cfg.reps);
    let mut t_rec = Vec::with_capacity(cfg.reps);
    let mut t_chunk = Vec::with_capacity(cfg.reps);
    let mut checksum_diff = 0.0f64;
    for _ in 0..cfg.reps {
        let t0 = Instant::now();
        let o_rec = run_form(&rec_cfg, &p_rec)?;
        let dt_rec = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let o_chunk = run_form(&chunk_cfg, &p_chunk)?;
        let dt_chunk = t0.elapsed().as_secs_f64();
        t_rec.push(dt_rec);
        t_chunk.push(dt_chunk);
        ratios.push(dt_rec / dt_chunk);
        let c_rec: f64 = o_rec.iter().map(|o| o.sum()).sum();
        let c_chunk: f64 = o_chunk.iter().map(|o| o.sum()).sum();
        checksum_diff = checksum_diff.max((c_rec - c_chunk).abs());
    }
    let med = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    Ok(PairedSpeedup {
        speedup: med(ratios),
        recurrent_time_s: med(t_rec),
        chunkwise_time_s: med(t_chunk),
        checksum_diff,
    })
}

/// Result of [`run_paired_speedup`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairedSpeedup {
    /// Median of per-rep `t_recurrent / t_chunkwise` ratios.
    pub speedup: f64,
    pub recurrent_time_s: f64,
    pub chunkwise_time_s: f64,
    /// Largest absolute checksum difference observed between the two forms.
    pub checksum_diff: f64,
}

pub const BENCH_CSV_HEADER: &str = "form,L,C,d_head,n_heads,wall_time_s,tokens_per_s,checksum";

/// Writes records in the versioned CSV schema.
pub fn write_bench_csv<W: std::io::Write>(records: &[BenchRecord], mut w: W) -> Result<()> {
    writeln!(w, "# schema=1")?;
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.form, r.l, r.c, r.d_head, r.n_heads, r.wall_time_s, r.tokens_per_s, r.checksum
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(form: BenchForm) -> BenchConfig {
        BenchConfig {
            form,
            l: 64,
            c: 16,
            d_head: 8,
            n_heads: 2,
            reps: 1,
            warmup: 0,
            seed: 7,
            backward: false,
        }
    }

    #[test]
    fn zero_reps_is_a_config_error() {
        let mut c = cfg(BenchForm::Recurrent);
        c.reps = 0;
        assert!(run_bench(&c).is_err());
    }

    #[test]
    fn backward_with_linear_attention_is_rejected() {
        let mut c = cfg(BenchForm::LinearAttnChunkwise);
        c.backward = true;
        assert!(run_bench(&c).is_err());
    }

    #[test]
    fn checksums_match_across_delta_forms() {
        let rec = run_bench(&cfg(BenchForm::Recurrent)).unwrap();
        let chunk = run_bench(&cfg(BenchForm::Chunkwise)).unwrap();
        assert!(
            (rec.checksum - chunk.checksum).abs() <= 1e-6,
            "recurrent {} vs chunkwise {}",
            rec.checksum,
            chunk.checksum
        );
        assert!(rec.wall_time_s > 0.0 && chunk.wall_time_s > 0.0);
    }

    #[test]
    fn backward_timing_runs_and_keeps_checksum() {
        let mut c = cfg(BenchForm::Chunkwise);
        c.backward = true;
        let with_bwd = run_bench(&c).unwrap();
        let fwd_only = run_bench(&cfg(BenchForm::Chunkwise)).unwrap();
        assert_eq!(with_bwd.checksum, fwd_only.checksum);
    }

    #[test]
    fn csv_schema_round() {
        let rec = BenchRecord {
            form: "chunkwise".into(),
            l: 512,
            c: 64,
            d_head: 64,
            n_heads: 1,
            wall_time_s: 0.5,
            tokens_per_s: 1024.0,
            checksum: -3.25,
        };
        let mut buf = Vec::new();
        write_bench_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# schema=1\n"));
        assert!(text.contains("chunkwise,512,64,64,1,0.5,1024,-3.25"));
    }
}
