//! A small token-level model around the DeltaNet layer.
//!
//! Pre-norm residual blocks: each block applies the DeltaNet mixer and then a
//! two-layer SiLU MLP channel mixer, both behind RMS norms with residual
//! connections. Embedding in, RMS norm and a linear head out. Deliberately
//! the cheapest adequate architecture for the recall experiments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{
    grad_acc, layer_backward, layer_forward_cached, norm::rmsnorm_rows,
    norm::rmsnorm_rows_backward, LayerForward, LayerParams,
};
use crate::linalg::{silu, silu_deriv, Matrix, Rng};

/// Named parameter gradients. A sorted map keeps every traversal
/// deterministic, which the bitwise-reproducibility guarantees rely on.
pub type GradMap = BTreeMap<String, Matrix>;

/// Model hyperparameters. Serialized next to checkpoints and datasets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub chunk_size: usize,
    pub use_conv: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Config {
                field: "chunk_size".into(),
                msg: "must be >= 1".into(),
            });
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config {
                field: "n_heads".into(),
                msg: format!(
                    "d_model {} must be divisible by n_heads {}",
                    self.d_model, self.n_heads
                ),
            });
        }
        if self.vocab_size == 0 || self.n_layers == 0 || self.d_model == 0 {
            return Err(Error::Config {
                field: "vocab_size/n_layers/d_model".into(),
                msg: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub attn_norm_gain: Matrix,
    pub attn: LayerParams,
    pub mlp_norm_gain: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub embed: Matrix,
    pub blocks: Vec<Block>,
    pub final_norm_gain: Matrix,
    pub unembed: Matrix,
}

fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::random_uniform(rows, cols, -a, a, rng)
}

impl Model {
    /// Builds a model with all parameters drawn from the config seed.
    pub fn init(config: &ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let d = config.d_model;
        let hidden = 2 * d;
        let mut blocks = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            blocks.push(Block {
                attn_norm_gain: Matrix::from_fn(1, d, |_, _| 1.0),
                attn: LayerParams::init(d, config.n_heads, config.use_conv, &mut rng)?,
                mlp_norm_gain: Matrix::from_fn(1, d, |_, _| 1.0),
                w1: xavier(d, hidden, &mut rng),
                b1: Matrix::zeros(1, hidden),
                w2: xavier(hidden, d, &mut rng),
                b2: Matrix::zeros(1, d),
            });
        }
        Ok(Model {
            config: config.clone(),
            embed: xavier(config.vocab_size, d, &mut rng),
            blocks,
            final_norm_gain: Matrix::from_fn(1, d, |_, _| 1.0),
            unembed: xavier(d, config.vocab_size, &mut rng),
        })
    }

    pub fn param_count(&self) -> usize {
        self.named_params()
            .iter()
            .map(|(_, m)| m.rows() * m.cols())
            .sum()
    }

    /// Stable names for every parameter matrix, in declaration order.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![("embed".into(), &self.embed)];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.attn_norm_gain"), &b.attn_norm_gain));
            out.push((format!("{p}.attn.w_q"), &b.attn.w_q));
            out.push((format!("{p}.attn.w_k"), &b.attn.w_k));
            out.push((format!("{p}.attn.w_v"), &b.attn.w_v));
            out.push((format!("{p}.attn.w_beta"), &b.attn.w_beta));
            out.push((format!("{p}.attn.b_beta"), &b.attn.b_beta));
            if let Some(c) = &b.attn.conv {
                out.push((format!("{p}.attn.conv_q"), &c.q));
                out.push((format!("{p}.attn.conv_k"), &c.k));
                out.push((format!("{p}.attn.conv_v"), &c.v));
            }
            out.push((format!("{p}.attn.w_o"), &b.attn.w_o));
            out.push((format!("{p}.attn.out_norm_gain"), &b.attn.out_norm_gain));
            out.push((format!("{p}.mlp_norm_gain"), &b.mlp_norm_gain));
            out.push((format!("{p}.w1"), &b.w1));
            out.push((format!("{p}.b1"), &b.b1));
            out.push((format!("{p}.w2"), &b.w2));
            out.push((format!("{p}.b2"), &b.b2));
        }
        out.push(("final_norm_gain".into(), &self.final_norm_gain));
        out.push(("unembed".into(), &self.unembed));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> = vec![("embed".into(), &mut self.embed)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = format!("blocks.{i}");
            out.push((format!("{p}.attn_norm_gain"), &mut b.attn_norm_gain));
            out.push((format!("{p}.attn.w_q"), &mut b.attn.w_q));
            out.push((format!("{p}.attn.w_k"), &mut b.attn.w_k));
            out.push((format!("{p}.attn.w_v"), &mut b.attn.w_v));
            out.push((format!("{p}.attn.w_beta"), &mut b.attn.w_beta));
            out.push((format!("{p}.attn.b_beta"), &mut b.attn.b_beta));
            if let Some(c) = &mut b.attn.conv {
                out.push((format!("{p}.attn.conv_q"), &mut c.q));
                out.push((format!("{p}.attn.conv_k"), &mut c.k));
                out.push((format!("{p}.attn.conv_v"), &mut c.v));
            }
            out.push((format!("{p}.attn.w_o"), &mut b.attn.w_o));
            out.push((format!("{p}.attn.out_norm_gain"), &mut b.attn.out_norm_gain));
            out.push((format!("{p}.mlp_norm_gain"), &mut b.mlp_norm_gain));
            out.push((format!("{p}.w1"), &mut b.w1));
            out.push((format!("{p}.b1"), &mut b.b1));
            out.push((format!("{p}.w2"), &mut b.w2));
            out.push((format!("{p}.b2"), &mut b.b2));
        }
        out.push(("final_norm_gain".into(), &mut self.final_norm_gain));
        out.push(("unembed".into(), &mut self.unembed));
        out
    }

    /// Runs the model over one token sequence, returning logits (`L x vocab`)
    /// and the cache needed for [`Model::backward`].
    pub fn forward(&self, tokens: &[u32]) -> Result<(Matrix, ModelCache)> {
        for &t in tokens {
            if t as usize >= self.config.vocab_size {
                return Err(Error::domain(
                    "Model::forward",
                    format!("token {t} outside vocab {}", self.config.vocab_size),
                ));
            }
        }
        let d = self.config.d_model;
        let mut h = Matrix::zeros(tokens.len(), d);
        for (r, &t) in tokens.iter().enumerate() {
            h.row_mut(r).copy_from_slice(self.embed.row(t as usize));
        }

        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let block_in = h.clone();
            let attn_in = rmsnorm_rows(&block_in, b.attn_norm_gain.row(0));
            let attn_fwd = layer_forward_cached(&attn_in, &b.attn, self.config.chunk_size)?;
            h.add_assign(&attn_fwd.output);

            let mid = h.clone();
            let mlp_in = rmsnorm_rows(&mid, b.mlp_norm_gain.row(0));
            let z1 = add_row_bias(mlp_in.matmul(&b.w1)?, &b.b1);
            let h1 = z1.map(silu);
            let mlp_out = add_row_bias(h1.matmul(&b.w2)?, &b.b2);
            h.add_assign(&mlp_out);

            block_caches.push(BlockCache {
                block_in,
                attn_in,
                attn_fwd,
                mid,
                mlp_in,
                z1,
                h1,
            });
        }
        let final_in = h.clone();
        let normed = rmsnorm_rows(&final_in, self.final_norm_gain.row(0));
        let logits = normed.matmul(&self.unembed)?;
        Ok((
            logits,
            ModelCache {
                tokens: tokens.to_vec(),
                blocks: block_caches,
                final_in,
                normed,
            },
        ))
    }

    /// Reverse-mode through [`Model::forward`]; returns gradients for every
    /// named parameter.
    pub fn backward(&self, cache: &ModelCache, d_logits: &Matrix) -> Result<GradMap> {
        let mut grads = GradMap::new();
        grad_acc(
            &mut grads,
            "unembed".into(),
            cache.normed.matmul_tn(d_logits)?,
        );
        let d_normed = d_logits.matmul_nt(&self.unembed)?;
        let (mut dh, d_final_gain) =
            rmsnorm_rows_backward(&cache.final_in, self.final_norm_gain.row(0), &d_normed);
        grad_acc(
            &mut grads,
            "final_norm_gain".into(),
            row_vec(&d_final_gain),
        );

        for (i, (b, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let p = format!("blocks.{i}");
            // MLP branch
            let d_mlp_out = dh.clone();
            grad_acc(&mut grads, format!("{p}.b2"), col_sums(&d_mlp_out));
            grad_acc(&mut grads, format!("{p}.w2"), bc.h1.matmul_tn(&d_mlp_out)?);
            let mut d_z1 = d_mlp_out.matmul_nt(&b.w2)?;
            for (dst, src) in d_z1.data_mut().iter_mut().zip(bc.z1.data()) {
                *dst *= silu_deriv(*src);
            }
            grad_acc(&mut grads, format!("{p}.b1"), col_sums(&d_z1));
            grad_acc(&mut grads, format!("{p}.w1"), bc.mlp_in.matmul_tn(&d_z1)?);
            let d_mlp_in = d_z1.matmul_nt(&b.w1)?;
            let (d_mid, d_mlp_gain) =
                rmsnorm_rows_backward(&bc.mid, b.mlp_norm_gain.row(0), &d_mlp_in);
            grad_acc(&mut grads, format!("{p}.mlp_norm_gain"), row_vec(&d_mlp_gain));
            dh.add_assign(&d_mid);

            // attention branch
            let d_attn_out = dh.clone();
            let d_attn_in = layer_backward(
                &bc.attn_in,
                &b.attn,
                &bc.attn_fwd,
                &d_attn_out,
                self.config.chunk_size,
                &mut grads,
                &format!("{p}.attn"),
            )?;
            let (d_block_in, d_attn_gain) =
                rmsnorm_rows_backward(&bc.block_in, b.attn_norm_gain.row(0), &d_attn_in);
            grad_acc(&mut grads, format!("{p}.attn_norm_gain"), row_vec(&d_attn_gain));
            dh.add_assign(&d_block_in);
        }

        let mut d_embed = Matrix::zeros(self.config.vocab_size, self.config.d_model);
        for (r, &t) in cache.tokens.iter().enumerate() {
            let src = dh.row(r);
            let dst = d_embed.row_mut(t as usize);
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
        grad_acc(&mut grads, "embed".into(), d_embed);
        Ok(grads)
    }
}

pub struct BlockCache {
    block_in: Matrix,
    attn_in: Matrix,
    attn_fwd: LayerForward,
    mid: Matrix,
    mlp_in: Matrix,
    z1: Matrix,
    h1: Matrix,
}

pub struct ModelCache {
    tokens: Vec<u32>,
    blocks: Vec<BlockCache>,
    final_in: Matrix,
    normed: Matrix,
}

fn add_row_bias(mut m: Matrix, bias: &Matrix) -> Matrix {
    for r in 0..m.rows() {
        for (x, b) in m.row_mut(r).iter_mut().zip(bias.row(0)) {
            *x += b;
        }
    }
    m
}

fn col_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (acc, v) in out.row_mut(0).iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    out
}

fn row_vec(v: &[f64]) -> Matrix {
    Matrix::from_vec(1, v.len(), v.to_vec()).unwrap()
}

/// Mean cross-entropy over `(position, target)` pairs plus the logits
/// cotangent `softmax - onehot` at those positions (zero elsewhere).
pub fn cross_entropy_at(logits: &Matrix, targets: &[(usize, u32)]) -> (f64, Matrix) {
    assert!(!targets.is_empty());
    let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    let inv_n = 1.0 / targets.len() as f64;
    for &(pos, tok) in targets {
        let row = logits.row(pos);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - max).exp();
        }
        let log_z = z.ln() + max;
        loss += (log_z - row[tok as usize]) * inv_n;
        let d_row = d_logits.row_mut(pos);
        for (c, &v) in row.iter().enumerate() {
            d_row[c] += ((v - max).exp() / z) * inv_n;
        }
        d_row[tok as usize] -= inv_n;
    }
    (loss, d_logits)
}
