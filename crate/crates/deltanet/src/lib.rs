//! DeltaNet sequence mixing in every computational form.
//!
//! The delta rule updates a matrix-valued fast-weight memory `S` one token at
//! a time: `S_t = S_{t-1}(I - beta_t k_t k_t^T) + beta_t v_t k_t^T`, read out
//! as `o_t = S_t q_t`. This crate implements that recurrence together with the
//! reformulations that make it trainable in parallel over the sequence:
//!
//! - [`recurrent`]: token-by-token reference forms (delta rule and vanilla
//!   linear attention). Slow, obvious, and the oracle everything else is
//!   checked against.
//! - [`chunkwise`]: the WY representation of Householder products, the UT
//!   transform, the chunkwise-parallel form, and the fully parallel
//!   attention-matrix form.
//! - [`backward`]: hand-derived reverse-mode gradients for both forwards,
//!   certified against central finite differences.
//! - [`layer`]: the full neural layer (projections, short convolution, SiLU,
//!   L2 normalization, beta gate, output norm) plus a small trainable model
//!   and the multi-query associative recall task.
//! - [`verify`]: independent oracles and the property suites behind
//!   `deltanet check`.
//! - [`bench`]: wall-time comparison of the forms.
//!
//! The guide under `book/` walks through the math with runnable snippets;
//! every snippet in it is compiled and executed by `cargo test --doc`.

// Index loops mirror the subscripts of the underlying math on purpose.
#![allow(clippy::needless_range_loop)]

#[cfg(doctest)]
mod book;

pub mod error;
pub mod layer;
pub mod linalg;
pub mod backward;
pub mod bench;
pub mod chunkwise;
pub mod recurrent;
pub mod verify;

pub use error::{Error, Result};
