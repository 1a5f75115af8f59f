//! Doc-test anchors for the guide.
//!
//! Each module below carries one chapter of `book/` as its documentation, so
//! `cargo test --doc` compiles and runs every Rust snippet in the book. The
//! module is only compiled for doc tests; it adds nothing to the public API.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/getting-started.md")]
pub mod getting_started {}

#[doc = include_str!("../../../book/src/linear-attention.md")]
pub mod linear_attention {}

#[doc = include_str!("../../../book/src/delta-rule.md")]
pub mod delta_rule {}

#[doc = include_str!("../../../book/src/wy-representation.md")]
pub mod wy_representation {}

#[doc = include_str!("../../../book/src/chunkwise-form.md")]
pub mod chunkwise_form {}

#[doc = include_str!("../../../book/src/parallel-form.md")]
pub mod parallel_form {}

#[doc = include_str!("../../../book/src/gradients.md")]
pub mod gradients {}

#[doc = include_str!("../../../book/src/layer.md")]
pub mod layer_chapter {}

#[doc = include_str!("../../../book/src/mqar.md")]
pub mod mqar_chapter {}

#[doc = include_str!("../../../book/src/benchmarking.md")]
pub mod benchmarking {}

#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
