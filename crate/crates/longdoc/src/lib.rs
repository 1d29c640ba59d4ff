//! Attention kernels, 2D relative bias, and a toy layout-aware encoder
//! for long document sequences.
//!
//! The crate pairs an O(N^2) softmax attention baseline with two
//! sub-quadratic mechanisms — low-rank key/value projection and a ReLU
//! kernel with reordered multiplication — plus layout-derived relative
//! bias patterns that the linear path absorbs through separable feature
//! expansions. Around the kernels sit a small document pipeline (BIESO
//! span tags, page-aware chunking, synthetic corpus generation), a tiny
//! trainable encoder, and a benchmark/verification harness.

pub mod attention;
pub mod bench;
pub mod bias;
pub mod data;
pub mod matrix;
pub mod model;
pub mod train;
pub mod verify;
