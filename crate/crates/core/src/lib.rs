//! Graph-to-text laboratory.
//!
//! The crate covers the whole path from an AMR graph in PENMAN notation to a
//! generated sentence:
//!
//! * [`penman`]: parsing, serialization, inverse-role normalization, graph statistics.
//! * [`graph`]: linearization, the unlabeled bipartite graph and token-level adjacency.
//! * [`tokenizer`]: byte-level pair-merge subword vocabulary.
//! * [`tensor`]: dense tensors and a tape-based reverse-mode autodiff engine.
//! * [`backbone`]: a small pre-norm transformer encoder-decoder and its denoising pretraining.
//! * [`adapters`]: bottleneck adapters and structural adapters with GCN/RGCN convolutions.
//! * [`train`]: training loop, decoding, BLEU/chrF++ and the experiment harnesses.
//! * [`corpus`]: synthetic AMR corpus generation and the JSONL dataset format.
//! * [`config`]: the flat `key=value` run configuration.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the common choices.

pub mod adapters;
pub mod backbone;
pub mod config;
pub mod corpus;
pub mod graph;
pub mod penman;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use scalar::Scalar;

/// 64-bit tensors, the default for gradient checks.
pub type Tensor64 = tensor::Tensor<f64>;
/// 32-bit tensors, used for faster training runs.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tensor::Tape<f64>;
pub type Tape32 = tensor::Tape<f32>;
pub type ParamStore64 = tensor::ParamStore<f64>;
pub type ParamStore32 = tensor::ParamStore<f32>;


pub type Model64 = backbone::Model<f64>;
pub type Model32 = backbone::Model<f32>;
