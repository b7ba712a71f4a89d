//! From AMR graphs to encoder inputs.
//!
//! The pipeline is `AmrGraph` → [`UnlabeledGraph`] (every labeled edge becomes a
//! role node with two plain edges) → [`Linearization`] (depth-first symbol
//! sequence) → [`Tokenization`] (subword positions per symbol) →
//! [`TokenGraph`] (adjacency over sequence positions).

mod linearize;
mod relations;
mod token_graph;
mod unlabeled;

use thiserror::Error;

pub use linearize::{linearize, linearize_from, LinMode, Linearization, Variant};
pub use relations::{RelationTable, DEFAULT, REVERSE};
pub use token_graph::{build_token_graph, tokenize_symbols, Rep, TokenEdge, TokenGraph, Tokenization};
pub use unlabeled::{to_unlabeled, G1Kind, G1Node, UnlabeledGraph};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphReprError {
    #[error("symbol {0} has no token positions")]
    EmptySymbol(usize),
    #[error("linearization has {symbols} symbols but tokenization has {spans} spans")]
    SpanCount { symbols: usize, spans: usize },
    #[error("token graph text line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unknown {0}")]
    Unknown(String),
}
