//! Minimal deterministic neural substrate: dense `f64` tensors, a
//! reverse-mode tape, Adam with Noam decay and a finite-difference checker.

mod array;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;

pub use array::Tensor;
pub use graph::{two_way_softmax, Graph, Var};
pub use optim::{Adam, NoamSchedule};
pub use params::{Gradients, Param, ParamId, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range (< {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: mask has {got} entries, expected {expected}")]
    MaskLength {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("configuration error: {0}")]
    Config(String),
}
