//! Personalised query auto-completion.
//!
//! * [`corpus`]: log ingestion, synthetic logs, splits, training pairs and
//!   the IE/IT slice labels.
//! * [`matcher`]: completion trie (most-popular completion) and the
//!   suffix back-off generator.
//! * [`tensor`]: `f64` tensors with a reverse-mode tape and Adam.
//! * [`model`]: the SIN ranker and its ablations.
//! * [`train`]: training loop, MRR evaluation and the ablation runner.

pub mod tensor;
pub mod corpus;
pub mod matcher;
pub mod model;
pub mod train;
