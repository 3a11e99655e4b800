//! Desk-scale sarcasm-detection pipeline: byte-level tokenizer, a small
//! trainable transformer encoder with exact manual backpropagation,
//! task-specific heads for single-sentence, multi-label, and sentence-pair
//! classification, AdamW training with warmup/linear decay and gradient
//! accumulation, bilingual joint training, k-fold × grid ensembling with a
//! run registry, and the official task metrics.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod multilingual;
pub mod optim;
pub mod pipeline;
pub mod seeds;
pub mod synth;
pub mod task;
pub mod taskheads;
pub mod tokenizer;

pub use error::{Error, Result};
pub use task::TaskKind;
