//! Selective fine-tuning by importance discrepancy.
//!
//! Parameters are ranked twice: by pretrained weight magnitude
//! (generalization importance) and by accumulated gradient magnitude during
//! fine-tuning (specialization importance). Only entries whose
//! specialization importance wins are allowed to move, with a weight that
//! grows with the size of the win; everything else is pulled back to its
//! pretrained value after each optimizer step.
//!
//! The crate also ships a small dense classifier with manual gradients, a
//! family of comparison fine-tuning methods, a synthetic continual-learning
//! benchmark, and a checksummed checkpoint format.

pub mod benchmark;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod importance;
pub mod masking;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{FlatTensor, NormScope, TensorMap};
