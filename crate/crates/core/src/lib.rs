//! Desk-scale masked-language-model pipeline: corpus preparation, byte-level
//! BPE, a RoBERTa-style encoder with hand-written gradients, pretraining,
//! grid-searched fine-tuning and evaluation protocols.

pub mod bpe;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalx;
pub mod finetune;
pub mod linalg;
pub mod optim;
pub mod pretrain;
pub mod synth;

pub use error::{Error, Result};
