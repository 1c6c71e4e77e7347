//! Hierarchical multitask BERT pre-training at desk scale.
//!
//! Task classifiers (masked LM, next-sentence prediction, bigram shift) can
//! read from any encoder layer, the sentence-level vector can be appended to
//! every masked-LM classifier input, and everything influencing the NSP loss
//! can be frozen once that head has fit.
//!
//! The crate is `no_std` + `alloc`: file formats, configuration files and the
//! command line live in the `hibert` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datapipe;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod heads;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
