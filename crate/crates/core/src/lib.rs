//! Knowledge distillation toolkit: a small inverted-residual CNN with
//! hand-written backward passes, distillation and attention-transfer losses,
//! integrated-gradients attribution and overlay augmentation, and the
//! experiment harness around them.

pub mod augment;
pub mod bench;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod ig;
pub mod losses;
pub mod netblocks;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
