//! Out-of-distribution knowledge distillation for tiny networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: `f64` tensors and a reverse-mode tape.
//! - [`nets`]: declarative student/teacher architectures and checkpoints.
//! - [`distill`]: cross-entropy, KL, KD, OKD and the KD+Aug control loss.
//! - [`oodgen`]: disruptive augmentors used as the OOD data generator.
//! - [`dosco`]: k-means domain discovery, domain splits and synthetic benchmarks.
//! - [`harness`]: optimizers, cosine schedule, training runs and comparison reports.

pub mod data;
pub mod distill;
pub mod dosco;
pub mod error;
pub mod harness;
pub mod nets;
pub mod oodgen;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Graph, Tensor, Var};
