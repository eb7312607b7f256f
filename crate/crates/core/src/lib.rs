//! Data-free domain generalization toolkit.
//!
//! The crate has two halves. The theory side (`meta_sim`, `hypothesis`, `erm`,
//! `bound`) simulates a meta-distribution over domains and checks a
//! Rademacher-style generalization bound against exact population risks. The
//! pipeline side (`knowledge`, `synth`) extrapolates domain names from a
//! language model, renders generation prompts, synthesizes samples, filters
//! them, and assembles training sets.

pub mod bound;
pub mod erm;
pub mod error;
pub mod http;
pub mod hypothesis;
pub mod knowledge;
pub mod meta_sim;
pub mod normal;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
