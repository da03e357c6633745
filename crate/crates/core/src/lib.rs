//! Desk-scale laboratory for parameter-efficient fine-tuning of a small
//! transformer encoder on synthetic spoof-detection data.
//!
//! The crate provides:
//! - deterministic dense numerics and RNG ([`numerics`]),
//! - a toy transformer classifier with analytic gradients ([`model`]),
//! - low-rank adaptation, adapter bottlenecks and freeze/finetune baselines
//!   ([`adaptation`]),
//! - Adam training with a finite-difference gradient checker ([`training`]),
//! - threshold-free equal-error-rate evaluation ([`evaluation`]),
//! - seeded synthetic datasets with a source/target task split
//!   ([`synthdata`]).

pub mod adaptation;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod scoring;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
