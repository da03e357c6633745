//! Library half of the operator CLI: experiment configuration, the
//! pretrain/adapt/sweep/bench drivers and their report types. The binary in
//! `main.rs` is a thin flag-parsing layer over this crate.

pub mod config;
pub mod experiment;
pub mod footprint;
pub mod report;
