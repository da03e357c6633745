//! Dense linear algebra and deterministic random numbers. Everything above
//! this module works in `f64`; dataset files narrow to `f32` on disk only.

mod matrix;
mod rng;

pub use matrix::{
    layer_norm_row, log_sum_exp, matmul, matmul_nt, matmul_tn, softmax_in_place, softmax_rows,
    Matrix,
};
pub use rng::{derive_seed, RngStream};
