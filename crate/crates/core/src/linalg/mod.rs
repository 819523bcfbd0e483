//! Dense linear algebra, FLOP accounting and seeded randomness.

pub mod flops;
mod matrix;
mod rng;

pub use matrix::{
    col_norms, dot, matmul, matmul_a_bt, matmul_at_b, matmul_views, norm, row_norms, vecmat,
    DenseMatrix, DenseVector, MatRef, Transposed,
};
pub use rng::Rng;
