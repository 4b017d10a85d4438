//! Deterministic linear-algebra and random-number primitives.
//!
//! Everything here is a pure value type: identical inputs (including PRNG
//! state) produce bit-identical outputs on every platform.

mod linalg;
mod rng;

pub use linalg::{matvec, matvec_transpose, DenseMatrix, DenseVector};
pub use rng::{sample_without_replacement, Prng};
