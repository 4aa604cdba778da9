//! Multilinear factor analysis over dense tensors.
//!
//! The crate factors a data tensor whose mode 0 holds vectorized
//! measurements and whose remaining modes enumerate explanatory factors.
//! It provides the flat mode-m SVD (`factor`), hierarchical block
//! factorization over segment filter banks (`hierarchy`, `block`), an
//! incremental bottom-up variant that merges child factorizations into
//! parents (`incremental`), and inverse projection of new observations onto
//! per-factor representations (`projection`).

pub mod archive;
pub mod block;
pub mod error;
pub mod factor;
pub mod hierarchy;
pub mod incremental;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod projection;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use tensor::DenseTensor;
