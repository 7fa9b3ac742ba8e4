//! Dense numerics: tensors, seeded randomness, Jacobi eigensolvers and a
//! small reverse-mode autodiff tape.

pub mod autodiff;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod stats;
pub mod tensor;

pub use autodiff::{grad, GradProgram, Gradients, Graph, Var};
pub use linalg::{sym_eig, sym_inv_sqrt, thin_svd, Svd, SymEig};
pub use rng::RngStream;
pub use tensor::Tensor;
