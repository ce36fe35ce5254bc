//! Smoothed-analysis toolkit for tensor-structured random matrices.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense and symmetric tensors, monomial vectors, Khatri-Rao
//!   products, tensor-monomial matrices and their overlap profiles.
//! * [`linalg`]: singular values, leave-one-out distance, subspaces,
//!   principal angles, PSD projection and square-root factors.
//! * [`ensembles`]: ρ-perturbation model and Monte-Carlo trials that probe
//!   least singular values and small-ball probabilities.
//! * [`subspace`]: robust subspace recovery from lifted 1-bounded
//!   combinations.
//! * [`foobi`]: order-2ℓ FOOBI decomposition with the rank-1 detector Φ.
//! * [`hmm`]: overcomplete hidden Markov models, with moments, three-view
//!   construction and recovery of the observation and transition matrices.
//!
//! All matrices are `nalgebra::DMatrix<f64>`; every tensor is flattened in
//! row-major order (first index most significant).

pub mod ensembles;
pub mod error;
pub mod foobi;
pub mod hmm;
pub mod linalg;
pub mod rng;
pub mod subspace;
pub mod tensor;

pub use error::{Error, Result};
pub use linalg::Subspace;
pub use tensor::{CoefficientMatrix, DenseTensor, MonomialSpec, SymTensor};

pub use nalgebra::{DMatrix, DVector};
