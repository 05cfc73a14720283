//! Manifold-regularized representation learning with a verified
//! concentration-bound toolkit.
//!
//! The crate trains small feedforward classifiers whose loss couples softmax
//! cross-entropy with a manifold loss: neighborhood structure (LLE
//! reconstruction weights or Laplacian heat-kernel affinities) is computed in
//! the raw input space from a per-class feature buffer and imposed on the
//! learned features. A companion `theory` module simulates bounded-increment
//! chains and checks the associated Azuma-type tail bounds by Monte Carlo.
//!
//! Modules:
//! - [`tensor`]: dense row-major `f64` matrices, matmul, Cholesky solve.
//! - [`data`]: seeded synthetic datasets and the IDX image/label reader.
//! - [`manifold`]: per-class feature buffer, kNN, LLE weights, affinities.
//! - [`network`]: configurable MLP with exact manual backpropagation and a
//!   gradient-injection hook at the tapped feature layer.
//! - [`stm`]: the combined objective, per-sample feature gradients, and the
//!   SGD+momentum training loop.
//! - [`theory`]: chain simulation, tail bounds, bound-vs-empirical reports.
//! - [`cli`]: config files, subcommand entry points, CSV artifacts.

pub mod cli;
pub mod data;
pub mod error;
pub mod manifold;
pub mod network;
pub mod seed;
pub mod stm;
pub mod tensor;
pub mod theory;

pub use error::{Result, StmError};
pub use tensor::Matrix;
