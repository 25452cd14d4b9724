//! Large-margin fully convolutional network.
//!
//! A small FCN maps images to φ-dimensional latents. Every epoch an RBF SVM is
//! retrained on the latents of the training set, and only its support vectors,
//! the misclassified instances and (optionally) selected well-classified
//! instances are backpropagated, each pulled or pushed relative to fixed
//! anchor latents.

pub mod anchors;
pub mod data;
pub mod error;
pub mod exec;
pub mod fcn;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod run;
#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
mod oracles;
pub mod svm;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Exec;
pub use tensor::{Image, Matrix, Tensor4};
