//! EEG-based person identification from affective-state recordings:
//! data loading, preprocessing, mesh encoding, a CNN+GRU/LSTM classifier,
//! SVM and Mahalanobis baselines, and the cross-validation harness.

pub mod baselines;
pub mod checkpoint;
pub mod data_io;
pub mod error;
pub mod harness;
pub mod mesh;
pub mod neural;
pub mod signal;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
