//! ARMA recurrent cells and their convolutional extension, plus the pieces
//! needed to simulate data, fit classical baselines and train networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors, matrix products, same-padded convolution
//!   and the `ATNS` file format.
//! - [`autodiff`]: a small reverse-mode engine used for backpropagation
//!   through time.
//! - [`cells`]: the ARMA cell, multi-unit and stacked layers, ConvARMA.
//! - [`datagen`]: simulators for the benchmark processes and a moving-squares
//!   video generator.
//! - [`classical`]: conditional-sum-of-squares (V)ARMA estimation.
//! - [`training`]: windowing, Adam, early stopping, grid search, metrics.

pub mod autodiff;
pub mod cells;
pub mod classical;
pub mod datagen;
pub mod error;
pub mod parallel;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Activation, Tensor};
