//! Recurrent multi-image thermal super-resolution.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation: a small dense tensor type with a reverse-mode autodiff tape,
//! the recurrent MISR/SISR cell, the synthetic degradation pipeline, image
//! quality metrics, complexity accounting and the ADAM training step.
//!
//! File formats, the training driver and the command line live in the `tsr`
//! crate. Enable the `std` feature to get runtime CPU feature detection in the
//! matrix multiply kernels.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod complexity;
pub mod degradation;
mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod ops;
mod scalar;
pub mod seed;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
