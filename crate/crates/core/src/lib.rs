#![no_std]
#![doc = include_str!("../README.md")]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod classifiers;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gan;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synthetic;
pub mod tensor;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Matrix;
