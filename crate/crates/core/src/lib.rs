//! Graph convolution engine built around depthwise separable graph convolution.

pub mod bench;
pub mod conv;
pub mod error;
pub mod graph;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
