//! Core algorithms for AquaFuse: a real-time underwater image enhancer
//! (channel-statistics color pre-correction followed by multi-scale Retinex
//! over a recursive image pyramid) and a two-stream hierarchical backbone
//! that exchanges information between the raw and enhanced feature streams
//! with windowed multi-head cross-attention and gated feature fusion.
//!
//! Everything in this crate is pure computation over owned buffers: no IO,
//! no clocks, no threads. File formats, the CLI, and benchmarking live in
//! the companion `aquafuse` crate. All floating point work is `f64`, and
//! every differentiable operation ships an explicit backward pass that the
//! [`gradcheck`] module verifies against central finite differences.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod attention;
pub mod backbone;
pub mod blur;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod image;
pub mod msr;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use image::RgbImage;
pub use msr::MsrConfig;
pub use tensor::{Param, Tensor};
