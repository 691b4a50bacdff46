//! Lane marker extraction on accumulated event-camera frames with
//! multidirectional slice convolution.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense f64 tensors, a reverse-mode tape, gradient checking
//!   and the `SANC` checkpoint container.
//! * [`slice_conv`]: the eight directional slice convolutions and the MSC
//!   module that chains them.
//! * [`network`]: backbone → MSC → 1×1 head → bilinear upsampling.
//! * [`training`]: class-weighted cross-entropy, SGD with momentum, poly
//!   learning-rate decay and the training loop.
//! * [`metrics`]: pixel-level per-class F1 and IoU.
//! * [`dvs`]: event stream I/O and fixed-window accumulation.
//! * [`labels`]: key-point lanes, class assignment, rasterization and the
//!   synthetic scene generator.
//! * [`ablation`]: the directional ablation study.
//! * [`cli`]: the `sanet` command-line front end.

pub mod ablation;
pub mod cli;
pub mod dataset;
pub mod dvs;
pub mod error;
pub mod imageio;
pub mod labels;
pub mod mask;
pub mod metrics;
pub mod network;
pub mod par;
pub mod rng;
mod simd;
pub mod slice_conv;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
