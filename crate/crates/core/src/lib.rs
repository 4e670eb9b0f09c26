// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod charts;
pub mod codec;
pub mod dataset;
pub mod deblur;
pub mod error;
pub mod eval;
mod fft;
pub mod filter;
pub mod imgio;
pub mod metrics;
pub mod pipeline;
pub mod postprocess;
pub mod registration;
pub mod selection;
pub mod simulator;

pub use error::{Error, Result};
pub use imgio::{FrameSequence, GrayImage};
