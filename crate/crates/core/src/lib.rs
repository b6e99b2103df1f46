//! Core algorithms for classifying three-image camera-trap bursts.
//!
//! A burst is an ordered triple of frames captured by one trigger event.
//! This crate extracts the temporal information from a burst (dense optical
//! flow between consecutive frames, a Gaussian-mixture foreground mask over
//! the whole burst), concatenates it as extra input channels, and trains a
//! small CNN (or an LSTM over per-frame features) to decide whether an
//! animal is present.
//!
//! Everything here is pure computation over in-memory buffers: the crate is
//! `no_std` (with `alloc`) and all file formats, image decoding and the CLI
//! live in the companion `trapburst` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod assemble;
pub mod augment;
pub mod dataset;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod model;
pub mod mog2;
pub mod rng;
pub mod synth;
pub mod tensor;

mod color;
mod simd;

pub use error::{CoreError, Result};
