//! Semi-automatic video bounding-box annotation.
//!
//! A human labels sparse anchor frames; an off-the-shelf tracker runs
//! forward and backward between consecutive anchors. This crate then
//!
//! 1. scores each tracked frame's quality with a temporal (LSTM) model
//!    trained against overlap-derived soft targets,
//! 2. picks the better direction per frame and flags frames where both
//!    directions look wrong for human relabeling, and
//! 3. refines each accepted box by decoding it from a segmentation-style
//!    mask weighted by a learned Gaussian spatial prior, trained with only
//!    box supervision through rectified row/column profiles.
//!
//! The `examples/` directory is the primary interface: one runnable
//! example per capability. A thin `annotrack` binary wires the same calls
//! into subcommands for scripted use.

pub mod assess;
pub mod ckpt;
pub mod cli;
pub mod config;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod refine;
pub mod report;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
