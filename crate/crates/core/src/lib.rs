//! Learned block-based lossy image codec.
//!
//! Images are cut into `B x B` blocks and coded one block at a time in raster
//! order. Each block is analysed and synthesised with the help of its already
//! reconstructed upper and left neighbours, and its quantized latents are
//! entropy coded with rANS under Gaussians predicted from the same causal
//! context. Training follows an asymptotic closed loop: the networks are
//! trained open loop on reconstructions produced by the previous iteration's
//! model until the open- and closed-loop costs meet.

pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod error;
pub mod eval;
pub mod image_io;
pub mod layers;
pub mod quant;
pub mod rans;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
