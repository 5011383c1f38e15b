//! Generative extreme image compression.
//!
//! An encoder maps an image to a small latent grid, a scalar quantizer snaps
//! it to `L` centers, a static arithmetic coder packs the symbols into a
//! `GCX1` container, and an adversarially trained generator reconstructs an
//! image from the symbols. Selective mode keeps only the latent entries under
//! a preservation heatmap and lets the generator synthesize the rest from a
//! semantic label map.

pub mod bitstream;
pub mod codec;
pub mod data;
pub mod entropy;
pub mod error;
pub mod networks;
pub mod objectives;
pub mod quantizer;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Float, Graph, Tensor, Var};
