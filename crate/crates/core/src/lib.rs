//! Prompt-tuned token image generators.
//!
//! Images are quantized into grids of codeword tokens, small autoregressive
//! or masked (non-autoregressive) transformers learn to generate those
//! grids, and new target domains are reached by training only a conditional
//! prompt-token generator while the transformer stays frozen.

pub mod autodiff;
pub mod cli;
pub mod decode;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod train;
pub mod transformer;
pub mod vq;

pub use error::{Error, Result};
pub use image::Image;
pub use model::{Conditioner, GenModel};
pub use prompt::{Condition, ConditionSpace, PromptConfig, PromptGenerator, PromptKind};
pub use transformer::{ModelKind, Transformer, TransformerConfig};
pub use vq::{fit_codebook, Codebook, TokenGrid};
