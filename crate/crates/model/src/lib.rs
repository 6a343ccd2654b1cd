//! TANet: a dual-path super-resolution network.
//!
//! A low-resolution image flows through six stages:
//!
//! ```text
//!            ┌─ global path: tokenize → N transformer blocks → detokenize ─┐
//! I_LR → shallow conv                                                    GLAM → (+shallow) → upscale → recon → I_SR
//!            └─ local path: G self-calibrated multi-path fusion modules ──┘
//! ```
//!
//! The global path runs multi-head self-attention over 4x4-patch token
//! sequences; the local path stacks residual blocks with a sigmoid-gated
//! calibration branch; GLAM fuses both by channel concatenation and 1x1
//! convolution. Everything is built on the [`tanet_tensor`] tape, so a
//! forward pass is differentiable end to end.

mod checkpoint;
mod config;
mod error;
mod network;
mod params;
mod smfn;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{AttentionScope, ModelConfig, Variant};
pub use error::ModelError;
pub use network::{
    forward, glam, shallow_extract, upscale_reconstruct, FeatureBundle, ForwardPass,
};
pub use params::{init_params, param_count, register_params, ParamVars, TANetParams};
pub use smfn::{local_path, residual_block, smfm};
pub use transformer::{detokenize, global_path, multi_head_attention, tokenize, transformer_block};

pub type Result<T> = std::result::Result<T, ModelError>;
