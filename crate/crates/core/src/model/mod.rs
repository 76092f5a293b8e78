//! Two-channel transformer encoder-decoder with reverse-mode gradients.

mod checkpoint;
mod config;
mod params;
mod patch;
mod posenc;
mod tape;
mod vit;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TensorEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::ModelConfig;
pub use params::{ModelParams, NamedParam, NormStats};
pub use patch::{PatchGeometry, CHANNELS};
pub use posenc::positional_encoding;
pub use tape::{polar_loss_value, DiffTensor, Gradients, NodeId, PolarLossKind, Tape};
pub use vit::{stack_polar, unstack_polar, ForwardPass, Model};
