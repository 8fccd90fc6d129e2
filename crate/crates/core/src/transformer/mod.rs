//! Encoder-decoder transformer with additive attention-bias hooks,
//! swappable position encodings and attention extraction.

pub mod bias;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod optim;
pub mod position;
pub mod tape;

pub use bias::{sanitize_rows, AttentionSite, BiasProvider, BiasSet};
pub use checkpoint::Checkpoint;
pub use config::{BiasLayers, ModelConfig, PeKind};
pub use model::{argmax, AttentionTensor, Batch, ParamStore, RunOptions, Transformer};
pub use optim::{Adam, Trainer};
pub use tape::Tape;
