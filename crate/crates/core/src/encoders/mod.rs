//! Shared-vocabulary GRU sentence encoder and linear image encoder, both
//! mapping into one L2-normalized joint space.

mod checkpoint;
mod model;
mod vocab;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use model::{
    encode_images_on_tape, encode_sentences_on_tape, gru_step, BoundParams, EmbeddingBatch, Modality, Model,
    ModelConfig, ModelParams, PARAM_NAMES,
};
pub use vocab::{build_vocabulary, tokenize, Vocabulary, PAD, PAD_ID, UNK, UNK_ID};
