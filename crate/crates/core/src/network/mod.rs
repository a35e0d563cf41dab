//! The shared-weight embedding network, its energy function and checkpoints.

mod checkpoint;
mod model;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use model::{
    energy, energy_slices, similarity_score, BackboneMode, BoundParameters, EmbeddingVector, Layer,
    LayerRole, ModelConfig, ModelParameters, CONV_FILTERS, EMBEDDING_DIM, KERNEL_SIZE, NORM_EPS,
};

#[cfg(test)]
mod tests;
