//! The primary model F (LR sample → HR field) and the auxiliary model G
//! (pair of LR samples → HR difference), built on one shared extractor.

mod bank;
mod checkpoint;
mod model;

pub use bank::{MeshBank, MeshEntry};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use model::{knn_baseline, project, target_g, ArchConfig, ModelParams, SharedExtractor};

#[cfg(test)]
mod tests;
