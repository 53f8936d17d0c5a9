//! Patch-level similarity model: patch embedding, transformer encoder,
//! multiplex layers, similarity matrix, ground truth, loss, and training.

mod checkpoint;
mod config;
mod gt;
mod loss;
mod model;
mod patches;
mod similarity;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::ModelConfig;
pub use gt::{build_gt, dominant_patch_ids, GtMatrix, DOMINANCE};
pub use loss::{sample_contrastive, sampled_loss};
pub use model::{
    cosine_on_graph, encode, encode_on_graph, init_params, param_shapes, BoundParams, Params,
};
pub use patches::{patch_pixels, patchify, reassemble, PatchGrid};
pub use similarity::{cosine_matrix, similarity, Block, BlockView, SimMatrix};
pub use train::{
    learning_rate, load_training_pairs, loss_and_grads, train, LossRecord, TrainOutcome,
    TrainSettings, TrainingPair, write_loss_csv,
};

use crate::error::Result;
use crate::imaging::GrayImage;

/// Similarity matrix for a pair of line art images under `params`.
pub fn infer_similarity(
    cfg: &ModelConfig,
    params: &Params<f32>,
    img_a: &GrayImage,
    img_b: &GrayImage,
) -> Result<SimMatrix> {
    params.check_shapes(cfg)?;
    let (_, pa) = patchify::<f32>(img_a, cfg)?;
    let (_, pb) = patchify::<f32>(img_b, cfg)?;
    let (xa, xb) = encode(cfg, params, &pa, &pb)?;
    similarity(&xa, &xb, cfg.sim_temperature())
}
