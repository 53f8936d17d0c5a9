use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and training hyper-parameters of the patch-similarity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub image_side: usize,
    /// Token width `d`.
    pub dim: usize,
    pub vit_depth: usize,
    /// Number of multiplex (self + cross attention) layers.
    pub mt_depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Contrastive temperature used by the sampled loss.
    pub temperature: f64,
    /// Temperature of the row-wise softmax that turns cosine scores into the
    /// similarity matrix. Defaults to `temperature`.
    pub sim_temperature: Option<f64>,
    /// Negatives drawn per sampled positive.
    pub negatives: usize,
    /// Positives drawn per training batch.
    pub positives_per_batch: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            image_side: 128,
            dim: 64,
            vit_depth: 4,
            mt_depth: 4,
            heads: 4,
            mlp_ratio: 4,
            temperature: 0.07,
            sim_temperature: None,
            negatives: 16,
            positives_per_batch: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_side == 0 {
            return Err(Error::invalid("patch_size and image_side must be positive"));
        }
        if self.image_side % self.patch_size != 0 {
            return Err(Error::invalid(format!(
                "image_side {} is not divisible by patch_size {}",
                self.image_side, self.patch_size
            )));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::invalid(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::invalid("mlp_ratio must be >= 1"));
        }
        if !(self.temperature > 0.0) || !(self.sim_temperature() > 0.0) {
            return Err(Error::invalid("temperatures must be > 0"));
        }
        if self.negatives == 0 {
            return Err(Error::invalid("negatives per positive must be >= 1"));
        }
        if self.positives_per_batch == 0 {
            return Err(Error::invalid("positives_per_batch must be >= 1"));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_side / self.patch_size
    }

    /// Patches per image, `N`.
    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_area(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn sim_temperature(&self) -> f64 {
        self.sim_temperature.unwrap_or(self.temperature)
    }
}
