use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::imaging::{GrayImage, Raster};
use crate::tensor::{Scalar, Tensor};

/// The `rows x cols` patch lattice of one image, with an optional region id
/// per patch (row-major).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
    pub region_id: Vec<Option<u32>>,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, patch_size: usize) -> Self {
        Self {
            rows,
            cols,
            patch_size,
            region_id: vec![None; rows * cols],
        }
    }

    pub fn for_config(cfg: &ModelConfig) -> Self {
        Self::new(cfg.grid_side(), cfg.grid_side(), cfg.patch_size)
    }

    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    /// Top-left pixel of patch `k`.
    pub fn origin(&self, k: usize) -> (usize, usize) {
        ((k % self.cols) * self.patch_size, (k / self.cols) * self.patch_size)
    }

    pub fn patch_of_pixel(&self, x: usize, y: usize) -> usize {
        (y / self.patch_size) * self.cols + x / self.patch_size
    }

    pub fn assigned(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.region_id
            .iter()
            .enumerate()
            .filter_map(|(k, id)| id.map(|id| (k, id)))
    }
}

/// Raw `p x p` pixel blocks in row-major patch order.
pub fn patch_pixels(img: &GrayImage, patch_size: usize) -> Vec<Vec<u8>> {
    let cols = img.width() / patch_size;
    let rows = img.height() / patch_size;
    let mut out = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut block = Vec::with_capacity(patch_size * patch_size);
            for y in 0..patch_size {
                for x in 0..patch_size {
                    block.push(img.get(pc * patch_size + x, pr * patch_size + y));
                }
            }
            out.push(block);
        }
    }
    out
}

/// Inverse of [`patch_pixels`].
pub fn reassemble(blocks: &[Vec<u8>], grid: &PatchGrid) -> GrayImage {
    let p = grid.patch_size;
    let mut img = Raster::filled(grid.cols * p, grid.rows * p, 1, 0u8);
    for (k, block) in blocks.iter().enumerate() {
        let (ox, oy) = grid.origin(k);
        for y in 0..p {
            for x in 0..p {
                img.set(ox + x, oy + y, block[y * p + x]);
            }
        }
    }
    img
}

/// Splits a line art image into the model's `N x p^2` input, mapping pixel
/// values from `[0, 255]` to `[-1, 1]`.
pub fn patchify<T: Scalar>(img: &GrayImage, cfg: &ModelConfig) -> Result<(PatchGrid, Tensor<T>)> {
    img.require_single_channel("patchify")?;
    if img.width() != cfg.image_side || img.height() != cfg.image_side {
        return Err(Error::dims(format!(
            "image is {}x{}, model expects {}x{}",
            img.width(),
            img.height(),
            cfg.image_side,
            cfg.image_side
        )));
    }
    let grid = PatchGrid::for_config(cfg);
    let blocks = patch_pixels(img, cfg.patch_size);
    let data: Vec<T> = blocks
        .iter()
        .flatten()
        .map(|&v| T::from_f64(v as f64 / 127.5 - 1.0))
        .collect();
    let t = Tensor::from_vec(&[grid.n(), cfg.patch_area()], data)?;
    Ok((grid, t))
}
