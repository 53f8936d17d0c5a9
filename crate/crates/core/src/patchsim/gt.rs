use std::collections::{BTreeMap, BTreeSet};

use super::{Block, BlockView, ModelConfig, PatchGrid};
use crate::corr::CorrSet;
use crate::error::{Error, Result};
use crate::regionmap::RegionMap;

/// Fraction of the patch a region must strictly exceed to own it.
pub const DOMINANCE: f64 = 0.55;

/// Binary `2N x 2N` ground-truth patch correspondence matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtMatrix {
    n: usize,
    entries: Vec<u8>,
}

impl GtMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0; 4 * n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * 2 * self.n + j] != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.entries[i * 2 * self.n + j] = v as u8;
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.entries[i * 2 * self.n..(i + 1) * 2 * self.n]
    }

    pub fn block(&self, b: Block) -> BlockView<'_, u8> {
        BlockView::new(&self.entries, self.n, b)
    }

    pub fn count_positive(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0).count()
    }
}

/// Per-patch owner under the dominance rule: the nonzero region covering the
/// most pixels of the patch (ties to the smaller id), kept only if its
/// coverage strictly exceeds 55% of the patch area.
pub fn dominant_patch_ids(regions: &RegionMap, cfg: &ModelConfig) -> Result<PatchGrid> {
    if regions.width() != cfg.image_side || regions.height() != cfg.image_side {
        return Err(Error::dims(format!(
            "region map is {}x{}, model expects {}x{}",
            regions.width(),
            regions.height(),
            cfg.image_side,
            cfg.image_side
        )));
    }
    let mut grid = PatchGrid::for_config(cfg);
    let p = cfg.patch_size;
    let area = cfg.patch_area() as f64;
    let labels = regions.labels();
    for k in 0..grid.n() {
        let (ox, oy) = grid.origin(k);
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for y in oy..oy + p {
            for x in ox..ox + p {
                let l = labels.get(x, y);
                if l != 0 {
                    *counts.entry(l).or_default() += 1;
                }
            }
        }
        // BTreeMap iterates ids ascending, so `>` keeps the smaller id on ties.
        let mut best: Option<(u32, usize)> = None;
        for (&id, &c) in &counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((id, c));
            }
        }
        grid.region_id[k] = best.and_then(|(id, c)| (c as f64 > DOMINANCE * area).then_some(id));
    }
    Ok(grid)
}

/// Ground-truth matrix from two region maps and their correspondences.
///
/// Intra-image entries are 1 for patch pairs sharing a region id (diagonal
/// included); cross-image entries are 1 for patch pairs whose regions are
/// paired in `corr`. Unassigned patches have all-zero rows and columns.
pub fn build_gt(
    regions_a: &RegionMap,
    regions_b: &RegionMap,
    corr: &CorrSet,
    cfg: &ModelConfig,
) -> Result<(GtMatrix, PatchGrid, PatchGrid)> {
    let grid_a = dominant_patch_ids(regions_a, cfg)?;
    let grid_b = dominant_patch_ids(regions_b, cfg)?;
    let n = grid_a.n();
    let pairs: BTreeSet<(u32, u32)> = corr.pair_keys();
    let mut gt = GtMatrix::zeros(n);
    let ids: Vec<Option<u32>> = grid_a
        .region_id
        .iter()
        .chain(&grid_b.region_id)
        .copied()
        .collect();
    for i in 0..2 * n {
        let Some(ri) = ids[i] else { continue };
        for j in 0..2 * n {
            let Some(rj) = ids[j] else { continue };
            let same_image = (i < n) == (j < n);
            let positive = if same_image {
                ri == rj
            } else if i < n {
                pairs.contains(&(ri, rj))
            } else {
                pairs.contains(&(rj, ri))
            };
            if positive {
                gt.set(i, j, true);
            }
        }
    }
    Ok((gt, grid_a, grid_b))
}
