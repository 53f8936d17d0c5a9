//! Intra-image region extraction: merge similar neighbouring patches,
//! refine the clusters to pixel regions by watershed on the edge map, and
//! give every patch a final region id.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{watershed, EdgeMap, GrayImage, LabelMap, Raster};
use crate::patchsim::{BlockView, PatchGrid};
use crate::regionmap::RegionMap;

/// Ink threshold: pixels darker than this are strokes.
pub const INK_LEVEL: u8 = 128;

/// How the edge cutoff for blocking merges is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeThreshold {
    /// Quantile of the nonzero edge magnitudes of the image.
    Percentile(f64),
    Absolute(f64),
}

impl EdgeThreshold {
    pub fn resolve(self, edges: &EdgeMap) -> f64 {
        match self {
            EdgeThreshold::Percentile(q) => edges.nonzero_percentile(q),
            EdgeThreshold::Absolute(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeParams {
    /// Symmetrized patch similarity needed to merge; `None` means `2/N`.
    pub sim_threshold: Option<f64>,
    pub edge_block_threshold: EdgeThreshold,
    /// Area floor for regions; `None` means `0.2 * p^2`.
    pub min_region_px: Option<usize>,
    pub contact_merge_ratio: f64,
    /// Gaussian sigma for the structural edge map.
    pub edge_sigma: f64,
    /// Radius used to close stroke gaps when flooding the page background.
    pub gap_radius: usize,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            sim_threshold: None,
            edge_block_threshold: EdgeThreshold::Percentile(0.6),
            min_region_px: None,
            contact_merge_ratio: 0.15,
            edge_sigma: 1.0,
            gap_radius: 3,
        }
    }
}

impl MergeParams {
    pub fn sim_threshold_for(&self, n: usize) -> f64 {
        self.sim_threshold.unwrap_or(2.0 / n as f64)
    }

    pub fn min_region_px_for(&self, patch_size: usize) -> usize {
        self.min_region_px
            .unwrap_or_else(|| ((0.2 * (patch_size * patch_size) as f64).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_region_px == Some(0) {
            return Err(Error::invalid("min_region_px must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.contact_merge_ratio) {
            return Err(Error::invalid("contact_merge_ratio must lie in [0, 1]"));
        }
        if let EdgeThreshold::Percentile(q) = self.edge_block_threshold {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::invalid("edge percentile must lie in [0, 1]"));
            }
        }
        if !(self.edge_sigma > 0.0) {
            return Err(Error::invalid("edge_sigma must be > 0"));
        }
        Ok(())
    }
}

fn check_grid(grid: &PatchGrid, w: usize, h: usize, what: &str) -> Result<()> {
    if grid.cols * grid.patch_size != w || grid.rows * grid.patch_size != h {
        return Err(Error::dims(format!(
            "{what} is {w}x{h} but the patch grid covers {}x{}",
            grid.cols * grid.patch_size,
            grid.rows * grid.patch_size
        )));
    }
    Ok(())
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Keep the smaller index as root for scan-order stability.
        if ra < rb {
            self.0[rb] = ra;
        } else if rb < ra {
            self.0[ra] = rb;
        }
    }
}

fn mean_edge(edges: &EdgeMap, x0: isize, x1: isize, y0: isize, y1: isize) -> f64 {
    let (w, h) = (edges.width() as isize, edges.height() as isize);
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in y0.max(0)..y1.min(h) {
        for x in x0.max(0)..x1.min(w) {
            sum += edges.get(x as usize, y as usize);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean edge magnitude of the strip shared by patches `p` and `q`
/// (8-neighbours): a 4-px band around the common side, or a 4x4 square
/// around the common corner for diagonal neighbours.
pub fn boundary_strip_edge(edges: &EdgeMap, grid: &PatchGrid, p: usize, q: usize) -> f64 {
    let s = grid.patch_size as isize;
    let (pr, pc) = ((p / grid.cols) as isize, (p % grid.cols) as isize);
    let (qr, qc) = ((q / grid.cols) as isize, (q % grid.cols) as isize);
    let half = 2;
    if pr == qr {
        let x = pc.max(qc) * s;
        mean_edge(edges, x - half, x + half, pr * s, (pr + 1) * s)
    } else if pc == qc {
        let y = pr.max(qr) * s;
        mean_edge(edges, pc * s, (pc + 1) * s, y - half, y + half)
    } else {
        let (x, y) = (pc.max(qc) * s, pr.max(qr) * s);
        mean_edge(edges, x - half, x + half, y - half, y + half)
    }
}

/// Union-find over the 8-connected patch lattice. Returns one cluster
/// label per patch, numbered from 0 in scan order of first patch.
pub fn cluster_patches(
    s_intra: BlockView<'_, f32>,
    grid: &PatchGrid,
    edges: &EdgeMap,
    sim_threshold: f64,
    edge_threshold: f64,
) -> Result<Vec<u32>> {
    let n = grid.n();
    if s_intra.n() != n {
        return Err(Error::dims(format!(
            "similarity block is {0}x{0} but the grid has {n} patches",
            s_intra.n()
        )));
    }
    check_grid(grid, edges.width(), edges.height(), "edge map")?;
    let mut uf = UnionFind((0..n).collect());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let p = r * grid.cols + c;
            let mut nbrs = Vec::with_capacity(4);
            if c + 1 < grid.cols {
                nbrs.push(p + 1);
            }
            if r + 1 < grid.rows {
                if c > 0 {
                    nbrs.push(p + grid.cols - 1);
                }
                nbrs.push(p + grid.cols);
                if c + 1 < grid.cols {
                    nbrs.push(p + grid.cols + 1);
                }
            }
            for q in nbrs {
                let sim = 0.5 * (s_intra.get(p, q) as f64 + s_intra.get(q, p) as f64);
                if sim < sim_threshold {
                    continue;
                }
                if boundary_strip_edge(edges, grid, p, q) > edge_threshold {
                    continue;
                }
                uf.union(p, q);
            }
        }
    }
    let mut ids: BTreeMap<usize, u32> = BTreeMap::new();
    let mut out = Vec::with_capacity(n);
    for p in 0..n {
        let root = uf.find(p);
        let next = ids.len() as u32;
        out.push(*ids.entry(root).or_insert(next));
    }
    Ok(out)
}

/// Pixels of the page background: flood from the image border through
/// pixels farther than `radius` from any ink, then grow back by `radius`
/// without entering ink. Gaps narrower than about `2 * radius` in a
/// contour do not leak.
pub fn page_background(img: &GrayImage, radius: usize) -> Raster<bool> {
    let (w, h) = img.dims();
    let ink: Vec<bool> = img.data().iter().map(|&v| v < INK_LEVEL).collect();
    let near_ink = dilate(&ink, w, h, radius);
    let mut reached = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x + 1 == w || y + 1 == h) && !near_ink[y * w + x] {
                reached[y * w + x] = true;
                queue.push_back(y * w + x);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if !reached[j] && !near_ink[j] {
                reached[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    // Grow back towards the strokes with a geodesic flood that avoids ink.
    let mut dist = vec![usize::MAX; w * h];
    for (i, &r) in reached.iter().enumerate() {
        if r {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let d = dist[i];
        if d >= radius {
            continue;
        }
        let (x, y) = (i % w, i / w);
        for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !ink[j] && dist[j] == usize::MAX {
                dist[j] = d + 1;
                queue.push_back(j);
            }
        }
    }
    Raster::new(w, h, 1, dist.iter().map(|&d| d != usize::MAX).collect())
        .expect("matching dimensions")
}

fn dilate(mask: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    if r == 0 {
        return mask.to_vec();
    }
    // Separable square dilation.
    let mut tmp = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            tmp[y * w + x] = (lo..=hi).any(|xx| mask[y * w + xx]);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|yy| tmp[yy * w + x]);
        }
    }
    out
}

/// Seed raster: each patch contributes the largest 4-connected non-ink
/// component of its central interior (a 2-px margin is dropped), labelled
/// `cluster + 1`. Page background pixels get `background_label`.
fn seed_raster(
    clusters: &[u32],
    grid: &PatchGrid,
    img: &GrayImage,
    background: &Raster<bool>,
    background_label: u32,
) -> LabelMap {
    let (w, h) = img.dims();
    let p = grid.patch_size;
    let m = 2.min(p.saturating_sub(1) / 2);
    let side = p - 2 * m;
    let mut seeds = Raster::filled(w, h, 1, 0u32);
    let mut comp = vec![usize::MAX; side * side];
    for k in 0..grid.n() {
        let (ox, oy) = grid.origin(k);
        let (x0, y0) = (ox + m, oy + m);
        let free = |i: usize| img.get(x0 + i % side, y0 + i / side) >= INK_LEVEL;
        comp.iter_mut().for_each(|c| *c = usize::MAX);
        let mut best: Option<(usize, usize)> = None;
        let mut stack = Vec::new();
        for start in 0..side * side {
            if comp[start] != usize::MAX || !free(start) {
                continue;
            }
            comp[start] = start;
            stack.push(start);
            let mut size = 0;
            while let Some(i) = stack.pop() {
                size += 1;
                let (x, y) = (i % side, i / side);
                let mut nb = |j: usize| {
                    if comp[j] == usize::MAX && free(j) {
                        comp[j] = start;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    nb(i - 1);
                }
                if x + 1 < side {
                    nb(i + 1);
                }
                if y > 0 {
                    nb(i - side);
                }
                if y + 1 < side {
                    nb(i + side);
                }
            }
            if best.is_none_or(|(_, s)| size > s) {
                best = Some((start, size));
            }
        }
        if let Some((root, _)) = best {
            for i in 0..side * side {
                if comp[i] == root {
                    seeds.set(x0 + i % side, y0 + i / side, clusters[k] + 1);
                }
            }
        }
    }
    for (s, &bg) in seeds.data_mut().iter_mut().zip(background.data()) {
        if bg {
            *s = background_label;
        }
    }
    seeds
}

/// Pixel-level regions from patch clusters: seed, flood the edge map, merge
/// small regions, and relabel contiguously (0 = page background).
pub fn refine_regions(
    clusters: &[u32],
    grid: &PatchGrid,
    edges: &EdgeMap,
    img: &GrayImage,
    params: &MergeParams,
) -> Result<RegionMap> {
    params.validate()?;
    img.require_single_channel("refine_regions")?;
    check_grid(grid, img.width(), img.height(), "image")?;
    check_grid(grid, edges.width(), edges.height(), "edge map")?;
    if clusters.len() != grid.n() || clusters.is_empty() {
        return Err(Error::dims(format!(
            "{} cluster labels for {} patches",
            clusters.len(),
            grid.n()
        )));
    }
    let background_label = clusters.iter().max().copied().unwrap_or(0) + 2;
    let background = page_background(img, params.gap_radius);
    let mut seeds = seed_raster(clusters, grid, img, &background, background_label);
    if seeds.data().iter().all(|&s| s == 0) {
        // No usable interior anywhere: fall back to full patch seeds.
        for k in 0..grid.n() {
            let (ox, oy) = grid.origin(k);
            seeds.set(ox, oy, clusters[k] + 1);
        }
    }
    let mut labels = watershed(edges, &seeds)?;
    for l in labels.data_mut() {
        if *l == background_label {
            *l = 0;
        }
    }
    let threshold = params.edge_block_threshold.resolve(edges);
    let min_px = params.min_region_px_for(grid.patch_size);
    merge_small_regions(&mut labels, edges, min_px, threshold, params.contact_merge_ratio);
    Ok(finish(labels))
}

fn finish(mut labels: LabelMap) -> RegionMap {
    if labels.data().iter().all(|&l| l == 0) {
        labels.data_mut().iter_mut().for_each(|l| *l = 1);
    }
    RegionMap::relabeled(&labels)
}

#[derive(Default, Clone, Copy)]
struct Contact {
    pairs: usize,
    edge_sum: f64,
}

/// Repeatedly folds the smallest region under `min_px` into a neighbour:
/// among non-background neighbours, those with a weak shared boundary
/// (mean edge < `edge_threshold`) and contact ratio >= `contact_ratio` are
/// preferred; the longest contact wins, ties to the smaller id. The page
/// background only absorbs regions that touch nothing else.
pub fn merge_small_regions(
    labels: &mut LabelMap,
    edges: &EdgeMap,
    min_px: usize,
    edge_threshold: f64,
    contact_ratio: f64,
) {
    let (w, h) = labels.dims();
    let mut stuck: Vec<u32> = Vec::new();
    loop {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in labels.data() {
            if l != 0 {
                *counts.entry(l).or_default() += 1;
            }
        }
        let Some((&small, _)) = counts
            .iter()
            .filter(|(id, &c)| c < min_px && !stuck.contains(id))
            .min_by_key(|(&id, &c)| (c, id))
        else {
            break;
        };
        let mut contacts: BTreeMap<u32, Contact> = BTreeMap::new();
        let mut perimeter = 0usize;
        let data = labels.data();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut pair = |j: usize| {
                    let (a, b) = (data[i], data[j]);
                    if a == b || (a != small && b != small) {
                        return;
                    }
                    let other = if a == small { b } else { a };
                    let c = contacts.entry(other).or_default();
                    c.pairs += 1;
                    c.edge_sum += 0.5 * (edges.magnitude()[i] + edges.magnitude()[j]);
                    perimeter += 1;
                };
                if x + 1 < w {
                    pair(i + 1);
                }
                if y + 1 < h {
                    pair(i + w);
                }
            }
        }
        fn pick<'a>(cands: impl Iterator<Item = (&'a u32, &'a Contact)>) -> Option<u32> {
            cands
                .max_by(|(ia, ca), (ib, cb)| ca.pairs.cmp(&cb.pairs).then(ib.cmp(ia)))
                .map(|(&id, _)| id)
        }
        let strong = |c: &Contact| c.edge_sum / c.pairs as f64 >= edge_threshold;
        let ratio = |c: &Contact| c.pairs as f64 / perimeter.max(1) as f64;
        let preferred = pick(
            contacts
                .iter()
                .filter(|(&id, c)| id != 0 && !strong(c) && ratio(c) >= contact_ratio),
        );
        let target = preferred
            .or_else(|| pick(contacts.iter().filter(|(&id, _)| id != 0)))
            .or_else(|| contacts.contains_key(&0).then_some(0));
        match target {
            Some(t) => {
                for l in labels.data_mut() {
                    if *l == small {
                        *l = t;
                    }
                }
            }
            None => stuck.push(small),
        }
    }
}

/// Per patch, the label owning most of its pixels (background included,
/// ties to the smaller id); a background win leaves the patch unassigned.
pub fn assign_patch_ids(regions: &RegionMap, patch_size: usize) -> Result<PatchGrid> {
    if patch_size == 0
        || regions.width() % patch_size != 0
        || regions.height() % patch_size != 0
    {
        return Err(Error::dims(format!(
            "{}x{} region map is not tiled by {patch_size}px patches",
            regions.width(),
            regions.height()
        )));
    }
    let mut grid = PatchGrid::new(
        regions.height() / patch_size,
        regions.width() / patch_size,
        patch_size,
    );
    let labels = regions.labels();
    for k in 0..grid.n() {
        let (ox, oy) = grid.origin(k);
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for y in oy..oy + patch_size {
            for x in ox..ox + patch_size {
                *counts.entry(labels.get(x, y)).or_default() += 1;
            }
        }
        let mut best = (0u32, 0usize);
        for (&id, &c) in &counts {
            if c > best.1 {
                best = (id, c);
            }
        }
        grid.region_id[k] = (best.0 != 0).then_some(best.0);
    }
    Ok(grid)
}

/// Full per-image pass: clusters from the intra block, refined regions,
/// and patch membership recorded on the map.
pub fn regionize(
    s_intra: BlockView<'_, f32>,
    img: &GrayImage,
    patch_size: usize,
    params: &MergeParams,
) -> Result<(RegionMap, Vec<u32>)> {
    params.validate()?;
    let grid = PatchGrid::new(img.height() / patch_size, img.width() / patch_size, patch_size);
    check_grid(&grid, img.width(), img.height(), "image")?;
    let edges = crate::imaging::structural_edges(img, params.edge_sigma)?;
    let sim = params.sim_threshold_for(grid.n());
    let edge_thr = params.edge_block_threshold.resolve(&edges);
    let clusters = cluster_patches(s_intra, &grid, &edges, sim, edge_thr)?;
    let mut regions = refine_regions(&clusters, &grid, &edges, img, params)?;
    let ids = assign_patch_ids(&regions, patch_size)?;
    regions.set_patch_membership(&ids.region_id);
    Ok((regions, clusters))
}
