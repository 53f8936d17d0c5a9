//! Training labels from colored line art: color segmentation, keypoint
//! voting across the pair, and a positional/color fallback.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::corr::{CorrPair, CorrSet, Direction};
use crate::error::{Error, Result};
use crate::imaging::{
    connected_components, gaussian_smooth, kmeans_colors, rgb_distance, Connectivity, LabelMap,
    Raster, RgbImage,
};
use crate::regionmap::RegionMap;

/// Pixels with every channel below this are ink, not fill.
pub const INK_MAX: u8 = 32;
/// Components whose mean color is this close to white and that touch the
/// border are page background.
pub const WHITE_TOL: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoLabelParams {
    pub k_colors: usize,
    pub min_fragment_px: usize,
    pub color_filter_tol: f64,
    pub coarse_pos_weight: f64,
    pub coarse_color_weight: f64,
    pub coarse_threshold: f64,
    pub seed: u64,
}

impl Default for AutoLabelParams {
    fn default() -> Self {
        Self {
            k_colors: 8,
            min_fragment_px: 30,
            color_filter_tol: 40.0,
            coarse_pos_weight: 0.5,
            coarse_color_weight: 0.5,
            coarse_threshold: 0.5,
            seed: 0,
        }
    }
}

impl AutoLabelParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_colors < 2 {
            return Err(Error::invalid("k_colors must be >= 2"));
        }
        let (p, c) = (self.coarse_pos_weight, self.coarse_color_weight);
        if p < 0.0 || c < 0.0 || (p + c - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "coarse weights must be non-negative and sum to 1, got {p} and {c}"
            )));
        }
        if !(self.color_filter_tol >= 0.0) {
            return Err(Error::invalid("color_filter_tol must be >= 0"));
        }
        Ok(())
    }
}

fn require_rgb(img: &RgbImage) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "expected an RGB raster, got {} channels",
            img.channels()
        )));
    }
    Ok(())
}

fn is_ink(c: [u8; 3]) -> bool {
    c.iter().all(|&v| v < INK_MAX)
}

fn to_f64(c: [u8; 3]) -> [f64; 3] {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

/// Running statistics of one component during fragment merging.
#[derive(Debug, Clone)]
struct Segment {
    size: usize,
    color_sum: [f64; 3],
    color_n: f64,
}

impl Segment {
    fn mean(&self) -> [f64; 3] {
        let n = self.color_n.max(1.0);
        [self.color_sum[0] / n, self.color_sum[1] / n, self.color_sum[2] / n]
    }
}

/// Ink pixels (label 0) take the label of the nearest labelled pixel,
/// breadth-first in scan order. Returns false when nothing was labelled.
fn absorb_ink(labels: &mut LabelMap) -> bool {
    let (w, h) = labels.dims();
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if labels.get(x, y) != 0 {
                queue.push_back((x, y));
            }
        }
    }
    if queue.is_empty() {
        return false;
    }
    while let Some((x, y)) = queue.pop_front() {
        let l = labels.get(x, y);
        for &(dx, dy) in Connectivity::Four.offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if labels.get(nx, ny) == 0 {
                labels.set(nx, ny, l);
                queue.push_back((nx, ny));
            }
        }
    }
    true
}

/// Boundary lengths between distinct labels over 4-adjacent pixel pairs.
fn adjacency(labels: &LabelMap) -> BTreeMap<u32, BTreeMap<u32, usize>> {
    let (w, h) = labels.dims();
    let mut adj: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    let mut add = |a: u32, b: u32| {
        if a != b {
            *adj.entry(a).or_default().entry(b).or_default() += 1;
            *adj.entry(b).or_default().entry(a).or_default() += 1;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(x, y);
            if x + 1 < w {
                add(l, labels.get(x + 1, y));
            }
            if y + 1 < h {
                add(l, labels.get(x, y + 1));
            }
        }
    }
    adj
}

/// Merges every segment smaller than `min_px` into the neighbour with the
/// nearest mean color (ties: longer shared boundary, then smaller id),
/// smallest segments first.
fn merge_fragments(labels: &mut LabelMap, segs: &mut BTreeMap<u32, Segment>, min_px: usize) {
    let mut adj = adjacency(labels);
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    let mut stuck: Vec<u32> = Vec::new();
    loop {
        let Some((&id, _)) = segs
            .iter()
            .filter(|(id, s)| s.size < min_px && !stuck.contains(id))
            .min_by_key(|(&id, s)| (s.size, id))
        else {
            break;
        };
        let Some(nbrs) = adj.get(&id).filter(|n| !n.is_empty()) else {
            stuck.push(id);
            continue;
        };
        let mean = segs[&id].mean();
        let target = nbrs
            .iter()
            .map(|(&n, &len)| (n, rgb_distance(mean, segs[&n].mean()), len))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)))
            .map(|t| t.0)
            .expect("non-empty neighbour set");
        let frag = segs.remove(&id).expect("fragment present");
        let t = segs.get_mut(&target).expect("target present");
        t.size += frag.size;
        for c in 0..3 {
            t.color_sum[c] += frag.color_sum[c];
        }
        t.color_n += frag.color_n;
        let moved = adj.remove(&id).unwrap_or_default();
        for (n, len) in moved {
            if let Some(m) = adj.get_mut(&n) {
                m.remove(&id);
            }
            if n != target {
                *adj.entry(target).or_default().entry(n).or_default() += len;
                *adj.entry(n).or_default().entry(target).or_default() += len;
            }
        }
        remap.insert(id, target);
    }
    if remap.is_empty() {
        return;
    }
    let resolve = |mut l: u32| {
        while let Some(&t) = remap.get(&l) {
            l = t;
        }
        l
    };
    for v in labels.data_mut() {
        *v = resolve(*v);
    }
}

/// Regions of a colored image: k-means colors, 8-connected components per
/// color, ink absorbed into neighbouring fills, small fragments merged,
/// and near-white components on the border mapped to background.
pub fn segment_colored(img: &RgbImage, params: &AutoLabelParams) -> Result<RegionMap> {
    params.validate()?;
    require_rgb(img)?;
    let (w, h) = img.dims();
    if img.is_empty() {
        return Err(Error::Degenerate("empty image".into()));
    }
    let km = kmeans_colors(img, params.k_colors, params.seed)?;
    let ink = Raster::from_fn(w, h, |x, y| is_ink(img.rgb(x, y)));
    let cluster = Raster::from_fn(w, h, |x, y| {
        if ink.get(x, y) {
            u32::MAX
        } else {
            km.assignment.get(x, y)
        }
    });
    let comps = connected_components(&cluster, Connectivity::Eight);
    let mut labels = Raster::from_fn(w, h, |x, y| {
        if ink.get(x, y) {
            0
        } else {
            comps.labels.get(x, y)
        }
    });
    if !absorb_ink(&mut labels) {
        // Nothing but ink: one region.
        return Ok(RegionMap::from_labels(Raster::filled(w, h, 1, 1)));
    }

    let mut segs: BTreeMap<u32, Segment> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let s = segs.entry(labels.get(x, y)).or_insert(Segment {
                size: 0,
                color_sum: [0.0; 3],
                color_n: 0.0,
            });
            s.size += 1;
            if !ink.get(x, y) {
                let c = to_f64(img.rgb(x, y));
                for ch in 0..3 {
                    s.color_sum[ch] += c[ch];
                }
                s.color_n += 1.0;
            }
        }
    }
    merge_fragments(&mut labels, &mut segs, params.min_fragment_px);

    let mut on_border: BTreeMap<u32, bool> = BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                on_border.insert(labels.get(x, y), true);
            }
        }
    }
    let background: Vec<u32> = segs
        .iter()
        .filter(|(id, s)| {
            on_border.contains_key(id) && rgb_distance(s.mean(), [255.0; 3]) <= WHITE_TOL
        })
        .map(|(&id, _)| id)
        .collect();
    if background.len() < segs.len() {
        for v in labels.data_mut() {
            if background.contains(v) {
                *v = 0;
            }
        }
    }
    Ok(RegionMap::relabeled(&labels))
}

/// A matched point pair with coordinates `(x, y)` in each image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointMatch {
    pub point_a: (usize, usize),
    pub point_b: (usize, usize),
    pub confidence: f64,
}

/// Source of point correspondences between two colored images.
pub trait KeypointMatcher {
    fn match_points(&self, a: &RgbImage, b: &RgbImage) -> Result<Vec<KeypointMatch>>;
}

/// Harris corners described by normalized color patches and matched by
/// mutual nearest neighbour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarrisMatcher {
    pub max_keypoints: usize,
    /// Side of the square descriptor window (odd).
    pub window: usize,
    /// Corner responses below this fraction of the image maximum are dropped.
    pub response_ratio: f64,
    pub nms_radius: usize,
    /// Minimum descriptor correlation for a match.
    pub min_correlation: f64,
}

impl Default for HarrisMatcher {
    fn default() -> Self {
        Self {
            max_keypoints: 400,
            window: 11,
            response_ratio: 0.01,
            nms_radius: 2,
            min_correlation: 0.8,
        }
    }
}

impl HarrisMatcher {
    /// Corner locations sorted by decreasing response (ties in scan order).
    pub fn corners(&self, img: &RgbImage) -> Result<Vec<(usize, usize)>> {
        let gray = img.to_gray();
        let (w, h) = gray.dims();
        let r = self.window / 2;
        if w <= 2 * r || h <= 2 * r {
            return Ok(Vec::new());
        }
        let g = |x: isize, y: isize| gray.get_clamped(x, y) as f64;
        let mut ixx = Raster::filled(w, h, 1, 0.0f64);
        let mut iyy = ixx.clone();
        let mut ixy = ixx.clone();
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as isize, y as isize);
                let dx = 0.5 * (g(xi + 1, yi) - g(xi - 1, yi));
                let dy = 0.5 * (g(xi, yi + 1) - g(xi, yi - 1));
                ixx.set(x, y, dx * dx);
                iyy.set(x, y, dy * dy);
                ixy.set(x, y, dx * dy);
            }
        }
        let (sxx, syy, sxy) = (
            gaussian_smooth(&ixx, 1.5)?,
            gaussian_smooth(&iyy, 1.5)?,
            gaussian_smooth(&ixy, 1.5)?,
        );
        let resp = Raster::from_fn(w, h, |x, y| {
            let (a, b, c) = (sxx.get(x, y), syy.get(x, y), sxy.get(x, y));
            a * b - c * c - 0.04 * (a + b) * (a + b)
        });
        let max = resp.data().iter().copied().fold(0.0f64, f64::max);
        if max <= 0.0 {
            return Ok(Vec::new());
        }
        let floor = self.response_ratio * max;
        let nr = self.nms_radius as isize;
        let mut pts = Vec::new();
        for y in r..h - r {
            for x in r..w - r {
                let v = resp.get(x, y);
                if v <= floor {
                    continue;
                }
                let mut is_max = true;
                'nms: for dy in -nr..=nr {
                    for dx in -nr..=nr {
                        if (dx, dy) == (0, 0) {
                            continue;
                        }
                        let u = resp.get_clamped(x as isize + dx, y as isize + dy);
                        // Plateaus keep their first pixel in scan order.
                        if u > v || (u == v && (dy < 0 || (dy == 0 && dx < 0))) {
                            is_max = false;
                            break 'nms;
                        }
                    }
                }
                if is_max {
                    pts.push((v, x, y));
                }
            }
        }
        pts.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        pts.truncate(self.max_keypoints);
        Ok(pts.into_iter().map(|(_, x, y)| (x, y)).collect())
    }

    /// Zero-mean unit-norm color patch around `(x, y)`, or None when flat.
    fn descriptor(&self, img: &RgbImage, x: usize, y: usize) -> Option<Vec<f64>> {
        let r = (self.window / 2) as isize;
        let mut d = Vec::with_capacity(self.window * self.window * 3);
        for dy in -r..=r {
            for dx in -r..=r {
                let c = img.rgb((x as isize + dx) as usize, (y as isize + dy) as usize);
                d.extend(c.iter().map(|&v| v as f64));
            }
        }
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        d.iter_mut().for_each(|v| *v -= mean);
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return None;
        }
        d.iter_mut().for_each(|v| *v /= norm);
        Some(d)
    }

    fn describe(&self, img: &RgbImage) -> Result<Vec<((usize, usize), Vec<f64>)>> {
        Ok(self
            .corners(img)?
            .into_iter()
            .filter_map(|(x, y)| self.descriptor(img, x, y).map(|d| ((x, y), d)))
            .collect())
    }
}

impl KeypointMatcher for HarrisMatcher {
    fn match_points(&self, a: &RgbImage, b: &RgbImage) -> Result<Vec<KeypointMatch>> {
        require_rgb(a)?;
        require_rgb(b)?;
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::invalid("descriptor window must be odd"));
        }
        let da = self.describe(a)?;
        let db = self.describe(b)?;
        if da.is_empty() || db.is_empty() {
            return Ok(Vec::new());
        }
        let corr: Vec<Vec<f64>> = da
            .iter()
            .map(|(_, u)| db.iter().map(|(_, v)| u.iter().zip(v).map(|(p, q)| p * q).sum()).collect())
            .collect();
        let argmax = |it: &mut dyn Iterator<Item = (usize, f64)>| {
            it.fold((0usize, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
        };
        let best_b: Vec<(usize, f64)> = corr.iter().map(|row| argmax(&mut row.iter().copied().enumerate())).collect();
        let best_a: Vec<usize> = (0..db.len())
            .map(|j| argmax(&mut corr.iter().map(|row| row[j]).enumerate()).0)
            .collect();
        let mut out = Vec::new();
        for (i, &(j, c)) in best_b.iter().enumerate() {
            if best_a[j] == i && c >= self.min_correlation {
                out.push(KeypointMatch {
                    point_a: da[i].0,
                    point_b: db[j].0,
                    confidence: c.clamp(0.0, 1.0),
                });
            }
        }
        Ok(out)
    }
}

/// Corresponding pixel pairs from 5x5 neighbourhoods around each match,
/// applying the same offset on both sides. Offsets that leave either image
/// are dropped.
pub fn expand_keypoints(
    matches: &[KeypointMatch],
    dims_a: (usize, usize),
    dims_b: (usize, usize),
) -> Vec<((usize, usize), (usize, usize))> {
    let inside = |p: (usize, usize), d: (isize, isize), dims: (usize, usize)| {
        let (x, y) = (p.0 as isize + d.0, p.1 as isize + d.1);
        (x >= 0 && y >= 0 && x < dims.0 as isize && y < dims.1 as isize).then_some((x as usize, y as usize))
    };
    let mut out = Vec::with_capacity(matches.len() * 25);
    for m in matches {
        for dy in -2..=2 {
            for dx in -2..=2 {
                if let (Some(pa), Some(pb)) = (inside(m.point_a, (dx, dy), dims_a), inside(m.point_b, (dx, dy), dims_b)) {
                    out.push((pa, pb));
                }
            }
        }
    }
    out
}

/// Vote histogram: for each region of `a`, counts of `b` regions hit by
/// pixel pairs whose endpoints are within `color_filter_tol` of their own
/// region's mean color.
pub fn vote_histogram(
    regions_a: &RegionMap,
    regions_b: &RegionMap,
    colored_a: &RgbImage,
    colored_b: &RgbImage,
    pixel_pairs: &[((usize, usize), (usize, usize))],
    params: &AutoLabelParams,
) -> Result<BTreeMap<u32, BTreeMap<u32, usize>>> {
    for (m, c, side) in [(regions_a, colored_a, "a"), (regions_b, colored_b, "b")] {
        require_rgb(c)?;
        if (m.width(), m.height()) != c.dims() {
            return Err(Error::dims(format!(
                "side {side}: region map {}x{} vs image {:?}",
                m.width(),
                m.height(),
                c.dims()
            )));
        }
    }
    let mean_a = regions_a.mean_colors(colored_a);
    let mean_b = regions_b.mean_colors(colored_b);
    let tol = params.color_filter_tol;
    let mut hist: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for &(pa, pb) in pixel_pairs {
        let ra = regions_a.labels().get(pa.0, pa.1);
        let rb = regions_b.labels().get(pb.0, pb.1);
        if ra == 0 || rb == 0 {
            continue;
        }
        let ok_a = rgb_distance(to_f64(colored_a.rgb(pa.0, pa.1)), mean_a[&ra]) <= tol;
        let ok_b = rgb_distance(to_f64(colored_b.rgb(pb.0, pb.1)), mean_b[&rb]) <= tol;
        if ok_a && ok_b {
            *hist.entry(ra).or_default().entry(rb).or_default() += 1;
        }
    }
    Ok(hist)
}

/// Each region of `a` paired with its most-voted `b` region (ties to the
/// smaller id). The score is the winner's share of that region's votes.
pub fn vote_match(
    regions_a: &RegionMap,
    regions_b: &RegionMap,
    colored_a: &RgbImage,
    colored_b: &RgbImage,
    pixel_pairs: &[((usize, usize), (usize, usize))],
    params: &AutoLabelParams,
) -> Result<CorrSet> {
    let hist = vote_histogram(regions_a, regions_b, colored_a, colored_b, pixel_pairs, params)?;
    let pairs = hist
        .into_iter()
        .map(|(a, votes)| {
            let total: usize = votes.values().sum();
            let (b, n) = votes
                .into_iter()
                .fold((0, 0), |best, (b, n)| if n > best.1 { (b, n) } else { best });
            CorrPair { a, b, score: n as f64 / total as f64, dir: Direction::AToB }
        })
        .collect();
    Ok(CorrSet { pairs, ..CorrSet::default() })
}

/// Positional and color agreement of two regions in [0, 1].
pub fn coarse_score(
    centroid_a: (f64, f64),
    centroid_b: (f64, f64),
    color_a: [f64; 3],
    color_b: [f64; 3],
    diagonal: f64,
    params: &AutoLabelParams,
) -> f64 {
    let dpos = ((centroid_a.0 - centroid_b.0).hypot(centroid_a.1 - centroid_b.1) / diagonal).min(1.0);
    let dcol = (rgb_distance(color_a, color_b) / (255.0 * 3f64.sqrt())).min(1.0);
    params.coarse_pos_weight * (1.0 - dpos) + params.coarse_color_weight * (1.0 - dcol)
}

/// Fallback pairs for `unmatched` regions of `a`: the best-scoring `b`
/// region (ties to the smaller id) when its score reaches the threshold.
pub fn coarse_match(
    unmatched: &[u32],
    regions_a: &RegionMap,
    regions_b: &RegionMap,
    colored_a: &RgbImage,
    colored_b: &RgbImage,
    params: &AutoLabelParams,
) -> Result<Vec<CorrPair>> {
    let ca = regions_a.centroids();
    let cb = regions_b.centroids();
    let ma = regions_a.mean_colors(colored_a);
    let mb = regions_b.mean_colors(colored_b);
    let diag = |m: &RegionMap| (m.width() as f64).hypot(m.height() as f64);
    let diagonal = diag(regions_a).max(diag(regions_b)).max(1.0);
    let mut out = Vec::new();
    for &a in unmatched {
        let (Some(&pa), Some(&col_a)) = (ca.get(&a), ma.get(&a)) else {
            return Err(Error::invalid(format!("region {a} does not exist in image a")));
        };
        let best = cb
            .iter()
            .map(|(&b, &pb)| (b, coarse_score(pa, pb, col_a, mb[&b], diagonal, params)))
            .fold(None::<(u32, f64)>, |best, (b, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((b, s)),
            });
        if let Some((b, s)) = best {
            if s >= params.coarse_threshold {
                out.push(CorrPair { a, b, score: s, dir: Direction::AToB });
            }
        }
    }
    Ok(out)
}

/// Auto-labelled pair: region maps of both images and their correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoLabel {
    pub regions_a: RegionMap,
    pub regions_b: RegionMap,
    pub corr: CorrSet,
}

/// Segments both images, votes with expanded keypoint matches, falls back
/// to coarse matching for regions without votes.
pub fn autolabel_pair(
    colored_a: &RgbImage,
    colored_b: &RgbImage,
    params: &AutoLabelParams,
    matcher: &dyn KeypointMatcher,
) -> Result<AutoLabel> {
    let regions_a = segment_colored(colored_a, params)?;
    let regions_b = segment_colored(colored_b, params)?;
    let matches = matcher.match_points(colored_a, colored_b)?;
    let pixels = expand_keypoints(&matches, colored_a.dims(), colored_b.dims());
    let mut corr = vote_match(&regions_a, &regions_b, colored_a, colored_b, &pixels, params)?;
    let voted: Vec<u32> = corr.pairs.iter().map(|p| p.a).collect();
    let rest: Vec<u32> = regions_a.ids().filter(|id| !voted.contains(id)).collect();
    corr.pairs.extend(coarse_match(&rest, &regions_a, &regions_b, colored_a, colored_b, params)?);
    corr.pairs.sort_by_key(|p| (p.a, p.b));
    let ids_a: Vec<u32> = regions_a.ids().collect();
    let ids_b: Vec<u32> = regions_b.ids().collect();
    corr.fill_unmatched(&ids_a, &ids_b);
    Ok(AutoLabel { regions_a, regions_b, corr })
}
