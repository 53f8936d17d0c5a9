use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabelMap, Raster, RgbImage};
use crate::error::{Error, Result};

const MAX_ITERS: usize = 100;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Cluster centers in RGB.
    pub palette: Vec<[f64; 3]>,
    /// Per-pixel cluster index into `palette` (0-based).
    pub assignment: LabelMap,
    /// Within-cluster sum of squared RGB distances after the final step.
    pub inertia: f64,
    /// Objective value after every assignment step.
    pub history: Vec<f64>,
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(palette: &[[f64; 3]], c: [f64; 3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, &p) in palette.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Lloyd's k-means in plain RGB with k-means++ seeding.
///
/// Works on the distinct-color histogram, so cost scales with the number of
/// unique colors rather than pixels. `k` is reduced to the number of distinct
/// colors when the image has fewer.
pub fn kmeans_colors(img: &RgbImage, k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::invalid("k-means needs k >= 1"));
    }
    if img.channels() != 3 {
        return Err(Error::invalid(format!(
            "k-means expects an RGB raster, got {} channels",
            img.channels()
        )));
    }
    let (w, h) = img.dims();
    if img.is_empty() {
        return Err(Error::Degenerate("k-means on an empty image".into()));
    }

    let mut hist: BTreeMap<[u8; 3], u64> = BTreeMap::new();
    for p in img.data().chunks_exact(3) {
        *hist.entry([p[0], p[1], p[2]]).or_default() += 1;
    }
    let colors: Vec<[f64; 3]> = hist
        .keys()
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();
    let counts: Vec<f64> = hist.values().map(|&n| n as f64).collect();
    let k = k.min(colors.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut palette: Vec<[f64; 3]> = Vec::with_capacity(k);
    // First center weighted by pixel count, the rest by count * D^2.
    let total: f64 = counts.iter().sum();
    palette.push(colors[pick_weighted(&mut rng, &counts, total)]);
    let mut d2: Vec<f64> = colors.iter().map(|&c| sq_dist(c, palette[0])).collect();
    while palette.len() < k {
        let weights: Vec<f64> = d2.iter().zip(&counts).map(|(d, n)| d * n).collect();
        let sum: f64 = weights.iter().sum();
        let idx = pick_weighted(&mut rng, &weights, sum);
        palette.push(colors[idx]);
        for (d, &c) in d2.iter_mut().zip(&colors) {
            *d = d.min(sq_dist(c, colors[idx]));
        }
    }

    let mut assign: Vec<usize> = colors.iter().map(|&c| nearest(&palette, c)).collect();
    let objective = |palette: &[[f64; 3]], assign: &[usize]| -> f64 {
        colors
            .iter()
            .zip(assign)
            .zip(&counts)
            .map(|((&c, &a), &n)| n * sq_dist(c, palette[a]))
            .sum()
    };
    let mut history = vec![objective(&palette, &assign)];
    for _ in 0..MAX_ITERS {
        let mut sums = vec![[0.0f64; 3]; k];
        let mut mass = vec![0.0f64; k];
        for ((c, &a), &n) in colors.iter().zip(&assign).zip(&counts) {
            for ch in 0..3 {
                sums[a][ch] += n * c[ch];
            }
            mass[a] += n;
        }
        for j in 0..k {
            if mass[j] > 0.0 {
                palette[j] = [sums[j][0] / mass[j], sums[j][1] / mass[j], sums[j][2] / mass[j]];
            }
        }
        let next: Vec<usize> = colors.iter().map(|&c| nearest(&palette, c)).collect();
        let changed = next != assign;
        assign = next;
        history.push(objective(&palette, &assign));
        if !changed {
            break;
        }
    }

    let lookup: BTreeMap<[u8; 3], u32> = hist
        .keys()
        .zip(&assign)
        .map(|(&c, &a)| (c, a as u32))
        .collect();
    let labels: Vec<u32> = img
        .data()
        .chunks_exact(3)
        .map(|p| lookup[&[p[0], p[1], p[2]]])
        .collect();
    Ok(KMeansResult {
        inertia: *history.last().expect("non-empty"),
        palette,
        assignment: Raster::new(w, h, 1, labels)?,
        history,
    })
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64], total: f64) -> usize {
    if !(total > 0.0) {
        return 0;
    }
    let mut t = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if t < w {
            return i;
        }
        t -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Within-cluster sum of squares of an assignment, recomputing each center
/// as the mean of its members.
pub fn within_cluster_ss(img: &RgbImage, assignment: &LabelMap) -> f64 {
    let mut sums: BTreeMap<u32, ([f64; 3], f64)> = BTreeMap::new();
    for (p, &a) in img.data().chunks_exact(3).zip(assignment.data()) {
        let e = sums.entry(a).or_insert(([0.0; 3], 0.0));
        for ch in 0..3 {
            e.0[ch] += p[ch] as f64;
        }
        e.1 += 1.0;
    }
    img.data()
        .chunks_exact(3)
        .zip(assignment.data())
        .map(|(p, a)| {
            let (s, n) = sums[a];
            let mean = [s[0] / n, s[1] / n, s[2] / n];
            sq_dist([p[0] as f64, p[1] as f64, p[2] as f64], mean)
        })
        .sum()
}
