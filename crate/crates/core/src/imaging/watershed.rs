use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{EdgeMap, LabelMap, Raster};
use crate::error::{Error, Result};

#[derive(Debug, PartialEq)]
struct Entry {
    magnitude: f64,
    pixel: usize,
    seq: u64,
    label: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Reversed so the max-heap pops the smallest (magnitude, pixel, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .magnitude
            .total_cmp(&self.magnitude)
            .then_with(|| other.pixel.cmp(&self.pixel))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Marker-based priority flooding over a 4-connected grid.
///
/// Pixels leave the queue in ascending edge magnitude, ties broken by raster
/// index then by enqueue order; each unlabeled pixel takes the label of the
/// neighbor that enqueued it. Seed pixels keep their labels.
pub fn watershed(edges: &EdgeMap, seeds: &LabelMap) -> Result<LabelMap> {
    let (w, h) = seeds.dims();
    if edges.width() != w || edges.height() != h {
        return Err(Error::dims(format!(
            "edge map {}x{} vs seeds {}x{}",
            edges.width(),
            edges.height(),
            w,
            h
        )));
    }
    seeds.require_single_channel("watershed")?;
    if !seeds.data().iter().any(|&l| l != 0) {
        return Err(Error::invalid("watershed needs at least one nonzero seed"));
    }

    let mut out = seeds.data().to_vec();
    let mag = edges.magnitude();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let push_neighbors = |heap: &mut BinaryHeap<Entry>, out: &[u32], i: usize, seq: &mut u64| {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if out[j] == 0 {
                heap.push(Entry {
                    magnitude: mag[j],
                    pixel: j,
                    seq: *seq,
                    label: out[i],
                });
                *seq += 1;
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
    };

    for i in 0..w * h {
        if out[i] != 0 {
            push_neighbors(&mut heap, &out, i, &mut seq);
        }
    }
    while let Some(e) = heap.pop() {
        if out[e.pixel] != 0 {
            continue;
        }
        out[e.pixel] = e.label;
        push_neighbors(&mut heap, &out, e.pixel, &mut seq);
    }
    Raster::new(w, h, 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_seed_floods_everything() {
        let edges = EdgeMap::new(5, 4, (0..20).map(|i| (i * 7 % 5) as f64).collect()).unwrap();
        let mut seeds = Raster::filled(5, 4, 1, 0u32);
        seeds.set(3, 2, 9);
        let out = watershed(&edges, &seeds).unwrap();
        assert!(out.data().iter().all(|&l| l == 9));
    }

    #[test]
    fn ridge_separates_two_seeds() {
        // 8x8 flat field with a ridge on column 4.
        let mag = (0..64).map(|i| if i % 8 == 4 { 100.0 } else { 0.0 }).collect();
        let edges = EdgeMap::new(8, 8, mag).unwrap();
        let mut seeds = Raster::filled(8, 8, 1, 0u32);
        seeds.set(0, 0, 1);
        seeds.set(7, 7, 2);
        let out = watershed(&edges, &seeds).unwrap();
        for y in 0..8 {
            for x in 0..4 {
                assert_eq!(out.get(x, y), 1, "({x},{y})");
            }
            for x in 5..8 {
                assert_eq!(out.get(x, y), 2, "({x},{y})");
            }
        }
        // Both basins are flooded before the ridge, and the ridge pixels are
        // taken in raster order; the first ridge pixel (4,0) is reached by
        // label 1 whose basin touches it first in scan order.
        assert_eq!(out.get(4, 0), 1);
    }

    #[test]
    fn full_seeds_unchanged() {
        let edges = EdgeMap::zeros(3, 3);
        let seeds = Raster::from_fn(3, 3, |x, y| (x + y + 1) as u32);
        assert_eq!(watershed(&edges, &seeds).unwrap(), seeds);
    }

    #[test]
    fn errors() {
        let edges = EdgeMap::zeros(3, 3);
        assert!(watershed(&edges, &Raster::filled(3, 3, 1, 0u32)).is_err());
        assert!(watershed(&edges, &Raster::filled(4, 3, 1, 1u32)).is_err());
    }
}
