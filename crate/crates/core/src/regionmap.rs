//! Pixel-level region labeling of one image plus per-region patch membership.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{LabelMap, Raster};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub id: u32,
    pub pixel_count: usize,
    #[serde(default)]
    pub member_patches: Vec<usize>,
}

/// Label raster (0 = background) with one [`RegionInfo`] per nonzero id,
/// sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    labels: LabelMap,
    regions: Vec<RegionInfo>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    regions: Vec<RegionInfo>,
}

impl RegionMap {
    /// Builds region records from a label raster. Member patches start empty.
    pub fn from_labels(labels: LabelMap) -> Self {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in labels.data() {
            if l != 0 {
                *counts.entry(l).or_default() += 1;
            }
        }
        let regions = counts
            .into_iter()
            .map(|(id, pixel_count)| RegionInfo {
                id,
                pixel_count,
                member_patches: Vec::new(),
            })
            .collect();
        Self { labels, regions }
    }

    /// Renumbers nonzero labels to 1..=k in order of first appearance in
    /// raster-scan order.
    pub fn relabeled(labels: &LabelMap) -> Self {
        let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
        let mut next = 0;
        let relabeled = labels.map(|l| l);
        let mut out = relabeled;
        for v in out.data_mut() {
            if *v == 0 {
                continue;
            }
            let id = *remap.entry(*v).or_insert_with(|| {
                next += 1;
                next
            });
            *v = id;
        }
        Self::from_labels(out)
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn regions(&self) -> &[RegionInfo] {
        &self.regions
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.regions.iter().map(|r| r.id)
    }

    pub fn region(&self, id: u32) -> Option<&RegionInfo> {
        self.regions
            .binary_search_by_key(&id, |r| r.id)
            .ok()
            .map(|i| &self.regions[i])
    }

    pub fn contains(&self, id: u32) -> bool {
        self.region(id).is_some()
    }

    /// Records which patches belong to which region. `patch_ids[k]` is the
    /// id of patch `k`, or `None` when unassigned.
    pub fn set_patch_membership(&mut self, patch_ids: &[Option<u32>]) {
        for r in &mut self.regions {
            r.member_patches.clear();
        }
        for (k, id) in patch_ids.iter().enumerate() {
            if let Some(id) = id {
                if let Ok(i) = self.regions.binary_search_by_key(id, |r| r.id) {
                    self.regions[i].member_patches.push(k);
                }
            }
        }
    }

    /// Inverse of [`set_patch_membership`](Self::set_patch_membership) for a
    /// grid of `n` patches.
    pub fn patch_ids(&self, n: usize) -> Vec<Option<u32>> {
        let mut out = vec![None; n];
        for r in &self.regions {
            for &p in &r.member_patches {
                if p < n {
                    out[p] = Some(r.id);
                }
            }
        }
        out
    }

    /// Mean RGB color of each region over `img`.
    pub fn mean_colors(&self, img: &Raster<u8>) -> BTreeMap<u32, [f64; 3]> {
        let mut sums: BTreeMap<u32, ([f64; 3], f64)> = BTreeMap::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                let l = self.labels.get(x, y);
                if l == 0 {
                    continue;
                }
                let c = img.rgb(x, y);
                let e = sums.entry(l).or_insert(([0.0; 3], 0.0));
                for ch in 0..3 {
                    e.0[ch] += c[ch] as f64;
                }
                e.1 += 1.0;
            }
        }
        sums.into_iter()
            .map(|(id, (s, n))| (id, [s[0] / n, s[1] / n, s[2] / n]))
            .collect()
    }

    /// Pixel centroid `(x, y)` of each region.
    pub fn centroids(&self) -> BTreeMap<u32, (f64, f64)> {
        let mut sums: BTreeMap<u32, (f64, f64, f64)> = BTreeMap::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                let l = self.labels.get(x, y);
                if l != 0 {
                    let e = sums.entry(l).or_insert((0.0, 0.0, 0.0));
                    e.0 += x as f64;
                    e.1 += y as f64;
                    e.2 += 1.0;
                }
            }
        }
        sums.into_iter()
            .map(|(id, (sx, sy, n))| (id, (sx / n, sy / n)))
            .collect()
    }

    /// Path of the JSON sidecar that accompanies a label PNG.
    pub fn sidecar_path(png: &Path) -> PathBuf {
        png.with_extension("json")
    }

    /// Writes the 16-bit label PNG and its JSON sidecar.
    pub fn save(&self, png: &Path) -> Result<()> {
        io::write_label_png(png, &self.labels)?;
        let side = Sidecar {
            regions: self.regions.clone(),
        };
        io::write_json(&Self::sidecar_path(png), &side)
    }

    pub fn load(png: &Path) -> Result<Self> {
        let labels = io::read_label_png(png)?;
        let mut map = Self::from_labels(labels);
        let side_path = Self::sidecar_path(png);
        if side_path.exists() {
            let side: Sidecar = io::read_json(&side_path)?;
            for r in &side.regions {
                match map.regions.binary_search_by_key(&r.id, |x| x.id) {
                    Ok(i) if map.regions[i].pixel_count == r.pixel_count => {
                        map.regions[i].member_patches = r.member_patches.clone();
                    }
                    Ok(i) => {
                        return Err(Error::format(format!(
                            "{}: region {} has {} pixels in the PNG but {} in the sidecar",
                            side_path.display(),
                            r.id,
                            map.regions[i].pixel_count,
                            r.pixel_count
                        )))
                    }
                    Err(_) => {
                        return Err(Error::format(format!(
                            "{}: region {} missing from the label PNG",
                            side_path.display(),
                            r.id
                        )))
                    }
                }
            }
        }
        Ok(map)
    }
}
