//! Region correspondence sets and their JSON form:
//! `{"pairs":[{"a":3,"b":7,"score":0.041,"dir":"both"}],"unmatched_a":[..],"unmatched_b":[..]}`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::regionmap::RegionMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a_to_b")]
    AToB,
    #[serde(rename = "b_to_a")]
    BToA,
    #[serde(rename = "both")]
    Both,
}

impl Direction {
    pub fn swapped(self) -> Self {
        match self {
            Direction::AToB => Direction::BToA,
            Direction::BToA => Direction::AToB,
            Direction::Both => Direction::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrPair {
    pub a: u32,
    pub b: u32,
    pub score: f64,
    pub dir: Direction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrSet {
    pub pairs: Vec<CorrPair>,
    #[serde(default)]
    pub unmatched_a: Vec<u32>,
    #[serde(default)]
    pub unmatched_b: Vec<u32>,
}

impl CorrSet {
    /// One-to-one pairs between equal ids present on both sides.
    pub fn identity(ids_a: &[u32], ids_b: &[u32]) -> Self {
        let b: BTreeSet<u32> = ids_b.iter().copied().collect();
        let pairs = ids_a
            .iter()
            .filter(|id| b.contains(id))
            .map(|&id| CorrPair {
                a: id,
                b: id,
                score: 1.0,
                dir: Direction::Both,
            })
            .collect();
        let mut set = Self {
            pairs,
            ..Self::default()
        };
        set.fill_unmatched(ids_a, ids_b);
        set
    }

    pub fn contains(&self, a: u32, b: u32) -> bool {
        self.pairs.iter().any(|p| p.a == a && p.b == b)
    }

    pub fn pair_keys(&self) -> BTreeSet<(u32, u32)> {
        self.pairs.iter().map(|p| (p.a, p.b)).collect()
    }

    /// Sorts pairs by `(a, b)` and recomputes the unmatched lists from the
    /// given id universes.
    pub fn fill_unmatched(&mut self, ids_a: &[u32], ids_b: &[u32]) {
        self.pairs.sort_by_key(|p| (p.a, p.b));
        let used_a: BTreeSet<u32> = self.pairs.iter().map(|p| p.a).collect();
        let used_b: BTreeSet<u32> = self.pairs.iter().map(|p| p.b).collect();
        let mut ua: Vec<u32> = ids_a.iter().copied().filter(|i| !used_a.contains(i)).collect();
        let mut ub: Vec<u32> = ids_b.iter().copied().filter(|i| !used_b.contains(i)).collect();
        ua.sort_unstable();
        ua.dedup();
        ub.sort_unstable();
        ub.dedup();
        self.unmatched_a = ua;
        self.unmatched_b = ub;
    }

    /// The same correspondences seen from the other image.
    pub fn swapped(&self) -> Self {
        let mut pairs: Vec<CorrPair> = self
            .pairs
            .iter()
            .map(|p| CorrPair {
                a: p.b,
                b: p.a,
                score: p.score,
                dir: p.dir.swapped(),
            })
            .collect();
        pairs.sort_by_key(|p| (p.a, p.b));
        Self {
            pairs,
            unmatched_a: self.unmatched_b.clone(),
            unmatched_b: self.unmatched_a.clone(),
        }
    }

    /// Checks ids against both region maps, duplicate pairs, and score range.
    pub fn validate(&self, regions_a: &RegionMap, regions_b: &RegionMap) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in &self.pairs {
            if !regions_a.contains(p.a) {
                return Err(Error::invalid(format!("region {} does not exist in image a", p.a)));
            }
            if !regions_b.contains(p.b) {
                return Err(Error::invalid(format!("region {} does not exist in image b", p.b)));
            }
            if !seen.insert((p.a, p.b)) {
                return Err(Error::invalid(format!("duplicate pair ({}, {})", p.a, p.b)));
            }
            if !(0.0..=1.0).contains(&p.score) {
                return Err(Error::invalid(format!(
                    "pair ({}, {}) has score {} outside [0, 1]",
                    p.a, p.b, p.score
                )));
            }
        }
        for &id in &self.unmatched_a {
            if !regions_a.contains(id) {
                return Err(Error::invalid(format!("region {id} does not exist in image a")));
            }
        }
        for &id in &self.unmatched_b {
            if !regions_b.contains(id) {
                return Err(Error::invalid(format!("region {id} does not exist in image b")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Raster;

    #[test]
    fn json_shape() {
        let set = CorrSet {
            pairs: vec![CorrPair {
                a: 3,
                b: 7,
                score: 0.041,
                dir: Direction::Both,
            }],
            unmatched_a: vec![1],
            unmatched_b: vec![],
        };
        let s = serde_json::to_string(&set).unwrap();
        assert_eq!(
            s,
            r#"{"pairs":[{"a":3,"b":7,"score":0.041,"dir":"both"}],"unmatched_a":[1],"unmatched_b":[]}"#
        );
        let back: CorrSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn identity_and_unmatched() {
        let set = CorrSet::identity(&[1, 2, 3], &[1, 3, 4]);
        assert_eq!(set.pair_keys().into_iter().collect::<Vec<_>>(), vec![(1, 1), (3, 3)]);
        assert_eq!(set.unmatched_a, vec![2]);
        assert_eq!(set.unmatched_b, vec![4]);
    }

    #[test]
    fn validation_names_offender() {
        let a = RegionMap::from_labels(Raster::new(2, 1, 1, vec![1, 2]).unwrap());
        let b = RegionMap::from_labels(Raster::new(2, 1, 1, vec![1, 1]).unwrap());
        let mut set = CorrSet::identity(&[1, 2], &[1]);
        assert!(set.validate(&a, &b).is_ok());
        set.pairs.push(CorrPair {
            a: 2,
            b: 9,
            score: 0.5,
            dir: Direction::AToB,
        });
        let err = set.validate(&a, &b).unwrap_err().to_string();
        assert!(err.contains('9'), "{err}");
    }
}
