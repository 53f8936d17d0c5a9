//! Region similarity from cross-image patch similarities and threshold
//! matching in both directions.

use std::collections::BTreeMap;

use crate::corr::{CorrPair, CorrSet, Direction};
use crate::error::{Error, Result};
use crate::patchsim::BlockView;
use crate::regionmap::RegionMap;

/// Mean of `s_cross[p, q]` over all `p` in `ri` and `q` in `rj`.
pub fn region_similarity(ri: &[usize], rj: &[usize], s_cross: BlockView<'_, f32>) -> Result<f64> {
    if ri.is_empty() || rj.is_empty() {
        return Err(Error::invalid("region similarity needs non-empty patch sets"));
    }
    let mut sum = 0.0;
    for &p in ri {
        let row = s_cross.row(p);
        for &q in rj {
            sum += row[q] as f64;
        }
    }
    Ok(sum / (ri.len() * rj.len()) as f64)
}

/// Default threshold `1.5 / N`.
pub fn default_theta(n: usize) -> f64 {
    1.5 / n as f64
}

/// All region pairs whose directional similarity exceeds `theta` in either
/// direction. Pairs found both ways are marked `Both` with the larger score.
/// Regions without member patches take no part and end up unmatched.
pub fn greedy_match(
    regions_a: &RegionMap,
    regions_b: &RegionMap,
    s_ab: BlockView<'_, f32>,
    s_ba: BlockView<'_, f32>,
    theta: f64,
) -> Result<CorrSet> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!("threshold {theta} must lie in (0, 1)")));
    }
    if s_ab.n() != s_ba.n() {
        return Err(Error::dims("cross blocks differ in size"));
    }
    let n = s_ab.n();
    let members = |m: &RegionMap| -> Result<Vec<(u32, Vec<usize>)>> {
        let mut out = Vec::new();
        for r in m.regions() {
            if let Some(&bad) = r.member_patches.iter().find(|&&p| p >= n) {
                return Err(Error::dims(format!(
                    "region {} lists patch {bad} but blocks have {n} patches",
                    r.id
                )));
            }
            if !r.member_patches.is_empty() {
                out.push((r.id, r.member_patches.clone()));
            }
        }
        Ok(out)
    };
    let ma = members(regions_a)?;
    let mb = members(regions_b)?;
    let mut found: BTreeMap<(u32, u32), CorrPair> = BTreeMap::new();
    for (ia, pa) in &ma {
        for (ib, pb) in &mb {
            let s = region_similarity(pa, pb, s_ab)?;
            if s > theta {
                found.insert(
                    (*ia, *ib),
                    CorrPair {
                        a: *ia,
                        b: *ib,
                        score: s,
                        dir: Direction::AToB,
                    },
                );
            }
        }
    }
    for (ib, pb) in &mb {
        for (ia, pa) in &ma {
            let s = region_similarity(pb, pa, s_ba)?;
            if s > theta {
                found
                    .entry((*ia, *ib))
                    .and_modify(|p| {
                        p.dir = Direction::Both;
                        p.score = p.score.max(s);
                    })
                    .or_insert(CorrPair {
                        a: *ia,
                        b: *ib,
                        score: s,
                        dir: Direction::BToA,
                    });
            }
        }
    }
    let mut set = CorrSet {
        pairs: found.into_values().collect(),
        ..CorrSet::default()
    };
    let ids_a: Vec<u32> = regions_a.ids().collect();
    let ids_b: Vec<u32> = regions_b.ids().collect();
    set.fill_unmatched(&ids_a, &ids_b);
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Raster;
    use proptest::prelude::*;

    /// Region maps whose region `i` owns patches listed in `members[i-1]`.
    fn map_with(members: &[Vec<usize>]) -> RegionMap {
        let k = members.len();
        let mut m = RegionMap::from_labels(Raster::from_fn(k, 1, |x, _| x as u32 + 1));
        let n = members.iter().flatten().max().map_or(0, |&p| p + 1);
        let mut ids = vec![None; n];
        for (i, ps) in members.iter().enumerate() {
            for &p in ps {
                ids[p] = Some(i as u32 + 1);
            }
        }
        m.set_patch_membership(&ids);
        m
    }

    #[test]
    fn singleton_and_constant() {
        let s: Vec<f32> = (0..9).map(|v| v as f32 / 10.0).collect();
        let b = BlockView::square(&s, 3);
        assert!((region_similarity(&[1], &[2], b).unwrap() - 0.5).abs() < 1e-7);
        let c = vec![0.25f32; 9];
        let b = BlockView::square(&c, 3);
        assert_eq!(region_similarity(&[0, 1, 2], &[0, 2], b).unwrap(), 0.25);
        assert!(region_similarity(&[], &[0], b).is_err());
    }

    #[test]
    fn matches_double_loop() {
        let s: Vec<f32> = (0..36).map(|v| ((v * 17 % 23) as f32) / 23.0).collect();
        let b = BlockView::square(&s, 6);
        let (ri, rj) = ([0usize, 3, 5], [1usize, 4]);
        let mut want = 0.0f64;
        for p in ri {
            for q in rj {
                want += s[p * 6 + q] as f64;
            }
        }
        want /= 6.0;
        assert!((region_similarity(&ri, &rj, b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn one_region_each() {
        let m = map_with(&[vec![0]]);
        let s = vec![0.9f32];
        let b = BlockView::square(&s, 1);
        let c = greedy_match(&m, &m, b, b, 0.5).unwrap();
        assert_eq!(c.pairs.len(), 1);
        assert_eq!(c.pairs[0].dir, Direction::Both);
        let low = vec![0.1f32];
        let b = BlockView::square(&low, 1);
        let c = greedy_match(&m, &m, b, b, 0.5).unwrap();
        assert!(c.pairs.is_empty());
        assert_eq!((c.unmatched_a, c.unmatched_b), (vec![1], vec![1]));
    }

    #[test]
    fn three_by_three_enumeration() {
        // Regions own single patches, so directional scores are the entries.
        let m = map_with(&[vec![0], vec![1], vec![2]]);
        let ab = [0.7f32, 0.1, 0.0, 0.0, 0.2, 0.6, 0.0, 0.0, 0.05];
        let ba = [0.8f32, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.9, 0.3];
        let theta = 0.25;
        let c = greedy_match(&m, &m, BlockView::square(&ab, 3), BlockView::square(&ba, 3), theta)
            .unwrap();
        let mut want = BTreeMap::new();
        for i in 0..3 {
            for j in 0..3 {
                let f = ab[i * 3 + j] as f64;
                let r = ba[j * 3 + i] as f64;
                let dir = match (f > theta, r > theta) {
                    (true, true) => Some(Direction::Both),
                    (true, false) => Some(Direction::AToB),
                    (false, true) => Some(Direction::BToA),
                    _ => None,
                };
                if let Some(d) = dir {
                    want.insert((i as u32 + 1, j as u32 + 1), (d, f.max(r)));
                }
            }
        }
        let got: BTreeMap<_, _> = c.pairs.iter().map(|p| ((p.a, p.b), (p.dir, p.score))).collect();
        assert_eq!(got, want);
        assert_eq!(c.unmatched_a, Vec::<u32>::new());
    }

    #[test]
    fn memberless_regions_are_unmatched() {
        let mut m = map_with(&[vec![0], vec![]]);
        m.set_patch_membership(&[Some(1)]);
        let s = vec![0.9f32];
        let b = BlockView::square(&s, 1);
        let c = greedy_match(&m, &m, b, b, 0.5).unwrap();
        assert_eq!(c.unmatched_a, vec![2]);
    }

    fn blocks(seed: u64, n: usize) -> (Vec<f32>, Vec<f32>) {
        let mut s = seed | 1;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 1000) as f32 / 1000.0
        };
        let ab = (0..n * n).map(|_| next()).collect();
        let ba = (0..n * n).map(|_| next()).collect();
        (ab, ba)
    }

    proptest! {
        #[test]
        fn antitone_in_theta(seed in any::<u64>()) {
            let m = map_with(&[vec![0, 1], vec![2], vec![3, 4, 5]]);
            let (ab, ba) = blocks(seed, 6);
            let mut prev: Option<std::collections::BTreeSet<(u32, u32)>> = None;
            for k in 1..=10 {
                let theta = k as f64 / 11.0;
                let c = greedy_match(&m, &m, BlockView::square(&ab, 6), BlockView::square(&ba, 6), theta).unwrap();
                let keys = c.pair_keys();
                for p in &c.pairs {
                    prop_assert!(p.score > theta && p.score <= 1.0);
                }
                if let Some(prev) = &prev {
                    prop_assert!(keys.is_subset(prev));
                }
                prev = Some(keys);
            }
        }

        #[test]
        fn direction_union_is_symmetric(seed in any::<u64>(), theta in 0.05f64..0.9) {
            let ma = map_with(&[vec![0, 1], vec![2], vec![3, 4, 5]]);
            let mb = map_with(&[vec![0], vec![1, 2, 3], vec![4, 5]]);
            let (ab, ba) = blocks(seed, 6);
            let fwd = greedy_match(&ma, &mb, BlockView::square(&ab, 6), BlockView::square(&ba, 6), theta).unwrap();
            // Seen from b, the a->b block of the swapped pair is the old b->a block.
            let rev = greedy_match(&mb, &ma, BlockView::square(&ba, 6), BlockView::square(&ab, 6), theta).unwrap();
            prop_assert_eq!(fwd, rev.swapped());
        }

        #[test]
        fn every_region_listed_once(seed in any::<u64>(), theta in 0.05f64..0.9) {
            let m = map_with(&[vec![0, 1], vec![2], vec![3, 4, 5]]);
            let (ab, ba) = blocks(seed, 6);
            let c = greedy_match(&m, &m, BlockView::square(&ab, 6), BlockView::square(&ba, 6), theta).unwrap();
            for id in 1..=3u32 {
                let paired = c.pairs.iter().any(|p| p.a == id);
                prop_assert_eq!(paired, !c.unmatched_a.contains(&id));
            }
        }
    }
}
