//! Patch-level and region-level evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corr::CorrSet;
use crate::error::{Error, Result};
use crate::imaging::LabelMap;
use crate::patchsim::{Block, BlockView, GtMatrix, SimMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    IntraA,
    IntraB,
    Cross,
}

impl Scope {
    pub fn label(self) -> &'static str {
        match self {
            Scope::IntraA => "intra_a",
            Scope::IntraB => "intra_b",
            Scope::Cross => "cross",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEvalReport {
    pub scope: Scope,
    pub ap: f64,
    pub best_f1: f64,
    pub precision_at_best: f64,
    pub recall_at_best: f64,
    /// Top-K accuracy keyed by K (cross scope only).
    pub topk_accuracy: BTreeMap<usize, f64>,
    /// Number of pairs (images) averaged into this report.
    pub pairs: usize,
}

/// One point of the precision/recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every distinct score, highest first. Entries
/// with equal scores enter together.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::dims("scores and labels differ in length"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::Degenerate("no positive entries to evaluate".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(PrPoint {
            threshold: t,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(out)
}

/// Average precision (sum of precision times recall increments over the
/// sweep) and the best F1 with its precision and recall.
pub fn ap_and_f1(scores: &[f64], labels: &[bool]) -> Result<(f64, f64, f64, f64)> {
    let curve = pr_curve(scores, labels)?;
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    let mut best = (0.0, 0.0, 0.0);
    for p in &curve {
        ap += (p.recall - prev_r) * p.precision;
        prev_r = p.recall;
        let f1 = if p.precision + p.recall > 0.0 {
            2.0 * p.precision * p.recall / (p.precision + p.recall)
        } else {
            0.0
        };
        if f1 > best.0 {
            best = (f1, p.precision, p.recall);
        }
    }
    Ok((ap, best.0, best.1, best.2))
}

/// Entries of a block restricted to `rows`, optionally without the diagonal.
pub fn block_entries(
    s: BlockView<'_, f32>,
    g: BlockView<'_, u8>,
    rows: &[bool],
    skip_diagonal: bool,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = s.n();
    if g.n() != n || rows.len() != n {
        return Err(Error::dims("score block, truth block, and row mask differ in size"));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for p in (0..n).filter(|&p| rows[p]) {
        for q in 0..n {
            if skip_diagonal && p == q {
                continue;
            }
            scores.push(s.get(p, q) as f64);
            labels.push(g.get(p, q) != 0);
        }
    }
    Ok((scores, labels))
}

/// AP and best F1 of one block. Only rows flagged in `rows` count; intra
/// scopes drop the trivially positive diagonal.
pub fn patch_pr(
    s: BlockView<'_, f32>,
    g: BlockView<'_, u8>,
    rows: &[bool],
    scope: Scope,
) -> Result<PatchEvalReport> {
    let (scores, labels) = block_entries(s, g, rows, scope != Scope::Cross)?;
    let (ap, best_f1, precision_at_best, recall_at_best) = ap_and_f1(&scores, &labels)?;
    Ok(PatchEvalReport {
        scope,
        ap,
        best_f1,
        precision_at_best,
        recall_at_best,
        topk_accuracy: BTreeMap::new(),
        pairs: 1,
    })
}

/// Fraction of rows with at least one positive whose `k` best columns
/// (ties to the lower column) contain a positive.
pub fn topk(s_ab: BlockView<'_, f32>, g_ab: BlockView<'_, u8>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    let n = s_ab.n();
    if g_ab.n() != n {
        return Err(Error::dims("score and truth blocks differ in size"));
    }
    let (mut rows, mut hits) = (0usize, 0usize);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for p in 0..n {
        let g = g_ab.row(p);
        if !g.iter().any(|&v| v != 0) {
            continue;
        }
        rows += 1;
        let s = s_ab.row(p);
        order.clear();
        order.extend(0..n);
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
        if order.iter().take(k).any(|&q| g[q] != 0) {
            hits += 1;
        }
    }
    if rows == 0 {
        return Err(Error::Degenerate("no patch has a cross-image positive".into()));
    }
    Ok(hits as f64 / rows as f64)
}

/// Reports for the three scopes of one pair. A scope without positives is
/// omitted. `assigned_*` flag patches that hold a ground-truth region.
pub fn evaluate_patches(
    s: &SimMatrix,
    gt: &GtMatrix,
    assigned_a: &[bool],
    assigned_b: &[bool],
    ks: &[usize],
) -> Result<Vec<PatchEvalReport>> {
    if s.n() != gt.n() {
        return Err(Error::dims(format!(
            "similarity has n={} but ground truth n={}",
            s.n(),
            gt.n()
        )));
    }
    let mut out = Vec::new();
    for (scope, block, rows) in [
        (Scope::IntraA, Block::AA, assigned_a),
        (Scope::IntraB, Block::BB, assigned_b),
        (Scope::Cross, Block::AB, assigned_a),
    ] {
        match patch_pr(s.block(block), gt.block(block), rows, scope) {
            Ok(mut r) => {
                if scope == Scope::Cross {
                    for &k in ks {
                        r.topk_accuracy.insert(k, topk(s.s_ab(), gt.block(Block::AB), k)?);
                    }
                }
                out.push(r);
            }
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Per-scope mean of per-pair reports.
pub fn mean_patch_reports(reports: &[PatchEvalReport]) -> Vec<PatchEvalReport> {
    let mut by: BTreeMap<Scope, Vec<&PatchEvalReport>> = BTreeMap::new();
    for r in reports {
        by.entry(r.scope).or_default().push(r);
    }
    by.into_iter()
        .map(|(scope, rs)| {
            let n = rs.len() as f64;
            let mean = |f: fn(&PatchEvalReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let mut topk: BTreeMap<usize, f64> = BTreeMap::new();
            for r in &rs {
                for (&k, &v) in &r.topk_accuracy {
                    *topk.entry(k).or_default() += v / n;
                }
            }
            PatchEvalReport {
                scope,
                ap: mean(|r| r.ap),
                best_f1: mean(|r| r.best_f1),
                precision_at_best: mean(|r| r.precision_at_best),
                recall_at_best: mean(|r| r.recall_at_best),
                topk_accuracy: topk,
                pairs: rs.iter().map(|r| r.pairs).sum(),
            }
        })
        .collect()
}

fn same_dims(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dims(format!("label maps {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index over pixels whose ground-truth label is nonzero.
/// Two identical trivial partitions score 1.
pub fn ari(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    same_dims(pred, gt)?;
    let mut table: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut rows: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cols: BTreeMap<u32, u64> = BTreeMap::new();
    let mut n = 0u64;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g == 0 {
            continue;
        }
        *table.entry((p, g)).or_default() += 1;
        *rows.entry(p).or_default() += 1;
        *cols.entry(g).or_default() += 1;
        n += 1;
    }
    if n < 2 {
        return Err(Error::Degenerate("ARI needs at least two labelled pixels".into()));
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = a * b / choose2(n);
    let max = 0.5 * (a + b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn overlap_table(a: &LabelMap, b: &LabelMap) -> (BTreeMap<u32, u64>, BTreeMap<u32, u64>, BTreeMap<(u32, u32), u64>) {
    let mut ca: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cb: BTreeMap<u32, u64> = BTreeMap::new();
    let mut both: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *both.entry((x, y)).or_default() += 1;
    }
    (ca, cb, both)
}

/// Mean over nonzero `src` regions of the IoU with their largest-overlap
/// nonzero `dst` region (0 when they overlap none).
pub fn miou_directional(src: &LabelMap, dst: &LabelMap) -> Result<f64> {
    same_dims(src, dst)?;
    let (cs, cd, both) = overlap_table(src, dst);
    let ids: Vec<u32> = cs.keys().copied().filter(|&i| i != 0).collect();
    if ids.is_empty() {
        return Err(Error::Degenerate("source map has no regions".into()));
    }
    let mut best: BTreeMap<u32, (u32, u64)> = BTreeMap::new();
    for (&(s, d), &c) in &both {
        if s == 0 || d == 0 {
            continue;
        }
        let e = best.entry(s).or_insert((d, 0));
        if c > e.1 {
            *e = (d, c);
        }
    }
    let total: f64 = ids
        .iter()
        .map(|s| match best.get(s) {
            Some(&(d, inter)) => inter as f64 / (cs[s] + cd[&d] - inter) as f64,
            None => 0.0,
        })
        .sum();
    Ok(total / ids.len() as f64)
}

/// Predicted regions assigned to a nonzero ground-truth region (by largest
/// pixel overlap, background included and winning ties) per ground-truth
/// region.
pub fn cluster_ratio(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    same_dims(pred, gt)?;
    let (cp, cg, both) = overlap_table(pred, gt);
    let gt_regions = cg.keys().filter(|&&g| g != 0).count();
    if gt_regions == 0 {
        return Err(Error::Degenerate("ground truth has no regions".into()));
    }
    let mut assigned = 0usize;
    for &p in cp.keys().filter(|&&p| p != 0) {
        let mut winner = (0u32, 0u64);
        for (&(pp, g), &c) in both.range((p, 0)..=(p, u32::MAX)) {
            debug_assert_eq!(pp, p);
            if c > winner.1 {
                winner = (g, c);
            }
        }
        if winner.0 != 0 {
            assigned += 1;
        }
    }
    Ok(assigned as f64 / gt_regions as f64)
}

/// Purity and dominant ground-truth region of every nonzero predicted
/// region. Purity counts only nonzero ground-truth regions, so a region
/// lying mostly on the page background is impure.
pub fn purities(pred: &LabelMap, gt: &LabelMap) -> Result<BTreeMap<u32, (f64, u32)>> {
    same_dims(pred, gt)?;
    let (cp, _, both) = overlap_table(pred, gt);
    let mut out = BTreeMap::new();
    for (&p, &size) in cp.iter().filter(|(&p, _)| p != 0) {
        let mut winner = (0u32, 0u64);
        for (&(_, g), &c) in both.range((p, 1)..=(p, u32::MAX)) {
            if c > winner.1 {
                winner = (g, c);
            }
        }
        out.insert(p, (winner.1 as f64 / size as f64, winner.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMatchReport {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub evaluable: usize,
    pub correct: usize,
    pub gt_pairs: usize,
    /// Set when no predicted pair passed the purity filter; the fractions
    /// are then reported as 0.
    pub no_evaluable: bool,
}

/// Purity-filtered correctness of predicted region pairs.
pub fn region_match_eval(
    pred: &CorrSet,
    gt: &CorrSet,
    pred_a: &LabelMap,
    pred_b: &LabelMap,
    gt_a: &LabelMap,
    gt_b: &LabelMap,
    purity_min: f64,
) -> Result<RegionMatchReport> {
    if !(purity_min > 0.0 && purity_min <= 1.0) {
        return Err(Error::invalid("purity threshold must lie in (0, 1]"));
    }
    let pa = purities(pred_a, gt_a)?;
    let pb = purities(pred_b, gt_b)?;
    let gt_pairs = gt.pair_keys();
    let mut evaluable = 0;
    let mut correct = 0;
    let mut hit: BTreeSet<(u32, u32)> = BTreeSet::new();
    for p in &pred.pairs {
        let (Some(&(ua, ga)), Some(&(ub, gb))) = (pa.get(&p.a), pb.get(&p.b)) else {
            continue;
        };
        if ua.min(ub) <= purity_min {
            continue;
        }
        evaluable += 1;
        if gt_pairs.contains(&(ga, gb)) {
            correct += 1;
            hit.insert((ga, gb));
        }
    }
    let precision = if evaluable > 0 {
        correct as f64 / evaluable as f64
    } else {
        0.0
    };
    let recall = if gt_pairs.is_empty() {
        0.0
    } else {
        hit.len() as f64 / gt_pairs.len() as f64
    };
    Ok(RegionMatchReport {
        precision,
        recall,
        accuracy: precision,
        evaluable,
        correct,
        gt_pairs: gt_pairs.len(),
        no_evaluable: evaluable == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEvalReport {
    pub ari: f64,
    pub miou_p2g: f64,
    pub miou_g2p: f64,
    pub cr: f64,
    pub region_precision: f64,
    pub region_recall: f64,
    pub region_accuracy: f64,
    /// Pairs averaged into the segmentation columns.
    pub pairs: usize,
    /// Pairs that had at least one evaluable predicted region pair; the
    /// precision and accuracy columns average over these only.
    pub pairs_with_evaluable: usize,
}

/// Region metrics of one image pair: segmentation scores averaged over the
/// two images, matching scores from the purity-filtered pairs.
pub fn evaluate_regions(
    pred_corr: &CorrSet,
    gt_corr: &CorrSet,
    pred: (&LabelMap, &LabelMap),
    gt: (&LabelMap, &LabelMap),
    purity_min: f64,
) -> Result<RegionEvalReport> {
    let mut seg = [0.0; 4];
    for (p, g) in [(pred.0, gt.0), (pred.1, gt.1)] {
        seg[0] += ari(p, g)? / 2.0;
        seg[1] += miou_directional(p, g)? / 2.0;
        seg[2] += miou_directional(g, p)? / 2.0;
        seg[3] += cluster_ratio(p, g)? / 2.0;
    }
    let m = region_match_eval(pred_corr, gt_corr, pred.0, pred.1, gt.0, gt.1, purity_min)?;
    Ok(RegionEvalReport {
        ari: seg[0],
        miou_p2g: seg[1],
        miou_g2p: seg[2],
        cr: seg[3],
        region_precision: m.precision,
        region_recall: m.recall,
        region_accuracy: m.accuracy,
        pairs: 1,
        pairs_with_evaluable: usize::from(!m.no_evaluable),
    })
}

pub fn mean_region_reports(reports: &[RegionEvalReport]) -> Option<RegionEvalReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let with: Vec<&RegionEvalReport> = reports.iter().filter(|r| r.pairs_with_evaluable > 0).collect();
    let ne = with.len().max(1) as f64;
    Some(RegionEvalReport {
        ari: reports.iter().map(|r| r.ari).sum::<f64>() / n,
        miou_p2g: reports.iter().map(|r| r.miou_p2g).sum::<f64>() / n,
        miou_g2p: reports.iter().map(|r| r.miou_g2p).sum::<f64>() / n,
        cr: reports.iter().map(|r| r.cr).sum::<f64>() / n,
        region_precision: with.iter().map(|r| r.region_precision).sum::<f64>() / ne,
        region_recall: reports.iter().map(|r| r.region_recall).sum::<f64>() / n,
        region_accuracy: with.iter().map(|r| r.region_accuracy).sum::<f64>() / ne,
        pairs: reports.iter().map(|r| r.pairs).sum(),
        pairs_with_evaluable: with.iter().map(|r| r.pairs_with_evaluable).sum(),
    })
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header, &mut out);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&rule, &mut out);
    for r in rows {
        line(r, &mut out);
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Aligned text table: scope, AP, best F1, P, R, then one top-K column per K.
pub fn patch_table(reports: &[PatchEvalReport]) -> String {
    let ks: BTreeSet<usize> = reports.iter().flat_map(|r| r.topk_accuracy.keys().copied()).collect();
    let mut header: Vec<String> = ["scope", "AP", "F1", "P", "R"].map(String::from).to_vec();
    header.extend(ks.iter().map(|k| format!("top-{k}")));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.scope.label().to_string(),
                pct(r.ap),
                pct(r.best_f1),
                pct(r.precision_at_best),
                pct(r.recall_at_best),
            ];
            row.extend(ks.iter().map(|k| r.topk_accuracy.get(k).map_or("-".into(), |&v| pct(v))));
            row
        })
        .collect();
    table(&header, &rows)
}

pub fn region_table(r: &RegionEvalReport) -> String {
    let header = ["ARI", "mIoU P->G", "mIoU G->P", "CR", "Region P", "Region R", "Region Acc"]
        .map(String::from)
        .to_vec();
    let row = vec![
        pct(r.ari),
        pct(r.miou_p2g),
        pct(r.miou_g2p),
        format!("{:.2}", r.cr),
        pct(r.region_precision),
        pct(r.region_recall),
        pct(r.region_accuracy),
    ];
    table(&header, &[row])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::{CorrPair, Direction};
    use crate::imaging::Raster;
    use proptest::prelude::*;

    fn sweep_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut ts: Vec<f64> = scores.to_vec();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let mut ap = 0.0;
        let mut prev = 0.0;
        for t in ts {
            let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l).count() as f64;
            let all = scores.iter().filter(|&&s| s >= t).count() as f64;
            let r = tp / pos;
            ap += (r - prev) * (tp / all);
            prev = r;
        }
        ap
    }

    #[test]
    fn perfect_separation() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, true, false, false];
        let (ap, f1, p, r) = ap_and_f1(&s, &l).unwrap();
        assert_eq!((ap, f1, p, r), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn single_positive_last() {
        let m = 7;
        let s: Vec<f64> = (0..m).map(|i| (m - i) as f64).collect();
        let mut l = vec![false; m];
        l[m - 1] = true;
        let (ap, ..) = ap_and_f1(&s, &l).unwrap();
        assert!((ap - 1.0 / m as f64).abs() < 1e-15);
        assert!(ap_and_f1(&s, &[false; 7]).is_err());
    }

    #[test]
    fn f1_is_harmonic_mean() {
        let s = [0.9, 0.7, 0.6, 0.4, 0.3];
        let l = [true, false, true, false, true];
        let (_, f1, p, r) = ap_and_f1(&s, &l).unwrap();
        assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed;
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn random_block_matches_sweep() {
        let mut next = lcg(3);
        let n = 12;
        // Coarse scores force ties.
        let s: Vec<f32> = (0..n * n).map(|_| (next() * 20.0).floor() as f32 / 20.0).collect();
        let g: Vec<u8> = (0..n * n).map(|_| (next() < 0.3) as u8).collect();
        let rows = vec![true; n];
        let r = patch_pr(BlockView::square(&s, n), BlockView::square(&g, n), &rows, Scope::Cross).unwrap();
        let scores: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        let labels: Vec<bool> = g.iter().map(|&v| v != 0).collect();
        assert!((r.ap - sweep_oracle(&scores, &labels)).abs() < 1e-9);
    }

    #[test]
    fn topk_cases() {
        // Positive is the argmax of every row.
        let s = [0.9f32, 0.1, 0.2, 0.8];
        let g = [1u8, 0, 0, 1];
        let (sb, gb) = (BlockView::square(&s, 2), BlockView::square(&g, 2));
        assert_eq!(topk(sb, gb, 1).unwrap(), 1.0);
        let g2 = [0u8, 1, 1, 0];
        let gb2 = BlockView::square(&g2, 2);
        assert_eq!(topk(sb, gb2, 1).unwrap(), 0.0);
        assert_eq!(topk(sb, gb2, 2).unwrap(), 1.0);
        assert!(topk(sb, BlockView::square(&[0u8; 4], 2), 1).is_err());
    }

    #[test]
    fn topk_six_patch_fixture() {
        let mut next = lcg(9);
        let n = 6;
        let s: Vec<f32> = (0..n * n).map(|_| (next() * 5.0).floor() as f32).collect();
        let g: Vec<u8> = (0..n * n).map(|_| (next() < 0.25) as u8).collect();
        for k in 1..=n {
            let mut rows = 0;
            let mut hits = 0;
            for p in 0..n {
                if !(0..n).any(|q| g[p * n + q] != 0) {
                    continue;
                }
                rows += 1;
                // Full sort of (-score, column).
                let mut cols: Vec<(i64, usize)> = (0..n).map(|q| (-(s[p * n + q] as i64), q)).collect();
                cols.sort();
                if cols[..k].iter().any(|&(_, q)| g[p * n + q] != 0) {
                    hits += 1;
                }
            }
            let want = hits as f64 / rows as f64;
            let got = topk(BlockView::square(&s, n), BlockView::square(&g, n), k).unwrap();
            assert_eq!(got, want, "k={k}");
        }
    }

    pub(crate) fn ari_pairs_oracle(pred: &[u32], gt: &[u32]) -> f64 {
        let idx: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] != 0).collect();
        let (mut ss, mut sd, mut ds, mut dd) = (0f64, 0f64, 0f64, 0f64);
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                let (i, j) = (idx[a], idx[b]);
                match (pred[i] == pred[j], gt[i] == gt[j]) {
                    (true, true) => ss += 1.0,
                    (true, false) => sd += 1.0,
                    (false, true) => ds += 1.0,
                    (false, false) => dd += 1.0,
                }
            }
        }
        let total = ss + sd + ds + dd;
        let expected = (ss + sd) * (ss + ds) / total;
        let max = 0.5 * ((ss + sd) + (ss + ds));
        if max == expected {
            1.0
        } else {
            (ss - expected) / (max - expected)
        }
    }

    #[test]
    fn ari_cases() {
        let gt = Raster::new(6, 1, 1, vec![1, 1, 2, 2, 3, 3]).unwrap();
        assert_eq!(ari(&gt, &gt).unwrap(), 1.0);
        let one = Raster::filled(6, 1, 1, 4u32);
        assert_eq!(ari(&one, &gt).unwrap(), 0.0);
        assert!(ari(&one, &Raster::filled(6, 1, 1, 0u32)).is_err());
    }

    #[test]
    fn miou_cases() {
        let gt = Raster::from_fn(8, 4, |x, _| if x < 4 { 1u32 } else { 2 });
        assert_eq!(miou_directional(&gt, &gt).unwrap(), 1.0);
        let halves = Raster::from_fn(8, 4, |x, _| (x / 2) as u32 + 1);
        assert_eq!(miou_directional(&halves, &gt).unwrap(), 0.5);
    }

    #[test]
    fn cluster_ratio_cases() {
        let gt = Raster::from_fn(10, 1, |x, _| x as u32 + 1);
        assert_eq!(cluster_ratio(&gt, &gt).unwrap(), 1.0);
        // Prediction 9 covers gt background pixels mostly.
        let gt2 = Raster::new(6, 1, 1, vec![1, 1, 2, 0, 0, 0]).unwrap();
        let pred = Raster::new(6, 1, 1, vec![5, 5, 6, 9, 9, 6]).unwrap();
        // 5 -> gt 1; 6 -> tie between 2 and background, background wins; 9 -> background.
        assert_eq!(cluster_ratio(&pred, &gt2).unwrap(), 0.5);
    }

    fn pair(a: u32, b: u32) -> CorrPair {
        CorrPair { a, b, score: 1.0, dir: Direction::Both }
    }

    #[test]
    fn region_match_cases() {
        let gt = Raster::from_fn(8, 2, |x, _| (x / 2) as u32 + 1);
        let gt_corr = CorrSet::identity(&[1, 2, 3, 4], &[1, 2, 3, 4]);
        let r = region_match_eval(&gt_corr, &gt_corr, &gt, &gt, &gt, &gt, 0.8).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 1.0));

        // Predicted region 7 is 70% region 1.
        let gt10 = Raster::from_fn(10, 1, |x, _| if x < 7 { 1u32 } else { 2 });
        let pred10 = Raster::filled(10, 1, 1, 7u32);
        let c = CorrSet { pairs: vec![pair(7, 7)], ..CorrSet::default() };
        let g = CorrSet::identity(&[1, 2], &[1, 2]);
        let r = region_match_eval(&c, &g, &pred10, &pred10, &gt10, &gt10, 0.8).unwrap();
        assert!(r.no_evaluable);
        assert_eq!(r.evaluable, 0);

        // Four pure regions, two predicted pairs, one wrong.
        let c = CorrSet { pairs: vec![pair(1, 1), pair(2, 3)], ..CorrSet::default() };
        let r = region_match_eval(&c, &gt_corr, &gt, &gt, &gt, &gt, 0.8).unwrap();
        assert_eq!(r.precision, 0.5);
        assert_eq!(r.recall, 0.25);
    }

    #[test]
    fn tables_render() {
        let r = PatchEvalReport {
            scope: Scope::Cross,
            ap: 0.5,
            best_f1: 0.25,
            precision_at_best: 1.0,
            recall_at_best: 0.1,
            topk_accuracy: [(1, 0.5)].into_iter().collect(),
            pairs: 1,
        };
        let t = patch_table(&[r]);
        assert!(t.starts_with("scope"));
        assert!(t.contains("50.00"));
    }

    proptest! {
        #[test]
        fn ari_matches_pair_enumeration(
            pred in proptest::collection::vec(0u32..4, 20),
            gt in proptest::collection::vec(0u32..4, 20),
        ) {
            prop_assume!(gt.iter().filter(|&&g| g != 0).count() >= 2);
            let p = Raster::new(20, 1, 1, pred.clone()).unwrap();
            let g = Raster::new(20, 1, 1, gt.clone()).unwrap();
            let got = ari(&p, &g).unwrap();
            prop_assert!((got - ari_pairs_oracle(&pred, &gt)).abs() < 1e-12);
            // Symmetric when neither map has background.
            let gt_nz: Vec<u32> = gt.iter().map(|g| g + 1).collect();
            let pred_nz: Vec<u32> = pred.iter().map(|p| p + 1).collect();
            let a = ari(&Raster::new(20, 1, 1, pred_nz.clone()).unwrap(), &Raster::new(20, 1, 1, gt_nz.clone()).unwrap()).unwrap();
            let b = ari(&Raster::new(20, 1, 1, gt_nz).unwrap(), &Raster::new(20, 1, 1, pred_nz).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn ap_invariant_under_monotone_maps(seed in any::<u64>(), a in 0.1f64..5.0, b in -2.0f64..2.0) {
            let mut next = lcg(seed);
            let s: Vec<f64> = (0..60).map(|_| (next() * 10.0).floor() / 10.0).collect();
            let mut l: Vec<bool> = (0..60).map(|_| next() < 0.3).collect();
            l[0] = true;
            let base = ap_and_f1(&s, &l).unwrap();
            let mapped: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
            let got = ap_and_f1(&mapped, &l).unwrap();
            prop_assert!((base.0 - got.0).abs() < 1e-12 && (base.1 - got.1).abs() < 1e-12);
        }

        #[test]
        fn topk_non_decreasing(seed in any::<u64>()) {
            let mut next = lcg(seed);
            let n = 8;
            let s: Vec<f32> = (0..n * n).map(|_| next() as f32).collect();
            let mut g: Vec<u8> = (0..n * n).map(|_| (next() < 0.2) as u8).collect();
            g[0] = 1;
            let mut prev = 0.0;
            for k in 1..=n {
                let v = topk(BlockView::square(&s, n), BlockView::square(&g, n), k).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
            prop_assert_eq!(prev, 1.0);
        }

        #[test]
        fn miou_self_is_one(data in proptest::collection::vec(0u32..5, 30)) {
            prop_assume!(data.iter().any(|&v| v != 0));
            let m = Raster::new(6, 5, 1, data).unwrap();
            prop_assert_eq!(miou_directional(&m, &m).unwrap(), 1.0);
        }
    }
}
