use rand::seq::index;
use rand::Rng;

use super::GtMatrix;
use crate::error::{Error, Result};
use crate::tensor::SampledRow;

/// Draws `positives` coordinates uniformly (with replacement) from the
/// nonzero entries of `gt`, and for each one `negatives` columns of the same
/// row where `gt` is zero. Negatives are drawn without replacement when the
/// row has enough of them, otherwise with replacement.
///
/// Rows without any zero entry cannot form a contrast and are skipped.
pub fn sample_contrastive<R: Rng + ?Sized>(
    gt: &GtMatrix,
    positives: usize,
    negatives: usize,
    rng: &mut R,
) -> Result<Vec<SampledRow>> {
    if negatives == 0 || positives == 0 {
        return Err(Error::invalid("need at least one positive and one negative per sample"));
    }
    if gt.count_positive() == 0 {
        return Err(Error::Degenerate("ground-truth matrix has no positive entries".into()));
    }
    let m = 2 * gt.n();
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    let mut negs_per_row: Vec<Vec<usize>> = Vec::with_capacity(m);
    for i in 0..m {
        let row = gt.row(i);
        let negs: Vec<usize> = (0..m).filter(|&j| row[j] == 0).collect();
        if !negs.is_empty() {
            candidates.extend((0..m).filter(|&j| row[j] != 0).map(|j| (i, j)));
        }
        negs_per_row.push(negs);
    }
    if candidates.is_empty() {
        return Err(Error::Degenerate(
            "every row with a positive is fully positive; no negatives to contrast".into(),
        ));
    }
    let mut out = Vec::with_capacity(positives);
    for _ in 0..positives {
        let (i, j) = candidates[rng.random_range(0..candidates.len())];
        let pool = &negs_per_row[i];
        let mut cols = Vec::with_capacity(negatives + 1);
        cols.push(j);
        if pool.len() >= negatives {
            cols.extend(index::sample(rng, pool.len(), negatives).into_iter().map(|k| pool[k]));
        } else {
            cols.extend((0..negatives).map(|_| pool[rng.random_range(0..pool.len())]));
        }
        out.push(SampledRow { row: i, cols });
    }
    Ok(out)
}

/// Mean of `-log(exp(l_ij/t) / (exp(l_ij/t) + sum_k exp(l_ijk/t)))` over the
/// sampled rows of a `dim x dim` logit matrix.
pub fn sampled_loss(logits: &[f64], dim: usize, rows: &[SampledRow], temperature: f64) -> Result<f64> {
    if logits.len() != dim * dim {
        return Err(Error::dims("logit matrix is not square"));
    }
    if rows.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    let mut total = 0.0;
    for s in rows {
        let z: Vec<f64> = s.cols.iter().map(|&c| logits[s.row * dim + c] / temperature).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - z[0];
    }
    Ok(total / rows.len() as f64)
}
