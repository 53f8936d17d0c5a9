use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which quadrant of the `2N x 2N` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    AA,
    AB,
    BA,
    BB,
}

impl Block {
    fn offsets(self, n: usize) -> (usize, usize) {
        match self {
            Block::AA => (0, 0),
            Block::AB => (0, n),
            Block::BA => (n, 0),
            Block::BB => (n, n),
        }
    }
}

/// Read-only `N x N` view into one quadrant of a square matrix.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a, T> {
    n: usize,
    stride: usize,
    r0: usize,
    c0: usize,
    data: &'a [T],
}

impl<'a, T: Copy> BlockView<'a, T> {
    pub fn new(data: &'a [T], n: usize, block: Block) -> Self {
        let (r0, c0) = block.offsets(n);
        Self {
            n,
            stride: 2 * n,
            r0,
            c0,
            data,
        }
    }

    /// Whole-matrix view of a plain `n x n` slice.
    pub fn square(data: &'a [T], n: usize) -> Self {
        assert_eq!(data.len(), n * n);
        Self {
            n,
            stride: n,
            r0: 0,
            c0: 0,
            data,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> T {
        self.data[(self.r0 + p) * self.stride + self.c0 + q]
    }

    pub fn row(&self, p: usize) -> &'a [T] {
        let start = (self.r0 + p) * self.stride + self.c0;
        &self.data[start..start + self.n]
    }

    pub fn to_vec(&self) -> Vec<T> {
        (0..self.n).flat_map(|p| self.row(p).iter().copied()).collect()
    }
}

/// Row-stochastic `2N x 2N` patch similarity matrix. Rows/columns `0..N`
/// belong to image a, `N..2N` to image b.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    n: usize,
    entries: Vec<f32>,
}

const MAGIC: &[u8; 5] = b"LSIM1";

impl SimMatrix {
    /// Wraps raw entries after checking size, range, and row sums.
    pub fn from_entries(n: usize, entries: Vec<f32>) -> Result<Self> {
        if entries.len() != 4 * n * n {
            return Err(Error::dims(format!(
                "similarity matrix for n={n} needs {} entries, got {}",
                4 * n * n,
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::format(format!("similarity entry {v} outside [0, 1]")));
        }
        for (r, row) in entries.chunks(2 * n).enumerate() {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            if (s - 1.0).abs() > 1e-4 {
                return Err(Error::format(format!("similarity row {r} sums to {s}")));
            }
        }
        Ok(Self { n, entries })
    }

    /// Per-image patch count `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.entries[i * 2 * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.entries[i * 2 * self.n..(i + 1) * 2 * self.n]
    }

    pub fn block(&self, b: Block) -> BlockView<'_, f32> {
        BlockView::new(&self.entries, self.n, b)
    }

    pub fn s_aa(&self) -> BlockView<'_, f32> {
        self.block(Block::AA)
    }

    pub fn s_ab(&self) -> BlockView<'_, f32> {
        self.block(Block::AB)
    }

    pub fn s_ba(&self) -> BlockView<'_, f32> {
        self.block(Block::BA)
    }

    pub fn s_bb(&self) -> BlockView<'_, f32> {
        self.block(Block::BB)
    }

    /// `LSIM1` magic, little-endian `u32` N, then `4N^2` little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.entries.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        for v in &self.entries {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..5] != MAGIC {
            return Err(Error::format("not a similarity matrix file (bad magic)"));
        }
        let n = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let want = 9 + 16 * n * n;
        if bytes.len() != want {
            return Err(Error::format(format!(
                "similarity file for n={n} must be {want} bytes, found {}",
                bytes.len()
            )));
        }
        let entries = bytes[9..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::from_entries(n, entries)
    }
}

/// Cosine similarity between all stacked tokens followed by a row-wise
/// softmax at `temperature` over all `2N` columns (self column included).
pub fn similarity<T: Scalar>(xa: &Tensor<T>, xb: &Tensor<T>, temperature: f64) -> Result<SimMatrix> {
    if xa.cols() != xb.cols() || xa.rows() != xb.rows() {
        return Err(Error::dims(format!(
            "token sets differ: {:?} vs {:?}",
            xa.shape(),
            xb.shape()
        )));
    }
    let n = xa.rows();
    if n == 0 {
        return Err(Error::invalid("similarity needs at least one patch"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    let cos = cosine_matrix(xa, xb);
    let m = 2 * n;
    let mut entries = Vec::with_capacity(m * m);
    for r in 0..m {
        let row = &cos[r * m..(r + 1) * m];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&c| ((c - max) / temperature).exp()).collect();
        let sum: f64 = exps.iter().sum();
        entries.extend(exps.iter().map(|e| (e / sum) as f32));
    }
    Ok(SimMatrix { n, entries })
}

/// Pre-softmax cosine scores of the stacked tokens, `2N x 2N`, in f64.
pub fn cosine_matrix<T: Scalar>(xa: &Tensor<T>, xb: &Tensor<T>) -> Vec<f64> {
    let d = xa.cols();
    let rows: Vec<Vec<f64>> = (0..xa.rows())
        .map(|r| xa.row(r))
        .chain((0..xb.rows()).map(|r| xb.row(r)))
        .map(|row| {
            let v: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
            let norm = (v.iter().map(|x| x * x).sum::<f64>() + 1e-16).sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let m = rows.len();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = (0..d).map(|k| rows[i][k] * rows[j][k]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_two_patch_case() {
        // Tokens: a0=(1,0) a1=(0,2) b0=(1,1) b1=(-1,0); temperature 1.
        let xa = Tensor::matrix(2, 2, vec![1.0f64, 0.0, 0.0, 2.0]);
        let xb = Tensor::matrix(2, 2, vec![1.0f64, 1.0, -1.0, 0.0]);
        let s = similarity(&xa, &xb, 1.0).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let cos = [
            [1.0, 0.0, r, -1.0],
            [0.0, 1.0, r, 0.0],
            [r, r, 1.0, -r],
            [-1.0, 0.0, -r, 1.0],
        ];
        for i in 0..4 {
            let z: f64 = cos[i].iter().map(|c: &f64| c.exp()).sum();
            for j in 0..4 {
                let want = cos[i][j].exp() / z;
                assert!((s.get(i, j) as f64 - want).abs() < 1e-6, "({i},{j})");
            }
        }
        assert_eq!(s.s_ab().get(0, 1), s.get(0, 3));
        assert_eq!(s.s_ba().get(1, 0), s.get(3, 0));
    }

    #[test]
    fn identical_tokens_have_unit_cosine() {
        let xa = Tensor::matrix(1, 3, vec![0.3f64, -0.2, 0.9]);
        let cos = cosine_matrix(&xa, &xa);
        assert!((cos[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bytes_round_trip_and_errors() {
        let xa = Tensor::matrix(3, 2, vec![1.0f32, 0.0, 0.5, 0.5, -1.0, 2.0]);
        let xb = Tensor::matrix(3, 2, vec![0.0f32, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let s = similarity(&xa, &xb, 0.1).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 9 + 4 * 36);
        assert_eq!(SimMatrix::from_bytes(&bytes).unwrap(), s);
        assert!(SimMatrix::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SimMatrix::from_bytes(&bad).is_err());
    }

    #[test]
    fn zero_token_is_guarded() {
        let xa = Tensor::matrix(2, 2, vec![0.0f64, 0.0, 1.0, 0.0]);
        let s = similarity(&xa, &xa, 0.07).unwrap();
        assert!(s.entries().iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(
            n in 1usize..6,
            d in 1usize..6,
            seed in any::<u64>(),
            temp in 0.01f64..2.0,
        ) {
            let mut s = seed;
            let mut next = || {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
            };
            let xa = Tensor::matrix(n, d, (0..n * d).map(|_| next()).collect::<Vec<f64>>());
            let xb = Tensor::matrix(n, d, (0..n * d).map(|_| next()).collect::<Vec<f64>>());
            let sm = similarity(&xa, &xb, temp).unwrap();
            for i in 0..2 * n {
                let sum: f64 = sm.row(i).iter().map(|&v| v as f64).sum();
                prop_assert!((sum - 1.0).abs() < 1e-5);
            }
        }
    }
}
