use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelConfig, Params};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor;

const MAGIC: &[u8; 5] = b"LART1";

/// Serializes parameters: `LART1`, u32 tensor count, then per tensor a u32
/// name length, the UTF-8 name, u32 rank, u32 dims, and f32 values, all
/// little-endian. Tensors are written in name order.
pub fn write_checkpoint(params: &Params<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + params.num_values() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(format!(
                "checkpoint truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint and checks it against `cfg`. Nothing is returned
/// unless the whole stream is well formed.
pub fn read_checkpoint(bytes: &[u8], cfg: &ModelConfig) -> Result<Params<f32>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("not a model checkpoint (bad magic)"));
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let count = cur.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let len = cur.u32("name length")?;
        let name = std::str::from_utf8(cur.take(len, "tensor name")?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?
            .to_string();
        let rank = cur.u32(&format!("rank of {name}"))?;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(&format!("dims of {name}"))?);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel.checked_mul(4).ok_or_else(|| Error::format("tensor too large"))?, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)?).is_some() {
            return Err(Error::format(format!("duplicate tensor {name}")));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - cur.pos
        )));
    }
    let params = Params::from_map(tensors);
    params.check_shapes(cfg)?;
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &Params<f32>) -> Result<()> {
    io::write_bytes(path, &write_checkpoint(params))
}

pub fn load_checkpoint(path: &Path, cfg: &ModelConfig) -> Result<Params<f32>> {
    read_checkpoint(&io::read_bytes(path)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchsim::init_params;

    fn small() -> ModelConfig {
        ModelConfig {
            patch_size: 4,
            image_side: 8,
            dim: 8,
            vit_depth: 1,
            mt_depth: 1,
            heads: 2,
            mlp_ratio: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = small();
        let p = init_params::<f32>(&cfg, 3).unwrap();
        let bytes = write_checkpoint(&p);
        let q = read_checkpoint(&bytes, &cfg).unwrap();
        for ((na, a), (nb, b)) in p.iter().zip(q.iter()) {
            assert_eq!(na, nb);
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(write_checkpoint(&q), bytes);
    }

    #[test]
    fn truncation_is_an_error() {
        let cfg = small();
        let bytes = write_checkpoint(&init_params::<f32>(&cfg, 3).unwrap());
        for cut in [0, 4, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_checkpoint(&bytes[..cut], &cfg).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn incompatible_config_names_tensor() {
        let cfg = small();
        let bytes = write_checkpoint(&init_params::<f32>(&cfg, 3).unwrap());
        let other = ModelConfig { dim: 12, ..small() };
        match read_checkpoint(&bytes, &other) {
            Err(Error::ShapeMismatch { name, .. }) => assert!(!name.is_empty()),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }
}
