//! Patch embedding, ViT encoder, and multiplex (self + cross attention)
//! transformer, built on the tensor tape.
//!
//! Both images run through the same weights. Internally the two token sets
//! are stacked into one `2N x d` matrix so linear layers and layer norms run
//! once; attention is restricted to the right halves by slicing.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Named model parameters, ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Errors naming the first tensor whose presence or shape disagrees
    /// with `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = param_shapes(cfg);
        for (name, shape) in &expected {
            match self.tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::ShapeMismatch {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: t.shape().to_vec(),
                    })
                }
                None => {
                    return Err(Error::ShapeMismatch {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: vec![],
                    })
                }
            }
        }
        let known: BTreeMap<&String, ()> = expected.iter().map(|(n, _)| (n, ())).collect();
        if let Some((name, t)) = self.tensors.iter().find(|(n, _)| !known.contains_key(n)) {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: vec![],
                found: t.shape().to_vec(),
            });
        }
        Ok(())
    }
}

fn linear(out: &mut Vec<(String, Vec<usize>)>, name: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{name}.w"), vec![fan_in, fan_out]));
    out.push((format!("{name}.b"), vec![fan_out]));
}

fn norm(out: &mut Vec<(String, Vec<usize>)>, name: &str, d: usize) {
    out.push((format!("{name}.g"), vec![d]));
    out.push((format!("{name}.b"), vec![d]));
}

fn attention_shapes(out: &mut Vec<(String, Vec<usize>)>, name: &str, d: usize) {
    for proj in ["q", "k", "v", "o"] {
        linear(out, &format!("{name}.{proj}"), d, d);
    }
}

fn mlp_shapes(out: &mut Vec<(String, Vec<usize>)>, name: &str, d: usize, hidden: usize) {
    linear(out, &format!("{name}.fc1"), d, hidden);
    linear(out, &format!("{name}.fc2"), hidden, d);
}

/// Every parameter name with its shape for a configuration.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.dim;
    let hidden = d * cfg.mlp_ratio;
    let mut out = Vec::new();
    linear(&mut out, "embed", cfg.patch_area(), d);
    out.push(("pos".into(), vec![cfg.num_patches(), d]));
    for i in 0..cfg.vit_depth {
        let p = format!("vit.{i:02}");
        norm(&mut out, &format!("{p}.ln1"), d);
        attention_shapes(&mut out, &format!("{p}.attn"), d);
        norm(&mut out, &format!("{p}.ln2"), d);
        mlp_shapes(&mut out, &format!("{p}.mlp"), d, hidden);
    }
    for i in 0..cfg.mt_depth {
        let p = format!("mt.{i:02}");
        norm(&mut out, &format!("{p}.self_ln"), d);
        attention_shapes(&mut out, &format!("{p}.self"), d);
        norm(&mut out, &format!("{p}.cross_ln"), d);
        attention_shapes(&mut out, &format!("{p}.cross"), d);
        norm(&mut out, &format!("{p}.mlp_ln"), d);
        mlp_shapes(&mut out, &format!("{p}.mlp"), d, hidden);
    }
    out
}

/// Deterministic initialization: Glorot-normal weights, zero biases, unit
/// norm gains, and a 2-D sinusoidal layout for the (learnable) positional
/// embedding.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Params<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in param_shapes(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name == "pos" {
            sinusoidal_positions(cfg)
        } else if name.ends_with(".g") {
            vec![1.0; n]
        } else if shape.len() == 1 {
            vec![0.0; n]
        } else {
            let std = (2.0 / (shape[0] + shape[1]) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let data = data.into_iter().map(T::from_f64).collect();
        tensors.insert(name, Tensor::from_vec(&shape, data)?);
    }
    Ok(Params { tensors })
}

fn sinusoidal_positions(cfg: &ModelConfig) -> Vec<f64> {
    let side = cfg.grid_side();
    let d = cfg.dim;
    let half = (d / 2).max(1);
    let bands = (half / 2).max(1);
    let mut out = vec![0.0; cfg.num_patches() * d];
    for k in 0..cfg.num_patches() {
        let (r, c) = ((k / side) as f64, (k % side) as f64);
        for j in 0..d {
            // First half encodes the column, second half the row.
            let jj = j % half;
            let freq = 1.0 / 100f64.powf((jj / 2) as f64 / bands as f64);
            let coord = if j < half { c } else { r };
            out[k * d + j] = if jj % 2 == 0 {
                (coord * freq).sin()
            } else {
                (coord * freq).cos()
            };
        }
    }
    out
}

/// Parameters placed on a graph as leaves.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &Params<T>) -> Self {
        let vars = params
            .iter()
            .map(|(k, t)| (k.clone(), g.leaf(t.clone())))
            .collect();
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

fn apply_linear<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, name: &str, x: Var) -> Var {
    let y = g.matmul(x, p.var(&format!("{name}.w")));
    g.add_row(y, p.var(&format!("{name}.b")))
}

fn apply_norm<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, name: &str, x: Var) -> Var {
    g.layer_norm(x, p.var(&format!("{name}.g")), p.var(&format!("{name}.b")))
}

/// Multi-head attention over the stacked `2N x d` tokens. Each image's
/// queries attend to its own keys (`cross == false`) or to the other image's
/// keys (`cross == true`).
fn attention<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    name: &str,
    x: Var,
    n: usize,
    cfg: &ModelConfig,
    cross: bool,
) -> Var {
    let d = cfg.dim;
    let dh = cfg.head_dim();
    let q = apply_linear(g, p, &format!("{name}.q"), x);
    let k = apply_linear(g, p, &format!("{name}.k"), x);
    let v = apply_linear(g, p, &format!("{name}.v"), x);
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut parts = Vec::with_capacity(2 * cfg.heads);
    for img in 0..2 {
        let q0 = img * n;
        let kv0 = if cross { (1 - img) * n } else { img * n };
        for h in 0..cfg.heads {
            let qh = g.slice(q, q0, n, h * dh, dh);
            let kh = g.slice(k, kv0, n, h * dh, dh);
            let vh = g.slice(v, kv0, n, h * dh, dh);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            let out = g.matmul(attn, vh);
            parts.push((out, q0, h * dh));
        }
    }
    let merged = g.assemble(2 * n, d, &parts);
    apply_linear(g, p, &format!("{name}.o"), merged)
}

fn mlp<T: Scalar>(g: &mut Graph<T>, p: &BoundParams, name: &str, x: Var) -> Var {
    let h = apply_linear(g, p, &format!("{name}.fc1"), x);
    let h = g.gelu(h);
    apply_linear(g, p, &format!("{name}.fc2"), h)
}

/// Runs the encoder on a graph and returns the stacked `2N x d` features
/// (rows `0..N` are image a, rows `N..2N` image b).
pub fn encode_on_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams,
    cfg: &ModelConfig,
    patches_a: &Tensor<T>,
    patches_b: &Tensor<T>,
) -> Result<Var> {
    let n = cfg.num_patches();
    for (side, t) in [("a", patches_a), ("b", patches_b)] {
        if t.shape() != [n, cfg.patch_area()] {
            return Err(Error::dims(format!(
                "patches for image {side} have shape {:?}, expected [{n}, {}]",
                t.shape(),
                cfg.patch_area()
            )));
        }
    }
    let pa = g.leaf(patches_a.clone());
    let pb = g.leaf(patches_b.clone());
    let stacked = g.assemble(2 * n, cfg.patch_area(), &[(pa, 0, 0), (pb, n, 0)]);
    let tokens = apply_linear(g, p, "embed", stacked);
    let pos = p.var("pos");
    let pos2 = g.assemble(2 * n, cfg.dim, &[(pos, 0, 0), (pos, n, 0)]);
    let mut x = g.add(tokens, pos2);

    for i in 0..cfg.vit_depth {
        let pre = format!("vit.{i:02}");
        let h = apply_norm(g, p, &format!("{pre}.ln1"), x);
        let h = attention(g, p, &format!("{pre}.attn"), h, n, cfg, false);
        x = g.add(x, h);
        let h = apply_norm(g, p, &format!("{pre}.ln2"), x);
        let h = mlp(g, p, &format!("{pre}.mlp"), h);
        x = g.add(x, h);
    }
    for i in 0..cfg.mt_depth {
        let pre = format!("mt.{i:02}");
        let h = apply_norm(g, p, &format!("{pre}.self_ln"), x);
        let h = attention(g, p, &format!("{pre}.self"), h, n, cfg, false);
        x = g.add(x, h);
        let h = apply_norm(g, p, &format!("{pre}.cross_ln"), x);
        let h = attention(g, p, &format!("{pre}.cross"), h, n, cfg, true);
        x = g.add(x, h);
        let h = apply_norm(g, p, &format!("{pre}.mlp_ln"), x);
        let h = mlp(g, p, &format!("{pre}.mlp"), h);
        x = g.add(x, h);
    }
    Ok(x)
}

/// Cosine similarity of every stacked token against every other, `2N x 2N`.
pub fn cosine_on_graph<T: Scalar>(g: &mut Graph<T>, features: Var) -> Var {
    let unit = g.normalize_rows(features);
    g.matmul_nt(unit, unit)
}

/// Transformed features `(X'_a, X'_b)`, each `N x d`.
pub fn encode<T: Scalar>(
    cfg: &ModelConfig,
    params: &Params<T>,
    patches_a: &Tensor<T>,
    patches_b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params);
    let x = encode_on_graph(&mut g, &bound, cfg, patches_a, patches_b)?;
    let n = cfg.num_patches();
    let all = g.value(x);
    let d = cfg.dim;
    let xa = Tensor::matrix(n, d, all.data()[..n * d].to_vec());
    let xb = Tensor::matrix(n, d, all.data()[n * d..].to_vec());
    Ok((xa, xb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            patch_size: 2,
            image_side: 4,
            dim: 8,
            vit_depth: 1,
            mt_depth: 1,
            heads: 2,
            mlp_ratio: 2,
            ..ModelConfig::default()
        }
    }

    fn patches(cfg: &ModelConfig, seed: u64) -> Tensor<f64> {
        let n = cfg.num_patches() * cfg.patch_area();
        let data = (0..n)
            .map(|i| (((i as u64 * 2654435761 + seed * 97) % 255) as f64) / 127.5 - 1.0)
            .collect();
        Tensor::matrix(cfg.num_patches(), cfg.patch_area(), data)
    }

    #[test]
    fn shapes_and_symmetry() {
        let cfg = tiny();
        let params = init_params::<f64>(&cfg, 3).unwrap();
        params.check_shapes(&cfg).unwrap();
        let pa = patches(&cfg, 1);
        let (xa, xb) = encode(&cfg, &params, &pa, &pa).unwrap();
        assert_eq!(xa.shape(), &[4, 8]);
        assert_eq!(xa, xb);
        let pb = patches(&cfg, 2);
        let (ya, yb) = encode(&cfg, &params, &pa, &pb).unwrap();
        let (zb, za) = encode(&cfg, &params, &pb, &pa).unwrap();
        for (u, v) in ya.data().iter().zip(za.data()) {
            assert!((u - v).abs() < 1e-12);
        }
        for (u, v) in yb.data().iter().zip(zb.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_depth_is_embedding_plus_position() {
        let cfg = ModelConfig {
            vit_depth: 0,
            mt_depth: 0,
            ..tiny()
        };
        let params = init_params::<f64>(&cfg, 5).unwrap();
        let pa = patches(&cfg, 1);
        let pb = patches(&cfg, 4);
        let (xa, _) = encode(&cfg, &params, &pa, &pb).unwrap();
        let w = params.get("embed.w").unwrap();
        let b = params.get("embed.b").unwrap();
        let pos = params.get("pos").unwrap();
        let (n, k, d) = (cfg.num_patches(), cfg.patch_area(), cfg.dim);
        for i in 0..n {
            for j in 0..d {
                let mut v = b.data()[j] + pos.data()[i * d + j];
                for t in 0..k {
                    v += pa.data()[i * k + t] * w.data()[t * d + j];
                }
                assert!((xa.data()[i * d + j] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_patch_shape_rejected() {
        let cfg = tiny();
        let params = init_params::<f64>(&cfg, 0).unwrap();
        let bad = Tensor::matrix(3, 4, vec![0.0; 12]);
        assert!(encode(&cfg, &params, &bad, &bad).is_err());
    }

    #[test]
    fn shape_check_names_tensor() {
        let small = tiny();
        let params = init_params::<f32>(&small, 0).unwrap();
        let wider = ModelConfig { dim: 16, ..tiny() };
        match params.check_shapes(&wider) {
            Err(Error::ShapeMismatch { name, .. }) => assert!(!name.is_empty()),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny();
        assert_eq!(init_params::<f32>(&cfg, 9).unwrap(), init_params::<f32>(&cfg, 9).unwrap());
        assert_ne!(init_params::<f32>(&cfg, 9).unwrap(), init_params::<f32>(&cfg, 10).unwrap());
    }
}
