use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{cosine_on_graph, encode_on_graph, BoundParams, Params};
use super::{build_gt, patchify, sample_contrastive, GtMatrix, ModelConfig};
use crate::corr::CorrSet;
use crate::error::{Error, Result};
use crate::io;
use crate::manifest::Manifest;
use crate::regionmap::RegionMap;
use crate::tensor::{Graph, SampledRow, Scalar, Tensor};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Linear warm-up length in steps; defaults to 5% of the run (>= 1).
    pub warmup_steps: Option<usize>,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 1e-4,
            weight_decay: 0.01,
            warmup_steps: None,
            max_steps: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("learning rate and weight decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Total optimizer steps for a dataset of `pairs` records.
    pub fn total_steps(&self, pairs: usize) -> usize {
        let per_epoch = pairs.div_ceil(self.batch_size.max(1));
        let total = per_epoch * self.epochs;
        self.max_steps.map_or(total, |m| m.min(total))
    }

    pub fn warmup(&self, total: usize) -> usize {
        self.warmup_steps
            .unwrap_or_else(|| (total as f64 * 0.05).round() as usize)
            .max(1)
    }
}

/// Linear warm-up to `base` (reached on the last warm-up step), then cosine
/// annealing towards zero over the remaining steps.
pub fn learning_rate(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let t = ((step - warmup) as f64 / span).min(1.0);
    0.5 * base * (1.0 + (PI * t).cos())
}

/// One preprocessed training example.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub patches_a: Tensor<f32>,
    pub patches_b: Tensor<f32>,
    pub gt: GtMatrix,
}

impl TrainingPair {
    pub fn new(
        cfg: &ModelConfig,
        img_a: &crate::imaging::GrayImage,
        img_b: &crate::imaging::GrayImage,
        regions_a: &RegionMap,
        regions_b: &RegionMap,
        corr: &CorrSet,
    ) -> Result<Self> {
        let (_, patches_a) = patchify(img_a, cfg)?;
        let (_, patches_b) = patchify(img_b, cfg)?;
        let (gt, _, _) = build_gt(regions_a, regions_b, corr, cfg)?;
        Ok(Self {
            patches_a,
            patches_b,
            gt,
        })
    }
}

/// Loads every manifest record as a training pair. Records must carry
/// `regions_a`, `regions_b`, and `corr`.
pub fn load_training_pairs(manifest: &Manifest, cfg: &ModelConfig) -> Result<Vec<TrainingPair>> {
    if manifest.records.is_empty() {
        return Err(Error::invalid("training manifest is empty"));
    }
    manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let img_a = io::read_gray_png(&manifest.resolve(&r.img_a))?;
            let img_b = io::read_gray_png(&manifest.resolve(&r.img_b))?;
            let ra = RegionMap::load(&manifest.require(i, "regions_a", &r.regions_a)?)?;
            let rb = RegionMap::load(&manifest.require(i, "regions_b", &r.regions_b)?)?;
            let corr = CorrSet::load(&manifest.require(i, "corr", &r.corr)?)?;
            TrainingPair::new(cfg, &img_a, &img_b, &ra, &rb, &corr)
        })
        .collect()
}

/// Sampled contrastive loss of one pair and its gradient for every
/// parameter tensor.
pub fn loss_and_grads<T: Scalar>(
    cfg: &ModelConfig,
    params: &Params<T>,
    patches_a: &Tensor<T>,
    patches_b: &Tensor<T>,
    rows: Vec<SampledRow>,
) -> Result<(f64, BTreeMap<String, Vec<T>>)> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, params);
    let feats = encode_on_graph(&mut g, &bound, cfg, patches_a, patches_b)?;
    let logits = cosine_on_graph(&mut g, feats);
    let loss = g.sampled_nll(logits, rows, T::from_f64(cfg.temperature));
    let value = g.value(loss).data()[0].as_f64();
    let grads = g.backward(loss);
    let out = bound
        .iter()
        .map(|(name, &v)| {
            let n = params.get(name).expect("bound from params").numel();
            let grad = grads.get(v).map_or_else(|| vec![T::zero(); n], <[T]>::to_vec);
            (name.clone(), grad)
        })
        .collect();
    Ok((value, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

impl LossRecord {
    pub fn csv(log: &[LossRecord]) -> String {
        let mut out = String::from("step,lr,loss\n");
        for r in log {
            out.push_str(&format!("{},{},{}\n", r.step, r.lr, r.loss));
        }
        out
    }
}

pub struct TrainOutcome {
    pub params: Params<f32>,
    pub log: Vec<LossRecord>,
}

struct AdamState {
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
    t: i32,
}

/// Trains from `init` with AdamW (decoupled weight decay on matrices only),
/// calling `on_step` after every optimizer step. Deterministic in `seed`.
pub fn train(
    cfg: &ModelConfig,
    pairs: &[TrainingPair],
    settings: &TrainSettings,
    init: Params<f32>,
    seed: u64,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    settings.validate()?;
    init.check_shapes(cfg)?;
    if pairs.is_empty() {
        return Err(Error::invalid("no training pairs"));
    }
    let total = settings.total_steps(pairs.len());
    let warmup = settings.warmup(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init;
    let mut state = AdamState {
        m: params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.numel()])).collect(),
        v: params.iter().map(|(k, t)| (k.clone(), vec![0.0; t.numel()])).collect(),
        t: 0,
    };
    let mut log = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0;
    'epochs: for _ in 0..settings.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(settings.batch_size) {
            if step >= total {
                break 'epochs;
            }
            let per_pair = cfg.positives_per_batch.div_ceil(batch.len());
            let mut sum: BTreeMap<String, Vec<f64>> = params
                .iter()
                .map(|(k, t)| (k.clone(), vec![0.0; t.numel()]))
                .collect();
            let mut batch_loss = 0.0;
            for &i in batch {
                let pair = &pairs[i];
                let rows = sample_contrastive(&pair.gt, per_pair, cfg.negatives, &mut rng)?;
                let (loss, grads) =
                    loss_and_grads(cfg, &params, &pair.patches_a, &pair.patches_b, rows)?;
                batch_loss += loss;
                for (k, g) in grads {
                    let acc = sum.get_mut(&k).expect("same parameter set");
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v as f64;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let loss = batch_loss * scale;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss became {loss} at step {step}; lower the learning rate"
                )));
            }
            let mut norm2 = 0.0;
            for g in sum.values_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                    norm2 += *v * *v;
                }
            }
            let clip = match settings.grad_clip {
                Some(c) if norm2.sqrt() > c => c / norm2.sqrt(),
                _ => 1.0,
            };
            let lr = learning_rate(step, total, warmup, settings.lr);
            adamw_step(&mut params, &sum, clip, lr, settings, &mut state);
            let rec = LossRecord { step, lr, loss };
            on_step(&rec);
            log.push(rec);
            step += 1;
        }
    }
    Ok(TrainOutcome { params, log })
}

fn adamw_step(
    params: &mut Params<f32>,
    grads: &BTreeMap<String, Vec<f64>>,
    clip: f64,
    lr: f64,
    s: &TrainSettings,
    state: &mut AdamState,
) {
    state.t += 1;
    let bc1 = 1.0 - s.beta1.powi(state.t);
    let bc2 = 1.0 - s.beta2.powi(state.t);
    for (name, t) in params.iter_mut() {
        let decay = if t.shape().len() == 2 { s.weight_decay } else { 0.0 };
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("state per tensor");
        let v = state.v.get_mut(name).expect("state per tensor");
        for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = gi * clip;
            let m_new = s.beta1 * *mi as f64 + (1.0 - s.beta1) * gi;
            let v_new = s.beta2 * *vi as f64 + (1.0 - s.beta2) * gi * gi;
            *mi = m_new as f32;
            *vi = v_new as f32;
            let update = (m_new / bc1) / ((v_new / bc2).sqrt() + s.eps);
            let pv = *p as f64;
            *p = (pv - lr * (update + decay * pv)) as f32;
        }
    }
}

pub fn write_loss_csv(path: &Path, log: &[LossRecord]) -> Result<()> {
    io::write_bytes(path, LossRecord::csv(log).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Raster;
    use crate::patchsim::init_params;

    fn tiny() -> ModelConfig {
        ModelConfig {
            patch_size: 4,
            image_side: 8,
            dim: 8,
            vit_depth: 1,
            mt_depth: 1,
            heads: 2,
            mlp_ratio: 2,
            positives_per_batch: 8,
            negatives: 2,
            ..ModelConfig::default()
        }
    }

    fn toy_pair(cfg: &ModelConfig) -> TrainingPair {
        let img = Raster::from_fn(8, 8, |x, y| if x == 4 || y == 4 { 0u8 } else { 255 });
        let labels = Raster::from_fn(8, 8, |x, _| if x < 4 { 1u32 } else { 2 });
        let r = RegionMap::from_labels(labels);
        TrainingPair::new(cfg, &img, &img, &r, &r, &CorrSet::identity(&[1, 2], &[1, 2])).unwrap()
    }

    #[test]
    fn warmup_reaches_base_rate() {
        let total = 100;
        let w = 5;
        assert_eq!(learning_rate(w - 1, total, w, 1e-4), 1e-4);
        assert!(learning_rate(0, total, w, 1e-4) < 1e-4);
        assert!((learning_rate(w, total, w, 1e-4) - 1e-4).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for s in w..total {
            let lr = learning_rate(s, total, w, 1e-4);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_steps_returns_init() {
        let cfg = tiny();
        let init = init_params::<f32>(&cfg, 1).unwrap();
        let settings = TrainSettings {
            max_steps: Some(0),
            ..TrainSettings::default()
        };
        let out = train(&cfg, &[toy_pair(&cfg)], &settings, init.clone(), 0, |_| {}).unwrap();
        assert_eq!(out.params, init);
        assert!(out.log.is_empty());
    }

    #[test]
    fn deterministic_trace() {
        let cfg = tiny();
        let pairs = vec![toy_pair(&cfg), toy_pair(&cfg)];
        let settings = TrainSettings {
            epochs: 3,
            batch_size: 1,
            lr: 1e-2,
            ..TrainSettings::default()
        };
        let run = || {
            let init = init_params::<f32>(&cfg, 4).unwrap();
            train(&cfg, &pairs, &settings, init, 9, |_| {}).unwrap().log
        };
        let a = run();
        assert_eq!(a.len(), 6);
        assert_eq!(a, run());
        assert!(LossRecord::csv(&a).starts_with("step,lr,loss\n0,"));
    }

    #[test]
    fn empty_dataset_rejected() {
        let cfg = tiny();
        let init = init_params::<f32>(&cfg, 1).unwrap();
        assert!(train(&cfg, &[], &TrainSettings::default(), init, 0, |_| {}).is_err());
    }
}
