//! End-to-end inference and evaluation of one line art pair.

use serde::{Deserialize, Serialize};

use crate::autolabel::AutoLabelParams;
use crate::corr::CorrSet;
use crate::error::Result;
use crate::imaging::GrayImage;
use crate::metrics::{evaluate_patches, evaluate_regions, PatchEvalReport, RegionEvalReport};
use crate::patchsim::{build_gt, infer_similarity, ModelConfig, Params, SimMatrix, TrainSettings};
use crate::regionize::{regionize, MergeParams};
use crate::regionmap::RegionMap;
use crate::regionmatch::{default_theta, greedy_match};

/// Every tunable of the system in one document; the CLI reads it from
/// `--config`. Missing sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub merge: MergeParams,
    /// Region match threshold; `None` means `1.5/N`.
    pub theta: Option<f64>,
    pub autolabel: AutoLabelParams,
    pub train: TrainSettings,
    pub purity_min: f64,
    pub topk: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            merge: MergeParams::default(),
            theta: None,
            autolabel: AutoLabelParams::default(),
            train: TrainSettings::default(),
            purity_min: 0.8,
            topk: vec![1, 5],
        }
    }
}

impl PipelineConfig {
    pub fn theta_for(&self, n: usize) -> f64 {
        self.theta.unwrap_or_else(|| default_theta(n))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.merge.validate()?;
        self.autolabel.validate()?;
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub sim: SimMatrix,
    pub regions_a: RegionMap,
    pub regions_b: RegionMap,
    pub corr: CorrSet,
}

/// Similarity, regions of both images, and their correspondences.
pub fn predict_pair(
    cfg: &PipelineConfig,
    params: &Params<f32>,
    img_a: &GrayImage,
    img_b: &GrayImage,
) -> Result<Prediction> {
    let sim = infer_similarity(&cfg.model, params, img_a, img_b)?;
    let p = cfg.model.patch_size;
    let (regions_a, _) = regionize(sim.s_aa(), img_a, p, &cfg.merge)?;
    let (regions_b, _) = regionize(sim.s_bb(), img_b, p, &cfg.merge)?;
    let corr = greedy_match(&regions_a, &regions_b, sim.s_ab(), sim.s_ba(), cfg.theta_for(sim.n()))?;
    Ok(Prediction {
        sim,
        regions_a,
        regions_b,
        corr,
    })
}

/// Ground truth of one pair: region maps and correspondences.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub regions_a: &'a RegionMap,
    pub regions_b: &'a RegionMap,
    pub corr: &'a CorrSet,
}

/// Patch and region reports of a prediction against ground truth.
pub fn evaluate_prediction(
    cfg: &PipelineConfig,
    pred: &Prediction,
    truth: Truth<'_>,
) -> Result<(Vec<PatchEvalReport>, RegionEvalReport)> {
    let (gt, grid_a, grid_b) = build_gt(truth.regions_a, truth.regions_b, truth.corr, &cfg.model)?;
    let assigned = |g: &crate::patchsim::PatchGrid| g.region_id.iter().map(Option::is_some).collect::<Vec<_>>();
    let patch = evaluate_patches(&pred.sim, &gt, &assigned(&grid_a), &assigned(&grid_b), &cfg.topk)?;
    let region = evaluate_regions(
        &pred.corr,
        truth.corr,
        (pred.regions_a.labels(), pred.regions_b.labels()),
        (truth.regions_a.labels(), truth.regions_b.labels()),
        cfg.purity_min,
    )?;
    Ok((patch, region))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchsim::init_params;
    use crate::synthgen::{generate_pair, SceneSpec};

    fn small() -> PipelineConfig {
        PipelineConfig {
            model: ModelConfig {
                image_side: 64,
                patch_size: 8,
                dim: 16,
                vit_depth: 1,
                mt_depth: 1,
                heads: 2,
                ..ModelConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_json_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"theta": 0.05, "model": {"dim": 32}}"#).unwrap();
        assert_eq!(c.theta, Some(0.05));
        assert_eq!(c.model.dim, 32);
        assert_eq!(c.model.patch_size, 16);
        assert_eq!(c.purity_min, 0.8);
    }

    #[test]
    fn untrained_prediction_is_consistent() {
        let cfg = small();
        let params = init_params::<f32>(&cfg.model, 1).unwrap();
        let spec = SceneSpec {
            canvas: 64,
            ..SceneSpec::still(2, 3)
        };
        let pair = generate_pair(&spec).unwrap();
        let pred = predict_pair(&cfg, &params, &pair.lineart_a, &pair.lineart_b).unwrap();
        assert_eq!(pred.sim.n(), 64);
        pred.corr.validate(&pred.regions_a, &pred.regions_b).unwrap();
        let (patch, region) = evaluate_prediction(
            &cfg,
            &pred,
            Truth {
                regions_a: &pair.regions_a,
                regions_b: &pair.regions_b,
                corr: &pair.corr,
            },
        )
        .unwrap();
        assert!(!patch.is_empty());
        for r in &patch {
            assert!((0.0..=1.0).contains(&r.ap));
        }
        assert!(region.cr > 0.0);
        let again = predict_pair(&cfg, &params, &pair.lineart_a, &pair.lineart_b).unwrap();
        assert_eq!(pred, again);
    }
}
