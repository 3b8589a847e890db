//! Frame to field: vanishing points, ray grid, accumulators, inference.

use serde::{Deserialize, Serialize};

use crate::dataset::LoadedFrame;
use crate::error::Result;
use crate::features::{build_accumulators, build_ray_grid, AccumulatorSet, RayGrid};
use crate::field_model::FieldModel;
use crate::inference::{infer_with, InferenceResult, SearchOptions};
use crate::potentials::{Scene, WeightVector};
use crate::vp_estimation::{estimate_vps, VpConfig, VpResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub grid: usize,
    pub margin: f64,
    pub band: i64,
    pub vp: VpConfig,
    pub max_iterations: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: 256,
            margin: 0.25,
            band: 1,
            vp: VpConfig::default(),
            max_iterations: SearchOptions::default().max_iterations,
        }
    }
}

/// Everything inference needs for one frame.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vps: VpResult,
    pub grid: RayGrid,
    pub acc: AccumulatorSet,
}

impl Prepared {
    pub fn scene<'a>(&'a self, model: &'a FieldModel, band: i64) -> Result<Scene<'a>> {
        Ok(Scene::new(&self.acc, &self.grid, model)?.with_band(band))
    }
}

pub fn prepare(frame: &LoadedFrame, model: &FieldModel, cfg: &PipelineConfig) -> Result<Prepared> {
    let vp_cfg = VpConfig {
        exclusion_margin: cfg.margin,
        ..cfg.vp.clone()
    };
    let vps = estimate_vps(&frame.segments, &frame.mask, model, &vp_cfg)?;
    let grid = build_ray_grid(
        &vps,
        frame.record.image_size,
        cfg.grid,
        cfg.grid,
        cfg.margin,
    )?;
    let acc = build_accumulators(&grid, &frame.mask, &frame.segments, &vps.labels)?;
    Ok(Prepared { vps, grid, acc })
}

#[derive(Debug, Clone)]
pub struct Localized {
    pub vps: VpResult,
    pub grid: RayGrid,
    pub result: InferenceResult,
}

/// Full pipeline. A search that hits the iteration cap surfaces as
/// `Error::BudgetExceeded`.
pub fn localize(
    frame: &LoadedFrame,
    w: &WeightVector,
    model: &FieldModel,
    cfg: &PipelineConfig,
) -> Result<Localized> {
    let p = prepare(frame, model, cfg)?;
    let scene = p.scene(model, cfg.band)?;
    let opts = SearchOptions {
        max_iterations: cfg.max_iterations,
        ..Default::default()
    };
    let result = infer_with(w, &scene, &opts)?;
    Ok(Localized {
        vps: p.vps,
        grid: p.grid,
        result,
    })
}
