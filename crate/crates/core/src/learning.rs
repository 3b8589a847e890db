//! Structured SVM training with margin rescaling.
//!
//! The loss counts grid cells on which a hypothesis field and the
//! ground-truth field disagree. Loss-augmented inference runs the same
//! branch and bound as prediction; the restricted QP is solved in the dual
//! by coordinate ascent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LoadedFrame;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::features::{AccumulatorSet, CellRect, Hypothesis, IntegralTable, RayGrid};
use crate::field_model::FieldModel;
use crate::geometry::{Homography, Point2};
use crate::inference::{
    branch_and_bound, homography_from_hypothesis, infer_with, BoxObjective, InferenceResult,
    SearchOptions, DEFAULT_MAX_ITERATIONS,
};
use crate::pipeline::{prepare, PipelineConfig};
use crate::potentials::{HypothesisBox, Scene, Tying, WeightVector, NUM_FEATURES};
use crate::synth::clip_segment;

/// One training pair: the precomputed input and its labeled field.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub acc: AccumulatorSet,
    pub grid: RayGrid,
    pub y_gt: Hypothesis,
    /// Row-major `n_h × n_v`; true inside the ground-truth field.
    gt_cell_mask: Vec<bool>,
    field: IntegralTable,
    non_field: IntegralTable,
    non_field_total: u64,
    /// Cells a hypothesis field can cover: `(n_h - 1) × (n_v - 1)`.
    cells: u64,
}

impl TrainingExample {
    pub fn new(
        id: impl Into<String>,
        acc: AccumulatorSet,
        grid: RayGrid,
        y_gt: Hypothesis,
    ) -> Result<Self> {
        let (n_h, n_v) = (grid.n_h(), grid.n_v());
        if acc.n_h() != n_h || acc.n_v() != n_v {
            return Err(Error::Input("accumulators do not match the grid".into()));
        }
        if !y_gt.is_valid(n_h, n_v) {
            return Err(Error::Input(format!("invalid ground truth {:?}", y_gt.0)));
        }
        let [y1, y2, y3, y4] = y_gt.0;
        let mut mask = vec![false; n_h * n_v];
        let mut field = vec![0u64; n_h * n_v];
        let mut non_field = vec![0u64; n_h * n_v];
        // The last cell of each fan is never inside a hypothesis field.
        for i in 0..n_h - 1 {
            for j in 0..n_v - 1 {
                let k = i * n_v + j;
                let inside = (y1..y2).contains(&i) && (y3..y4).contains(&j);
                mask[k] = inside;
                if inside {
                    field[k] = 1;
                } else {
                    non_field[k] = 1;
                }
            }
        }
        let non_field = IntegralTable::from_cell_counts(n_h, n_v, &non_field);
        Ok(Self {
            id: id.into(),
            acc,
            grid,
            y_gt,
            gt_cell_mask: mask,
            field: IntegralTable::from_cell_counts(n_h, n_v, &field),
            non_field_total: non_field.total(),
            non_field,
            cells: ((n_h - 1) * (n_v - 1)) as u64,
        })
    }

    /// Run the pipeline up to the accumulators and place the ground truth
    /// on the estimated grid.
    pub fn from_frame(
        frame: &LoadedFrame,
        model: &FieldModel,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let h = frame.record.gt_homography.ok_or_else(|| {
            Error::Input(format!(
                "frame {} has no ground-truth homography",
                frame.record.id
            ))
        })?;
        let p = prepare(frame, model, cfg)?;
        let y = hypothesis_on_grid(&h, &p.grid, model)?;
        Self::new(frame.record.id.clone(), p.acc, p.grid, y)
    }

    pub fn gt_cell_mask(&self) -> &[bool] {
        &self.gt_cell_mask
    }

    pub fn scene<'a>(&'a self, model: &'a FieldModel, band: i64) -> Result<Scene<'a>> {
        Ok(Scene::new(&self.acc, &self.grid, model)?.with_band(band))
    }

    /// Cells that disagree with the ground truth when the field is at
    /// least `inner` and at most `outer`.
    #[inline]
    fn disagreeing(&self, inner: &CellRect, outer: &CellRect) -> u64 {
        let fc = if inner.is_empty() {
            0
        } else {
            self.field.sum(inner)
        };
        let agree = fc + self.non_field_total - self.non_field.sum(outer);
        self.cells - agree
    }

    pub fn loss(&self, y: &Hypothesis) -> f64 {
        let f = y.field_cells();
        self.disagreeing(&f, &f) as f64 / self.cells as f64
    }

    /// Upper bound of the loss over a box; equal to `loss` on singletons.
    pub fn loss_bound(&self, b: &HypothesisBox) -> f64 {
        self.disagreeing(&b.intersection_field(), &b.union_field()) as f64 / self.cells as f64
    }

    /// Exact argmax of `w·φ` on this example.
    pub fn predict(
        &self,
        w: &WeightVector,
        model: &FieldModel,
        band: i64,
    ) -> Result<InferenceResult> {
        let opts = SearchOptions::default();
        infer_with(w, &self.scene(model, band)?, &opts)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Image point on `line` nearest the image center, moved to the middle of
/// the visible part when the line crosses the image.
fn visible_point(line: [f64; 3], size: (usize, usize)) -> Option<Point2> {
    let [a, b, c] = line;
    let n = a.hypot(b);
    if !(n > 0.0) {
        return None;
    }
    let (w, h) = (size.0 as f64 - 1.0, size.1 as f64 - 1.0);
    let center = Point2::new(w / 2.0, h / 2.0);
    let d = (a * center.x + b * center.y + c) / n;
    let foot = Point2::new(center.x - d * a / n, center.y - d * b / n);
    let dir = Point2::new(-b / n, a / n);
    let reach = 1e3 * (w + h + d.abs());
    let (p, q) = (foot - dir * reach, foot + dir * reach);
    Some(match clip_segment(p, q, 0.0, 0.0, w, h) {
        Some((s, e)) => s.lerp(e, 0.5),
        None => foot,
    })
}

/// Ground-truth hypothesis on a grid: each boundary line of the model,
/// mapped into the image by `h` (image to model), goes to its nearest ray.
pub fn hypothesis_on_grid(
    h: &Homography,
    grid: &RayGrid,
    model: &FieldModel,
) -> Result<Hypothesis> {
    let m = h.matrix();
    // Image of the model line `row · (x, y, 1) = offset`.
    let image_line = |row: usize, offset: f64| -> [f64; 3] {
        [
            m[(row, 0)] - offset * m[(2, 0)],
            m[(row, 1)] - offset * m[(2, 1)],
            m[(row, 2)] - offset * m[(2, 2)],
        ]
    };
    let index = |fan: &crate::features::Fan, line: [f64; 3]| -> Result<usize> {
        let p = visible_point(line, grid.image_size).ok_or(Error::DegenerateDlt)?;
        let t = fan.param_of_point(p).ok_or(Error::VpInsideImage)?;
        let f = fan.fractional_index(t);
        if !f.is_finite() {
            return Err(Error::Input("ground-truth line has no ray".into()));
        }
        Ok(f.round().clamp(0.0, (fan.len() - 1) as f64) as usize)
    };
    let t0 = index(&grid.h, image_line(1, 0.0))?;
    let t1 = index(&grid.h, image_line(1, model.width))?;
    let g0 = index(&grid.v, image_line(0, 0.0))?;
    let g1 = index(&grid.v, image_line(0, model.length))?;
    let y = Hypothesis([t0.min(t1), t0.max(t1), g0.min(g1), g0.max(g1)]);
    if !y.is_valid(grid.n_h(), grid.n_v()) {
        return Err(Error::Input(format!(
            "ground-truth field collapses on the grid: {:?}",
            y.0
        )));
    }
    Ok(y)
}

/// `Δ(y_gt, y) + w·φ(x, y)`.
pub struct LossAugmented<'a> {
    pub example: &'a TrainingExample,
    pub scene: Scene<'a>,
    pub w: &'a WeightVector,
    signs: [i8; NUM_FEATURES],
}

impl<'a> LossAugmented<'a> {
    pub fn new(example: &'a TrainingExample, scene: Scene<'a>, w: &'a WeightVector) -> Self {
        Self {
            example,
            scene,
            w,
            signs: w.feature_signs(),
        }
    }
}

impl BoxObjective for LossAugmented<'_> {
    fn score(&self, y: &Hypothesis) -> f64 {
        self.bound(&HypothesisBox::singleton(y))
    }

    fn bound(&self, b: &HypothesisBox) -> f64 {
        self.example.loss_bound(b) + self.scene.bound_with_signs(self.w, &self.signs, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAugmentedResult {
    pub y: Hypothesis,
    pub value: f64,
    pub loss: f64,
    pub iterations: u64,
}

/// Exact argmax of `Δ(y_gt, y) + w·φ(x, y)`.
pub fn loss_augmented_infer(
    w: &WeightVector,
    example: &TrainingExample,
    model: &FieldModel,
    band: i64,
    opts: &SearchOptions,
) -> Result<LossAugmentedResult> {
    let scene = example.scene(model, band)?;
    let obj = LossAugmented::new(example, scene, w);
    let root = HypothesisBox::root(scene.n_h(), scene.n_v())?;
    let out = branch_and_bound(&obj, &root, opts)?;
    if !out.certified {
        return Err(Error::BudgetExceeded(Box::new(InferenceResult {
            y: out.y,
            score: out.score,
            iterations: out.iterations,
            homography: homography_from_hypothesis(&out.y, &example.grid, model)?,
            certified: false,
        })));
    }
    Ok(LossAugmentedResult {
        y: out.y,
        value: out.score,
        loss: example.loss(&out.y),
        iterations: out.iterations,
    })
}

/// Lexicographic scan of the same objective.
pub fn loss_augmented_exhaustive(
    w: &WeightVector,
    example: &TrainingExample,
    model: &FieldModel,
    band: i64,
) -> Result<LossAugmentedResult> {
    let scene = example.scene(model, band)?;
    let obj = LossAugmented::new(example, scene, w);
    let root = HypothesisBox::root(scene.n_h(), scene.n_v())?;
    let out = crate::inference::exhaustive(&obj, &root)?;
    Ok(LossAugmentedResult {
        y: out.y,
        value: out.score,
        loss: example.loss(&out.y),
        iterations: out.iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub eps: f64,
    pub max_rounds: usize,
    pub tying: Tying,
    pub band: i64,
    /// Multiplier on every feature; the returned weights act on the
    /// scaled features.
    pub feature_scale: f64,
    /// Iteration cap of each loss-augmented search.
    pub max_iterations: u64,
    /// Relative duality gap at which the restricted QP counts as solved.
    pub qp_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            eps: 1e-3,
            max_rounds: 200,
            tying: Tying::GVHC,
            band: 1,
            feature_scale: 1.0,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            qp_tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.c) || !pos(self.eps) || !pos(self.feature_scale) || !pos(self.qp_tolerance) {
            return Err(Error::Input(
                "C, eps, feature_scale and qp_tolerance must be positive".into(),
            ));
        }
        if self.max_rounds == 0 || self.max_iterations == 0 {
            return Err(Error::Input(
                "max_rounds and max_iterations must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    /// Restricted primal `½‖w‖² + (C/N)Σξ` after the QP solve.
    pub objective: f64,
    pub constraints: usize,
    pub added: usize,
    pub max_violation: f64,
    /// Loss-augmented searches that hit the iteration cap.
    pub uncertified: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rounds: Vec<RoundStats>,
    pub converged: bool,
    pub final_objective: f64,
}

/// Dual of the n-slack restricted QP.
struct Constraint {
    y: Hypothesis,
    dpsi: Vec<f64>,
    norm2: f64,
    loss: f64,
    alpha: f64,
}

struct Qp {
    dim: usize,
    /// `C / N`: the cap on each example's dual mass.
    cap: f64,
    blocks: Vec<Vec<Constraint>>,
    w: Vec<f64>,
}

const QP_MAX_SWEEPS: usize = 100_000;
const GRAD_TOL: f64 = 1e-13;

impl Qp {
    fn new(dim: usize, cap: f64, n: usize) -> Self {
        Self {
            dim,
            cap,
            blocks: (0..n).map(|_| Vec::new()).collect(),
            w: vec![0.0; dim],
        }
    }

    fn constraints(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    fn recompute_w(&mut self) {
        let mut w = vec![0.0; self.dim];
        for c in self.blocks.iter().flatten() {
            for (wk, d) in w.iter_mut().zip(&c.dpsi) {
                *wk += c.alpha * d;
            }
        }
        self.w = w;
    }

    fn slack(&self, n: usize) -> f64 {
        self.blocks[n]
            .iter()
            .map(|c| c.loss - dot(&self.w, &c.dpsi))
            .fold(0.0, f64::max)
    }

    fn primal(&self) -> f64 {
        let xi: f64 = (0..self.blocks.len()).map(|n| self.slack(n)).sum();
        0.5 * dot(&self.w, &self.w) + self.cap * xi
    }

    fn dual(&self) -> f64 {
        let lin: f64 = self.blocks.iter().flatten().map(|c| c.alpha * c.loss).sum();
        lin - 0.5 * dot(&self.w, &self.w)
    }

    fn step(&mut self, n: usize, k: usize, t: f64) {
        let c = &mut self.blocks[n][k];
        c.alpha = (c.alpha + t).max(0.0);
        for (wk, d) in self.w.iter_mut().zip(&c.dpsi) {
            *wk += t * d;
        }
    }

    /// A few ascent steps on one example's block, each fixing the worst
    /// KKT violation: raise the best constraint while mass is left, lower
    /// a supported one with negative gradient, or move mass between two.
    fn update_block(&mut self, n: usize) {
        let len = self.blocks[n].len();
        for _ in 0..2 * len + 4 {
            let block = &self.blocks[n];
            let g: Vec<f64> = block
                .iter()
                .map(|c| c.loss - dot(&self.w, &c.dpsi))
                .collect();
            let used: f64 = block.iter().map(|c| c.alpha).sum();
            let room = (self.cap - used).max(0.0);
            let (k_max, g_max) = g
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let j_min = (0..len)
                .filter(|&j| block[j].alpha > 0.0)
                .min_by(|&a, &b| g[a].total_cmp(&g[b]));
            if g_max > GRAD_TOL && room > 0.0 {
                let q = block[k_max].norm2;
                let t = if q > 0.0 { (g_max / q).min(room) } else { room };
                self.step(n, k_max, t);
            } else if let Some(j) = j_min.filter(|&j| g[j] < -GRAD_TOL) {
                let q = block[j].norm2;
                let t = if q > 0.0 {
                    (g[j] / q).max(-block[j].alpha)
                } else {
                    -block[j].alpha
                };
                self.step(n, j, t);
            } else if let Some(j) = j_min.filter(|&j| j != k_max && g_max - g[j] > GRAD_TOL) {
                let q: f64 = block[k_max]
                    .dpsi
                    .iter()
                    .zip(&block[j].dpsi)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let t = if q > 0.0 {
                    ((g_max - g[j]) / q).min(block[j].alpha)
                } else {
                    block[j].alpha
                };
                self.step(n, k_max, t);
                self.step(n, j, -t);
            } else {
                break;
            }
        }
    }

    fn solve(&mut self, tol: f64) -> Result<f64> {
        let mut gap = f64::INFINITY;
        let (mut p, mut d) = (0.0, 0.0);
        for sweep in 0..QP_MAX_SWEEPS {
            for n in 0..self.blocks.len() {
                self.update_block(n);
            }
            if sweep % 16 == 15 {
                self.recompute_w();
            }
            p = self.primal();
            d = self.dual();
            gap = p - d;
            if gap <= tol * p.abs().max(d.abs()) || gap <= 1e-15 {
                return Ok(p);
            }
        }
        Err(Error::Training(format!(
            "restricted QP did not reach relative gap {tol:e} in {QP_MAX_SWEEPS} sweeps: \
             primal {p:.9e}, dual {d:.9e}, gap {gap:.3e}, {} constraints",
            self.constraints()
        )))
    }
}

/// Tied features of `y`, times the feature scale.
fn psi(template: &WeightVector, scene: &Scene, y: &Hypothesis, scale: f64) -> Vec<f64> {
    template
        .tied_features(&scene.phi(y))
        .into_iter()
        .map(|v| v * scale)
        .collect()
}

/// n-slack cutting-plane training, from `w = 0`.
pub fn train(
    examples: &[TrainingExample],
    model: &FieldModel,
    cfg: &TrainConfig,
) -> Result<(WeightVector, TrainReport)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Input("training needs at least one example".into()));
    }
    let template = WeightVector::zeros(cfg.tying);
    let dim = cfg.tying.dim();
    let scale = cfg.feature_scale;
    let psi_gt: Vec<Vec<f64>> = examples
        .iter()
        .map(|ex| Ok(psi(&template, &ex.scene(model, cfg.band)?, &ex.y_gt, scale)))
        .collect::<Result<_>>()?;
    let mut qp = Qp::new(dim, cfg.c / examples.len() as f64, examples.len());
    let opts = SearchOptions {
        max_iterations: cfg.max_iterations,
        trace: false,
    };
    let mut rounds = Vec::new();
    let mut converged = false;
    let mut objective = 0.0;
    for round in 1..=cfg.max_rounds {
        // Effective weights on unscaled features.
        let w_eff = WeightVector::new(cfg.tying, qp.w.iter().map(|v| v * scale).collect())?;
        let found: Vec<Result<(Hypothesis, bool)>> = examples
            .par_iter()
            .map(
                |ex| match loss_augmented_infer(&w_eff, ex, model, cfg.band, &opts) {
                    Ok(r) => Ok((r.y, true)),
                    Err(Error::BudgetExceeded(r)) => Ok((r.y, false)),
                    Err(e) => Err(e),
                },
            )
            .collect();
        let mut added = 0;
        let mut uncertified = 0;
        let mut max_violation = 0.0f64;
        for (n, res) in found.into_iter().enumerate() {
            let (y, certified) = res?;
            uncertified += usize::from(!certified);
            if qp.blocks[n].iter().any(|c| c.y == y) {
                continue;
            }
            let ex = &examples[n];
            let scene = ex.scene(model, cfg.band)?;
            let dpsi: Vec<f64> = psi_gt[n]
                .iter()
                .zip(psi(&template, &scene, &y, scale))
                .map(|(a, b)| a - b)
                .collect();
            let loss = ex.loss(&y);
            let violation = loss - dot(&qp.w, &dpsi) - qp.slack(n);
            max_violation = max_violation.max(violation);
            if violation > cfg.eps {
                qp.blocks[n].push(Constraint {
                    y,
                    norm2: dot(&dpsi, &dpsi),
                    dpsi,
                    loss,
                    alpha: 0.0,
                });
                added += 1;
            }
        }
        if added > 0 {
            objective = qp.solve(cfg.qp_tolerance)?;
        }
        rounds.push(RoundStats {
            round,
            objective,
            constraints: qp.constraints(),
            added,
            max_violation,
            uncertified,
        });
        if added == 0 {
            converged = true;
            break;
        }
    }
    let w = WeightVector::new(cfg.tying, qp.w.clone())?;
    Ok((
        w,
        TrainReport {
            rounds,
            converged,
            final_objective: objective,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rounds: usize,
    pub final_objective: f64,
}

/// Weights file: `{weights, tying, config: {C, eps}, provenance}`. Plain
/// `{weights, tying}` files also load as a `WeightVector`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(flatten)]
    pub weights: WeightVector,
    pub config: ModelConfig,
    pub provenance: Provenance,
}

impl TrainedModel {
    pub fn new(weights: WeightVector, cfg: &TrainConfig, report: &TrainReport) -> Self {
        Self {
            weights,
            config: ModelConfig {
                c: cfg.c,
                eps: cfg.eps,
            },
            provenance: Provenance {
                rounds: report.rounds.len(),
                final_objective: report.final_objective,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    #[serde(rename = "C")]
    pub c: f64,
    pub mean_iou: f64,
    pub rounds: usize,
}

/// Train once per candidate `C` and keep the one with the best mean
/// validation IOU (the first on ties).
pub fn select_c(
    examples: &[TrainingExample],
    validation: &[LoadedFrame],
    model: &FieldModel,
    cfg: &TrainConfig,
    pipeline: &PipelineConfig,
    candidates: &[f64],
) -> Result<(TrainedModel, EvalReport, Vec<CandidateScore>)> {
    let mut best: Option<(TrainedModel, EvalReport)> = None;
    let mut scores = Vec::new();
    for &c in candidates {
        let cfg_c = TrainConfig { c, ..cfg.clone() };
        let (w, report) = train(examples, model, &cfg_c)?;
        let eval = evaluate(validation, &w, model, pipeline);
        scores.push(CandidateScore {
            c,
            mean_iou: eval.mean_iou,
            rounds: report.rounds.len(),
        });
        if best
            .as_ref()
            .is_none_or(|(_, e)| eval.mean_iou > e.mean_iou)
        {
            best = Some((TrainedModel::new(w, &cfg_c, &report), eval));
        }
    }
    let (m, e) = best.ok_or_else(|| Error::Input("no candidate values of C".into()))?;
    Ok((m, e, scores))
}
