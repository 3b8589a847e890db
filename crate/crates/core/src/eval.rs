//! Image-space IOU of projected field polygons, nearest-neighbour
//! baselines, and dataset evaluation.

use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FrameRecord, LoadedFrame};
use crate::error::{Error, Result};
use crate::features::rasterize_segment;
use crate::field_model::FieldModel;
use crate::geometry::{Homography, Point2};
use crate::mask::GrassMask;
use crate::pipeline::{localize, PipelineConfig};
use crate::potentials::WeightVector;

/// Twice the signed area; positive for counter-clockwise in a y-up frame.
fn signed_area2(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum()
}

/// Shoelace area.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    0.5 * signed_area2(poly).abs()
}

/// Sutherland–Hodgman clip of `subject` against the convex polygon `clip`.
pub fn clip_polygon(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let orient = signed_area2(clip).signum();
    let mut out = subject.to_vec();
    for k in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[k], clip[(k + 1) % clip.len()]);
        let side = |p: Point2| orient * (b - a).cross(p - a);
        let input = std::mem::take(&mut out);
        for i in 0..input.len() {
            let (p, q) = (input[i], input[(i + 1) % input.len()]);
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p.lerp(q, t));
            }
        }
    }
    out
}

/// Image frame `[0, W] × [0, H]` as a polygon.
pub fn image_polygon(size: (usize, usize)) -> [Point2; 4] {
    let (w, h) = (size.0 as f64, size.1 as f64);
    [
        Point2::new(0.0, 0.0),
        Point2::new(w, 0.0),
        Point2::new(w, h),
        Point2::new(0.0, h),
    ]
}

/// Field rectangle projected into the image by the model-to-image map
/// `inverse(h)` and clipped to the frame. Corners behind the camera (or on
/// the far side of the horizon) are handled by clipping the model
/// rectangle to the visible half-plane first.
pub fn projected_field(
    h: &Homography,
    model: &FieldModel,
    size: (usize, usize),
) -> Result<Vec<Point2>> {
    let m = h.inverse()?;
    let mat = m.matrix();
    // Visible side: w = m[2]·(x, y, 1) > 0, kept with a small margin.
    let (a, b, c) = (mat[(2, 0)], mat[(2, 1)], mat[(2, 2)]);
    let corners = model.corners();
    let scale = a.abs() * model.length + b.abs() * model.width + c.abs();
    let eps = 1e-9 * scale;
    let mut poly = Vec::new();
    for i in 0..4 {
        let (p, q) = (corners[i], corners[(i + 1) % 4]);
        let (wp, wq) = (a * p.x + b * p.y + c - eps, a * q.x + b * q.y + c - eps);
        if wp >= 0.0 {
            poly.push(p);
        }
        if (wp >= 0.0) != (wq >= 0.0) {
            poly.push(p.lerp(q, wp / (wp - wq)));
        }
    }
    // Orientation can flip in the image; clipping handles either.
    let projected: Vec<Point2> = poly.iter().map(|p| m.apply(*p)).collect::<Result<_>>()?;
    Ok(clip_polygon(&projected, &image_polygon(size)))
}

/// Intersection over union of the two projected field polygons.
pub fn iou(
    h_pred: &Homography,
    h_gt: &Homography,
    model: &FieldModel,
    size: (usize, usize),
) -> Result<f64> {
    let a = projected_field(h_pred, model, size)?;
    let b = projected_field(h_gt, model, size)?;
    let inter = if a.len() >= 3 && b.len() >= 3 {
        polygon_area(&clip_polygon(&a, &b))
    } else {
        0.0
    };
    let union = polygon_area(&a) + polygon_area(&b) - inter;
    if !(union > 0.0) {
        return Err(Error::UndefinedIou);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

/// IOU of two binary masks; 1 for two empty masks.
pub fn mask_iou(a: &GrassMask, b: &GrassMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..a.height().min(b.height()) {
        for x in 0..a.width().min(b.width()) {
            let (p, q) = (a.get(x, y), b.get(x, y));
            inter += (p && q) as usize;
            union += (p || q) as usize;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Exact squared Euclidean distance transform to the `true` pixels of
/// `sites` (separable lower-envelope algorithm). Pixels with no site get
/// `f64::INFINITY`.
pub fn distance_transform(width: usize, height: usize, sites: &[bool]) -> Vec<f64> {
    let inf = f64::INFINITY;
    let mut grid: Vec<f64> = sites.iter().map(|s| if *s { 0.0 } else { inf }).collect();
    let mut f = Vec::new();
    let mut out = Vec::new();
    for x in 0..width {
        f.clear();
        f.extend((0..height).map(|y| grid[y * width + x]));
        dt_1d(&f, &mut out);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    for y in 0..height {
        f.clear();
        f.extend_from_slice(&grid[y * width..(y + 1) * width]);
        dt_1d(&f, &mut out);
        grid[y * width..(y + 1) * width].copy_from_slice(&out);
    }
    grid
}

fn dt_1d(f: &[f64], d: &mut Vec<f64>) {
    let n = f.len();
    d.clear();
    d.resize(n, f64::INFINITY);
    let finite: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if finite.is_empty() {
        return;
    }
    let mut v = vec![0usize; finite.len()];
    let mut z = vec![0f64; finite.len() + 1];
    let mut k = 0;
    v[0] = finite[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let inter = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    for &q in &finite[1..] {
        let mut s = inter(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = inter(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// Edge pixels of a frame: its rasterized segments.
pub fn edge_map(frame: &LoadedFrame) -> Vec<bool> {
    let (w, h) = frame.record.image_size;
    let mut e = vec![false; w * h];
    for s in &frame.segments {
        for (x, y) in crate::features::rasterize_segment(s, w, h) {
            e[y * w + x] = true;
        }
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NnMode {
    GrassIou,
    EdgeDistanceTransform,
}

/// Precomputed nearest-neighbour index over training frames.
pub struct NnIndex<'a> {
    train: &'a [LoadedFrame],
    dts: Vec<Vec<f64>>,
}

impl<'a> NnIndex<'a> {
    pub fn new(train: &'a [LoadedFrame], mode: NnMode) -> Result<Self> {
        if train.is_empty() || train.iter().any(|f| f.record.gt_homography.is_none()) {
            return Err(Error::Input(
                "nearest-neighbour training frames need ground-truth homographies".into(),
            ));
        }
        let dts = match mode {
            NnMode::GrassIou => Vec::new(),
            NnMode::EdgeDistanceTransform => train
                .par_iter()
                .map(|f| {
                    let (w, h) = f.record.image_size;
                    distance_transform(w, h, &edge_map(f))
                })
                .collect(),
        };
        Ok(Self { train, dts })
    }

    /// Index of the nearest training frame; ties go to the earliest.
    pub fn nearest(&self, test: &LoadedFrame) -> usize {
        let costs: Vec<f64> = if self.dts.is_empty() {
            self.train
                .iter()
                .map(|t| -mask_iou(&test.mask, &t.mask))
                .collect()
        } else {
            let edges = edge_map(test);
            let (w, _) = test.record.image_size;
            self.dts
                .iter()
                .zip(self.train)
                .map(|(dt, t)| {
                    if t.record.image_size != test.record.image_size {
                        return f64::INFINITY;
                    }
                    let (mut sum, mut n) = (0.0, 0usize);
                    for (k, e) in edges.iter().enumerate() {
                        if *e {
                            sum += dt[k].sqrt();
                            n += 1;
                        }
                    }
                    let _ = w;
                    if n == 0 {
                        f64::INFINITY
                    } else {
                        sum / n as f64
                    }
                })
                .collect()
        };
        let mut best = 0;
        for (k, c) in costs.iter().enumerate() {
            if *c < costs[best] {
                best = k;
            }
        }
        best
    }
}

/// Homography of the nearest training frame.
pub fn nn_baseline(test: &LoadedFrame, train: &[LoadedFrame], mode: NnMode) -> Result<Homography> {
    let idx = NnIndex::new(train, mode)?;
    Ok(train[idx.nearest(test)]
        .record
        .gt_homography
        .expect("checked by NnIndex::new"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub id: String,
    pub iou: f64,
    pub iterations: u64,
    pub certified: bool,
    pub fallback_used: bool,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_iou: f64,
    pub median_iou: f64,
    pub mean_iterations: f64,
    pub median_iterations: f64,
    pub rows: Vec<FrameRow>,
    pub excluded: Vec<Excluded>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Run the full pipeline on every frame and score it against ground
/// truth. Frames whose vanishing points cannot be estimated, or that lack
/// ground truth, are excluded and listed. Any later failure scores IOU 0
/// with the error kept on the row; a search stopped by the iteration cap
/// is scored on its uncertified answer.
pub fn evaluate(
    frames: &[LoadedFrame],
    w: &WeightVector,
    model: &FieldModel,
    cfg: &PipelineConfig,
) -> EvalReport {
    let results: Vec<std::result::Result<FrameRow, Excluded>> = frames
        .par_iter()
        .map(|f| {
            let exclude = |reason: String| Excluded {
                id: f.record.id.clone(),
                reason,
            };
            let gt = f
                .record
                .gt_homography
                .ok_or_else(|| exclude("no ground truth".into()))?;
            let t0 = std::time::Instant::now();
            let out = localize(f, w, model, cfg);
            let seconds = t0.elapsed().as_secs_f64();
            let mut row = FrameRow {
                id: f.record.id.clone(),
                iou: 0.0,
                iterations: 0,
                certified: false,
                fallback_used: false,
                seconds,
                error: None,
            };
            let result = match out {
                Ok(l) => {
                    row.fallback_used = l.vps.fallback_used;
                    l.result
                }
                Err(Error::BudgetExceeded(r)) => *r,
                Err(e) if e.is_vp_failure() => return Err(exclude(e.to_string())),
                Err(e) => {
                    row.error = Some(e.to_string());
                    return Ok(row);
                }
            };
            row.iterations = result.iterations;
            row.certified = result.certified;
            match iou(&result.homography, &gt, model, f.record.image_size) {
                Ok(v) => row.iou = v,
                Err(e) => row.error = Some(e.to_string()),
            }
            Ok(row)
        })
        .collect();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => excluded.push(e),
        }
    }
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    excluded.sort_by(|a, b| a.id.cmp(&b.id));
    let ious: Vec<f64> = rows.iter().map(|r| r.iou).collect();
    let its: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
    EvalReport {
        mean_iou: mean(&ious),
        median_iou: median(&ious),
        mean_iterations: mean(&its),
        median_iterations: median(&its),
        rows,
        excluded,
    }
}

/// Mean and median IOU of a nearest-neighbour baseline on `test`.
pub fn evaluate_baseline(
    test: &[LoadedFrame],
    train: &[LoadedFrame],
    mode: NnMode,
    model: &FieldModel,
) -> Result<(f64, f64)> {
    let idx = NnIndex::new(train, mode)?;
    let ious: Vec<f64> = test
        .par_iter()
        .filter_map(|f| {
            let gt = f.record.gt_homography?;
            let pred = train[idx.nearest(f)].record.gt_homography?;
            iou(&pred, &gt, model, f.record.image_size).ok()
        })
        .collect();
    Ok((mean(&ious), median(&ious)))
}

/// Frame picture for inspection: grass in dark green, segments in gray,
/// and the model lines and circles projected by `h` (image to model) in
/// red, 2 px wide.
pub fn render_overlay(frame: &LoadedFrame, h: &Homography, model: &FieldModel) -> Result<RgbImage> {
    let (w, ht) = frame.record.image_size;
    let mut img = RgbImage::from_fn(w as u32, ht as u32, |x, y| {
        if frame.mask.get(x as usize, y as usize) {
            Rgb([30, 90, 30])
        } else {
            Rgb([20, 20, 20])
        }
    });
    for s in &frame.segments {
        for (x, y) in rasterize_segment(s, w, ht) {
            img.put_pixel(x as u32, y as u32, Rgb([150, 150, 150]));
        }
    }
    let m = h.inverse()?;
    let mut stamp = |p: Point2| {
        let (x0, y0) = (p.x.round() as i64, p.y.round() as i64);
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let (x, y) = (x0 + dx, y0 + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < ht {
                img.put_pixel(x as u32, y as u32, Rgb([230, 40, 40]));
            }
        }
    };
    let mut draw = |p: Point2| {
        let v = m.apply_homogeneous(&p.homogeneous());
        if v.z > 0.0 {
            let q = Point2::new(v.x / v.z, v.y / v.z);
            if q.x.abs() < 1e6 && q.y.abs() < 1e6 {
                stamp(q);
            }
        }
    };
    let samples = 4 * (w + ht);
    for line in &model.lines {
        let (a, b) = line.endpoints();
        for k in 0..=samples {
            draw(a.lerp(b, k as f64 / samples as f64));
        }
    }
    for c in &model.circles {
        for k in 0..samples {
            let t = std::f64::consts::TAU * k as f64 / samples as f64;
            let p = Point2::new(
                c.center.x + c.radius * t.cos(),
                c.center.y + c.radius * t.sin(),
            );
            if c.visible_region.is_none_or(|r| r.contains(p.x)) {
                draw(p);
            }
        }
    }
    Ok(img)
}

pub fn save_overlay(
    frame: &LoadedFrame,
    h: &Homography,
    model: &FieldModel,
    path: &Path,
) -> Result<()> {
    render_overlay(frame, h, model)?
        .save(path)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            source: e,
        })
}

/// Record-level helper for callers that only need ids.
pub fn frame_ids(frames: &[FrameRecord]) -> Vec<&str> {
    frames.iter().map(|f| f.id.as_str()).collect()
}
