//! Synthetic broadcast frames with full ground truth: a pinhole camera
//! looking at the pitch from behind the near touchline, a rendered grass
//! mask and detector-like line segments.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_json, FrameRecord, LoadedFrame};
use crate::error::{Error, Result};
use crate::eval::{polygon_area, projected_field};
use crate::features::{Hypothesis, RayGrid};
use crate::field_model::{FieldModel, Orientation};
use crate::geometry::{dlt_homography, Homography, Point2, VanishingPoint};
use crate::mask::GrassMask;
use crate::vp_estimation::{segments_to_json, LineSegment, SegmentLabel};

pub const MAX_DRAWS: usize = 1000;

/// Sampling ranges in metres (positions) and pixels (focal length).
/// Camera `x` is absolute, its `y` is `-distance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRanges {
    pub x: (f64, f64),
    pub distance: (f64, f64),
    pub height: (f64, f64),
    pub focal: (f64, f64),
    pub target_x: (f64, f64),
    pub target_y: (f64, f64),
}

impl CameraRanges {
    pub fn broadcast() -> Self {
        Self {
            x: (37.5, 67.5),
            distance: (10.0, 30.0),
            height: (25.0, 45.0),
            focal: (600.0, 1000.0),
            target_x: (10.0, 95.0),
            target_y: (12.0, 45.0),
        }
    }

    /// High, steep shots that keep the whole boundary in view.
    pub fn wide() -> Self {
        Self {
            x: (47.5, 57.5),
            distance: (12.0, 25.0),
            height: (28.0, 42.0),
            focal: (380.0, 480.0),
            target_x: (48.0, 57.0),
            target_y: (8.0, 26.0),
        }
    }

    /// Far back and zoomed on the center circle, so both touchlines show
    /// but no vertical marking other than the halfway line.
    pub fn center() -> Self {
        Self {
            x: (45.0, 60.0),
            distance: (50.0, 78.0),
            height: (30.0, 42.0),
            focal: (1050.0, 1400.0),
            target_x: (50.0, 55.0),
            target_y: (16.0, 26.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub image_size: (usize, usize),
    /// Frames showing the center circle and the halfway line as the only
    /// vertical marking.
    pub center_view: bool,
    pub camera: CameraRanges,
    pub center_camera: CameraRanges,
    /// All four boundary lines must be in view.
    pub full_view: bool,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub dropout: f64,
    /// Grass beyond the field boundary, metres.
    pub apron: f64,
    pub blobs: usize,
    pub blob_radius: (f64, f64),
    pub piece_length: (f64, f64),
    pub piece_gap: (f64, f64),
    pub chord_length: f64,
    pub outlier_length: (f64, f64),
    pub min_grass_fraction: f64,
    pub min_visible_line: f64,
    /// Ground-truth grid: rays per fan and margin.
    pub grid: usize,
    pub margin: f64,
    /// Extra distance, as a fraction of the diagonal, that the true
    /// vanishing points keep from the grid's margin region.
    pub vp_clearance: f64,
    /// Move the field boundary onto the nearest grid rays.
    pub snap: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: (640, 360),
            center_view: false,
            camera: CameraRanges::broadcast(),
            center_camera: CameraRanges::center(),
            full_view: false,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            dropout: 0.0,
            apron: 1.5,
            blobs: 8,
            blob_radius: (2.0, 5.0),
            piece_length: (50.0, 150.0),
            piece_gap: (0.0, 4.0),
            chord_length: 12.0,
            outlier_length: (10.0, 60.0),
            min_grass_fraction: 0.4,
            min_visible_line: 100.0,
            grid: 256,
            margin: 0.25,
            vp_clearance: 0.15,
            snap: false,
        }
    }
}

impl SynthConfig {
    /// Noisy regime: σ = 1.5 px, 20% outliers, 15% dropout.
    pub fn noisy(seed: u64) -> Self {
        Self {
            seed,
            noise_sigma: 1.5,
            outlier_fraction: 0.2,
            dropout: 0.15,
            ..Self::default()
        }
    }

    /// Noise-free wide frames whose boundary lies on a `grid`-ray grid.
    pub fn clean(seed: u64, grid: usize) -> Self {
        Self {
            seed,
            grid,
            snap: true,
            full_view: true,
            camera: CameraRanges::wide(),
            vp_clearance: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| (0.0..=1.0).contains(&v);
        if !frac(self.outlier_fraction) || !frac(self.dropout) || !frac(self.min_grass_fraction) {
            return Err(Error::Input("synth fractions must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) || self.image_size.0 < 16 || self.image_size.1 < 16 {
            return Err(Error::Input("bad synth noise or image size".into()));
        }
        if !(self.chord_length > 0.0 && self.piece_length.0 > 0.0) {
            return Err(Error::Input("bad synth segment lengths".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub focal: f64,
    pub principal: [f64; 2],
}

impl Camera {
    fn axes(&self) -> [Vector3<f64>; 3] {
        let c = Vector3::from(self.position);
        let fwd = (Vector3::from(self.target) - c).normalize();
        let right = fwd.cross(&Vector3::z()).normalize();
        let down = fwd.cross(&right);
        [right, down, fwd]
    }

    /// Distance along the optical axis of a ground point.
    pub fn depth(&self, p: Point2) -> f64 {
        let [_, _, fwd] = self.axes();
        fwd.dot(&(Vector3::new(p.x, p.y, 0.0) - Vector3::from(self.position)))
    }

    /// Model plane to image.
    pub fn homography(&self) -> Result<Homography> {
        let [r, d, f] = self.axes();
        let rot = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
        let t = -(rot * Vector3::from(self.position));
        let k = Matrix3::new(
            self.focal,
            0.0,
            self.principal[0],
            0.0,
            self.focal,
            self.principal[1],
            0.0,
            0.0,
            1.0,
        );
        let rt = Matrix3::from_columns(&[rot.column(0).into(), rot.column(1).into(), t]);
        Homography::from_matrix(k * rt)
    }
}

/// A generated frame. `record` carries ground truth; its file paths are
/// empty until the frame is written.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub record: FrameRecord,
    pub mask: GrassMask,
    pub segments: Vec<LineSegment>,
    pub labels: Vec<SegmentLabel>,
    pub model_to_image: Homography,
    pub vp_h: VanishingPoint,
    pub vp_v: VanishingPoint,
    pub camera: Camera,
}

impl SynthFrame {
    pub fn loaded(&self) -> LoadedFrame {
        LoadedFrame {
            record: self.record.clone(),
            mask: self.mask.clone(),
            segments: self.segments.clone(),
            labels: Some(self.labels.clone()),
        }
    }

    /// Write `<stem>.json`, `<stem>_mask.png` and `<stem>_segments.json`
    /// into `dir`; returns the record with paths relative to `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<FrameRecord> {
        let mask_name = format!("{stem}_mask.png");
        let seg_name = format!("{stem}_segments.json");
        self.mask.save(&dir.join(&mask_name))?;
        let seg_path = dir.join(&seg_name);
        std::fs::write(
            &seg_path,
            segments_to_json(&self.segments, Some(&self.labels)),
        )
        .map_err(|e| Error::Io {
            path: seg_path.display().to_string(),
            source: e,
        })?;
        let mut rec = self.record.clone();
        rec.grass_mask = mask_name.into();
        rec.segments = seg_name.into();
        write_json(&dir.join(format!("{stem}.json")), &rec)?;
        Ok(rec)
    }
}

/// Liang–Barsky clip of `p→q` to `[x0, x1] × [y0, y1]`.
pub fn clip_segment(
    p: Point2,
    q: Point2,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
) -> Option<(Point2, Point2)> {
    let d = q - p;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (den, num) in [
        (-d.x, p.x - x0),
        (d.x, x1 - p.x),
        (-d.y, p.y - y0),
        (d.y, y1 - p.y),
    ] {
        if den == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else {
            let t = num / den;
            if den < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then(|| (p.lerp(q, t0), p.lerp(q, t1)))
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn sample_camera(rng: &mut ChaCha8Rng, r: &CameraRanges, size: (usize, usize)) -> Camera {
    let position = [
        uniform(rng, r.x),
        -uniform(rng, r.distance),
        uniform(rng, r.height),
    ];
    let target = [uniform(rng, r.target_x), uniform(rng, r.target_y), 0.0];
    Camera {
        position,
        target,
        focal: uniform(rng, r.focal),
        principal: [(size.0 as f64 - 1.0) / 2.0, (size.1 as f64 - 1.0) / 2.0],
    }
}

fn vp_of_column(h: &Homography, c: usize) -> Result<VanishingPoint> {
    VanishingPoint::from_homogeneous(h.matrix().column(c).into_owned())
}

fn project(h: &Homography, p: Point2) -> Point2 {
    h.apply(p)
        .unwrap_or(Point2::new(f64::INFINITY, f64::INFINITY))
}

struct Geometry {
    model_to_image: Homography,
    vp_h: VanishingPoint,
    vp_v: VanishingPoint,
    y: Hypothesis,
}

/// Ground-truth hypothesis on the grid built from the true vanishing
/// points; with `snap` the field boundary is moved onto those rays.
fn ground_truth(cam_h: &Homography, model: &FieldModel, cfg: &SynthConfig) -> Option<Geometry> {
    let vp_h = vp_of_column(cam_h, 0).ok()?;
    let vp_v = vp_of_column(cam_h, 1).ok()?;
    let grid = RayGrid::new(vp_h, vp_v, cfg.image_size, cfg.grid, cfg.grid, cfg.margin).ok()?;
    let (l, w) = (model.length, model.width);
    let idx = |fan: &crate::features::Fan, p: Point2| -> Option<f64> {
        let f = fan.fractional_index(fan.param_of_point(project(cam_h, p))?);
        (f.is_finite() && f >= -0.5 && f <= fan.len() as f64 - 0.5).then_some(f)
    };
    let f1 = idx(&grid.h, Point2::new(l / 2.0, 0.0))?;
    let f2 = idx(&grid.h, Point2::new(l / 2.0, w))?;
    let f3 = idx(&grid.v, Point2::new(0.0, w / 2.0))?;
    let f4 = idx(&grid.v, Point2::new(l, w / 2.0))?;
    let r = |f: f64| f.round().max(0.0) as usize;
    let (a, b) = (r(f1).min(r(f2)), r(f1).max(r(f2)));
    let (c, d) = (r(f3).min(r(f4)), r(f3).max(r(f4)));
    let y = Hypothesis([a, b, c, d]);
    if !y.is_valid(grid.n_h(), grid.n_v()) {
        return None;
    }
    let model_to_image = if cfg.snap {
        // Touchline y = 0 keeps its ray order so the field is not mirrored.
        let (t0, t1) = if f1 <= f2 { (a, b) } else { (b, a) };
        let (g0, g1) = if f3 <= f4 { (c, d) } else { (d, c) };
        let img = [
            grid.ray_intersection(t0, g0).ok()?,
            grid.ray_intersection(t0, g1).ok()?,
            grid.ray_intersection(t1, g1).ok()?,
            grid.ray_intersection(t1, g0).ok()?,
        ];
        let pairs: Vec<_> = model.corners().into_iter().zip(img).collect();
        dlt_homography(&pairs).ok()?
    } else {
        *cam_h
    };
    Some(Geometry {
        model_to_image,
        vp_h,
        vp_v,
        y,
    })
}

fn visible_length(h: &Homography, a: Point2, b: Point2, size: (usize, usize)) -> f64 {
    let (p, q) = (project(h, a), project(h, b));
    if !p.is_finite() || !q.is_finite() {
        return 0.0;
    }
    clip_segment(p, q, 0.0, 0.0, size.0 as f64 - 1.0, size.1 as f64 - 1.0)
        .map_or(0.0, |(s, e)| s.dist(e))
}

fn acceptable(g: &Geometry, cam: &Camera, model: &FieldModel, cfg: &SynthConfig) -> bool {
    let (l, w, a) = (model.length, model.width, cfg.apron);
    let size = cfg.image_size;
    let pad = (cfg.margin + cfg.vp_clearance) * (size.0 as f64).hypot(size.1 as f64);
    let clear = |vp: &VanishingPoint| {
        vp.point().is_none_or(|p| {
            p.x < -pad
                || p.y < -pad
                || p.x > size.0 as f64 - 1.0 + pad
                || p.y > size.1 as f64 - 1.0 + pad
        })
    };
    if !clear(&g.vp_h) || !clear(&g.vp_v) {
        return false;
    }
    let near = [
        Point2::new(-a, -a),
        Point2::new(l + a, -a),
        Point2::new(l + a, w + a),
        Point2::new(-a, w + a),
    ];
    if near.iter().any(|p| cam.depth(*p) < 1.0) {
        return false;
    }
    let Ok(inv) = g.model_to_image.inverse() else {
        return false;
    };
    let Ok(poly) = projected_field(&inv, model, size) else {
        return false;
    };
    if polygon_area(&poly) < cfg.min_grass_fraction * (size.0 * size.1) as f64 {
        return false;
    }
    let vis: Vec<f64> = model
        .lines
        .iter()
        .map(|ln| {
            let (p, q) = ln.endpoints();
            visible_length(&g.model_to_image, p, q, size)
        })
        .collect();
    let count = |o: Orientation| {
        model
            .lines
            .iter()
            .zip(&vis)
            .filter(|(ln, v)| ln.orientation == o && **v >= cfg.min_visible_line)
            .count()
    };
    if count(Orientation::Horizontal) < 2 {
        return false;
    }
    if cfg.full_view {
        let boundary = |ln: &crate::field_model::ModelLine| match ln.orientation {
            Orientation::Vertical => ln.offset == 0.0 || ln.offset == l,
            Orientation::Horizontal => ln.offset == 0.0 || ln.offset == w,
        };
        let all_seen = model
            .lines
            .iter()
            .zip(&vis)
            .filter(|(ln, _)| boundary(ln))
            .all(|(_, v)| *v >= cfg.min_visible_line);
        if !all_seen {
            return false;
        }
    }
    if !cfg.center_view {
        return count(Orientation::Vertical) >= 2;
    }
    let halfway = model.lines.iter().position(|ln| {
        ln.orientation == Orientation::Vertical && (ln.offset - l / 2.0).abs() < 1e-9
    });
    let Some(hw) = halfway else {
        return false;
    };
    let others_hidden = model
        .lines
        .iter()
        .zip(&vis)
        .enumerate()
        .all(|(k, (ln, v))| k == hw || ln.orientation != Orientation::Vertical || *v == 0.0);
    let pad = 4.0;
    let circle_inside = model.circles.first().is_some_and(|c| {
        model.circle_arc_points(c, 180).iter().all(|p| {
            let q = project(&g.model_to_image, *p);
            q.x >= pad
                && q.y >= pad
                && q.x <= size.0 as f64 - 1.0 - pad
                && q.y <= size.1 as f64 - 1.0 - pad
        })
    });
    vis[hw] >= cfg.min_visible_line && others_hidden && circle_inside
}

fn render_mask(
    g: &Geometry,
    model: &FieldModel,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GrassMask> {
    let inv = g.model_to_image.inverse()?;
    let m = *inv.matrix();
    let center = g.model_to_image.apply_homogeneous(&Vector3::new(
        model.length / 2.0,
        model.width / 2.0,
        1.0,
    ));
    let ground_sign = (m.row(2) * center)[0].signum();
    let a = cfg.apron;
    let (w, h) = cfg.image_size;
    let mut mask = GrassMask::from_fn(w, h, |x, y| {
        let v = m * Vector3::new(x as f64, y as f64, 1.0);
        if v[2] * ground_sign <= 0.0 {
            return false;
        }
        let (mx, my) = (v[0] / v[2], v[1] / v[2]);
        mx >= -a && mx <= model.length + a && my >= -a && my <= model.width + a
    });
    for _ in 0..cfg.blobs {
        let c = Point2::new(
            rng.random_range(0.0..w as f64),
            rng.random_range(0.0..h as f64),
        );
        let r = uniform(rng, cfg.blob_radius);
        let (x0, x1) = (
            (c.x - r).floor().max(0.0) as usize,
            ((c.x + r).ceil() as usize).min(w - 1),
        );
        let (y0, y1) = (
            (c.y - r).floor().max(0.0) as usize,
            ((c.y + r).ceil() as usize).min(h - 1),
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                if Point2::new(x as f64, y as f64).dist(c) <= r {
                    mask.set(x, y, false);
                }
            }
        }
    }
    Ok(mask)
}

struct Emitter<'a> {
    rng: &'a mut ChaCha8Rng,
    noise: Option<Normal<f64>>,
    cfg: &'a SynthConfig,
    segments: Vec<LineSegment>,
    labels: Vec<SegmentLabel>,
}

impl Emitter<'_> {
    fn jitter(&mut self, p: Point2) -> Point2 {
        match self.noise {
            Some(n) => Point2::new(p.x + n.sample(self.rng), p.y + n.sample(self.rng)),
            None => p,
        }
    }

    /// Dropout, jitter, clip and keep.
    fn emit(&mut self, p: Point2, q: Point2, label: SegmentLabel) {
        if self.cfg.dropout > 0.0 && self.rng.random_bool(self.cfg.dropout) {
            return;
        }
        let (p, q) = (self.jitter(p), self.jitter(q));
        let (w, h) = self.cfg.image_size;
        let Some((p, q)) = clip_segment(p, q, 0.0, 0.0, w as f64 - 1.0, h as f64 - 1.0) else {
            return;
        };
        if p.dist(q) < 8.0 {
            return;
        }
        self.segments.push(LineSegment::new(p, q));
        self.labels.push(label);
    }

    fn straight(&mut self, p: Point2, q: Point2, label: SegmentLabel) {
        let len = p.dist(q);
        let mut s = 0.0;
        while s < len {
            let e = (s + uniform(self.rng, self.cfg.piece_length)).min(len);
            self.emit(p.lerp(q, s / len), p.lerp(q, e / len), label);
            s = e + uniform(self.rng, self.cfg.piece_gap);
        }
    }
}

fn emit_segments(
    g: &Geometry,
    model: &FieldModel,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<LineSegment>, Vec<SegmentLabel>) {
    let (w, h) = cfg.image_size;
    let noise =
        (cfg.noise_sigma > 0.0).then(|| Normal::new(0.0, cfg.noise_sigma).expect("finite sigma"));
    let mut em = Emitter {
        rng,
        noise,
        cfg,
        segments: Vec::new(),
        labels: Vec::new(),
    };
    let inside =
        |p: Point2| p.x >= 0.0 && p.y >= 0.0 && p.x <= w as f64 - 1.0 && p.y <= h as f64 - 1.0;
    for ln in &model.lines {
        let (a, b) = ln.endpoints();
        let (p, q) = (project(&g.model_to_image, a), project(&g.model_to_image, b));
        let Some((p, q)) = clip_segment(p, q, 0.0, 0.0, w as f64 - 1.0, h as f64 - 1.0) else {
            continue;
        };
        let label = match ln.orientation {
            Orientation::Horizontal => SegmentLabel::H,
            Orientation::Vertical => SegmentLabel::V,
        };
        em.straight(p, q, label);
    }
    const SAMPLES: usize = 720;
    for c in &model.circles {
        let pts: Vec<Option<Point2>> = (0..SAMPLES)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / SAMPLES as f64;
                let m = Point2::new(
                    c.center.x + c.radius * t.cos(),
                    c.center.y + c.radius * t.sin(),
                );
                let img = project(&g.model_to_image, m);
                (c.visible_region.is_none_or(|r| r.contains(m.x)) && inside(img)).then_some(img)
            })
            .collect();
        // Start the walk at a gap so arcs are not split at angle zero.
        let start = pts.iter().position(Option::is_none).unwrap_or(0);
        let mut anchor: Option<Point2> = None;
        for k in 0..=SAMPLES {
            match pts[(start + k) % SAMPLES] {
                Some(p) => match anchor {
                    None => anchor = Some(p),
                    Some(a) if a.dist(p) >= cfg.chord_length => {
                        em.emit(a, p, SegmentLabel::None);
                        anchor = Some(p);
                    }
                    _ => {}
                },
                None => anchor = None,
            }
        }
    }
    let n_out = (cfg.outlier_fraction * em.segments.len() as f64).round() as usize;
    for _ in 0..n_out {
        let c = Point2::new(
            em.rng.random_range(0.0..w as f64 - 1.0),
            em.rng.random_range(0.0..h as f64 - 1.0),
        );
        let t: f64 = em.rng.random_range(0.0..std::f64::consts::PI);
        let half = 0.5 * uniform(em.rng, cfg.outlier_length);
        let d = Point2::new(t.cos(), t.sin()) * half;
        if let Some((p, q)) = clip_segment(c - d, c + d, 0.0, 0.0, w as f64 - 1.0, h as f64 - 1.0) {
            if p.dist(q) >= 1.0 {
                em.segments.push(LineSegment::new(p, q));
                em.labels.push(SegmentLabel::None);
            }
        }
    }
    (em.segments, em.labels)
}

/// One frame, deterministic in `cfg.seed`.
pub fn synth_frame(cfg: &SynthConfig, model: &FieldModel) -> Result<SynthFrame> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ranges = if cfg.center_view {
        &cfg.center_camera
    } else {
        &cfg.camera
    };
    for _ in 0..MAX_DRAWS {
        let cam = sample_camera(&mut rng, ranges, cfg.image_size);
        let Ok(cam_h) = cam.homography() else {
            continue;
        };
        let Some(g) = ground_truth(&cam_h, model, cfg) else {
            continue;
        };
        if !acceptable(&g, &cam, model, cfg) {
            continue;
        }
        let mask = render_mask(&g, model, cfg, &mut rng)?;
        let (segments, labels) = emit_segments(&g, model, cfg, &mut rng);
        let record = FrameRecord {
            id: format!("synth-{:08}", cfg.seed),
            image_size: cfg.image_size,
            grass_mask: Default::default(),
            segments: Default::default(),
            gt_homography: Some(g.model_to_image.inverse()?),
            gt_hypothesis: Some(g.y),
            gt_grid: Some(cfg.grid),
        };
        return Ok(SynthFrame {
            record,
            mask,
            segments,
            labels,
            model_to_image: g.model_to_image,
            vp_h: g.vp_h,
            vp_v: g.vp_v,
            camera: cam,
        });
    }
    Err(Error::SynthFailed(MAX_DRAWS))
}

/// `count` frames with seeds `cfg.seed, cfg.seed + 1, …`.
pub fn synth_frames(
    cfg: &SynthConfig,
    model: &FieldModel,
    count: usize,
) -> Result<Vec<SynthFrame>> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let c = SynthConfig {
                seed: cfg.seed.wrapping_add(k),
                ..cfg.clone()
            };
            synth_frame(&c, model)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_model::standard_field;

    #[test]
    fn clip_segment_cases() {
        let (p, q) = clip_segment(
            Point2::new(-5.0, 5.0),
            Point2::new(15.0, 5.0),
            0.0,
            0.0,
            10.0,
            10.0,
        )
        .unwrap();
        assert_eq!((p.x, q.x), (0.0, 10.0));
        assert!(clip_segment(
            Point2::new(-5.0, 20.0),
            Point2::new(15.0, 20.0),
            0.0,
            0.0,
            10.0,
            10.0
        )
        .is_none());
    }

    #[test]
    fn same_seed_same_frame() {
        let model = standard_field();
        let cfg = SynthConfig::noisy(7);
        let a = synth_frame(&cfg, &model).unwrap();
        let b = synth_frame(&cfg, &model).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.segments, b.segments);
        let c = synth_frame(&SynthConfig::noisy(8), &model).unwrap();
        assert_ne!(a.segments, c.segments);
    }

    #[test]
    fn camera_maps_ground_to_its_vanishing_points() {
        let model = standard_field();
        let f = synth_frame(&SynthConfig::default(), &model).unwrap();
        // Far along a touchline the image point approaches vp_h.
        let far = f.model_to_image.apply(Point2::new(1e7, 0.0)).unwrap();
        let vp = f.vp_h.point().unwrap_or(far);
        if !f.vp_h.is_infinite() {
            assert!(far.dist(vp) < 1e-2 * (1.0 + vp.norm()));
        }
        assert!(f.segments.len() > 10);
        assert!(f.mask.count() > 0);
    }

    #[test]
    fn rejects_bad_fractions() {
        let cfg = SynthConfig {
            dropout: 1.5,
            ..SynthConfig::default()
        };
        assert!(matches!(
            synth_frame(&cfg, &standard_field()),
            Err(Error::Input(_))
        ));
    }
}
