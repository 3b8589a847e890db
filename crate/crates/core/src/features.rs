//! Ray grid anchored at the two vanishing points and the five integral
//! accumulators over its cells.
//!
//! Rays from `vp_h` are the images of model lines of constant `y`
//! (touchline direction); rays from `vp_v` are images of constant `x`.
//! Cell `(i, j)` is the region between h-rays `i, i+1` and v-rays `j, j+1`,
//! lower-inclusive (the last cell of each fan also holds its upper ray). Integral tables have one extra row and column, so the
//! count over cells `[i_lo, i_hi) × [j_lo, j_hi)` costs four lookups.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{line_through, projective_fraction, Point2, VanishingPoint};
use crate::mask::GrassMask;
use crate::vp_estimation::{LineSegment, SegmentLabel, VpResult};

/// Four ray indices: `y1 < y2` from `vp_h` (touchlines), `y3 < y4` from
/// `vp_v` (goallines).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hypothesis(pub [usize; 4]);

impl Hypothesis {
    pub fn new(y1: usize, y2: usize, y3: usize, y4: usize) -> Self {
        Self([y1, y2, y3, y4])
    }

    pub fn is_valid(&self, n_h: usize, n_v: usize) -> bool {
        let [y1, y2, y3, y4] = self.0;
        y1 < y2 && y2 < n_h && y3 < y4 && y4 < n_v
    }

    /// The hypothesis field in cell coordinates.
    pub fn field_cells(&self) -> CellRect {
        let [y1, y2, y3, y4] = self.0;
        CellRect::new(y1 as i64, y2 as i64, y3 as i64, y4 as i64)
    }
}

/// Half-open cell rectangle `[i_lo, i_hi) × [j_lo, j_hi)`; may be empty or
/// extend past the grid before clamping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub i_lo: i64,
    pub i_hi: i64,
    pub j_lo: i64,
    pub j_hi: i64,
}

impl CellRect {
    pub const fn new(i_lo: i64, i_hi: i64, j_lo: i64, j_hi: i64) -> Self {
        Self {
            i_lo,
            i_hi,
            j_lo,
            j_hi,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.i_lo >= self.i_hi || self.j_lo >= self.j_hi
    }

    pub fn intersect(&self, o: &CellRect) -> CellRect {
        CellRect::new(
            self.i_lo.max(o.i_lo),
            self.i_hi.min(o.i_hi),
            self.j_lo.max(o.j_lo),
            self.j_hi.min(o.j_hi),
        )
    }
}

#[derive(Debug, Clone, Copy)]
enum FanKind {
    /// Finite vanishing point; parameter is the angle from `axis`.
    Finite { apex: Point2, axis: Point2 },
    /// Vanishing point at infinity; parameter is `normal · p`.
    Parallel { normal: Point2 },
}

/// One pencil of rays, uniformly discretized in its parameter.
#[derive(Debug, Clone)]
pub struct Fan {
    vp: VanishingPoint,
    kind: FanKind,
    params: Vec<f64>,
    tau: Vec<f64>,
    step: f64,
    /// Homogeneous pencil coordinate `(num, den)` of the ray toward the
    /// other vanishing point: the image of the model line at infinity.
    horizon: (f64, f64),
}

fn rotate(v: Point2, a: f64) -> Point2 {
    let (s, c) = a.sin_cos();
    Point2::new(v.x * c - v.y * s, v.x * s + v.y * c)
}

/// Gap kept between the fan and the horizon ray, as a fraction of the span.
const HORIZON_GAP: f64 = 0.02;

impl Fan {
    fn new(
        vp: VanishingPoint,
        other: &VanishingPoint,
        region: [Point2; 4],
        center: Point2,
        n: usize,
    ) -> Result<Self> {
        let kind = match vp.point() {
            Some(apex) => {
                let (xs, ys) = (region.map(|p| p.x), region.map(|p| p.y));
                let inside = apex.x >= xs[0].min(xs[2])
                    && apex.x <= xs[0].max(xs[2])
                    && apex.y >= ys[0].min(ys[2])
                    && apex.y <= ys[0].max(ys[2]);
                if inside {
                    return Err(Error::VpInsideImage);
                }
                let axis0 = (center - apex) * (1.0 / (center - apex).norm());
                let angles = region.map(|c| {
                    let d = c - apex;
                    axis0.cross(d).atan2(axis0.dot(d))
                });
                let lo = angles.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = angles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                FanKind::Finite {
                    apex,
                    axis: rotate(axis0, 0.5 * (lo + hi)),
                }
            }
            None => {
                let d = vp.direction_from(center);
                let mut normal = Point2::new(-d.y, d.x);
                let dominant = if normal.x.abs() >= normal.y.abs() {
                    normal.x
                } else {
                    normal.y
                };
                if dominant < 0.0 {
                    normal = normal * -1.0;
                }
                FanKind::Parallel { normal }
            }
        };
        let mut fan = Fan {
            vp,
            kind,
            params: Vec::new(),
            tau: Vec::new(),
            step: 0.0,
            horizon: (0.0, 0.0),
        };
        let corner_params: Vec<f64> = region
            .iter()
            .map(|c| fan.param_of_point(*c).ok_or(Error::VpInsideImage))
            .collect::<Result<_>>()?;
        let mut p_min = corner_params.iter().copied().fold(f64::INFINITY, f64::min);
        let mut p_max = corner_params
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);

        fan.horizon = fan.pencil_coordinate(&other.homogeneous());
        let (hn, hd) = fan.horizon;
        if hn == 0.0 && hd == 0.0 {
            return Err(Error::InvalidGrid("vanishing points coincide".to_string()));
        }
        if hd != 0.0 {
            let h_param = fan.param_of_tau(hn / hd);
            if h_param > p_min && h_param < p_max {
                let gap = HORIZON_GAP * (p_max - p_min);
                let c_param = fan.param_of_point(center).ok_or(Error::VpInsideImage)?;
                if c_param > h_param {
                    p_min = h_param + gap;
                } else {
                    p_max = h_param - gap;
                }
            }
        }
        if !(p_max > p_min) {
            return Err(Error::InvalidGrid("empty ray fan".to_string()));
        }
        let step = (p_max - p_min) / (n - 1) as f64;
        let mut params: Vec<f64> = (0..n).map(|k| p_min + k as f64 * step).collect();
        params[n - 1] = p_max;
        if params.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("ray parameters not increasing".into()));
        }
        fan.tau = params.iter().map(|p| fan.tau_of_param(*p)).collect();
        fan.params = params;
        fan.step = step;
        Ok(fan)
    }

    pub fn vanishing_point(&self) -> &VanishingPoint {
        &self.vp
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Ray parameter of the line through `p` and the vanishing point;
    /// `None` for points behind a finite vanishing point.
    pub fn param_of_point(&self, p: Point2) -> Option<f64> {
        match self.kind {
            FanKind::Finite { apex, axis } => {
                let d = p - apex;
                let along = axis.dot(d);
                (along > 0.0).then(|| axis.cross(d).atan2(along))
            }
            FanKind::Parallel { normal } => Some(normal.dot(p)),
        }
    }

    /// Projective coordinate of a ray within the pencil.
    fn tau_of_param(&self, p: f64) -> f64 {
        match self.kind {
            FanKind::Finite { .. } => p.tan(),
            FanKind::Parallel { .. } => p,
        }
    }

    fn param_of_tau(&self, t: f64) -> f64 {
        match self.kind {
            FanKind::Finite { .. } => t.atan(),
            FanKind::Parallel { .. } => t,
        }
    }

    /// Homogeneous pencil coordinate of the ray through homogeneous point `q`.
    fn pencil_coordinate(&self, q: &Vector3<f64>) -> (f64, f64) {
        match self.kind {
            FanKind::Finite { apex, axis } => {
                let d = Point2::new(q.x - q.z * apex.x, q.y - q.z * apex.y);
                (axis.cross(d), axis.dot(d))
            }
            FanKind::Parallel { normal } => (normal.x * q.x + normal.y * q.y, q.z),
        }
    }

    /// Fractional ray index of a parameter value.
    pub fn fractional_index(&self, param: f64) -> f64 {
        (param - self.params[0]) / self.step
    }

    /// Index of the last ray with parameter `<= param`, if covered. The
    /// last cell is closed on both sides, so the final ray belongs to cell
    /// `n - 2` and cell `n - 1` stays empty.
    pub fn cell_of_param(&self, param: f64) -> Option<usize> {
        let n = self.params.len();
        if !(param >= self.params[0] && param <= self.params[n - 1]) {
            return None;
        }
        Some((self.params.partition_point(|q| *q <= param) - 1).min(n - 2))
    }

    /// Fractional index of the image of model fraction `u` (0 at ray
    /// `anchor_lo`, 1 at ray `anchor_hi`) under the projective frame fixed
    /// by the two anchors and the horizon ray.
    pub fn project(&self, anchor_lo: usize, anchor_hi: usize, u: f64) -> f64 {
        if u == 0.0 {
            return anchor_lo as f64;
        }
        if u == 1.0 {
            return anchor_hi as f64;
        }
        let (t_lo, t_hi) = (self.tau[anchor_lo], self.tau[anchor_hi]);
        let (hn, hd) = self.horizon;
        let num = hn - hd * t_lo;
        let den = hd * (t_hi - t_lo);
        let s = projective_fraction(u, num, den);
        let t = t_lo + s * (t_hi - t_lo);
        let idx = self.fractional_index(self.param_of_tau(t));
        if idx.is_nan() {
            f64::INFINITY
        } else {
            idx
        }
    }

    /// Homogeneous image line of the ray with parameter `param`.
    pub fn line_at(&self, param: f64) -> Vector3<f64> {
        match self.kind {
            FanKind::Finite { apex, axis } => {
                let dir = rotate(axis, param);
                line_through(apex, apex + dir)
            }
            FanKind::Parallel { normal } => Vector3::new(normal.x, normal.y, -param),
        }
    }

    pub fn ray_line(&self, k: usize) -> Vector3<f64> {
        self.line_at(self.params[k])
    }
}

/// Pixel-center bounds of an image, optionally grown by `margin` pixels.
fn image_region(w: usize, h: usize, margin: f64) -> [Point2; 4] {
    let (x1, y1) = ((w as f64 - 1.0) + margin, (h as f64 - 1.0) + margin);
    [
        Point2::new(-margin, -margin),
        Point2::new(x1, -margin),
        Point2::new(x1, y1),
        Point2::new(-margin, y1),
    ]
}

/// The hypothesis coordinate system: two fans of discretized rays.
#[derive(Debug, Clone)]
pub struct RayGrid {
    pub h: Fan,
    pub v: Fan,
    pub image_size: (usize, usize),
}

impl RayGrid {
    /// `margin` is a fraction of the image diagonal added on every side.
    pub fn new(
        vp_h: VanishingPoint,
        vp_v: VanishingPoint,
        image_size: (usize, usize),
        n_h: usize,
        n_v: usize,
        margin: f64,
    ) -> Result<Self> {
        let (w, h) = image_size;
        if w == 0 || h == 0 {
            return Err(Error::Input("empty image".into()));
        }
        if n_h < 8 || n_v < 8 {
            return Err(Error::InvalidGrid(format!(
                "grid needs at least 8 rays per fan, got {n_h}x{n_v}"
            )));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidGrid(format!("bad margin {margin}")));
        }
        let pad = margin * (w as f64).hypot(h as f64);
        let region = image_region(w, h, pad);
        let center = Point2::new((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let fan_h = Fan::new(vp_h, &vp_v, region, center, n_h)?;
        let fan_v = Fan::new(vp_v, &vp_h, region, center, n_v)?;
        Ok(Self {
            h: fan_h,
            v: fan_v,
            image_size,
        })
    }

    pub fn n_h(&self) -> usize {
        self.h.len()
    }

    pub fn n_v(&self) -> usize {
        self.v.len()
    }

    /// `(h-cell, v-cell)` containing `p`.
    pub fn cell_of_pixel(&self, p: Point2) -> Result<(usize, usize)> {
        let out = || Error::OutOfGrid { x: p.x, y: p.y };
        let i = self
            .h
            .param_of_point(p)
            .and_then(|t| self.h.cell_of_param(t))
            .ok_or_else(out)?;
        let j = self
            .v
            .param_of_point(p)
            .and_then(|t| self.v.cell_of_param(t))
            .ok_or_else(out)?;
        Ok((i, j))
    }

    /// Intersection of h-ray `i` and v-ray `j`.
    pub fn ray_intersection(&self, i: usize, j: usize) -> Result<Point2> {
        let p = self.h.ray_line(i).cross(&self.v.ray_line(j));
        Point2::from_homogeneous(&p).ok_or(Error::PointAtInfinity)
    }

    /// Image corners of a hypothesis field in the order
    /// `y1∩y3, y1∩y4, y2∩y4, y2∩y3`.
    pub fn corners(&self, y: &Hypothesis) -> Result<[Point2; 4]> {
        let [y1, y2, y3, y4] = y.0;
        Ok([
            self.ray_intersection(y1, y3)?,
            self.ray_intersection(y1, y4)?,
            self.ray_intersection(y2, y4)?,
            self.ray_intersection(y2, y3)?,
        ])
    }

    /// Fractional h-ray index of model coordinate `y`, with touchline
    /// rays `y1` (model 0) and `y2` (model `width`).
    #[inline]
    pub fn project_model_y(&self, y: f64, width: f64, y1: usize, y2: usize) -> f64 {
        self.h.project(y1, y2, y / width)
    }

    /// Fractional v-ray index of model coordinate `x`, with goalline rays
    /// `y3` (model 0) and `y4` (model `length`).
    #[inline]
    pub fn project_model_x(&self, x: f64, length: f64, y3: usize, y4: usize) -> f64 {
        self.v.project(y3, y4, x / length)
    }

    /// Nearest h- and v-ray indices of an image point.
    pub fn nearest_rays(&self, p: Point2) -> Option<(f64, f64)> {
        let a = self.h.fractional_index(self.h.param_of_point(p)?);
        let b = self.v.fractional_index(self.v.param_of_point(p)?);
        Some((a, b))
    }
}

/// Grid built from estimated vanishing points.
pub fn build_ray_grid(
    vps: &VpResult,
    image_size: (usize, usize),
    n_h: usize,
    n_v: usize,
    margin: f64,
) -> Result<RayGrid> {
    RayGrid::new(vps.vp_h, vps.vp_v, image_size, n_h, n_v, margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureClass {
    Grass = 0,
    NonGrass = 1,
    LineH = 2,
    LineV = 3,
    LineNone = 4,
}

impl FeatureClass {
    pub const ALL: [FeatureClass; 5] = [
        FeatureClass::Grass,
        FeatureClass::NonGrass,
        FeatureClass::LineH,
        FeatureClass::LineV,
        FeatureClass::LineNone,
    ];

    pub fn of_label(label: SegmentLabel) -> Self {
        match label {
            SegmentLabel::H => FeatureClass::LineH,
            SegmentLabel::V => FeatureClass::LineV,
            SegmentLabel::None => FeatureClass::LineNone,
        }
    }
}

/// Summed-area table over an `n_h × n_v` cell grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralTable {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl IntegralTable {
    /// From row-major per-cell counts.
    pub fn from_cell_counts(n_h: usize, n_v: usize, counts: &[u64]) -> Self {
        assert_eq!(counts.len(), n_h * n_v);
        let (rows, cols) = (n_h + 1, n_v + 1);
        let mut data = vec![0u64; rows * cols];
        for i in 0..n_h {
            let mut row_sum = 0u64;
            for j in 0..n_v {
                row_sum += counts[i * n_v + j];
                data[(i + 1) * cols + j + 1] = data[i * cols + j + 1] + row_sum;
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.cols + j]
    }

    pub fn total(&self) -> u64 {
        self.at(self.rows - 1, self.cols - 1)
    }

    /// Count over cells `[i_lo, i_hi) × [j_lo, j_hi)`.
    pub fn region_sum(&self, i_lo: usize, i_hi: usize, j_lo: usize, j_hi: usize) -> Result<u64> {
        if i_lo > i_hi || j_lo > j_hi || i_hi >= self.rows || j_hi >= self.cols {
            return Err(Error::Region {
                i_lo,
                i_hi,
                j_lo,
                j_hi,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(self.at(i_hi, j_hi) + self.at(i_lo, j_lo) - self.at(i_lo, j_hi) - self.at(i_hi, j_lo))
    }

    /// Count over a cell rectangle after clamping it to the grid; empty
    /// rectangles count zero.
    #[inline]
    pub fn sum(&self, r: &CellRect) -> u64 {
        let ci = |v: i64| v.clamp(0, self.rows as i64 - 1) as usize;
        let cj = |v: i64| v.clamp(0, self.cols as i64 - 1) as usize;
        let (i_lo, i_hi, j_lo, j_hi) = (ci(r.i_lo), ci(r.i_hi), cj(r.j_lo), cj(r.j_hi));
        if i_lo >= i_hi || j_lo >= j_hi {
            return 0;
        }
        self.at(i_hi, j_hi) + self.at(i_lo, j_lo) - self.at(i_lo, j_hi) - self.at(i_hi, j_lo)
    }

    /// Count over `a \ b`.
    #[inline]
    pub fn sum_difference(&self, a: &CellRect, b: &CellRect) -> u64 {
        self.sum(a) - self.sum(&a.intersect(b))
    }
}

/// Pixels that fell outside the ray grid while binning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningDiagnostics {
    pub dropped_mask_pixels: u64,
    pub dropped_line_pixels: u64,
}

/// The five class accumulators over one ray grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccumulatorSet {
    n_h: usize,
    n_v: usize,
    tables: [IntegralTable; 5],
    pub diagnostics: BinningDiagnostics,
}

impl AccumulatorSet {
    /// From per-class, row-major per-cell counts.
    pub fn from_cell_counts(n_h: usize, n_v: usize, counts: [&[u64]; 5]) -> Self {
        Self {
            n_h,
            n_v,
            tables: counts.map(|c| IntegralTable::from_cell_counts(n_h, n_v, c)),
            diagnostics: BinningDiagnostics::default(),
        }
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    #[inline]
    pub fn table(&self, c: FeatureClass) -> &IntegralTable {
        &self.tables[c as usize]
    }

    pub fn total(&self, c: FeatureClass) -> u64 {
        self.table(c).total()
    }

    pub fn region_sum(
        &self,
        c: FeatureClass,
        i_lo: usize,
        i_hi: usize,
        j_lo: usize,
        j_hi: usize,
    ) -> Result<u64> {
        self.table(c).region_sum(i_lo, i_hi, j_lo, j_hi)
    }

    /// Write the flat binary cache: magic `FLAC1`, `n_h`, `n_v` as u32 LE,
    /// then the five tables as u64 LE in class order.
    pub fn write_cache<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(b"FLAC1")?;
        out.write_all(&(self.n_h as u32).to_le_bytes())?;
        out.write_all(&(self.n_v as u32).to_le_bytes())?;
        for t in &self.tables {
            for v in &t.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut input: R) -> Result<Self> {
        let bad = |m: &str| Error::Input(format!("accumulator cache: {m}"));
        let io = |e: std::io::Error| Error::Io {
            path: "<accumulator cache>".into(),
            source: e,
        };
        let mut magic = [0u8; 5];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != b"FLAC1" {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4).map_err(io)?;
        let n_h = u32::from_le_bytes(b4) as usize;
        input.read_exact(&mut b4).map_err(io)?;
        let n_v = u32::from_le_bytes(b4) as usize;
        if n_h == 0 || n_v == 0 || n_h > 1 << 16 || n_v > 1 << 16 {
            return Err(bad("bad dimensions"));
        }
        let (rows, cols) = (n_h + 1, n_v + 1);
        let mut read_table = || -> Result<IntegralTable> {
            let mut buf = vec![0u8; rows * cols * 8];
            input.read_exact(&mut buf).map_err(io)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(IntegralTable { rows, cols, data })
        };
        let tables = [
            read_table()?,
            read_table()?,
            read_table()?,
            read_table()?,
            read_table()?,
        ];
        Ok(Self {
            n_h,
            n_v,
            tables,
            diagnostics: BinningDiagnostics::default(),
        })
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let io = |e| Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        let f = std::fs::File::create(path).map_err(io)?;
        self.write_cache(std::io::BufWriter::new(f)).map_err(io)
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::read_cache(std::io::BufReader::new(f))
    }
}

/// Integer pixels of a segment, stepping one pixel along its major axis.
/// Pixels outside `width × height` are skipped.
pub fn rasterize_segment(seg: &LineSegment, width: usize, height: usize) -> Vec<(usize, usize)> {
    let (a, b) = (seg.p1, seg.p2);
    let steps = (b.x - a.x).abs().max((b.y - a.y).abs()).ceil().max(1.0) as usize;
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let p = a.lerp(b, k as f64 / steps as f64);
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
            continue;
        }
        let px = (x as usize, y as usize);
        if out.last() != Some(&px) {
            out.push(px);
        }
    }
    out
}

/// Bin the grass mask and the labeled segment pixels into the grid.
pub fn build_accumulators(
    grid: &RayGrid,
    grass: &GrassMask,
    segments: &[LineSegment],
    labels: &[SegmentLabel],
) -> Result<AccumulatorSet> {
    let (w, h) = grid.image_size;
    if grass.width() != w || grass.height() != h {
        return Err(Error::Input(format!(
            "mask is {}x{}, grid expects {w}x{h}",
            grass.width(),
            grass.height()
        )));
    }
    if segments.len() != labels.len() {
        return Err(Error::Input("one label per segment required".into()));
    }
    let (n_h, n_v) = (grid.n_h(), grid.n_v());
    let mut counts = vec![vec![0u64; n_h * n_v]; 5];
    let mut diag = BinningDiagnostics::default();

    for y in 0..h {
        for x in 0..w {
            let class = if grass.get(x, y) {
                FeatureClass::Grass
            } else {
                FeatureClass::NonGrass
            };
            match grid.cell_of_pixel(Point2::new(x as f64, y as f64)) {
                Ok((i, j)) => counts[class as usize][i * n_v + j] += 1,
                Err(_) => diag.dropped_mask_pixels += 1,
            }
        }
    }
    for (seg, label) in segments.iter().zip(labels) {
        let class = FeatureClass::of_label(*label) as usize;
        for (x, y) in rasterize_segment(seg, w, h) {
            match grid.cell_of_pixel(Point2::new(x as f64, y as f64)) {
                Ok((i, j)) => counts[class][i * n_v + j] += 1,
                Err(_) => diag.dropped_line_pixels += 1,
            }
        }
    }
    let mut acc = AccumulatorSet::from_cell_counts(
        n_h,
        n_v,
        [&counts[0], &counts[1], &counts[2], &counts[3], &counts[4]],
    );
    acc.diagnostics = diag;
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affine_grid(w: usize, h: usize, n: usize) -> RayGrid {
        RayGrid::new(
            VanishingPoint::at_infinity(1.0, 0.0).unwrap(),
            VanishingPoint::at_infinity(0.0, 1.0).unwrap(),
            (w, h),
            n,
            n,
            0.0,
        )
        .unwrap()
    }

    fn perspective_grid() -> RayGrid {
        RayGrid::new(
            VanishingPoint::finite(Point2::new(2400.0, -300.0)),
            VanishingPoint::finite(Point2::new(150.0, -900.0)),
            (320, 180),
            24,
            20,
            0.25,
        )
        .unwrap()
    }

    #[test]
    fn affine_rays_evenly_spaced() {
        let g = affine_grid(100, 100, 10);
        for (k, p) in g.h.params().iter().enumerate() {
            assert!((p - 11.0 * k as f64).abs() < 1e-12);
        }
        for (k, p) in g.v.params().iter().enumerate() {
            assert!((p - 11.0 * k as f64).abs() < 1e-12);
        }
        // h-rays are horizontal image lines y = const.
        let l = g.h.ray_line(3);
        assert!(l.x.abs() < 1e-12 && (l.z / l.y + 33.0).abs() < 1e-12);
    }

    #[test]
    fn affine_cell_lookup() {
        let g = affine_grid(100, 100, 10);
        assert_eq!(g.cell_of_pixel(Point2::new(55.0, 5.0)).unwrap(), (0, 5));
        assert_eq!(g.cell_of_pixel(Point2::new(0.0, 99.0)).unwrap(), (8, 0));
        assert_eq!(g.cell_of_pixel(Point2::new(11.0, 33.0)).unwrap(), (3, 1));
        assert_eq!(g.cell_of_pixel(Point2::new(22.0, 22.0)).unwrap(), (2, 2));
        assert!(matches!(
            g.cell_of_pixel(Point2::new(-1.0, 5.0)),
            Err(Error::OutOfGrid { .. })
        ));
    }

    #[test]
    fn every_pixel_is_covered() {
        for g in [affine_grid(64, 48, 9), perspective_grid()] {
            let (w, h) = g.image_size;
            for y in 0..h {
                for x in 0..w {
                    let (i, j) = g.cell_of_pixel(Point2::new(x as f64, y as f64)).unwrap();
                    assert!(i + 1 < g.n_h() && j + 1 < g.n_v());
                }
            }
        }
    }

    #[test]
    fn cell_matches_direct_parameter() {
        let g = perspective_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let p = Point2::new(rng.random_range(0.0..319.0), rng.random_range(0.0..179.0));
            let (i, j) = g.cell_of_pixel(p).unwrap();
            let th = g.h.param_of_point(p).unwrap();
            let tv = g.v.param_of_point(p).unwrap();
            assert!(g.h.params()[i] <= th);
            assert!(th <= g.h.params()[i + 1]);
            assert!(i + 2 == g.n_h() || th < g.h.params()[i + 1]);
            assert!(g.v.params()[j] <= tv);
            assert!(tv <= g.v.params()[j + 1]);
            assert!(j + 2 == g.n_v() || tv < g.v.params()[j + 1]);
        }
    }

    #[test]
    fn vp_inside_image_rejected() {
        let r = RayGrid::new(
            VanishingPoint::finite(Point2::new(50.0, 50.0)),
            VanishingPoint::at_infinity(0.0, 1.0).unwrap(),
            (100, 100),
            10,
            10,
            0.0,
        );
        assert!(matches!(r, Err(Error::VpInsideImage)));
        let r = RayGrid::new(
            VanishingPoint::finite(Point2::new(120.0, 50.0)),
            VanishingPoint::at_infinity(0.0, 1.0).unwrap(),
            (100, 100),
            10,
            10,
            0.25,
        );
        assert!(matches!(r, Err(Error::VpInsideImage)));
    }

    #[test]
    fn ray_intersections_lie_on_both_rays() {
        let g = perspective_grid();
        for i in [0, 5, 23] {
            for j in [0, 7, 19] {
                let p = g.ray_intersection(i, j).unwrap();
                let (a, b) = g.nearest_rays(p).unwrap();
                assert!((a - i as f64).abs() < 1e-6 && (b - j as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn integral_table_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n_h, n_v) = (7, 9);
        let counts: Vec<u64> = (0..n_h * n_v).map(|_| rng.random_range(0..20)).collect();
        let t = IntegralTable::from_cell_counts(n_h, n_v, &counts);
        assert_eq!(t.total(), counts.iter().sum::<u64>());
        assert_eq!(t.region_sum(0, n_h, 0, n_v).unwrap(), t.total());
        assert_eq!(t.region_sum(3, 3, 0, n_v).unwrap(), 0);
        for _ in 0..300 {
            let (a, b) = (rng.random_range(0..=n_h), rng.random_range(0..=n_h));
            let (c, d) = (rng.random_range(0..=n_v), rng.random_range(0..=n_v));
            let (i_lo, i_hi, j_lo, j_hi) = (a.min(b), a.max(b), c.min(d), c.max(d));
            let mut direct = 0;
            for i in i_lo..i_hi {
                for j in j_lo..j_hi {
                    direct += counts[i * n_v + j];
                }
            }
            assert_eq!(t.region_sum(i_lo, i_hi, j_lo, j_hi).unwrap(), direct);
        }
        assert!(matches!(
            t.region_sum(4, 3, 0, 1),
            Err(Error::Region { .. })
        ));
        assert!(matches!(
            t.region_sum(0, n_h + 1, 0, 1),
            Err(Error::Region { .. })
        ));
    }

    #[test]
    fn integral_tables_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let counts: Vec<u64> = (0..30).map(|_| rng.random_range(0..5)).collect();
        let t = IntegralTable::from_cell_counts(5, 6, &counts);
        for i in 0..t.rows() {
            for j in 0..t.cols() {
                if i + 1 < t.rows() {
                    assert!(t.at(i + 1, j) >= t.at(i, j));
                }
                if j + 1 < t.cols() {
                    assert!(t.at(i, j + 1) >= t.at(i, j));
                }
            }
        }
    }

    #[test]
    fn all_grass_accumulators() {
        let g = affine_grid(40, 30, 8);
        let mask = GrassMask::filled(40, 30, true);
        let acc = build_accumulators(&g, &mask, &[], &[]).unwrap();
        assert_eq!(acc.total(FeatureClass::Grass), 1200);
        assert_eq!(acc.total(FeatureClass::NonGrass), 0);
        for c in FeatureClass::ALL {
            assert_eq!(
                acc.region_sum(c, 0, g.n_h(), 0, g.n_v()).unwrap(),
                acc.total(c)
            );
        }
    }

    #[test]
    fn mask_size_mismatch_is_an_error() {
        let g = affine_grid(40, 30, 8);
        let mask = GrassMask::filled(41, 30, true);
        assert!(build_accumulators(&g, &mask, &[], &[]).is_err());
    }

    #[test]
    fn rasterize_counts_one_per_pixel() {
        let seg = LineSegment::new(Point2::new(2.0, 3.0), Point2::new(12.0, 3.0));
        let px = rasterize_segment(&seg, 100, 100);
        assert_eq!(px.len(), 11);
        let diag = LineSegment::new(Point2::new(0.0, 0.0), Point2::new(9.0, 9.0));
        assert_eq!(rasterize_segment(&diag, 100, 100).len(), 10);
        let clipped = LineSegment::new(Point2::new(-5.0, 0.0), Point2::new(4.0, 0.0));
        assert_eq!(rasterize_segment(&clipped, 100, 100).len(), 5);
    }

    #[test]
    fn segment_order_does_not_matter() {
        let g = perspective_grid();
        let mask = GrassMask::filled(320, 180, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let segs: Vec<LineSegment> = (0..30)
            .map(|_| {
                LineSegment::new(
                    Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..180.0)),
                    Point2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..180.0)),
                )
            })
            .collect();
        let labels: Vec<SegmentLabel> = (0..30)
            .map(|k| [SegmentLabel::H, SegmentLabel::V, SegmentLabel::None][k % 3])
            .collect();
        let a = build_accumulators(&g, &mask, &segs, &labels).unwrap();
        let mut idx: Vec<usize> = (0..30).collect();
        idx.reverse();
        idx.swap(3, 17);
        let segs2: Vec<_> = idx.iter().map(|&k| segs[k]).collect();
        let labels2: Vec<_> = idx.iter().map(|&k| labels[k]).collect();
        let b = build_accumulators(&g, &mask, &segs2, &labels2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cache_round_trip() {
        let counts: Vec<u64> = (0..64).collect();
        let c = counts.as_slice();
        let acc = AccumulatorSet::from_cell_counts(8, 8, [c, c, c, c, c]);
        let mut buf = Vec::new();
        acc.write_cache(&mut buf).unwrap();
        assert_eq!(&buf[..5], b"FLAC1");
        assert_eq!(buf.len(), 5 + 8 + 5 * 81 * 8);
        let back = AccumulatorSet::read_cache(buf.as_slice()).unwrap();
        assert_eq!(back, acc);
        buf[0] = b'X';
        assert!(AccumulatorSet::read_cache(buf.as_slice()).is_err());
    }
}
