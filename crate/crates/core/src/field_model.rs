//! Metric model of a soccer pitch: the 17 straight markings, the center
//! circle and the two penalty arcs, plus the axis-aligned rectangles that
//! bracket each circular marking.
//!
//! Model coordinates are meters with `x` along the touchlines (0..length)
//! and `y` along the goallines (0..width).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Orientation {
    /// Parallel to the goallines: constant model `x`.
    Vertical,
    /// Parallel to the touchlines: constant model `y`.
    Horizontal,
}

/// A straight marking. For a vertical line `offset` is its `x` and
/// `lo..hi` its `y` extent; horizontal lines swap the roles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelLine {
    pub id: usize,
    pub orientation: Orientation,
    pub offset: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ModelLine {
    pub fn endpoints(&self) -> (Point2, Point2) {
        match self.orientation {
            Orientation::Vertical => (
                Point2::new(self.offset, self.lo),
                Point2::new(self.offset, self.hi),
            ),
            Orientation::Horizontal => (
                Point2::new(self.lo, self.offset),
                Point2::new(self.hi, self.offset),
            ),
        }
    }
}

/// Closed half-plane `x >= bound` (`keep_greater`) or `x <= bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XClip {
    pub bound: f64,
    pub keep_greater: bool,
}

impl XClip {
    pub fn contains(&self, x: f64) -> bool {
        if self.keep_greater {
            x >= self.bound
        } else {
            x <= self.bound
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelCircle {
    pub id: usize,
    pub center: Point2,
    pub radius: f64,
    pub visible_region: Option<XClip>,
}

/// Axis-aligned model rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn centered(c: Point2, half: f64) -> Self {
        Self {
            x0: c.x - half,
            x1: c.x + half,
            y0: c.y - half,
            y1: c.y + half,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.x0 >= self.x0 && o.x1 <= self.x1 && o.y0 >= self.y0 && o.y1 <= self.y1
    }

    fn clipped(mut self, clip: Option<XClip>) -> Self {
        if let Some(c) = clip {
            if c.keep_greater {
                self.x0 = self.x0.max(c.bound);
            } else {
                self.x1 = self.x1.min(c.bound);
            }
            // An empty clip collapses onto the boundary.
            if self.x0 > self.x1 {
                self.x0 = c.bound;
                self.x1 = c.bound;
            }
        }
        self
    }
}

/// Inscribed (`inner`) and circumscribed (`outer`) squares of a circle,
/// clipped to its visible region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleRects {
    pub inner: Rect,
    pub outer: Rect,
}

pub fn circle_rects(c: &ModelCircle) -> CircleRects {
    let inner =
        Rect::centered(c.center, c.radius / std::f64::consts::SQRT_2).clipped(c.visible_region);
    let outer = Rect::centered(c.center, c.radius).clipped(c.visible_region);
    CircleRects { inner, outer }
}

/// Pitch dimensions in meters. Missing fields in a JSON override fall back
/// to the standard values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldDimensions {
    pub length: f64,
    pub width: f64,
    pub penalty_depth: f64,
    pub penalty_width: f64,
    pub goal_depth: f64,
    pub goal_width: f64,
    pub circle_radius: f64,
    pub penalty_mark: f64,
}

impl Default for FieldDimensions {
    fn default() -> Self {
        Self {
            length: 105.0,
            width: 68.0,
            penalty_depth: 16.5,
            penalty_width: 40.32,
            goal_depth: 5.5,
            goal_width: 18.32,
            circle_radius: 9.15,
            penalty_mark: 11.0,
        }
    }
}

impl FieldDimensions {
    fn validate(&self) -> Result<()> {
        let d = self;
        let positive = [
            d.length,
            d.width,
            d.penalty_depth,
            d.penalty_width,
            d.goal_depth,
            d.goal_width,
            d.circle_radius,
            d.penalty_mark,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        let ok = positive
            && d.goal_depth < d.penalty_depth
            && 2.0 * d.penalty_depth < d.length
            && d.goal_width < d.penalty_width
            && d.penalty_width < d.width
            && 2.0 * d.circle_radius < d.width
            && d.penalty_mark < d.penalty_depth
            && d.penalty_mark + d.circle_radius > d.penalty_depth;
        if ok {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "inconsistent field dimensions: {d:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub length: f64,
    pub width: f64,
    pub lines: Vec<ModelLine>,
    pub circles: Vec<ModelCircle>,
}

pub const NUM_LINES: usize = 17;
pub const NUM_CIRCLES: usize = 3;

/// The default 105 × 68 m pitch.
pub fn standard_field() -> FieldModel {
    FieldModel::from_dimensions(&FieldDimensions::default()).expect("standard dimensions are valid")
}

impl FieldModel {
    /// Lines 0..7 are vertical (goallines, goal-area and penalty-area
    /// fronts, halfway line), 7..17 horizontal (touchlines, then the
    /// penalty-area and goal-area sides). Circle 0 is the center circle,
    /// 1 and 2 the left and right penalty arcs.
    pub fn from_dimensions(d: &FieldDimensions) -> Result<Self> {
        d.validate()?;
        let (l, w) = (d.length, d.width);
        let (pa_lo, pa_hi) = ((w - d.penalty_width) / 2.0, (w + d.penalty_width) / 2.0);
        let (ga_lo, ga_hi) = ((w - d.goal_width) / 2.0, (w + d.goal_width) / 2.0);

        let v = |offset: f64, lo: f64, hi: f64| (Orientation::Vertical, offset, lo, hi);
        let h = |offset: f64, lo: f64, hi: f64| (Orientation::Horizontal, offset, lo, hi);
        let specs = [
            v(0.0, 0.0, w),
            v(l, 0.0, w),
            v(l / 2.0, 0.0, w),
            v(d.penalty_depth, pa_lo, pa_hi),
            v(l - d.penalty_depth, pa_lo, pa_hi),
            v(d.goal_depth, ga_lo, ga_hi),
            v(l - d.goal_depth, ga_lo, ga_hi),
            h(0.0, 0.0, l),
            h(w, 0.0, l),
            h(pa_lo, 0.0, d.penalty_depth),
            h(pa_hi, 0.0, d.penalty_depth),
            h(pa_lo, l - d.penalty_depth, l),
            h(pa_hi, l - d.penalty_depth, l),
            h(ga_lo, 0.0, d.goal_depth),
            h(ga_hi, 0.0, d.goal_depth),
            h(ga_lo, l - d.goal_depth, l),
            h(ga_hi, l - d.goal_depth, l),
        ];
        let lines = specs
            .iter()
            .enumerate()
            .map(|(id, &(orientation, offset, lo, hi))| ModelLine {
                id,
                orientation,
                offset,
                lo,
                hi,
            })
            .collect();

        let r = d.circle_radius;
        let circles = vec![
            ModelCircle {
                id: 0,
                center: Point2::new(l / 2.0, w / 2.0),
                radius: r,
                visible_region: None,
            },
            ModelCircle {
                id: 1,
                center: Point2::new(d.penalty_mark, w / 2.0),
                radius: r,
                visible_region: Some(XClip {
                    bound: d.penalty_depth,
                    keep_greater: true,
                }),
            },
            ModelCircle {
                id: 2,
                center: Point2::new(l - d.penalty_mark, w / 2.0),
                radius: r,
                visible_region: Some(XClip {
                    bound: l - d.penalty_depth,
                    keep_greater: false,
                }),
            },
        ];
        Ok(Self {
            length: l,
            width: w,
            lines,
            circles,
        })
    }

    /// Load a dimension override (`{length, width, ...}`) from JSON.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let d: FieldDimensions = serde_json::from_str(s).map_err(|e| Error::Json {
            path: "<field model>".into(),
            source: e,
        })?;
        Self::from_dimensions(&d)
    }

    pub fn count(&self, o: Orientation) -> usize {
        self.lines.iter().filter(|l| l.orientation == o).count()
    }

    /// Model corners in the order (0,0), (L,0), (L,W), (0,W).
    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(0.0, 0.0),
            Point2::new(self.length, 0.0),
            Point2::new(self.length, self.width),
            Point2::new(0.0, self.width),
        ]
    }

    /// Points along the visible part of a circle, `n` samples.
    pub fn circle_arc_points(&self, c: &ModelCircle, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / n as f64;
                Point2::new(
                    c.center.x + c.radius * t.cos(),
                    c.center.y + c.radius * t.sin(),
                )
            })
            .filter(|p| c.visible_region.is_none_or(|r| r.contains(p.x)))
            .collect()
    }
}
