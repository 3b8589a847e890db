//! The 24 potentials of a hypothesis, weight tying, and admissible bounds
//! over hypothesis boxes.
//!
//! Every potential is an integer pixel count over a cell rectangle divided
//! by a class total. Bounds replace the rectangle by one that contains (or
//! is contained in) the rectangle of every hypothesis in the box, so they
//! hold exactly in floating point, and collapse to the hypothesis' own
//! rectangle on singleton boxes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::features::{AccumulatorSet, CellRect, FeatureClass, Hypothesis, RayGrid};
use crate::field_model::{circle_rects, FieldModel, Orientation, Rect, NUM_CIRCLES, NUM_LINES};

pub const NUM_FEATURES: usize = 4 + NUM_LINES + NUM_CIRCLES;
pub const GRASS_IN: usize = 0;
pub const GRASS_OUT: usize = 1;
pub const NON_GRASS_IN: usize = 2;
pub const NON_GRASS_OUT: usize = 3;

pub const fn line_feature(id: usize) -> usize {
    4 + id
}

pub const fn circle_feature(id: usize) -> usize {
    4 + NUM_LINES + id
}

/// `[grass_in, grass_out, non_grass_in, non_grass_out, line_0..16, circle_0..2]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl Default for FeatureVector {
    fn default() -> Self {
        Self([0.0; NUM_FEATURES])
    }
}

impl FeatureVector {
    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.map(|v| v * s))
    }
}

/// Which features share a weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tying {
    /// Grass only.
    G,
    /// Grass plus one weight for all lines.
    GL,
    /// Grass, all lines, all circles.
    GLC,
    /// Grass, vertical lines, horizontal lines, circles.
    GVHC,
    Untied,
}

impl Tying {
    pub const ALL: [Tying; 5] = [Tying::G, Tying::GL, Tying::GLC, Tying::GVHC, Tying::Untied];

    pub fn name(&self) -> &'static str {
        match self {
            Tying::G => "G",
            Tying::GL => "G+L",
            Tying::GLC => "G+L+C",
            Tying::GVHC => "G+VerL+HorL+C",
            Tying::Untied => "untied",
        }
    }

    /// Feature indices of each weight group. Features in no group are
    /// unused by the scheme.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let grass = (0..4).map(|k| vec![k]);
        let lines: Vec<usize> = (0..NUM_LINES).map(line_feature).collect();
        let circles: Vec<usize> = (0..NUM_CIRCLES).map(circle_feature).collect();
        let vertical: Vec<usize> = (0..NUM_LINES)
            .filter(|&id| line_orientation(id) == Orientation::Vertical)
            .map(line_feature)
            .collect();
        let horizontal: Vec<usize> = (0..NUM_LINES)
            .filter(|&id| line_orientation(id) == Orientation::Horizontal)
            .map(line_feature)
            .collect();
        let mut out: Vec<Vec<usize>> = grass.collect();
        match self {
            Tying::G => {}
            Tying::GL => out.push(lines),
            Tying::GLC => {
                out.push(lines);
                out.push(circles);
            }
            Tying::GVHC => {
                out.push(vertical);
                out.push(horizontal);
                out.push(circles);
            }
            Tying::Untied => {
                out.extend((4..NUM_FEATURES).map(|k| vec![k]));
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.groups().len()
    }
}

/// Orientation of a line id in the standard marking layout.
pub fn line_orientation(id: usize) -> Orientation {
    if id < 7 {
        Orientation::Vertical
    } else {
        Orientation::Horizontal
    }
}

impl fmt::Display for Tying {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tying {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Tying::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown tying scheme '{s}'")))
    }
}

impl Serialize for Tying {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Tying {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Weights with a tying scheme; one free value per group.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    tying: Tying,
    groups: Vec<Vec<usize>>,
    values: Vec<f64>,
}

impl WeightVector {
    pub fn new(tying: Tying, values: Vec<f64>) -> Result<Self> {
        let groups = tying.groups();
        if values.len() != groups.len() {
            return Err(Error::Input(format!(
                "tying {tying} needs {} weights, got {}",
                groups.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite weight".into()));
        }
        Ok(Self {
            tying,
            groups,
            values,
        })
    }

    pub fn zeros(tying: Tying) -> Self {
        let n = tying.dim();
        Self::new(tying, vec![0.0; n]).expect("zero weights are valid")
    }

    /// From a full 24-vector; tied entries must agree and unused ones be 0.
    pub fn from_full(tying: Tying, full: &[f64; NUM_FEATURES]) -> Result<Self> {
        let groups = tying.groups();
        let mut used = [false; NUM_FEATURES];
        let mut values = Vec::with_capacity(groups.len());
        for g in &groups {
            let v = full[g[0]];
            if g.iter().any(|&k| full[k] != v) {
                return Err(Error::Input(format!("weights violate tying {tying}")));
            }
            g.iter().for_each(|&k| used[k] = true);
            values.push(v);
        }
        if (0..NUM_FEATURES).any(|k| !used[k] && full[k] != 0.0) {
            return Err(Error::Input(format!(
                "weight on a feature unused by {tying}"
            )));
        }
        Self::new(tying, values)
    }

    pub fn tying(&self) -> Tying {
        self.tying
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// One value per group.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn full(&self) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        for (g, v) in self.groups.iter().zip(&self.values) {
            g.iter().for_each(|&k| out[k] = *v);
        }
        out
    }

    /// Group sums of `phi`: the feature vector seen by the tied weights.
    pub fn tied_features(&self, phi: &FeatureVector) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|&k| phi.0[k]).sum())
            .collect()
    }

    /// Per-feature bound direction: +1 upper, -1 lower, 0 unused.
    pub fn feature_signs(&self) -> [i8; NUM_FEATURES] {
        let mut s = [0i8; NUM_FEATURES];
        for (g, v) in self.groups.iter().zip(&self.values) {
            let sign = if *v > 0.0 {
                1
            } else if *v < 0.0 {
                -1
            } else {
                0
            };
            g.iter().for_each(|&k| s[k] = sign);
        }
        s
    }
}

/// `w·φ`, evaluated as `Σ_g w_g (Σ_{k∈g} φ_k)` over nonzero groups.
///
/// Bounds go through the same function, which makes them exact on
/// singletons and monotone in every feature.
pub fn score(w: &WeightVector, phi: &FeatureVector) -> f64 {
    let mut total = 0.0;
    for (g, wv) in w.groups.iter().zip(&w.values) {
        if *wv == 0.0 {
            continue;
        }
        let mut s = 0.0;
        for &k in g {
            s += phi.0[k];
        }
        total += wv * s;
    }
    total
}

impl Serialize for WeightVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            weights: Vec<f64>,
            tying: &'a str,
        }
        Repr {
            weights: self.full().to_vec(),
            tying: self.tying.name(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for WeightVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            weights: Vec<f64>,
            tying: Tying,
        }
        let r = Repr::deserialize(d)?;
        let full: [f64; NUM_FEATURES] = r.weights.try_into().map_err(|v: Vec<f64>| {
            serde::de::Error::custom(format!("expected {NUM_FEATURES} weights, got {}", v.len()))
        })?;
        WeightVector::from_full(r.tying, &full).map_err(serde::de::Error::custom)
    }
}

/// Inclusive intervals `[lo[k], hi[k]]` for `y1..y4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HypothesisBox {
    pub lo: [usize; 4],
    pub hi: [usize; 4],
}

fn ordered_pairs(a: usize, b: usize, c: usize, d: usize) -> u128 {
    // #{(s, t) : a <= s <= b, c <= t <= d, s < t}
    (a..=b)
        .map(|s| {
            let t0 = c.max(s + 1);
            if t0 > d {
                0
            } else {
                (d - t0 + 1) as u128
            }
        })
        .sum()
}

impl HypothesisBox {
    pub fn new(lo: [usize; 4], hi: [usize; 4]) -> Result<Self> {
        let b = Self { lo, hi };
        if (0..4).any(|k| lo[k] > hi[k]) || !b.has_valid() {
            return Err(Error::EmptyBox);
        }
        Ok(b)
    }

    /// All hypotheses of an `n_h × n_v` grid.
    pub fn root(n_h: usize, n_v: usize) -> Result<Self> {
        if n_h < 2 || n_v < 2 {
            return Err(Error::EmptyBox);
        }
        Self::new([0, 1, 0, 1], [n_h - 2, n_h - 1, n_v - 2, n_v - 1])
    }

    pub fn singleton(y: &Hypothesis) -> Self {
        Self { lo: y.0, hi: y.0 }
    }

    pub fn is_singleton(&self) -> bool {
        self.lo == self.hi
    }

    pub fn has_valid(&self) -> bool {
        self.lo[0] < self.hi[1] && self.lo[2] < self.hi[3]
    }

    pub fn contains(&self, y: &Hypothesis) -> bool {
        (0..4).all(|k| self.lo[k] <= y.0[k] && y.0[k] <= self.hi[k])
    }

    /// Number of valid hypotheses in the box.
    pub fn count_valid(&self) -> u128 {
        ordered_pairs(self.lo[0], self.hi[0], self.lo[1], self.hi[1])
            * ordered_pairs(self.lo[2], self.hi[2], self.lo[3], self.hi[3])
    }

    /// Valid hypotheses in lexicographic order.
    pub fn hypotheses(&self) -> impl Iterator<Item = Hypothesis> + '_ {
        let (lo, hi) = (self.lo, self.hi);
        (lo[0]..=hi[0]).flat_map(move |y1| {
            (lo[1].max(y1 + 1)..=hi[1]).flat_map(move |y2| {
                (lo[2]..=hi[2]).flat_map(move |y3| {
                    (lo[3].max(y3 + 1)..=hi[3]).map(move |y4| Hypothesis([y1, y2, y3, y4]))
                })
            })
        })
    }

    /// Lexicographically smallest valid hypothesis.
    pub fn first_valid(&self) -> Option<Hypothesis> {
        self.hypotheses().next()
    }

    /// Smallest and largest anchor pairs reachable by valid hypotheses,
    /// for the fan owning dimensions `d, d + 1`.
    fn corners(&self, d: usize) -> ((usize, usize), (usize, usize)) {
        let (a_lo, a_hi, b_lo, b_hi) = (self.lo[d], self.hi[d], self.lo[d + 1], self.hi[d + 1]);
        ((a_lo, b_lo.max(a_lo + 1)), (a_hi.min(b_hi - 1), b_hi))
    }

    /// Field of the largest hypothesis, containing every field in the box.
    pub fn union_field(&self) -> CellRect {
        CellRect::new(
            self.lo[0] as i64,
            self.hi[1] as i64,
            self.lo[2] as i64,
            self.hi[3] as i64,
        )
    }

    /// Cells inside every field of the box (possibly empty).
    pub fn intersection_field(&self) -> CellRect {
        let (h_lo, h_hi) = self.corners(0);
        let (v_lo, v_hi) = self.corners(2);
        CellRect::new(h_hi.0 as i64, h_lo.1 as i64, v_hi.0 as i64, v_lo.1 as i64)
    }
}

/// Everything a potential reads: accumulators, grid and model.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub acc: &'a AccumulatorSet,
    pub grid: &'a RayGrid,
    pub model: &'a FieldModel,
    /// Half-width of the line scoring band, in rays.
    pub band: i64,
}

#[inline]
fn ratio(count: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        count as f64 / total as f64
    }
}

/// Fractional index to integer, saturating far outside any grid.
#[inline]
fn floor_i(x: f64) -> i64 {
    x.floor().clamp(-1e12, 1e12) as i64
}

#[inline]
fn ceil_i(x: f64) -> i64 {
    x.ceil().clamp(-1e12, 1e12) as i64
}

#[inline]
fn round_i(x: f64) -> i64 {
    x.round().clamp(-1e12, 1e12) as i64
}

/// Interval of projected positions over a box: `.0` at the smallest
/// anchors, `.1` at the largest.
#[derive(Debug, Clone, Copy)]
struct Span(f64, f64);

impl<'a> Scene<'a> {
    pub fn new(acc: &'a AccumulatorSet, grid: &'a RayGrid, model: &'a FieldModel) -> Result<Self> {
        if acc.n_h() != grid.n_h() || acc.n_v() != grid.n_v() {
            return Err(Error::Input(format!(
                "accumulators are {}x{}, grid is {}x{}",
                acc.n_h(),
                acc.n_v(),
                grid.n_h(),
                grid.n_v()
            )));
        }
        Ok(Self {
            acc,
            grid,
            model,
            band: 1,
        })
    }

    pub fn with_band(mut self, band: i64) -> Self {
        self.band = band.max(1);
        self
    }

    pub fn n_h(&self) -> usize {
        self.grid.n_h()
    }

    pub fn n_v(&self) -> usize {
        self.grid.n_v()
    }

    #[inline]
    fn count(&self, c: FeatureClass, r: &CellRect) -> u64 {
        self.acc.table(c).sum(r)
    }

    /// Model `y` on the h-fan over the box.
    fn span_y(&self, b: &HypothesisBox, y: f64) -> Span {
        let (lo, hi) = b.corners(0);
        let w = self.model.width;
        Span(
            self.grid.project_model_y(y, w, lo.0, lo.1),
            self.grid.project_model_y(y, w, hi.0, hi.1),
        )
    }

    /// Model `x` on the v-fan over the box.
    fn span_x(&self, b: &HypothesisBox, x: f64) -> Span {
        let (lo, hi) = b.corners(2);
        let l = self.model.length;
        Span(
            self.grid.project_model_x(x, l, lo.0, lo.1),
            self.grid.project_model_x(x, l, hi.0, hi.1),
        )
    }

    fn grass_bounds(&self, b: &HypothesisBox, signs: &[i8; NUM_FEATURES], out: &mut [f64]) {
        let (union, inter) = (b.union_field(), b.intersection_field());
        for (k, class) in [
            (GRASS_IN, FeatureClass::Grass),
            (NON_GRASS_IN, FeatureClass::NonGrass),
        ] {
            let (s_in, s_out) = (signs[k], signs[k + 1]);
            if s_in == 0 && s_out == 0 {
                continue;
            }
            let total = self.acc.total(class);
            let big = self.count(class, &union);
            let small = if inter.is_empty() {
                0
            } else {
                self.count(class, &inter)
            };
            out[k] = ratio(if s_in > 0 { big } else { small }, total);
            out[k + 1] = ratio(total - if s_out > 0 { small } else { big }, total);
        }
    }

    fn line_bound(&self, b: &HypothesisBox, id: usize, upper: bool) -> f64 {
        let line = &self.model.lines[id];
        let (class, pos, ext_lo, ext_hi) = match line.orientation {
            Orientation::Vertical => (
                FeatureClass::LineV,
                self.span_x(b, line.offset),
                self.span_y(b, line.lo),
                self.span_y(b, line.hi),
            ),
            Orientation::Horizontal => (
                FeatureClass::LineH,
                self.span_y(b, line.offset),
                self.span_x(b, line.lo),
                self.span_x(b, line.hi),
            ),
        };
        let total = self.acc.total(class);
        if total == 0 {
            return 0.0;
        }
        let (e0, e1) = if upper {
            (floor_i(ext_lo.0), ceil_i(ext_hi.1))
        } else {
            (floor_i(ext_lo.1), ceil_i(ext_hi.0))
        };
        let n_pos = match line.orientation {
            Orientation::Vertical => self.n_v(),
            Orientation::Horizontal => self.n_h(),
        } as i64;
        let bw = self.band;
        let r_lo = round_i(pos.0).max(-bw);
        let r_hi = round_i(pos.1).min(n_pos + bw);
        let band_count = |r: i64| -> u64 {
            let rect = match line.orientation {
                Orientation::Vertical => CellRect::new(e0, e1, r - bw, r + bw),
                Orientation::Horizontal => CellRect::new(r - bw, r + bw, e0, e1),
            };
            self.count(class, &rect)
        };
        let count = if r_lo > r_hi {
            // Every candidate ray lies off the grid on the same side.
            0
        } else if upper {
            (r_lo..=r_hi).map(band_count).max().unwrap_or(0)
        } else {
            (r_lo..=r_hi).map(band_count).min().unwrap_or(0)
        };
        ratio(count, total)
    }

    /// Cell rectangles of a model rectangle over the box: the hull of all
    /// outward-rounded rectangles (`grow`) or the common part of all
    /// inward-rounded ones, and so on for the four combinations.
    fn rect_cells(&self, b: &HypothesisBox, r: &Rect, outward: bool, largest: bool) -> CellRect {
        let (x0, x1) = (self.span_x(b, r.x0), self.span_x(b, r.x1));
        let (y0, y1) = (self.span_y(b, r.y0), self.span_y(b, r.y1));
        // Extremes of the low and high edges.
        let pick = |lo_edge: Span, hi_edge: Span| -> (f64, f64) {
            if largest {
                (lo_edge.0, hi_edge.1)
            } else {
                (lo_edge.1, hi_edge.0)
            }
        };
        let (i0, i1) = pick(y0, y1);
        let (j0, j1) = pick(x0, x1);
        if outward {
            CellRect::new(floor_i(i0), ceil_i(i1), floor_i(j0), ceil_i(j1))
        } else {
            CellRect::new(ceil_i(i0), floor_i(i1), ceil_i(j0), floor_i(j1))
        }
    }

    fn circle_bound(&self, b: &HypothesisBox, id: usize, upper: bool) -> f64 {
        let total = self.acc.total(FeatureClass::LineNone);
        if total == 0 {
            return 0.0;
        }
        let rects = circle_rects(&self.model.circles[id]);
        let outer = self.rect_cells(b, &rects.outer, true, upper);
        let inner = self.rect_cells(b, &rects.inner, false, !upper);
        let t = self.acc.table(FeatureClass::LineNone);
        ratio(t.sum_difference(&outer, &inner), total)
    }

    /// Per-feature bounds over the box: upper where `signs` is positive,
    /// lower where negative, 0 where zero.
    pub fn feature_bounds(&self, b: &HypothesisBox, signs: &[i8; NUM_FEATURES]) -> FeatureVector {
        let mut out = [0.0; NUM_FEATURES];
        self.grass_bounds(b, signs, &mut out);
        for id in 0..NUM_LINES {
            let s = signs[line_feature(id)];
            if s != 0 {
                out[line_feature(id)] = self.line_bound(b, id, s > 0);
            }
        }
        for id in 0..NUM_CIRCLES {
            let s = signs[circle_feature(id)];
            if s != 0 {
                out[circle_feature(id)] = self.circle_bound(b, id, s > 0);
            }
        }
        FeatureVector(out)
    }

    pub fn phi_grass(&self, y: &Hypothesis) -> [f64; 4] {
        let mut out = [0.0; NUM_FEATURES];
        self.grass_bounds(&HypothesisBox::singleton(y), &[1; NUM_FEATURES], &mut out);
        [out[0], out[1], out[2], out[3]]
    }

    pub fn phi_line(&self, id: usize, y: &Hypothesis) -> f64 {
        self.line_bound(&HypothesisBox::singleton(y), id, true)
    }

    pub fn phi_circle(&self, id: usize, y: &Hypothesis) -> f64 {
        self.circle_bound(&HypothesisBox::singleton(y), id, true)
    }

    pub fn phi(&self, y: &Hypothesis) -> FeatureVector {
        self.feature_bounds(&HypothesisBox::singleton(y), &[1; NUM_FEATURES])
    }

    pub fn score(&self, w: &WeightVector, y: &Hypothesis) -> f64 {
        score(w, &self.phi(y))
    }

    /// Upper bound of `w·φ` over the box; equals the score on singletons.
    pub fn bound_box(&self, w: &WeightVector, b: &HypothesisBox) -> Result<f64> {
        if !b.has_valid() {
            return Err(Error::EmptyBox);
        }
        Ok(self.bound_with_signs(w, &w.feature_signs(), b))
    }

    #[inline]
    pub fn bound_with_signs(
        &self,
        w: &WeightVector,
        signs: &[i8; NUM_FEATURES],
        b: &HypothesisBox,
    ) -> f64 {
        score(w, &self.feature_bounds(b, signs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VanishingPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affine_grid(n: usize) -> RayGrid {
        RayGrid::new(
            VanishingPoint::at_infinity(1.0, 0.0).unwrap(),
            VanishingPoint::at_infinity(0.0, 1.0).unwrap(),
            (100, 100),
            n,
            n,
            0.0,
        )
        .unwrap()
    }

    fn random_acc(rng: &mut ChaCha8Rng, n: usize) -> AccumulatorSet {
        let counts: Vec<Vec<u64>> = (0..5)
            .map(|_| (0..n * n).map(|_| rng.random_range(0..6)).collect())
            .collect();
        AccumulatorSet::from_cell_counts(
            n,
            n,
            [&counts[0], &counts[1], &counts[2], &counts[3], &counts[4]],
        )
    }

    #[test]
    fn tying_dimensions() {
        assert_eq!(Tying::G.dim(), 4);
        assert_eq!(Tying::GL.dim(), 5);
        assert_eq!(Tying::GLC.dim(), 6);
        assert_eq!(Tying::GVHC.dim(), 7);
        assert_eq!(Tying::Untied.dim(), 24);
        for t in Tying::ALL {
            assert_eq!(t.name().parse::<Tying>().unwrap(), t);
        }
    }

    #[test]
    fn weight_json_round_trip() {
        let w = WeightVector::new(Tying::GVHC, vec![1.0, -1.0, -0.5, 0.5, 2.0, 3.0, 4.0]).unwrap();
        let text = serde_json::to_string(&w).unwrap();
        assert!(text.contains("\"G+VerL+HorL+C\""));
        let back: WeightVector = serde_json::from_str(&text).unwrap();
        assert_eq!(back, w);
        let full = w.full();
        assert_eq!(full[line_feature(0)], 2.0);
        assert_eq!(full[line_feature(16)], 3.0);
        assert_eq!(full[circle_feature(2)], 4.0);
        let mut bad = full;
        bad[line_feature(3)] = 9.0;
        assert!(WeightVector::from_full(Tying::GVHC, &bad).is_err());
    }

    #[test]
    fn score_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let phi = FeatureVector(std::array::from_fn(|_| rng.random_range(0.0..1.0)));
        assert_eq!(score(&WeightVector::zeros(Tying::Untied), &phi), 0.0);
        let mut one_hot = [0.0; NUM_FEATURES];
        one_hot[GRASS_IN] = 1.0;
        let w = WeightVector::from_full(Tying::Untied, &one_hot).unwrap();
        assert_eq!(score(&w, &phi), phi.0[GRASS_IN]);
        let full: [f64; NUM_FEATURES] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let w = WeightVector::from_full(Tying::Untied, &full).unwrap();
        let direct: f64 = full.iter().zip(&phi.0).map(|(a, b)| a * b).sum();
        assert!((score(&w, &phi) - direct).abs() < 1e-12);
    }

    #[test]
    fn box_counts_and_enumeration() {
        let b = HypothesisBox::root(6, 6).unwrap();
        assert_eq!(b.count_valid(), 15 * 15);
        assert_eq!(b.hypotheses().count(), 225);
        assert!(b.hypotheses().all(|y| y.is_valid(6, 6) && b.contains(&y)));
        assert_eq!(b.first_valid(), Some(Hypothesis([0, 1, 0, 1])));
        assert!(HypothesisBox::new([3, 0, 0, 1], [4, 3, 0, 1]).is_err());
    }

    #[test]
    fn all_grass_full_field() {
        let g = affine_grid(10);
        let model = crate::field_model::standard_field();
        let mask = crate::mask::GrassMask::filled(100, 100, true);
        let acc = crate::features::build_accumulators(&g, &mask, &[], &[]).unwrap();
        let s = Scene::new(&acc, &g, &model).unwrap();
        assert_eq!(s.phi_grass(&Hypothesis([0, 9, 0, 9])), [1.0, 0.0, 0.0, 0.0]);
        assert!(Scene::new(&acc, &affine_grid(9), &model).is_err());
    }

    #[test]
    fn perfect_field_grass() {
        let n = 8;
        let (grass, non): (Vec<u64>, Vec<u64>) = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let inside = (2..6).contains(&i) && (1..5).contains(&j);
                if inside {
                    (3, 0)
                } else {
                    (0, 2)
                }
            })
            .unzip();
        let zeros = vec![0; n * n];
        let acc = AccumulatorSet::from_cell_counts(n, n, [&grass, &non, &zeros, &zeros, &zeros]);
        let g = RayGrid::new(
            VanishingPoint::at_infinity(1.0, 0.0).unwrap(),
            VanishingPoint::at_infinity(0.0, 1.0).unwrap(),
            (100, 100),
            n,
            n,
            0.0,
        )
        .unwrap();
        let model = crate::field_model::standard_field();
        let s = Scene::new(&acc, &g, &model).unwrap();
        assert_eq!(s.phi_grass(&Hypothesis([2, 6, 1, 5])), [1.0, 0.0, 0.0, 1.0]);
        // Zero line totals give zero line and circle potentials.
        let phi = s.phi(&Hypothesis([2, 6, 1, 5]));
        assert!(phi.0[4..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn singleton_bound_is_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 8;
        let g = RayGrid::new(
            VanishingPoint::at_infinity(1.0, 0.0).unwrap(),
            VanishingPoint::at_infinity(0.0, 1.0).unwrap(),
            (100, 100),
            n,
            n,
            0.0,
        )
        .unwrap();
        let model = crate::field_model::standard_field();
        for _ in 0..20 {
            let acc = random_acc(&mut rng, n);
            let s = Scene::new(&acc, &g, &model).unwrap();
            let full: [f64; NUM_FEATURES] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let w = WeightVector::from_full(Tying::Untied, &full).unwrap();
            for y in HypothesisBox::root(n, n).unwrap().hypotheses().step_by(7) {
                let b = s.bound_box(&w, &HypothesisBox::singleton(&y)).unwrap();
                assert_eq!(b.to_bits(), s.score(&w, &y).to_bits());
            }
        }
    }

    #[test]
    fn features_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 8;
        let g = RayGrid::new(
            VanishingPoint::finite(crate::geometry::Point2::new(900.0, 20.0)),
            VanishingPoint::finite(crate::geometry::Point2::new(60.0, -700.0)),
            (100, 100),
            n,
            n,
            0.1,
        )
        .unwrap();
        let model = crate::field_model::standard_field();
        let acc = random_acc(&mut rng, n);
        let s = Scene::new(&acc, &g, &model).unwrap();
        for y in HypothesisBox::root(n, n).unwrap().hypotheses() {
            let phi = s.phi(&y);
            assert!(phi.0.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((phi.0[0] + phi.0[1] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn coincident_circle_regions_count_zero() {
        // A point circle at an integer grid position: outer and inner cell
        // regions are both empty.
        let mut model = crate::field_model::standard_field();
        model.circles[0].radius = 0.0;
        // 29 px wide: rays every 4 px, so fractional indices are exact.
        let g = RayGrid::new(
            VanishingPoint::at_infinity(1.0, 0.0).unwrap(),
            VanishingPoint::at_infinity(0.0, 1.0).unwrap(),
            (29, 29),
            8,
            8,
            0.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let acc = random_acc(&mut rng, 8);
        let s = Scene::new(&acc, &g, &model).unwrap();
        assert_eq!(s.phi_circle(0, &Hypothesis([0, 6, 0, 6])), 0.0);
        assert!(s.phi_circle(0, &Hypothesis([0, 7, 0, 7])) > 0.0);
    }
}
