//! Projective primitives: points, homographies, vanishing points, cross
//! ratios and the 1D projective frame used to place model coordinates on
//! the ray grid.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A 2D point, in image pixels or model meters depending on context.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn homogeneous(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }

    /// Dehomogenize; `None` when the point is at infinity.
    pub fn from_homogeneous(v: &Vector3<f64>) -> Option<Self> {
        let scale = v.x.abs().max(v.y.abs()).max(v.z.abs());
        if scale == 0.0 || v.z.abs() <= 1e-12 * scale {
            return None;
        }
        Some(Self::new(v.x / v.z, v.y / v.z))
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Self) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn lerp(self, o: Self, t: f64) -> Self {
        self + (o - self) * t
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Homogeneous line through two points.
pub fn line_through(a: Point2, b: Point2) -> Vector3<f64> {
    a.homogeneous().cross(&b.homogeneous())
}

/// Homogeneous line `l` scaled so that `(l.x, l.y)` is a unit normal.
pub fn normalize_line(l: Vector3<f64>) -> Option<Vector3<f64>> {
    let n = l.x.hypot(l.y);
    (n > 0.0 && n.is_finite()).then(|| l / n)
}

/// A projective 3x3 transform, kept at unit Frobenius norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity()).expect("identity is invertible")
    }

    /// Normalizes `m` to unit Frobenius norm with a canonical sign.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let n = m.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::SingularHomography);
        }
        let mut m = m / n;
        let pivot = if m[(2, 2)].abs() > 1e-12 {
            m[(2, 2)]
        } else {
            *m.iter().find(|v| v.abs() > 1e-12).unwrap_or(&1.0)
        };
        if pivot < 0.0 {
            m = -m;
        }
        if m.determinant().abs() <= 1e-12 {
            return Err(Error::SingularHomography);
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn apply_homogeneous(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.m * v
    }

    pub fn apply(&self, p: Point2) -> Result<Point2> {
        let v = self.m * p.homogeneous();
        Point2::from_homogeneous(&v).ok_or(Error::PointAtInfinity)
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self.m.try_inverse().ok_or(Error::SingularHomography)?;
        Self::from_matrix(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::from_matrix(self.m * other.m)
    }

    /// Row-major entries, scaled so that `m[2][2] = 1` when `|m[2][2]| > 1e-9`.
    pub fn to_row_major(&self) -> [f64; 9] {
        let s = if self.m[(2, 2)].abs() > 1e-9 {
            1.0 / self.m[(2, 2)]
        } else {
            1.0
        };
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = self.m[(r, c)] * s;
            }
        }
        out
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    /// Largest absolute entry difference after scale normalization, with
    /// the sign ambiguity of projective matrices taken into account.
    pub fn distance(&self, other: &Homography) -> f64 {
        let a = (self.m - other.m).abs().max();
        let b = (self.m + other.m).abs().max();
        a.min(b)
    }
}

impl Serialize for Homography {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Homography {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(d)?;
        Homography::from_row_major(&v).map_err(serde::de::Error::custom)
    }
}

/// Homogeneous image point, possibly at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VanishingPoint {
    p: Vector3<f64>,
}

/// Points further than this from the origin are treated as directions.
const FAR_POINT: f64 = 1e9;

impl VanishingPoint {
    pub fn from_homogeneous(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Input("vanishing point is the zero vector".into()));
        }
        let mut p = v / n;
        let planar = p.x.hypot(p.y);
        if p.z != 0.0 && planar > FAR_POINT * p.z.abs() {
            p.z = 0.0;
            p /= planar;
        }
        if p.z < 0.0 || (p.z == 0.0 && Self::dominant(p.x, p.y) < 0.0) {
            p = -p;
        }
        Ok(Self { p })
    }

    fn dominant(x: f64, y: f64) -> f64 {
        if x.abs() >= y.abs() {
            x
        } else {
            y
        }
    }

    pub fn finite(p: Point2) -> Self {
        Self::from_homogeneous(p.homogeneous()).expect("finite point")
    }

    pub fn at_infinity(dx: f64, dy: f64) -> Result<Self> {
        Self::from_homogeneous(Vector3::new(dx, dy, 0.0))
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        self.p
    }

    pub fn is_infinite(&self) -> bool {
        self.p.z == 0.0
    }

    /// The image point, or `None` for a direction.
    pub fn point(&self) -> Option<Point2> {
        if self.is_infinite() {
            None
        } else {
            Some(Point2::new(self.p.x / self.p.z, self.p.y / self.p.z))
        }
    }

    /// Unit direction from `from` toward the vanishing point.
    pub fn direction_from(&self, from: Point2) -> Point2 {
        let d = match self.point() {
            Some(v) => v - from,
            None => Point2::new(self.p.x, self.p.y),
        };
        d * (1.0 / d.norm())
    }
}

/// Hartley normalization: translate to the centroid and scale to mean
/// distance sqrt(2). Returns the normalized points and the 3x3 transform.
fn normalize_points(pts: &[Point2]) -> Option<(Vec<Point2>, Matrix3<f64>)> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean = pts.iter().map(|p| (p.x - cx).hypot(p.y - cy)).sum::<f64>() / n;
    if !(mean > 0.0 && mean.is_finite()) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let out = pts
        .iter()
        .map(|p| Point2::new(s * (p.x - cx), s * (p.y - cy)))
        .collect();
    Some((out, t))
}

fn has_collinear_triple(pts: &[Point2]) -> bool {
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                let area = (pts[j] - pts[i]).cross(pts[k] - pts[i]).abs();
                if area < 1e-9 {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized DLT from `(src, dst)` correspondences; the result maps
/// `src` to `dst`. Four pairs give an exact fit, more a least-squares one.
pub fn dlt_homography(pairs: &[(Point2, Point2)]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::DegenerateDlt);
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::DegenerateDlt);
    }
    let src: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point2> = pairs.iter().map(|p| p.1).collect();
    let (src_n, t_src) = normalize_points(&src).ok_or(Error::DegenerateDlt)?;
    let (dst_n, t_dst) = normalize_points(&dst).ok_or(Error::DegenerateDlt)?;
    if pairs.len() == 4 && (has_collinear_triple(&src_n) || has_collinear_triple(&dst_n)) {
        return Err(Error::DegenerateDlt);
    }

    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src_n.iter().zip(&dst_n).enumerate() {
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateDlt)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let smallest = order[0];
    let largest = svd.singular_values[order[order.len() - 1]];
    // The null space must be one-dimensional.
    if svd.singular_values[order[1]] <= 1e-10 * largest {
        return Err(Error::DegenerateDlt);
    }
    let h = v_t.row(smallest);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv = t_dst.try_inverse().ok_or(Error::DegenerateDlt)?;
    Homography::from_matrix(t_dst_inv * hn * t_src).map_err(|_| Error::DegenerateDlt)
}

/// Projective transform of a point, failing when it maps to infinity.
pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2> {
    h.apply(p)
}

/// Cross ratio `(AC·BD)/(BC·AD)` of four collinear points, using signed
/// positions along the dominant axis of the line direction.
pub fn cross_ratio(a: Point2, b: Point2, c: Point2, d: Point2) -> Result<f64> {
    let pts = [a, b, c, d];
    if pts.iter().any(|p| !p.is_finite()) {
        return Err(Error::Collinearity);
    }
    // Normalize to a unit-sized frame so tolerances are scale-free.
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let spread = pts
        .iter()
        .map(|p| (p.x - cx).abs().max((p.y - cy).abs()))
        .fold(0.0, f64::max);
    if spread == 0.0 {
        return Err(Error::DegenerateCrossRatio);
    }
    let q: Vec<Point2> = pts
        .iter()
        .map(|p| Point2::new((p.x - cx) / spread, (p.y - cy) / spread))
        .collect();

    let (mut i0, mut j0, mut best) = (0, 1, -1.0);
    for i in 0..4 {
        for j in i + 1..4 {
            let dd = q[i].dist(q[j]);
            if dd > best {
                best = dd;
                i0 = i;
                j0 = j;
            }
        }
    }
    let dir = (q[j0] - q[i0]) * (1.0 / best);
    for p in &q {
        if (*p - q[i0]).cross(dir).abs() > 1e-6 {
            return Err(Error::Collinearity);
        }
    }
    let t: Vec<f64> = if dir.x.abs() >= dir.y.abs() {
        q.iter().map(|p| p.x).collect()
    } else {
        q.iter().map(|p| p.y).collect()
    };
    let (ta, tb, tc, td) = (t[0], t[1], t[2], t[3]);
    let den = (tc - tb) * (td - ta);
    if den.abs() < 1e-12 {
        return Err(Error::DegenerateCrossRatio);
    }
    Ok((tc - ta) * (td - tb) / den)
}

/// 1D projective interpolation on an anchor segment.
///
/// The frame maps model fraction `u = 0` to segment fraction 0, `u = 1` to
/// 1 and the model point at infinity to the segment fraction `num / den`
/// (homogeneous, `den = 0` for the affine case). Returns the segment
/// fraction of model fraction `u`.
#[inline]
pub fn projective_fraction(u: f64, num: f64, den: f64) -> f64 {
    num * u / (den * u + num - den)
}

/// Locate model coordinate `t ∈ [0, span_len]` on the image segment
/// `[anchor_lo, anchor_hi]` whose endpoints are the images of 0 and
/// `span_len`, given the vanishing point of the model line. Returns the
/// fraction along the anchor segment.
pub fn project_model_coordinate(
    t: f64,
    anchor_lo: Point2,
    anchor_hi: Point2,
    span_len: f64,
    vp: &VanishingPoint,
) -> Result<f64> {
    let u = anchor_hi - anchor_lo;
    let uu = u.dot(u);
    if !(uu > 0.0) || !(span_len > 0.0) {
        return Err(Error::DegenerateFrame);
    }
    let h = vp.homogeneous();
    let num = (h.x - h.z * anchor_lo.x) * u.x + (h.y - h.z * anchor_lo.y) * u.y;
    let den = h.z * uu;
    // The vanishing point must lie outside the closed anchor segment.
    if den != 0.0 {
        let s_v = num / den;
        if s_v > -1e-9 && s_v < 1.0 + 1e-9 {
            return Err(Error::DegenerateFrame);
        }
    } else if num == 0.0 {
        return Err(Error::DegenerateFrame);
    }
    Ok(projective_fraction(t / span_len, num, den))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn on_x(v: f64) -> Point2 {
        Point2::new(v, 0.0)
    }

    #[test]
    fn cross_ratio_examples() {
        let cr = cross_ratio(on_x(0.0), on_x(2.0), on_x(3.0), on_x(6.0)).unwrap();
        assert!((cr - 2.0).abs() < 1e-12);
        let cr = cross_ratio(on_x(0.0), on_x(1.0), on_x(2.0), on_x(3.0)).unwrap();
        assert!((cr - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cross_ratio_on_vertical_line() {
        let p = |v: f64| Point2::new(5.0, v);
        let cr = cross_ratio(p(0.0), p(2.0), p(3.0), p(6.0)).unwrap();
        assert!((cr - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cross_ratio_errors() {
        let r = cross_ratio(on_x(0.0), on_x(1.0), Point2::new(2.0, 1.0), on_x(3.0));
        assert!(matches!(r, Err(Error::Collinearity)));
        let r = cross_ratio(on_x(0.0), on_x(1.0), on_x(1.0), on_x(3.0));
        assert!(matches!(r, Err(Error::DegenerateCrossRatio)));
    }

    #[test]
    fn dlt_identity_and_translation() {
        let sq = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        let pairs: Vec<_> = sq.iter().map(|p| (*p, *p)).collect();
        let h = dlt_homography(&pairs).unwrap();
        assert!(h.distance(&Homography::identity()) < 1e-12);

        let pairs: Vec<_> = sq
            .iter()
            .map(|p| (*p, Point2::new(p.x + 5.0, p.y + 7.0)))
            .collect();
        let h = dlt_homography(&pairs).unwrap().to_row_major();
        let expect = [1.0, 0.0, 5.0, 0.0, 1.0, 7.0, 0.0, 0.0, 1.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10, "{h:?}");
        }
    }

    #[test]
    fn dlt_rejects_collinear() {
        let pairs = [
            (Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)),
            (Point2::new(1.0, 0.0), Point2::new(1.0, 0.0)),
            (Point2::new(2.0, 0.0), Point2::new(2.0, 1.0)),
            (Point2::new(0.0, 1.0), Point2::new(0.0, 1.0)),
        ];
        assert!(matches!(dlt_homography(&pairs), Err(Error::DegenerateDlt)));
    }

    fn random_homography(rng: &mut ChaCha8Rng) -> Homography {
        loop {
            let mut m = Matrix3::identity();
            for v in m.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
            m[(2, 0)] *= 0.01;
            m[(2, 1)] *= 0.01;
            if let Ok(h) = Homography::from_matrix(m) {
                return h;
            }
        }
    }

    #[test]
    fn dlt_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = [
            Point2::new(0.0, 0.0),
            Point2::new(10.0, 0.0),
            Point2::new(10.0, 6.0),
            Point2::new(0.0, 6.0),
        ];
        for _ in 0..200 {
            let h = random_homography(&mut rng);
            let img: Vec<Point2> = match model.iter().map(|p| h.apply(*p)).collect() {
                Ok(v) => v,
                Err(_) => continue,
            };
            let pairs: Vec<_> = model.iter().copied().zip(img.iter().copied()).collect();
            let Ok(est) = dlt_homography(&pairs) else {
                continue;
            };
            for (m, i) in &pairs {
                assert!(est.apply(*m).unwrap().dist(*i) < 1e-8);
            }
            assert!(est.distance(&h) < 1e-8);
        }
    }

    #[test]
    fn apply_examples() {
        let p = Homography::identity().apply(Point2::new(3.0, 4.0)).unwrap();
        assert!(p.dist(Point2::new(3.0, 4.0)) < 1e-12);
        let s = Homography::from_matrix(Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0))
            .unwrap();
        assert!(
            s.apply(Point2::new(1.0, 1.0))
                .unwrap()
                .dist(Point2::new(2.0, 2.0))
                < 1e-12
        );
        let proj =
            Homography::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0))
                .unwrap();
        assert!(matches!(
            proj.apply(Point2::new(-1.0, 5.0)),
            Err(Error::PointAtInfinity)
        ));
    }

    #[test]
    fn apply_inverse_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let h = random_homography(&mut rng);
            let inv = h.inverse().unwrap();
            let p = Point2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            let Ok(q) = h.apply(p) else { continue };
            let back = inv.apply(q).unwrap();
            assert!(back.dist(p) < 1e-9, "{p:?} -> {back:?}");
        }
    }

    #[test]
    fn row_major_serialization() {
        let h = Homography::from_matrix(Matrix3::new(2.0, 0.0, 1.0, 0.0, 2.0, 3.0, 0.0, 0.0, 2.0))
            .unwrap();
        let json = serde_json::to_string(&h).unwrap();
        let v: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(v.len(), 9);
        assert!((v[8] - 1.0).abs() < 1e-15);
        assert!((v[2] - 0.5).abs() < 1e-15);
        let back: Homography = serde_json::from_str(&json).unwrap();
        assert!(back.distance(&h) < 1e-15);
    }

    #[test]
    fn projection_frame_endpoints_and_affine_midpoint() {
        let lo = Point2::new(10.0, 10.0);
        let hi = Point2::new(110.0, 30.0);
        let vp = VanishingPoint::finite(Point2::new(610.0, 130.0));
        assert_eq!(
            project_model_coordinate(0.0, lo, hi, 50.0, &vp).unwrap(),
            0.0
        );
        assert!((project_model_coordinate(50.0, lo, hi, 50.0, &vp).unwrap() - 1.0).abs() < 1e-15);
        let inf = VanishingPoint::at_infinity(5.0, 1.0).unwrap();
        let s = project_model_coordinate(25.0, lo, hi, 50.0, &inf).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn projection_frame_rejects_vp_inside_segment() {
        let lo = Point2::new(0.0, 0.0);
        let hi = Point2::new(10.0, 0.0);
        let vp = VanishingPoint::finite(Point2::new(4.0, 0.0));
        assert!(matches!(
            project_model_coordinate(1.0, lo, hi, 2.0, &vp),
            Err(Error::DegenerateFrame)
        ));
    }

    #[test]
    fn projection_is_monotone() {
        let lo = Point2::new(0.0, 0.0);
        let hi = Point2::new(100.0, 0.0);
        for vx in [-400.0, 150.0, 1e5] {
            let vp = VanishingPoint::finite(Point2::new(vx, 0.0));
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=100 {
                let s = project_model_coordinate(k as f64, lo, hi, 100.0, &vp).unwrap();
                assert!(s > prev);
                prev = s;
            }
        }
    }

    #[test]
    fn vanishing_point_canonical_form() {
        let a = VanishingPoint::from_homogeneous(Vector3::new(-2.0, 0.0, 0.0)).unwrap();
        assert_eq!(a.homogeneous(), Vector3::new(1.0, 0.0, 0.0));
        let b = VanishingPoint::from_homogeneous(Vector3::new(20.0, 40.0, -2.0)).unwrap();
        let p = b.point().unwrap();
        assert!((p.x + 10.0).abs() < 1e-12 && (p.y + 20.0).abs() < 1e-12);
        let far = VanishingPoint::from_homogeneous(Vector3::new(1.0, 1.0, 1e-12)).unwrap();
        assert!(far.is_infinite());
        assert!(VanishingPoint::from_homogeneous(Vector3::zeros()).is_err());
    }
}
