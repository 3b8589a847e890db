//! Direct least-squares ellipse fitting (numerically stable split form)
//! with a seeded RANSAC wrapper.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center: Point2,
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Direction of the major axis, radians from the image x axis.
    pub angle: f64,
    /// RMS algebraic residual of the unit-norm conic over the fitted points
    /// (in normalized coordinates).
    pub rms_residual: f64,
}

impl Ellipse {
    pub fn major_dir(&self) -> Point2 {
        Point2::new(self.angle.cos(), self.angle.sin())
    }

    pub fn minor_dir(&self) -> Point2 {
        Point2::new(-self.angle.sin(), self.angle.cos())
    }

    pub fn point_at(&self, t: f64) -> Point2 {
        self.center
            + self.major_dir() * (self.semi_major * t.cos())
            + self.minor_dir() * (self.semi_minor * t.sin())
    }

    /// Radial distance from `p` to the curve along the ray from the center.
    pub fn radial_distance(&self, p: Point2) -> f64 {
        let d = p - self.center;
        let (x, y) = (d.dot(self.major_dir()), d.dot(self.minor_dir()));
        let r = x.hypot(y);
        if r == 0.0 {
            return self.semi_minor;
        }
        let (c, s) = (x / r, y / r);
        let boundary = 1.0 / ((c / self.semi_major).powi(2) + (s / self.semi_minor).powi(2)).sqrt();
        (r - boundary).abs()
    }
}

fn normalize(points: &[Point2]) -> (Vec<Point2>, Point2, f64) {
    let n = points.len() as f64;
    let m = Point2::new(
        points.iter().map(|p| p.x).sum::<f64>() / n,
        points.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let spread = points.iter().map(|p| p.dist(m)).sum::<f64>() / n;
    let s = if spread > 0.0 { 1.0 / spread } else { 1.0 };
    (points.iter().map(|p| (*p - m) * s).collect(), m, s)
}

/// Fit an ellipse to at least six points.
pub fn fit_ellipse(points: &[Point2]) -> Result<Ellipse> {
    let fail = |m: &str| Error::EllipseFitFailed(m.to_string());
    if points.len() < 6 {
        return Err(fail("need at least 6 points"));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(fail("non-finite point"));
    }
    let (q, mean, s) = normalize(points);
    let n = q.len();
    let d1 = DMatrix::from_fn(n, 3, |i, j| {
        let p = q[i];
        [p.x * p.x, p.x * p.y, p.y * p.y][j]
    });
    let d2 = DMatrix::from_fn(n, 3, |i, j| {
        let p = q[i];
        [p.x, p.y, 1.0][j]
    });
    let to3 = |m: DMatrix<f64>| Matrix3::from_iterator(m.iter().copied());
    let s1 = to3(d1.transpose() * &d1);
    let s2 = to3(d1.transpose() * &d2);
    let s3 = to3(d2.transpose() * &d2);

    let sv = s3.singular_values();
    if !(sv.min() > 1e-10 * sv.max()) {
        return Err(fail("degenerate point scatter"));
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| fail("degenerate point scatter"))?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the ellipse constraint 4ac - b^2 = 1.
    let mc = Matrix3::from_rows(&[m.row(2) / 2.0, -m.row(1), m.row(0) / 2.0]);

    let scale = mc.abs().max().max(1e-300);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in mc.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * scale {
            continue;
        }
        let a = mc - Matrix3::identity() * lambda.re;
        let svd = a.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| fail("eigenvector failed"))?;
        let k = svd.singular_values.imin();
        let v: Vector3<f64> = v_t.row(k).transpose();
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.as_ref().is_none_or(|(c, _)| cond > *c) {
            best = Some((cond, v));
        }
    }
    let (_, a1) = best.ok_or_else(|| fail("no elliptic solution"))?;
    let a2 = t * a1;
    let mut conic = [a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]];
    let norm = conic.iter().map(|c| c * c).sum::<f64>().sqrt();
    conic.iter_mut().for_each(|c| *c /= norm);

    let rms = ((0..n)
        .map(|i| {
            let p = q[i];
            let r = conic[0] * p.x * p.x
                + conic[1] * p.x * p.y
                + conic[2] * p.y * p.y
                + conic[3] * p.x
                + conic[4] * p.y
                + conic[5];
            r * r
        })
        .sum::<f64>()
        / n as f64)
        .sqrt();

    let e = conic_to_ellipse(&conic, rms).ok_or_else(|| fail("conic is not a real ellipse"))?;
    Ok(Ellipse {
        center: e.center * (1.0 / s) + mean,
        semi_major: e.semi_major / s,
        semi_minor: e.semi_minor / s,
        ..e
    })
}

/// Geometric parameters of `a x² + b xy + c y² + d x + e y + f = 0`.
fn conic_to_ellipse(k: &[f64; 6], rms: f64) -> Option<Ellipse> {
    let [a, b, c, d, e, f] = *k;
    let det = 4.0 * a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let x0 = (b * e - 2.0 * c * d) / det;
    let y0 = (b * d - 2.0 * a * e) / det;
    let f0 = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;
    // Eigen-decomposition of [[a, b/2], [b/2, c]].
    let mean = 0.5 * (a + c);
    let diff = (0.5 * (a - c)).hypot(0.5 * b);
    let (l1, l2) = (mean - diff, mean + diff);
    let (r1, r2) = (-f0 / l1, -f0 / l2);
    if !(r1 > 0.0 && r2 > 0.0) {
        return None;
    }
    // Eigenvector of the smaller eigenvalue l1 is the major axis.
    let theta = 0.5 * b.atan2(a - c) + std::f64::consts::FRAC_PI_2;
    let mut angle = theta;
    while angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    }
    while angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    }
    Some(Ellipse {
        center: Point2::new(x0, y0),
        semi_major: r1.sqrt(),
        semi_minor: r2.sqrt(),
        angle,
        rms_residual: rms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on the radial distance, px.
    pub threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 800,
            threshold: 2.0,
            min_inliers: 12,
            seed: 0x5eed,
        }
    }
}

/// Robust fit: best 6-point hypothesis by inlier count, refit on its
/// inliers. `accept` filters implausible candidates.
pub fn fit_ellipse_ransac(
    points: &[Point2],
    cfg: &RansacConfig,
    accept: impl Fn(&Ellipse) -> bool,
) -> Result<(Ellipse, Vec<usize>)> {
    if points.len() < 6 {
        return Err(Error::EllipseFitFailed("need at least 6 points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inliers_of = |e: &Ellipse| -> Vec<usize> {
        (0..points.len())
            .filter(|&i| e.radial_distance(points[i]) < cfg.threshold)
            .collect()
    };
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..cfg.iterations {
        let pick: Vec<Point2> = sample(&mut rng, points.len(), 6)
            .iter()
            .map(|i| points[i])
            .collect();
        let Ok(e) = fit_ellipse(&pick) else { continue };
        if !accept(&e) {
            continue;
        }
        let inl = inliers_of(&e);
        if inl.len() > best.len() {
            best = inl;
        }
    }
    if best.len() < cfg.min_inliers.max(6) {
        return Err(Error::EllipseFitFailed(format!(
            "best consensus has {} points",
            best.len()
        )));
    }
    // Two refinement passes on the consensus set.
    let mut inl = best;
    let mut e = fit_ellipse(&inl.iter().map(|&i| points[i]).collect::<Vec<_>>())?;
    for _ in 0..2 {
        let next = inliers_of(&e);
        if next.len() < 6 {
            break;
        }
        let refit = fit_ellipse(&next.iter().map(|&i| points[i]).collect::<Vec<_>>())?;
        inl = next;
        e = refit;
    }
    if !accept(&e) {
        return Err(Error::EllipseFitFailed("refit rejected".into()));
    }
    Ok((e, inl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn samples(e: &Ellipse, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|k| e.point_at(std::f64::consts::TAU * k as f64 / n as f64))
            .collect()
    }

    #[test]
    fn exact_axis_aligned() {
        let pts: Vec<Point2> = (0..20)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 20.0;
                Point2::new(4.0 * t.cos(), 3.0 * t.sin())
            })
            .collect();
        let e = fit_ellipse(&pts).unwrap();
        assert!(e.center.x.abs() < 1e-6 && e.center.y.abs() < 1e-6);
        assert!((e.semi_major - 4.0).abs() < 1e-6);
        assert!((e.semi_minor - 3.0).abs() < 1e-6);
        assert!(e.angle.abs() < 1e-6);
        assert!(e.rms_residual < 1e-9);
    }

    #[test]
    fn exact_rotated_and_shifted() {
        let truth = Ellipse {
            center: Point2::new(320.0, 200.0),
            semi_major: 90.0,
            semi_minor: 25.0,
            angle: 0.3,
            rms_residual: 0.0,
        };
        let e = fit_ellipse(&samples(&truth, 30)).unwrap();
        assert!(e.center.dist(truth.center) < 1e-6);
        assert!((e.semi_major - 90.0).abs() < 1e-6);
        assert!((e.semi_minor - 25.0).abs() < 1e-6);
        assert!((e.angle - 0.3).abs() < 1e-8);
    }

    #[test]
    fn noisy_axes_within_two_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let truth = Ellipse {
            center: Point2::new(0.0, 0.0),
            semi_major: 120.0,
            semi_minor: 50.0,
            angle: 0.0,
            rms_residual: 0.0,
        };
        for _ in 0..20 {
            let pts: Vec<Point2> = (0..200)
                .map(|_| {
                    let p = truth.point_at(rng.random_range(0.0..std::f64::consts::TAU));
                    Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
                })
                .collect();
            let e = fit_ellipse(&pts).unwrap();
            assert!((e.semi_major / 120.0 - 1.0).abs() < 0.02);
            assert!((e.semi_minor / 50.0 - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn collinear_points_fail() {
        let pts: Vec<Point2> = (0..10)
            .map(|k| Point2::new(k as f64, 2.0 * k as f64))
            .collect();
        assert!(matches!(fit_ellipse(&pts), Err(Error::EllipseFitFailed(_))));
        assert!(fit_ellipse(&pts[..5]).is_err());
    }

    #[test]
    fn ransac_ignores_outliers() {
        let truth = Ellipse {
            center: Point2::new(300.0, 250.0),
            semi_major: 100.0,
            semi_minor: 30.0,
            angle: 0.05,
            rms_residual: 0.0,
        };
        let mut pts = samples(&truth, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..40 {
            pts.push(Point2::new(
                rng.random_range(0.0..640.0),
                rng.random_range(0.0..480.0),
            ));
        }
        let (e, inl) = fit_ellipse_ransac(&pts, &RansacConfig::default(), |_| true).unwrap();
        assert!(inl.len() >= 60);
        assert!(e.center.dist(truth.center) < 1e-3);
        assert!((e.semi_major - 100.0).abs() < 1e-3);
    }
}
