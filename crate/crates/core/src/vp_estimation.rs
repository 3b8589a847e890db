//! Vanishing points of the two field directions from line segments, by
//! exhaustive pairwise-intersection voting, with an ellipse-based fallback
//! for the goalline direction in center views.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipse::{fit_ellipse_ransac, Ellipse, RansacConfig};
use crate::error::{Error, Result};
use crate::features::rasterize_segment;
use crate::field_model::FieldModel;
use crate::geometry::{dlt_homography, line_through, normalize_line, Point2, VanishingPoint};
use crate::mask::GrassMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub p1: Point2,
    pub p2: Point2,
    pub strength: f64,
}

impl LineSegment {
    /// Strength defaults to the length.
    pub fn new(p1: Point2, p2: Point2) -> Self {
        Self {
            p1,
            p2,
            strength: p1.dist(p2),
        }
    }

    pub fn length(&self) -> f64 {
        self.p1.dist(self.p2)
    }

    pub fn midpoint(&self) -> Point2 {
        self.p1.lerp(self.p2, 0.5)
    }

    pub fn direction(&self) -> Point2 {
        let d = self.p2 - self.p1;
        d * (1.0 / d.norm())
    }

    /// Angle in `[0, π/2]` between the segment and the line joining its
    /// midpoint to `vp`.
    pub fn angle_to(&self, vp: &VanishingPoint) -> f64 {
        angle_to_homogeneous(self.midpoint(), self.p2 - self.p1, &vp.homogeneous())
    }
}

fn angle_to_homogeneous(mid: Point2, dir: Point2, v: &Vector3<f64>) -> f64 {
    let d = Point2::new(v.x - v.z * mid.x, v.y - v.z * mid.y);
    if d.norm() == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    dir.cross(d).abs().atan2(dir.dot(d).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentLabel {
    H,
    V,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VpConfig {
    pub theta_tol_deg: f64,
    pub sigma_deg: f64,
    pub min_length: f64,
    pub min_support: usize,
    /// A supporting image line needs at least this much total segment
    /// length, px, for the touchline and the goalline direction.
    pub min_line_length_h: f64,
    pub min_line_length_v: f64,
    pub max_pairs: usize,
    pub max_off_grass: f64,
    pub fallback: bool,
    /// Collinear merging before voting: endpoint distance, px, and
    /// direction difference, degrees.
    pub merge_distance: f64,
    pub merge_angle_deg: f64,
    /// Shorter segments are not merged, px.
    pub merge_min_length: f64,
    /// Candidates inside the image expanded by this fraction of its
    /// diagonal are ignored.
    pub exclusion_margin: f64,
    pub ransac: RansacConfig,
}

impl Default for VpConfig {
    fn default() -> Self {
        Self {
            theta_tol_deg: 2.0,
            sigma_deg: 1.0,
            min_length: 8.0,
            min_support: 3,
            min_line_length_h: 30.0,
            min_line_length_v: 64.0,
            max_pairs: 20_000,
            max_off_grass: 0.6,
            fallback: true,
            merge_distance: 4.0,
            merge_angle_deg: 8.0,
            merge_min_length: 20.0,
            exclusion_margin: 0.25,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VpResult {
    pub vp_h: VanishingPoint,
    pub vp_v: VanishingPoint,
    pub labels: Vec<SegmentLabel>,
    pub fallback_used: bool,
}

/// A winning candidate and the indices (into the voting set) of its inliers.
#[derive(Debug, Clone, PartialEq)]
pub struct Vote {
    pub vp: VanishingPoint,
    pub score: f64,
    pub inliers: Vec<usize>,
}

/// Pick the candidate with the highest vote. Earlier candidates win ties.
pub fn vote_vp(
    segments: &[LineSegment],
    candidates: &[VanishingPoint],
    cfg: &VpConfig,
) -> Result<Vote> {
    if candidates.is_empty() {
        return Err(Error::VpEstimationFailed(
            "no candidate vanishing points".into(),
        ));
    }
    let tol = cfg.theta_tol_deg.to_radians();
    let two_s2 = 2.0 * cfg.sigma_deg.to_radians().powi(2);
    let prepared: Vec<(Point2, Point2, f64)> = segments
        .iter()
        .map(|s| (s.midpoint(), s.p2 - s.p1, s.strength))
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let v = c.homogeneous();
            prepared
                .iter()
                .map(|(m, d, w)| {
                    let a = angle_to_homogeneous(*m, *d, &v);
                    if a < tol {
                        w * (-a * a / two_s2).exp()
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    let mut best = 0;
    for (k, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = k;
        }
    }
    let vp = candidates[best];
    Ok(Vote {
        vp,
        score: scores[best],
        inliers: inliers(segments, &vp, tol),
    })
}

fn inliers(segments: &[LineSegment], vp: &VanishingPoint, tol: f64) -> Vec<usize> {
    (0..segments.len())
        .filter(|&i| segments[i].angle_to(vp) < tol)
        .collect()
}

/// Pairwise intersections of the strongest segments, at most `max_pairs`.
pub fn candidate_vps(segments: &[LineSegment], max_pairs: usize) -> Vec<VanishingPoint> {
    let mut k = segments.len();
    while k > 1 && k * (k - 1) / 2 > max_pairs {
        k -= 1;
    }
    let order = canonical_order(segments);
    let lines: Vec<Vector3<f64>> = order[..k]
        .iter()
        .filter_map(|&i| normalize_line(line_through(segments[i].p1, segments[i].p2)))
        .collect();
    let mut out = Vec::with_capacity(lines.len() * lines.len() / 2);
    for a in 0..lines.len() {
        for b in a + 1..lines.len() {
            let v = lines[a].cross(&lines[b]);
            if v.norm() > 1e-12 {
                if let Ok(vp) = VanishingPoint::from_homogeneous(v) {
                    out.push(vp);
                }
            }
        }
    }
    out
}

fn segment_key(s: &LineSegment) -> [f64; 5] {
    let (a, b) = if (s.p1.x, s.p1.y) <= (s.p2.x, s.p2.y) {
        (s.p1, s.p2)
    } else {
        (s.p2, s.p1)
    };
    [-s.strength, a.x, a.y, b.x, b.y]
}

/// Indices sorted by decreasing strength, then by geometry, so results do
/// not depend on input order.
fn canonical_order(segments: &[LineSegment]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..segments.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (segment_key(&segments[i]), segment_key(&segments[j]));
        a.iter()
            .zip(&b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    idx
}

/// Least-squares vanishing point of the segments' lines (strength
/// weighted), computed in coordinates centered on `center` and scaled by
/// `scale`.
pub fn refine_vp(segs: &[&LineSegment], center: Point2, scale: f64) -> Option<VanishingPoint> {
    if segs.len() < 2 {
        return None;
    }
    let mut m = Matrix3::zeros();
    for s in segs {
        let a = (s.p1 - center) * (1.0 / scale);
        let b = (s.p2 - center) * (1.0 / scale);
        let l = normalize_line(line_through(a, b))?;
        m += l * l.transpose() * s.strength;
    }
    let eig = SymmetricEigen::new(m);
    let k = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(k).into_owned();
    let t_inv = Matrix3::new(scale, 0.0, center.x, 0.0, scale, center.y, 0.0, 0.0, 1.0);
    VanishingPoint::from_homogeneous(t_inv * v).ok()
}

/// Groups of collinear segments; returns each group's total length.
fn line_groups(segs: &[&LineSegment]) -> Vec<(Vector3<f64>, f64)> {
    let mut groups: Vec<(Vector3<f64>, Point2, f64)> = Vec::new();
    for s in segs {
        let found = groups.iter_mut().find(|(l, dir, _)| {
            let near = |p: Point2| (l.x * p.x + l.y * p.y + l.z).abs() < 2.0;
            let parallel = dir.cross(s.direction()).abs() < 1f64.to_radians().sin();
            near(s.p1) && near(s.p2) && parallel
        });
        match found {
            Some(g) => g.2 += s.length(),
            None => {
                if let Some(l) = normalize_line(line_through(s.p1, s.p2)) {
                    groups.push((l, s.direction(), s.length()));
                }
            }
        }
    }
    groups.into_iter().map(|(l, _, len)| (l, len)).collect()
}

#[derive(Debug, Clone)]
struct Found {
    vp: VanishingPoint,
    /// Indices into the eligible set.
    inliers: Vec<usize>,
}

impl Found {
    fn horizontality(&self, segs: &[LineSegment]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for &i in &self.inliers {
            let s = &segs[i];
            num += s.strength * s.direction().x.abs();
            den += s.strength;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// `members[i]` are the input segments merged into line `i`.
    fn supported(
        &self,
        segs: &[LineSegment],
        members: &[Vec<usize>],
        cfg: &VpConfig,
        min_line_length: f64,
    ) -> bool {
        let count: usize = self.inliers.iter().map(|&i| members[i].len()).sum();
        if count < cfg.min_support {
            return false;
        }
        let refs: Vec<&LineSegment> = self.inliers.iter().map(|&i| &segs[i]).collect();
        line_groups(&refs)
            .iter()
            .filter(|(_, len)| *len >= min_line_length)
            .count()
            >= 2
    }
}

fn find_vp(
    segs: &[LineSegment],
    pool: &[usize],
    cfg: &VpConfig,
    image: (f64, f64),
) -> Result<Option<Found>> {
    if pool.len() < 2 {
        return Ok(None);
    }
    let (w, h) = image;
    let center = Point2::new((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let scale = 0.5 * w.hypot(h);
    let sub: Vec<LineSegment> = pool.iter().map(|&i| segs[i]).collect();
    // Field vanishing points never lie inside the (expanded) frame.
    let pad = cfg.exclusion_margin * w.hypot(h);
    let outside = |v: &VanishingPoint| {
        v.point()
            .is_none_or(|p| p.x < -pad || p.y < -pad || p.x > w - 1.0 + pad || p.y > h - 1.0 + pad)
    };
    let cands: Vec<VanishingPoint> = candidate_vps(&sub, cfg.max_pairs)
        .into_iter()
        .filter(|v| outside(v))
        .collect();
    if cands.is_empty() {
        return Ok(None);
    }
    let vote = vote_vp(&sub, &cands, cfg)?;
    let tol = cfg.theta_tol_deg.to_radians();
    let mut vp = vote.vp;
    let mut inl = vote.inliers;
    // Refine, then relabel against the refined point; keep the candidate
    // if refinement loses support.
    for _ in 0..3 {
        let refs: Vec<&LineSegment> = inl.iter().map(|&i| &sub[i]).collect();
        let Some(r) = refine_vp(&refs, center, scale).filter(|r| outside(r)) else {
            break;
        };
        let next = inliers(&sub, &r, tol);
        if next.len() < inl.len() {
            break;
        }
        let done = next == inl;
        vp = r;
        inl = next;
        if done {
            break;
        }
    }
    let robust = refine_robust(&sub, &inl, vp, center, scale);
    let vp = if outside(&robust) { robust } else { vp };
    Ok(Some(Found {
        vp,
        inliers: inl.iter().map(|&k| pool[k]).collect(),
    }))
}

/// Tukey-reweighted refinement over an inlier set, so near-aligned
/// clutter (arc chords, short outliers) inside the tolerance cone does
/// not bias the point.
fn refine_robust(
    segs: &[LineSegment],
    inl: &[usize],
    start: VanishingPoint,
    center: Point2,
    scale: f64,
) -> VanishingPoint {
    const TUKEY: f64 = 4.685;
    let floor = 0.05f64.to_radians();
    let mut vp = start;
    for _ in 0..10 {
        let res: Vec<f64> = inl.iter().map(|&i| segs[i].angle_to(&vp)).collect();
        let mut sorted = res.clone();
        sorted.sort_by(f64::total_cmp);
        let mad = sorted.get(sorted.len() / 2).copied().unwrap_or(0.0);
        let c = (TUKEY * 1.4826 * mad).max(floor);
        let weighted: Vec<LineSegment> = inl
            .iter()
            .zip(&res)
            .filter(|(_, r)| **r < c)
            .map(|(&i, r)| {
                let u = 1.0 - (r / c).powi(2);
                LineSegment {
                    strength: segs[i].strength * u * u,
                    ..segs[i]
                }
            })
            .collect();
        let refs: Vec<&LineSegment> = weighted.iter().collect();
        match refine_vp(&refs, center, scale) {
            Some(next) if next != vp => vp = next,
            _ => break,
        }
    }
    vp
}

fn off_grass_fraction(s: &LineSegment, mask: &GrassMask) -> f64 {
    let px = rasterize_segment(s, mask.width(), mask.height());
    if px.is_empty() {
        return 1.0;
    }
    px.iter().filter(|(x, y)| !mask.get(*x, *y)).count() as f64 / px.len() as f64
}

/// Estimate `vp_h` and `vp_v` and label every segment.
pub fn estimate_vps(
    segments: &[LineSegment],
    grass: &GrassMask,
    model: &FieldModel,
    cfg: &VpConfig,
) -> Result<VpResult> {
    if segments.len() < 2 {
        return Err(Error::VpEstimationFailed(format!(
            "{} segments, need at least 2",
            segments.len()
        )));
    }
    let (w, h) = (grass.width() as f64, grass.height() as f64);
    let center = Point2::new((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let scale = 0.5 * w.hypot(h);
    let tol = cfg.theta_tol_deg.to_radians();

    let order = canonical_order(segments);
    let segs: Vec<LineSegment> = order.iter().map(|&i| segments[i]).collect();
    let eligible: Vec<usize> = (0..segs.len())
        .filter(|&i| {
            segs[i].length() >= cfg.min_length
                && off_grass_fraction(&segs[i], grass) <= cfg.max_off_grass
        })
        .collect();

    // Vote with merged lines: pieces of one marking average out their
    // endpoint noise. Members inherit their line's label.
    let merged = merge_collinear(
        &segs,
        &eligible,
        cfg.merge_distance,
        cfg.merge_angle_deg.to_radians(),
        cfg.merge_min_length,
    );
    let members: Vec<Vec<usize>> = merged.iter().map(|m| m.1.clone()).collect();
    let segs: Vec<LineSegment> = merged.iter().map(|m| m.0).collect();
    let eligible: Vec<usize> = (0..segs.len()).collect();

    let image = (w, h);
    let first = find_vp(&segs, &eligible, cfg, image)?
        .ok_or_else(|| Error::VpEstimationFailed("too few usable segments".into()))?;
    // Second direction: retry without the inliers of unsupported winners.
    let mut pool: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|i| !first.inliers.contains(i))
        .collect();
    let mut second = None;
    for _ in 0..3 {
        let Some(f) = find_vp(&segs, &pool, cfg, image)? else {
            break;
        };
        let min_len = if f.horizontality(&segs) > first.horizontality(&segs) {
            cfg.min_line_length_h
        } else {
            cfg.min_line_length_v
        };
        if f.supported(&segs, &members, cfg, min_len) {
            second = Some(f);
            break;
        }
        pool.retain(|i| !f.inliers.contains(i));
    }

    let (h_found, v_found) = match second {
        Some(s) if s.horizontality(&segs) > first.horizontality(&segs) => (s, Some(first)),
        Some(s) => (first, Some(s)),
        None => (first, None),
    };
    if !h_found.supported(&segs, &members, cfg, cfg.min_line_length_h)
        || h_found.horizontality(&segs) < 0.5f64.sqrt()
    {
        return Err(Error::VpEstimationFailed(
            "insufficient support for the touchline direction".into(),
        ));
    }
    let vp_h = h_found.vp;

    let mut fallback_used = false;
    let vp_v = match v_found {
        Some(v) if v.supported(&segs, &members, cfg, cfg.min_line_length_v) => v.vp,
        _ => {
            if !cfg.fallback {
                return Err(Error::VpEstimationFailed(
                    "insufficient support for the goalline direction".into(),
                ));
            }
            fallback_used = true;
            // Points off both directions feed the ellipse; the longest
            // line off the touchline direction (a lone goalline-direction
            // marking) constrains the result.
            let off_h: Vec<&LineSegment> = eligible
                .iter()
                .filter(|&&i| segs[i].angle_to(&vp_h) >= tol)
                .map(|&i| &segs[i])
                .collect();
            let single_line = line_groups(&off_h)
                .into_iter()
                .filter(|(_, len)| *len >= cfg.min_line_length_v)
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(l, _)| l);
            let h_tol = |i: &usize| segs[*i].angle_to(&vp_h) >= tol;
            let on_line = |s: &LineSegment| {
                single_line.is_some_and(|l| {
                    let d = |p: Point2| (l.x * p.x + l.y * p.y + l.z).abs();
                    d(s.p1) < 2.0 && d(s.p2) < 2.0
                })
            };
            let points: Vec<Point2> = eligible
                .iter()
                .filter(|i| h_tol(i) && !on_line(&segs[**i]))
                .flat_map(|&i| [segs[i].p1, segs[i].midpoint(), segs[i].p2])
                .collect();
            let (w_img, h_img) = (w, h);
            let (e, _) = fit_ellipse_ransac(&points, &cfg.ransac, |e| {
                e.center.x > 0.0
                    && e.center.x < w_img
                    && e.center.y > 0.0
                    && e.center.y < h_img
                    && e.semi_major < w_img.hypot(h_img)
                    && e.semi_minor > 2.0
            })
            .map_err(|err| Error::FallbackFailed(err.to_string()))?;
            let vp = vp_from_ellipse(&e, grass, model)?;
            match single_line {
                Some(l) => project_onto_line(&vp, &l, center, scale)?,
                None => vp,
            }
        }
    };

    let mut labels = vec![SegmentLabel::None; segments.len()];
    for &i in &eligible {
        let (ah, av) = (segs[i].angle_to(&vp_h), segs[i].angle_to(&vp_v));
        let label = if ah < tol && (ah <= av || av >= tol) {
            SegmentLabel::H
        } else if av < tol {
            SegmentLabel::V
        } else {
            SegmentLabel::None
        };
        for &k in &members[i] {
            labels[order[k]] = label;
        }
    }
    Ok(VpResult {
        vp_h,
        vp_v,
        labels,
        fallback_used,
    })
}

/// Length-weighted endpoint moments of a set of segments.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    sw: f64,
    sx: f64,
    sy: f64,
    sxx: f64,
    sxy: f64,
    syy: f64,
}

impl Moments {
    fn of(s: &LineSegment) -> Self {
        let wt = 0.5 * s.length().max(1e-9);
        let mut m = Self::default();
        for p in [s.p1, s.p2] {
            m.sw += wt;
            m.sx += wt * p.x;
            m.sy += wt * p.y;
            m.sxx += wt * p.x * p.x;
            m.sxy += wt * p.x * p.y;
            m.syy += wt * p.y * p.y;
        }
        m
    }

    fn plus(&self, o: &Self) -> Self {
        Self {
            sw: self.sw + o.sw,
            sx: self.sx + o.sx,
            sy: self.sy + o.sy,
            sxx: self.sxx + o.sxx,
            sxy: self.sxy + o.sxy,
            syy: self.syy + o.syy,
        }
    }

    /// Total least squares line: a point and a unit direction.
    fn fit(&self) -> (Point2, Point2) {
        let (mx, my) = (self.sx / self.sw, self.sy / self.sw);
        let cxx = self.sxx / self.sw - mx * mx;
        let cxy = self.sxy / self.sw - mx * my;
        let cyy = self.syy / self.sw - my * my;
        let theta = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
        (Point2::new(mx, my), Point2::new(theta.cos(), theta.sin()))
    }
}

/// Agglomerative merge of collinear segments into lines. Two groups join
/// when their directions differ by less than `angle` and every member
/// endpoint lies within `dist` pixels of the joint total least squares
/// line. Segments shorter than `min_length` stay alone. Each line spans
/// its members' extreme projections and carries their summed strength.
/// Returns the lines with their member indices, in order of the first
/// member in `idx`.
pub fn merge_collinear(
    segs: &[LineSegment],
    idx: &[usize],
    dist: f64,
    angle: f64,
    min_length: f64,
) -> Vec<(LineSegment, Vec<usize>)> {
    struct Group {
        m: Moments,
        members: Vec<usize>,
        dir: Point2,
    }
    let mut groups: Vec<Group> = idx
        .iter()
        .map(|&i| Group {
            m: Moments::of(&segs[i]),
            members: vec![i],
            dir: segs[i].direction(),
        })
        .collect();
    let extent = |members: &[usize], p: Point2, d: Point2| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &k in members {
            for q in [segs[k].p1, segs[k].p2] {
                let t = d.dot(q - p);
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        (lo, hi)
    };
    let sin_tol = angle.sin();
    let mergeable = |g: &Group| g.members.len() > 1 || segs[g.members[0]].length() >= min_length;
    let mut changed = true;
    while changed {
        changed = false;
        let mut a = 0;
        while a < groups.len() {
            if !mergeable(&groups[a]) {
                a += 1;
                continue;
            }
            let mut b = a + 1;
            while b < groups.len() {
                let (ga, gb) = (&groups[a], &groups[b]);
                let ok = mergeable(gb) && ga.dir.cross(gb.dir).abs() < sin_tol && {
                    let joint = ga.m.plus(&gb.m);
                    let (p, d) = joint.fit();
                    let near = ga.members.iter().chain(&gb.members).all(|&k| {
                        d.cross(segs[k].p1 - p).abs() < dist && d.cross(segs[k].p2 - p).abs() < dist
                    });
                    // Chance alignments of distant pieces are not merged.
                    let (ea, eb) = (extent(&ga.members, p, d), extent(&gb.members, p, d));
                    let gap = ea.0.max(eb.0) - ea.1.min(eb.1);
                    near && gap <= (ea.1 - ea.0).max(eb.1 - eb.0)
                };
                if ok {
                    let gb = groups.remove(b);
                    let ga = &mut groups[a];
                    ga.m = ga.m.plus(&gb.m);
                    ga.members.extend(gb.members);
                    ga.dir = ga.m.fit().1;
                    changed = true;
                } else {
                    b += 1;
                }
            }
            a += 1;
        }
    }
    groups
        .into_iter()
        .map(|g| {
            if g.members.len() == 1 {
                return (segs[g.members[0]], g.members);
            }
            let (p, d) = g.m.fit();
            let (lo, hi) = extent(&g.members, p, d);
            let strength = g.members.iter().map(|&k| segs[k].strength).sum();
            let seg = LineSegment {
                p1: p + d * lo,
                p2: p + d * hi,
                strength,
            };
            (seg, g.members)
        })
        .collect()
}

/// Nearest point of line `l` to `vp` on the sphere of normalized
/// homogeneous coordinates; well defined for points at infinity.
fn project_onto_line(
    vp: &VanishingPoint,
    l: &Vector3<f64>,
    center: Point2,
    scale: f64,
) -> Result<VanishingPoint> {
    let t = Matrix3::new(
        1.0 / scale,
        0.0,
        -center.x / scale,
        0.0,
        1.0 / scale,
        -center.y / scale,
        0.0,
        0.0,
        1.0,
    );
    let t_inv = t.try_inverse().ok_or(Error::SingularHomography)?;
    let v = t * vp.homogeneous();
    let ln = t_inv.transpose() * l;
    let p = v - ln * (ln.dot(&v) / ln.norm_squared());
    VanishingPoint::from_homogeneous(t_inv * p)
}

/// Walk from `start` along `dir` until grass turns into at least three
/// consecutive non-grass pixels; returns the last grass position.
fn grass_exit(mask: &GrassMask, start: Point2, dir: Point2) -> Option<(Point2, f64)> {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let inside = |p: Point2| p.x >= 0.0 && p.y >= 0.0 && p.x <= w - 1.0 && p.y <= h - 1.0;
    let grass_at = |p: Point2| mask.get(p.x.round() as usize, p.y.round() as usize);
    let mut t = 0.0;
    let mut seen_grass = false;
    let mut last_grass: Option<f64> = None;
    let mut run = 0;
    loop {
        let p = start + dir * t;
        if !inside(p) {
            return None;
        }
        if grass_at(p) {
            seen_grass = true;
            last_grass = Some(t);
            run = 0;
        } else if seen_grass {
            run += 1;
            if run >= 3 {
                let t0 = last_grass? + 0.5;
                return Some((start + dir * t0, t0));
            }
        }
        t += 1.0;
    }
}

/// Goalline vanishing point from the image of the center circle.
///
/// The axis endpoints pair with the circle's extreme points (major axis
/// along the touchlines), and the nearer grass exit along the minor axis
/// pairs with the touchline point on the same side.
pub fn vp_from_ellipse(
    e: &Ellipse,
    grass: &GrassMask,
    model: &FieldModel,
) -> Result<VanishingPoint> {
    let circle = model
        .circles
        .first()
        .ok_or_else(|| Error::FallbackFailed("model has no center circle".into()))?;
    let (c, r) = (circle.center, circle.radius);
    let (u, v) = (e.major_dir(), e.minor_dir());
    let exits: Vec<(Point2, f64, f64)> = [1.0, -1.0]
        .iter()
        .filter_map(|&sign| {
            let start = e.center + v * (sign * e.semi_minor);
            grass_exit(grass, start, v * sign).map(|(p, t)| (p, t, sign))
        })
        .collect();
    let (exit, _, sign) = exits
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::FallbackFailed("minor axis never leaves the grass".into()))?;
    let pairs = [
        (Point2::new(c.x + r, c.y), e.center + u * e.semi_major),
        (Point2::new(c.x - r, c.y), e.center - u * e.semi_major),
        (
            Point2::new(c.x, c.y + r),
            e.center + v * (sign * e.semi_minor),
        ),
        (
            Point2::new(c.x, c.y - r),
            e.center - v * (sign * e.semi_minor),
        ),
        (Point2::new(c.x, model.width), exit),
    ];
    let hmg = dlt_homography(&pairs).map_err(|err| Error::FallbackFailed(err.to_string()))?;
    VanishingPoint::from_homogeneous(hmg.apply_homogeneous(&Vector3::new(0.0, 1.0, 0.0)))
}

/// Angle in degrees between the lines joining `from` to each vanishing
/// point (undirected, so in `[0, 90]`).
pub fn vp_angular_error(a: &VanishingPoint, b: &VanishingPoint, from: Point2) -> f64 {
    let (da, db) = (a.direction_from(from), b.direction_from(from));
    da.cross(db).abs().atan2(da.dot(db).abs()).to_degrees()
}

/// On-disk segment record; `vp` is present on export.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentRecord {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    strength: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vp: Option<SegmentLabel>,
}

/// Parse `[{x1,y1,x2,y2,strength?,vp?}, …]`; labels are returned when
/// every record carries one.
pub fn segments_from_json(s: &str) -> Result<(Vec<LineSegment>, Option<Vec<SegmentLabel>>)> {
    let recs: Vec<SegmentRecord> = serde_json::from_str(s).map_err(|e| Error::Json {
        path: "<segments>".into(),
        source: e,
    })?;
    let segs = recs
        .iter()
        .map(|r| {
            let (p1, p2) = (Point2::new(r.x1, r.y1), Point2::new(r.x2, r.y2));
            let strength = r.strength.unwrap_or_else(|| p1.dist(p2));
            if !(strength >= 0.0) || !p1.is_finite() || !p2.is_finite() {
                return Err(Error::Input("bad segment record".into()));
            }
            Ok(LineSegment { p1, p2, strength })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Option<Vec<SegmentLabel>> = recs.iter().map(|r| r.vp).collect();
    Ok((segs, labels))
}

pub fn segments_to_json(segs: &[LineSegment], labels: Option<&[SegmentLabel]>) -> String {
    let recs: Vec<SegmentRecord> = segs
        .iter()
        .enumerate()
        .map(|(i, s)| SegmentRecord {
            x1: s.p1.x,
            y1: s.p1.y,
            x2: s.p2.x,
            y2: s.p2.y,
            strength: Some(s.strength),
            vp: labels.map(|l| l[i]),
        })
        .collect();
    serde_json::to_string_pretty(&recs).expect("segments serialize")
}

pub fn load_segments(path: &Path) -> Result<(Vec<LineSegment>, Option<Vec<SegmentLabel>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    segments_from_json(&text).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}
