//! Polytopic sets with strict faces and excluded points.
//!
//! A set is the intersection of halfspaces `n·x ≤ b` (or `n·x < b` when the
//! face is strict), minus a finite list of excluded points. Membership is
//! tolerance-based: non-strict faces hold within `EPS_GEO`, strict faces must
//! hold by a margin greater than `EPS_GEO`, and excluded points repel a ball
//! of radius `EPS_GEO`. Set algebra (emptiness, intersection, subset,
//! equality) is implemented exactly for dimensions 1 and 2 via interval
//! arithmetic and polygon clipping; those are the component dimensions that
//! guards and invariants live in, higher-dimensional products stay factored.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Geometry tolerance for halfspace membership and strict margins.
pub const EPS_GEO: f64 = 1e-9;

/// Internal tolerance for polygon clipping and degeneracy classification.
const CLIP_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("exact set algebra is only implemented for dimensions 1 and 2, got {0}")]
    UnsupportedDimension(usize),
    #[error("zero normal vector in halfspace")]
    ZeroNormal,
    #[error("rejection sampling failed after {0} attempts")]
    SamplingFailed(usize),
}

/// A halfspace `normal · x ≤ offset` (`<` when `strict`). Normals are unit
/// length so offsets and margins read as euclidean distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub strict: bool,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64, strict: bool) -> Result<Self, GeometryError> {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GeometryError::ZeroNormal);
        }
        Ok(Self {
            normal: normal.iter().map(|v| v / norm).collect(),
            offset: offset / norm,
            strict,
        })
    }

    pub fn closed(normal: Vec<f64>, offset: f64) -> Result<Self, GeometryError> {
        Self::new(normal, offset, false)
    }

    pub fn strict(normal: Vec<f64>, offset: f64) -> Result<Self, GeometryError> {
        Self::new(normal, offset, true)
    }

    /// Signed slack `normal·x − offset`; non-positive means inside the
    /// closed halfspace.
    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }

    fn satisfied(&self, x: &[f64], tol: f64) -> bool {
        let v = self.eval(x);
        if self.strict {
            v < -tol
        } else {
            v <= tol
        }
    }
}

/// Intersection of halfspaces minus a finite set of excluded points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopicSet {
    pub dim: usize,
    pub halfspaces: Vec<Halfspace>,
    pub excluded: Vec<Vec<f64>>,
}

impl PolytopicSet {
    pub fn new(dim: usize, halfspaces: Vec<Halfspace>) -> Result<Self, GeometryError> {
        for h in &halfspaces {
            if h.normal.len() != dim {
                return Err(GeometryError::DimensionMismatch {
                    expected: dim,
                    got: h.normal.len(),
                });
            }
        }
        Ok(Self {
            dim,
            halfspaces,
            excluded: Vec::new(),
        })
    }

    /// Whole space of the given dimension.
    pub fn universe(dim: usize) -> Self {
        Self {
            dim,
            halfspaces: Vec::new(),
            excluded: Vec::new(),
        }
    }

    /// Axis-aligned box `Π [lo_i, hi_i]`.
    pub fn axis_box(lo: &[f64], hi: &[f64]) -> Result<Self, GeometryError> {
        assert_eq!(lo.len(), hi.len());
        let dim = lo.len();
        let mut hs = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            let mut n = vec![0.0; dim];
            n[i] = -1.0;
            hs.push(Halfspace::closed(n, -lo[i])?);
            let mut n = vec![0.0; dim];
            n[i] = 1.0;
            hs.push(Halfspace::closed(n, hi[i])?);
        }
        Self::new(dim, hs)
    }

    /// Closed convex polygon from counter-clockwise vertices (2-D only).
    pub fn from_polygon(vertices: &[[f64; 2]]) -> Result<Self, GeometryError> {
        let k = vertices.len();
        let mut hs = Vec::with_capacity(k);
        for i in 0..k {
            let a = vertices[i];
            let b = vertices[(i + 1) % k];
            // Outward normal of the ccw edge a -> b.
            let n = vec![b[1] - a[1], a[0] - b[0]];
            let off = n[0] * a[0] + n[1] * a[1];
            hs.push(Halfspace::closed(n, off)?);
        }
        Self::new(2, hs)
    }

    pub fn with_excluded(mut self, points: Vec<Vec<f64>>) -> Self {
        self.excluded = points;
        self
    }

    pub fn push(&mut self, h: Halfspace) {
        assert_eq!(h.normal.len(), self.dim);
        self.halfspaces.push(h);
    }

    /// Tolerance-based membership per the set semantics above.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.contains_with(x, EPS_GEO)
    }

    pub fn contains_with(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim {
            return false;
        }
        self.halfspaces.iter().all(|h| h.satisfied(x, tol))
            && self.excluded.iter().all(|z| dist(x, z) > tol)
    }

    /// Translate the set by `t` (used by reset maps).
    pub fn translate(&self, t: &[f64]) -> Self {
        assert_eq!(t.len(), self.dim);
        Self {
            dim: self.dim,
            halfspaces: self
                .halfspaces
                .iter()
                .map(|h| Halfspace {
                    normal: h.normal.clone(),
                    offset: h.offset + dot(&h.normal, t),
                    strict: h.strict,
                })
                .collect(),
            excluded: self
                .excluded
                .iter()
                .map(|z| z.iter().zip(t).map(|(a, b)| a + b).collect())
                .collect(),
        }
    }

    /// A point of the set, or `None` when the set is empty. Dimensions 1-2.
    pub fn witness(&self) -> Result<Option<Vec<f64>>, GeometryError> {
        find_witness(self.dim, &self.halfspaces, &self.excluded)
    }

    pub fn is_empty(&self) -> Result<bool, GeometryError> {
        Ok(self.witness()?.is_none())
    }

    pub fn is_disjoint(&self, other: &Self) -> Result<bool, GeometryError> {
        let mut hs = self.halfspaces.clone();
        hs.extend(other.halfspaces.iter().cloned());
        let mut excl = self.excluded.clone();
        excl.extend(other.excluded.iter().cloned());
        Ok(find_witness(self.dim, &hs, &excl)?.is_none())
    }

    /// Exact subset test: no point of `self` violates a face or hits an
    /// excluded point of `other`.
    pub fn is_subset_of(&self, other: &Self) -> Result<bool, GeometryError> {
        if self.dim != other.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        for h in &other.halfspaces {
            // Violating region of a closed face is the open complement and
            // vice versa.
            let flipped = Halfspace {
                normal: h.normal.iter().map(|v| -v).collect(),
                offset: -h.offset,
                strict: !h.strict,
            };
            let mut hs = self.halfspaces.clone();
            hs.push(flipped);
            if find_witness(self.dim, &hs, &self.excluded)?.is_some() {
                return Ok(false);
            }
        }
        for z in &other.excluded {
            if self.contains(z) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn set_eq(&self, other: &Self) -> Result<bool, GeometryError> {
        Ok(self.is_subset_of(other)? && other.is_subset_of(self)?)
    }

    /// Vertices of the closed hull (dimensions 1-2). Callers use this for
    /// bounding boxes and boundedness checks.
    pub fn hull_vertices(&self) -> Result<Vec<Vec<f64>>, GeometryError> {
        let bound = clip_bound(&self.halfspaces);
        match self.dim {
            1 => {
                let (lo, hi) = clip_interval(&self.halfspaces, bound);
                if lo > hi + CLIP_EPS {
                    Ok(vec![])
                } else {
                    Ok(vec![vec![lo], vec![hi]])
                }
            }
            2 => Ok(clip_polygon(&self.halfspaces, bound)
                .into_iter()
                .map(|p| vec![p[0], p[1]])
                .collect()),
            d => Err(GeometryError::UnsupportedDimension(d)),
        }
    }

    /// Bounded means the hull never touches the (huge) clipping frame.
    pub fn is_bounded(&self) -> Result<bool, GeometryError> {
        let bound = clip_bound(&self.halfspaces);
        let verts = self.hull_vertices()?;
        Ok(verts
            .iter()
            .all(|v| v.iter().all(|c| c.abs() < bound * 0.5)))
    }

    /// Axis-aligned bounding box of the closed hull.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>), GeometryError> {
        let verts = self.hull_vertices()?;
        if verts.is_empty() {
            return Ok((vec![0.0; self.dim], vec![0.0; self.dim]));
        }
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for v in &verts {
            for i in 0..self.dim {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
        }
        Ok((lo, hi))
    }

    /// Uniform rejection sample from the set.
    pub fn sample_uniform<R: Rng>(
        &self,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<Vec<f64>, GeometryError> {
        let (lo, hi) = self.bounding_box()?;
        for _ in 0..max_attempts {
            let x: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(a, b)| {
                    if b - a < CLIP_EPS {
                        *a
                    } else {
                        rng.gen_range(*a..*b)
                    }
                })
                .collect();
            if self.contains(&x) {
                return Ok(x);
            }
        }
        Err(GeometryError::SamplingFailed(max_attempts))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Clipping frame large enough to dominate every face offset.
fn clip_bound(hs: &[Halfspace]) -> f64 {
    let m = hs.iter().map(|h| h.offset.abs()).fold(1.0, f64::max);
    (m * 1e4).clamp(1e4, 1e12)
}

fn clip_interval(hs: &[Halfspace], bound: f64) -> (f64, f64) {
    let mut lo = -bound;
    let mut hi = bound;
    for h in hs {
        let n = h.normal[0];
        // n*x <= b  =>  x <= b/n when n > 0, x >= b/n when n < 0
        let c = h.offset / n;
        if n > 0.0 {
            hi = hi.min(c);
        } else {
            lo = lo.max(c);
        }
    }
    (lo, hi)
}

/// Sutherland-Hodgman clip of a huge frame by the closed halfspaces.
fn clip_polygon(hs: &[Halfspace], bound: f64) -> Vec<[f64; 2]> {
    let mut poly: Vec<[f64; 2]> = vec![
        [-bound, -bound],
        [bound, -bound],
        [bound, bound],
        [-bound, bound],
    ];
    let tol = CLIP_EPS * bound.max(1.0);
    for h in hs {
        if poly.is_empty() {
            break;
        }
        let mut next = Vec::with_capacity(poly.len() + 1);
        for i in 0..poly.len() {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            let fa = h.eval(&a);
            let fb = h.eval(&b);
            let a_in = fa <= tol;
            let b_in = fb <= tol;
            if a_in {
                next.push(a);
            }
            if a_in != b_in {
                let t = fa / (fa - fb);
                next.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        poly = dedupe(next, tol);
    }
    poly
}

fn dedupe(pts: Vec<[f64; 2]>, tol: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for p in pts {
        if out
            .iter()
            .all(|q| (p[0] - q[0]).abs() > tol || (p[1] - q[1]).abs() > tol)
        {
            out.push(p);
        }
    }
    out
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let k = poly.len();
    let mut a = 0.0;
    for i in 0..k {
        let p = poly[i];
        let q = poly[(i + 1) % k];
        a += p[0] * q[1] - q[0] * p[1];
    }
    a.abs() * 0.5
}

/// Find a point satisfying all halfspaces (with strictness) and avoiding the
/// excluded points, or report that none exists.
fn find_witness(
    dim: usize,
    hs: &[Halfspace],
    excluded: &[Vec<f64>],
) -> Result<Option<Vec<f64>>, GeometryError> {
    witness_avoiding(dim, hs, excluded, &[])
}

/// Like [`PolytopicSet::witness`], but the point must additionally lie
/// outside every set in `avoid`. The avoid sets are expected to be
/// lower-dimensional (guard faces); the candidate search assumes the
/// remaining region, when nonempty, is not microscopically thin.
pub fn witness_avoiding(
    dim: usize,
    hs: &[Halfspace],
    excluded: &[Vec<f64>],
    avoid: &[&PolytopicSet],
) -> Result<Option<Vec<f64>>, GeometryError> {
    let point_ok = |x: &[f64]| -> bool {
        hs.iter().all(|h| h.satisfied(x, EPS_GEO))
            && excluded.iter().all(|z| dist(x, z) > EPS_GEO)
            && avoid.iter().all(|s| !s.contains(x))
    };
    let bound = clip_bound(hs);
    match dim {
        1 => {
            let (lo, hi) = clip_interval(hs, bound);
            if lo > hi + CLIP_EPS {
                return Ok(None);
            }
            Ok(segment_witness(&[vec![lo], vec![hi]], &point_ok))
        }
        2 => {
            let poly = clip_polygon(hs, bound);
            if poly.is_empty() {
                return Ok(None);
            }
            let area = polygon_area(&poly);
            // Diameter endpoints classify segments and points.
            let (u, v) = diameter(&poly);
            let diam = dist(&u, &v);
            if area > CLIP_EPS * bound {
                // Full-dimensional: the centroid is interior, hence strictly
                // inside every face; dodge excluded points by blending.
                let c = centroid(&poly);
                if point_ok(&c) {
                    return Ok(Some(c));
                }
                for p in &poly {
                    for lambda in [0.5, 0.25, 0.75, 0.1, 0.9] {
                        let x = vec![
                            c[0] + lambda * (p[0] - c[0]),
                            c[1] + lambda * (p[1] - c[1]),
                        ];
                        if point_ok(&x) {
                            return Ok(Some(x));
                        }
                    }
                }
                return Ok(None);
            }
            if diam > CLIP_EPS * bound {
                return Ok(segment_witness(&[u, v], &point_ok));
            }
            if point_ok(&u) {
                Ok(Some(u))
            } else {
                Ok(None)
            }
        }
        d => Err(GeometryError::UnsupportedDimension(d)),
    }
}

/// Search a closed segment for a point passing the membership predicate.
/// Candidates are the endpoints plus a grid of midpoints fine enough to fall
/// between the breakpoints induced by strict faces and excluded points.
fn segment_witness(seg: &[Vec<f64>; 2], point_ok: &dyn Fn(&[f64]) -> bool) -> Option<Vec<f64>> {
    let u = &seg[0];
    let v = &seg[1];
    let dir: Vec<f64> = u.iter().zip(v).map(|(a, b)| b - a).collect();
    let len = dot(&dir, &dir).sqrt();
    let mut ts = vec![0.0, 1.0, 0.5];
    if len > 0.0 {
        for k in 1..64 {
            ts.push(k as f64 / 64.0);
        }
        // Points a few tolerances away from the endpoints catch half-open
        // faces whose interior is macroscopic.
        for eps in [4.0 * EPS_GEO, 1e-6, 1e-3] {
            let dt = eps / len;
            if dt < 0.5 {
                ts.push(dt);
                ts.push(1.0 - dt);
            }
        }
    }
    for t in ts {
        let x: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
        if point_ok(&x) {
            return Some(x);
        }
    }
    None
}

fn centroid(poly: &[[f64; 2]]) -> Vec<f64> {
    let k = poly.len() as f64;
    let mut c = [0.0, 0.0];
    for p in poly {
        c[0] += p[0];
        c[1] += p[1];
    }
    vec![c[0] / k, c[1] / k]
}

fn diameter(poly: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let mut best = (vec![poly[0][0], poly[0][1]], vec![poly[0][0], poly[0][1]]);
    let mut best_d = -1.0;
    for i in 0..poly.len() {
        for j in i..poly.len() {
            let d = dist(&poly[i], &poly[j]);
            if d > best_d {
                best_d = d;
                best = (
                    vec![poly[i][0], poly[i][1]],
                    vec![poly[j][0], poly[j][1]],
                );
            }
        }
    }
    best
}
