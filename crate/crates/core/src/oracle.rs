//! Exact 2-D polytope geometry in vertex form.
//!
//! This module exists to falsify the implicit set calculus, not to compete
//! with it: everything here is plain computational geometry on convex CCW
//! polygons, restricted to the plane where explicit construction is cheap
//! and checkable by eye. Halfspace intersections are built from pairwise row
//! intersections rather than box clipping, which keeps vertex coordinates at
//! solve precision. Boundary membership counts as inside with tolerance
//! 1e-9 (all sets in this crate are closed).

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use thiserror::Error;

use crate::model::HPolyhedron;
use crate::setcalc::ImplicitRpiSet;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("halfspace intersection is unbounded")]
    Unbounded,
    #[error("{0}")]
    Degenerate(String),
}

/// A convex polygon: counterclockwise vertex list, no duplicates or
/// collinear triples within 1e-12. One- and two-vertex cases (points,
/// segments) are carried through so images under singular maps stay usable.
#[derive(Debug, Clone)]
pub struct Polygon2D {
    vertices: Vec<Vector2<f64>>,
}

impl Polygon2D {
    /// Convex hull of arbitrary points.
    pub fn from_points(points: &[Vector2<f64>]) -> Result<Self, OracleError> {
        if points.is_empty() {
            return Err(OracleError::Degenerate("no points".into()));
        }
        Ok(Self {
            vertices: convex_hull(points),
        })
    }

    pub fn vertices(&self) -> &[Vector2<f64>] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Image under a linear map; may collapse to a segment or point.
    pub fn image(&self, m: &Matrix2<f64>) -> Polygon2D {
        let pts: Vec<Vector2<f64>> = self.vertices.iter().map(|v| m * v).collect();
        Polygon2D {
            vertices: convex_hull(&pts),
        }
    }

    pub fn scale(&self, t: f64) -> Polygon2D {
        Polygon2D {
            vertices: self.vertices.iter().map(|v| v * t).collect(),
        }
    }

    /// Canonical form for comparisons: rotate so the lexicographically
    /// smallest vertex comes first.
    pub fn canonical(&self) -> Polygon2D {
        let mut vs = self.vertices.clone();
        if let Some(pos) = (0..vs.len()).min_by(|&a, &b| lex_cmp(&vs[a], &vs[b])) {
            vs.rotate_left(pos);
        }
        Polygon2D { vertices: vs }
    }
}

fn lex_cmp(a: &Vector2<f64>, b: &Vector2<f64>) -> std::cmp::Ordering {
    a.x.partial_cmp(&b.x)
        .unwrap()
        .then(a.y.partial_cmp(&b.y).unwrap())
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Andrew monotone chain with collinear removal at 1e-12 relative.
fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(lex_cmp);
    pts.dedup_by(|a, b| (*a - *b).amax() <= 1e-12 * (1.0 + a.amax().max(b.amax())));
    if pts.len() <= 2 {
        return pts;
    }
    let turn_eps = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        let scale = 1.0 + o.amax().max(a.amax()).max(b.amax());
        1e-12 * scale * scale
    };
    let mut lower: Vec<Vector2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2
            && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p)
                <= turn_eps(&lower[lower.len() - 2], &lower[lower.len() - 1], p)
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2
            && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p)
                <= turn_eps(&upper[upper.len() - 2], &upper[upper.len() - 1], p)
        {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        // All points were collinear; keep the extreme pair.
        let mut extremes = vec![pts[0], pts[pts.len() - 1]];
        extremes.dedup_by(|a, b| (*a - *b).amax() <= 1e-12);
        return extremes;
    }
    lower
}

/// Exact Minkowski sum. Non-degenerate inputs run the CCW edge-merge walk
/// (vertex count bounded by |P| + |Q|); points and segments fall back to a
/// hull of pairwise sums, which is exact for convex inputs.
pub fn minkowski_sum_2d(p: &Polygon2D, q: &Polygon2D) -> Polygon2D {
    if p.num_vertices() < 3 || q.num_vertices() < 3 {
        let mut sums = Vec::with_capacity(p.num_vertices() * q.num_vertices());
        for a in &p.vertices {
            for b in &q.vertices {
                sums.push(a + b);
            }
        }
        return Polygon2D {
            vertices: convex_hull(&sums),
        };
    }
    let a = reorder_lowest(&p.vertices);
    let b = reorder_lowest(&q.vertices);
    let (na, nb) = (a.len(), b.len());
    let mut result = Vec::with_capacity(na + nb);
    let (mut i, mut j) = (0usize, 0usize);
    while i < na || j < nb {
        result.push(a[i % na] + b[j % nb]);
        let ea = a[(i + 1) % na] - a[i % na];
        let eb = b[(j + 1) % nb] - b[j % nb];
        let turn = ea.x * eb.y - ea.y * eb.x;
        if j >= nb {
            i += 1;
        } else if i >= na {
            j += 1;
        } else {
            // Parallel edges (turn = 0) advance both sides and merge.
            if turn >= 0.0 {
                i += 1;
            }
            if turn <= 0.0 {
                j += 1;
            }
        }
    }
    Polygon2D {
        vertices: convex_hull(&result),
    }
}

/// Rotate a CCW vertex list so the bottom-most (then left-most) vertex leads.
fn reorder_lowest(vs: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut out = vs.to_vec();
    let mut pos = 0;
    for (i, v) in out.iter().enumerate() {
        if v.y < out[pos].y || (v.y == out[pos].y && v.x < out[pos].x) {
            pos = i;
        }
    }
    out.rotate_left(pos);
    out
}

/// Membership with boundary counted inside (tolerance 1e-9, scaled).
pub fn member_2d(p: &Polygon2D, x: &Vector2<f64>) -> bool {
    let tol = 1e-9 * (1.0 + x.amax());
    match p.num_vertices() {
        0 => false,
        1 => (p.vertices[0] - x).amax() <= tol,
        2 => {
            let (a, b) = (p.vertices[0], p.vertices[1]);
            let ab = b - a;
            let len = ab.norm();
            if len <= tol {
                return (a - x).amax() <= tol;
            }
            let t = ((x - a).dot(&ab) / (len * len)).clamp(0.0, 1.0);
            ((a + ab * t) - x).norm() <= tol
        }
        n => {
            for i in 0..n {
                let a = p.vertices[i];
                let b = p.vertices[(i + 1) % n];
                let edge_len = (b - a).norm();
                if cross(&a, &b, x) < -tol * edge_len.max(1.0) {
                    return false;
                }
            }
            true
        }
    }
}

/// Support value `max_v yᵀv` over the vertex list.
pub fn support_2d(p: &Polygon2D, y: &Vector2<f64>) -> f64 {
    p.vertices
        .iter()
        .map(|v| y.dot(v))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Bounded part of `⋂ {x : nᵢᵀx ≤ bᵢ}` by pairwise row intersection.
/// Unboundedness is decided first from the angular span of the normals
/// (a gap of π or more leaves a free recession direction).
pub fn intersect_halfspaces_2d(rows: &HPolyhedron) -> Result<Polygon2D, OracleError> {
    if rows.dim() != 2 {
        return Err(OracleError::Degenerate("rows must live in R²".into()));
    }
    let q = rows.num_rows();
    let normals: Vec<Vector2<f64>> = (0..q)
        .map(|i| {
            let r = rows.normal_row(i);
            Vector2::new(r[0], r[1])
        })
        .collect();
    if normals.iter().any(|n| n.norm() == 0.0) {
        return Err(OracleError::Degenerate("zero normal row".into()));
    }

    let mut angles: Vec<f64> = normals.iter().map(|n| n.y.atan2(n.x)).collect();
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut max_gap: f64 = 0.0;
    for i in 0..angles.len() {
        let next = if i + 1 < angles.len() {
            angles[i + 1]
        } else {
            angles[0] + std::f64::consts::TAU
        };
        max_gap = max_gap.max(next - angles[i]);
    }
    if angles.len() < 2 || max_gap >= std::f64::consts::PI - 1e-12 {
        return Err(OracleError::Unbounded);
    }

    let mut candidates: Vec<Vector2<f64>> = Vec::new();
    for i in 0..q {
        for j in (i + 1)..q {
            let m = Matrix2::new(normals[i].x, normals[i].y, normals[j].x, normals[j].y);
            let det = m.determinant();
            let scale = normals[i].amax().max(normals[j].amax());
            if det.abs() <= 1e-14 * scale * scale {
                continue;
            }
            let rhs = Vector2::new(rows.offsets()[i], rows.offsets()[j]);
            let x = m.try_inverse().expect("checked determinant") * rhs;
            let feas_tol = 1e-9 * (1.0 + x.amax());
            let feasible = (0..q).all(|r| normals[r].dot(&x) <= rows.offsets()[r] + feas_tol);
            if feasible {
                candidates.push(x);
            }
        }
    }
    if candidates.is_empty() {
        return Err(OracleError::Degenerate(
            "no vertices: intersection empty or lower-dimensional".into(),
        ));
    }
    Polygon2D::from_points(&candidates)
}

/// Explicit construction of the tube cross-section in the plane:
/// `(1−α)⁻¹ (W ⊕ A_K·W ⊕ … ⊕ A_K^{N_S−1}·W)` by repeated vertex transforms
/// and Minkowski sums, scaling applied last.
pub fn explicit_s_2d(s: &ImplicitRpiSet) -> Result<Polygon2D, OracleError> {
    if s.state_dim() != 2 {
        return Err(OracleError::Degenerate("explicit S only in R²".into()));
    }
    let w_poly = intersect_halfspaces_2d(s.w())?;
    let a_k = Matrix2::new(
        s.a_k()[(0, 0)],
        s.a_k()[(0, 1)],
        s.a_k()[(1, 0)],
        s.a_k()[(1, 1)],
    );
    let mut sum = w_poly.clone();
    let mut power = a_k;
    for _ in 1..s.n_s() {
        let term = w_poly.image(&power);
        sum = minkowski_sum_2d(&sum, &term);
        power = a_k * power;
    }
    Ok(sum.scale(s.scale()))
}

/// Convenience bridges between the crate's dense types and this module.
pub fn vec2(v: &DVector<f64>) -> Vector2<f64> {
    Vector2::new(v[0], v[1])
}

pub fn mat2(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_box() -> Polygon2D {
        Polygon2D::from_points(&[
            Vector2::new(1.0, 1.0),
            Vector2::new(-1.0, 1.0),
            Vector2::new(-1.0, -1.0),
            Vector2::new(1.0, -1.0),
        ])
        .unwrap()
    }

    fn diamond(r: f64) -> Polygon2D {
        Polygon2D::from_points(&[
            Vector2::new(r, 0.0),
            Vector2::new(0.0, r),
            Vector2::new(-r, 0.0),
            Vector2::new(0.0, -r),
        ])
        .unwrap()
    }

    #[test]
    fn box_plus_box_doubles() {
        let sum = minkowski_sum_2d(&unit_box(), &unit_box());
        assert_eq!(sum.num_vertices(), 4);
        for dir in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            let y = Vector2::new(dir[0], dir[1]);
            assert_relative_eq!(
                support_2d(&sum, &y),
                2.0 * support_2d(&unit_box(), &y),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn box_plus_point_translates() {
        let point = Polygon2D::from_points(&[Vector2::new(1.0, 0.0)]).unwrap();
        let sum = minkowski_sum_2d(&unit_box(), &point);
        assert_eq!(sum.num_vertices(), 4);
        assert!(member_2d(&sum, &Vector2::new(2.0, 1.0)));
        assert!(!member_2d(&sum, &Vector2::new(-1.5, 0.0)));
    }

    #[test]
    fn box_plus_diamond_support_is_sum_of_norms() {
        let sum = minkowski_sum_2d(&unit_box(), &diamond(1.0));
        assert_eq!(sum.num_vertices(), 8);
        for k in 0..16 {
            let theta = std::f64::consts::TAU * k as f64 / 16.0;
            let y = Vector2::new(theta.cos(), theta.sin());
            let expected = y.x.abs() + y.y.abs() + y.amax();
            assert_relative_eq!(support_2d(&sum, &y), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn membership_and_support_basics() {
        let b = unit_box();
        assert!(member_2d(&b, &Vector2::new(1.0, 1.0))); // boundary is inside
        assert!(!member_2d(&b, &Vector2::new(1.0 + 1e-6, 1.0)));
        assert_relative_eq!(support_2d(&b, &Vector2::new(1.0, 1.0)), 2.0);
    }

    #[test]
    fn halfspace_intersection_clips_box() {
        use nalgebra::DMatrix;
        let rows = DMatrix::from_row_slice(5, 2, &[
            1.0, 0.0, //
            -1.0, 0.0, //
            0.0, 1.0, //
            0.0, -1.0, //
            2.0, 0.0, // x₁ ≤ 0.5 in offset-1 form
        ]);
        let p = HPolyhedron::from_unit_rows(rows).unwrap();
        let poly = intersect_halfspaces_2d(&p).unwrap();
        assert_eq!(poly.num_vertices(), 4);
        assert!(member_2d(&poly, &Vector2::new(0.5, 1.0)));
        assert!(!member_2d(&poly, &Vector2::new(0.6, 0.0)));
        assert_relative_eq!(support_2d(&poly, &Vector2::new(1.0, 0.0)), 0.5, epsilon = 1e-12);
        assert_relative_eq!(support_2d(&poly, &Vector2::new(-1.0, 0.0)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn halfspace_intersection_flags_unbounded_slab() {
        use nalgebra::DMatrix;
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let p = HPolyhedron::from_unit_rows(rows).unwrap();
        assert!(matches!(
            intersect_halfspaces_2d(&p),
            Err(OracleError::Unbounded)
        ));
    }

    #[test]
    fn explicit_s_matches_closed_form() {
        use nalgebra::{DMatrix, DVector};
        // diag(0.5) with W = B∞, N_S = 2, α = 0.25: S = 2·B∞.
        let s = ImplicitRpiSet::from_certified_parts(
            DMatrix::from_diagonal(&DVector::from_row_slice(&[0.5, 0.5])),
            DMatrix::zeros(1, 2),
            HPolyhedron::inf_ball(2),
            0.25,
            2,
        )
        .unwrap();
        let poly = explicit_s_2d(&s).unwrap();
        assert_eq!(poly.num_vertices(), 4);
        for v in poly.vertices() {
            assert_relative_eq!(v.x.abs(), 2.0, epsilon = 1e-9);
            assert_relative_eq!(v.y.abs(), 2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn explicit_s_degenerate_is_w() {
        use nalgebra::DMatrix;
        let s = ImplicitRpiSet::from_certified_parts(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(1, 2),
            HPolyhedron::inf_ball(2),
            0.0,
            1,
        )
        .unwrap();
        let poly = explicit_s_2d(&s).unwrap();
        assert_eq!(poly.num_vertices(), 4);
        assert_relative_eq!(support_2d(&poly, &Vector2::new(1.0, 0.0)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn minkowski_commutes_and_associates() {
        let a = unit_box();
        let b = diamond(0.7);
        let c = Polygon2D::from_points(&[
            Vector2::new(0.2, 0.1),
            Vector2::new(-0.3, 0.4),
            Vector2::new(0.0, -0.5),
        ])
        .unwrap();
        let ab = minkowski_sum_2d(&a, &b).canonical();
        let ba = minkowski_sum_2d(&b, &a).canonical();
        assert_eq!(ab.num_vertices(), ba.num_vertices());
        for (u, v) in ab.vertices().iter().zip(ba.vertices()) {
            assert_relative_eq!((u - v).amax(), 0.0, epsilon = 1e-10);
        }
        let ab_c = minkowski_sum_2d(&minkowski_sum_2d(&a, &b), &c).canonical();
        let a_bc = minkowski_sum_2d(&a, &minkowski_sum_2d(&b, &c)).canonical();
        assert_eq!(ab_c.num_vertices(), a_bc.num_vertices());
        for (u, v) in ab_c.vertices().iter().zip(a_bc.vertices()) {
            assert_relative_eq!((u - v).amax(), 0.0, epsilon = 1e-10);
        }
    }
}
