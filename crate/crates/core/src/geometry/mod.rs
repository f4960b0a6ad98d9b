//! Exact polytope arithmetic in low dimension.
//!
//! Sets are stored in halfspace form `{x : normals·x ≤ offsets}` with unit-norm rows.
//! Vertices are enumerated on first use and cached. Every operation returns a new
//! value; polytopes are never mutated after construction.

mod hull;
mod json;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
pub(crate) use crate::linalg::row_dot;

pub use json::PolytopeJson;

/// Facet satisfaction tolerance.
pub const FACET_TOL: f64 = 1e-9;
/// Distance below which two vertices are considered identical.
pub const DEDUP_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Polytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
    dim: usize,
    empty: bool,
    vertices: OnceLock<Vec<DVector<f64>>>,
}

impl PartialEq for Polytope {
    /// Set equality up to `DEDUP_TOL`.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.is_subset_of(other, DEDUP_TOL)
            && other.is_subset_of(self, DEDUP_TOL)
    }
}

impl Polytope {
    /// Builds `{x : normals·x ≤ offsets}`. Rows are normalized; all-zero rows are
    /// dropped when trivially satisfied and make the set empty otherwise.
    pub fn from_halfspaces(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        let (m, dim) = normals.shape();
        if offsets.len() != m {
            return Err(Error::DimensionMismatch {
                context: "polytope offsets",
                expected: m,
                got: offsets.len(),
            });
        }
        if dim == 0 {
            return Err(Error::InvalidPolytope("zero-dimensional ambient space".into()));
        }
        if normals.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolytope("non-finite coefficient".into()));
        }
        let mut rows: Vec<DVector<f64>> = Vec::with_capacity(m);
        let mut offs: Vec<f64> = Vec::with_capacity(m);
        let mut trivially_empty = false;
        for i in 0..m {
            let row = normals.row(i).transpose();
            let norm = row.norm();
            if norm <= 1e-14 {
                trivially_empty |= offsets[i] < -FACET_TOL;
                continue;
            }
            rows.push(row / norm);
            offs.push(offsets[i] / norm);
        }
        if trivially_empty {
            return Ok(Self::empty(dim));
        }
        if !positively_spanning(dim, &rows) {
            return Err(Error::Unbounded);
        }
        Ok(Self::from_unit_rows(dim, &rows, offs, None))
    }

    fn from_unit_rows(
        dim: usize,
        rows: &[DVector<f64>],
        offsets: Vec<f64>,
        vertices: Option<Vec<DVector<f64>>>,
    ) -> Self {
        let normals = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        let cache = OnceLock::new();
        let empty = matches!(&vertices, Some(v) if v.is_empty());
        if let Some(v) = vertices {
            let _ = cache.set(v);
        }
        Polytope {
            normals,
            offsets: DVector::from_vec(offsets),
            dim,
            empty,
            vertices: cache,
        }
    }

    /// Axis-aligned box `[lo, hi]`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let dim = lo.len();
        if hi.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "box bounds",
                expected: dim,
                got: hi.len(),
            });
        }
        if dim == 0 {
            return Err(Error::InvalidPolytope("zero-dimensional box".into()));
        }
        if lo.iter().zip(hi).any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h) {
            return Err(Error::InvalidPolytope("box requires finite lo ≤ hi".into()));
        }
        let mut rows = Vec::with_capacity(2 * dim);
        let mut offs = Vec::with_capacity(2 * dim);
        for j in 0..dim {
            let mut e = DVector::zeros(dim);
            e[j] = 1.0;
            rows.push(e.clone());
            offs.push(hi[j]);
            rows.push(-e);
            offs.push(-lo[j]);
        }
        let mut corners: Vec<DVector<f64>> = (0..1usize << dim)
            .map(|mask| DVector::from_fn(dim, |j, _| if mask >> j & 1 == 1 { hi[j] } else { lo[j] }))
            .collect();
        if lo.iter().zip(hi).any(|(l, h)| h - l <= DEDUP_TOL) {
            corners = hull::dedup_points(&corners);
        }
        Ok(Self::from_unit_rows(dim, &rows, offs, Some(corners)))
    }

    /// Symmetric box `[-r, r]`.
    pub fn symmetric_box(radius: &[f64]) -> Result<Self> {
        let lo: Vec<f64> = radius.iter().map(|r| -r).collect();
        Self::from_box(&lo, radius)
    }

    /// Singleton `{x}`.
    pub fn point(x: &[f64]) -> Result<Self> {
        Self::from_box(x, x)
    }

    /// Convex hull of a finite point set.
    pub fn from_vertices(dim: usize, points: &[DVector<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPolytope("zero-dimensional ambient space".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "vertex",
                expected: dim,
                got: p.len(),
            });
        }
        if points.is_empty() {
            return Ok(Self::empty(dim));
        }
        let h = hull::convex_hull(dim, points);
        Ok(Self::from_unit_rows(dim, &h.normals, h.offsets, Some(h.vertices)))
    }

    /// Explicitly flagged empty set.
    pub fn empty(dim: usize) -> Self {
        let mut e = DVector::zeros(dim);
        e[0] = 1.0;
        Self::from_unit_rows(dim, &[e.clone(), -e], vec![-1.0, -1.0], Some(Vec::new()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn num_facets(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.empty || self.vertices().is_empty()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        self.vertices
            .get_or_init(|| hull::enumerate_vertices(&self.normals, &self.offsets))
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        assert_eq!(x.len(), self.dim, "point dimension");
        !self.empty && (0..self.num_facets()).all(|i| row_dot(&self.normals, i, x) <= self.offsets[i] + tol)
    }

    /// Largest facet violation at `x` (non-positive when `x` is inside).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.num_facets())
            .map(|i| row_dot(&self.normals, i, x) - self.offsets[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max { d·x : x ∈ self }`.
    pub fn support(&self, direction: &DVector<f64>) -> Result<f64> {
        self.check_dim(direction.len(), "support direction")?;
        let verts = self.vertices();
        if self.empty || verts.is_empty() {
            return Err(Error::EmptySet);
        }
        Ok(verts
            .iter()
            .map(|v| v.dot(direction))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Minkowski sum `self ⊕ other`.
    pub fn minkowski_sum(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim(other.dim, "minkowski_sum")?;
        if self.is_empty() || other.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut sums = Vec::with_capacity(self.vertices().len() * other.vertices().len());
        for a in self.vertices() {
            for b in other.vertices() {
                sums.push(a + b);
            }
        }
        Polytope::from_vertices(self.dim, &sums)
    }

    /// Pontryagin difference `self ⊖ other = {x : x ⊕ other ⊆ self}`.
    ///
    /// Each facet offset is tightened by the support of `other` along its normal.
    /// Returns the flagged empty set when the tightened system is infeasible.
    pub fn pontryagin_diff(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim(other.dim, "pontryagin_diff")?;
        if other.is_empty() {
            return Err(Error::EmptySet);
        }
        if self.is_empty() {
            return Ok(Polytope::empty(self.dim));
        }
        let mut offsets = Vec::with_capacity(self.num_facets());
        for i in 0..self.num_facets() {
            let n = self.normals.row(i).transpose();
            offsets.push(self.offsets[i] - other.support(&n)?);
        }
        let rows: Vec<DVector<f64>> = (0..self.num_facets())
            .map(|i| self.normals.row(i).transpose())
            .collect();
        let out = Self::from_unit_rows(self.dim, &rows, offsets, None);
        if out.vertices().is_empty() {
            return Ok(Polytope::empty(self.dim));
        }
        Ok(out)
    }

    /// Image `{m·x : x ∈ self}`; `m` may be rectangular or rank-deficient.
    pub fn affine_image(&self, m: &DMatrix<f64>) -> Result<Polytope> {
        self.check_dim(m.ncols(), "affine_image")?;
        if self.is_empty() {
            return Ok(Polytope::empty(m.nrows()));
        }
        let pts: Vec<DVector<f64>> = self.vertices().iter().map(|v| m * v).collect();
        Polytope::from_vertices(m.nrows(), &pts)
    }

    /// Preimage `{x : m·x ∈ self}` (dimension `m.ncols()`).
    pub fn preimage(&self, m: &DMatrix<f64>) -> Result<Polytope> {
        self.check_dim(m.nrows(), "preimage")?;
        Polytope::from_halfspaces(&self.normals * m, self.offsets.clone())
    }

    pub fn intersection(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim(other.dim, "intersection")?;
        if self.is_empty() || other.is_empty() {
            return Ok(Polytope::empty(self.dim));
        }
        let rows: Vec<DVector<f64>> = (0..self.num_facets())
            .map(|i| self.normals.row(i).transpose())
            .chain((0..other.num_facets()).map(|i| other.normals.row(i).transpose()))
            .collect();
        let offsets: Vec<f64> = self.offsets.iter().chain(other.offsets.iter()).copied().collect();
        let out = Self::from_unit_rows(self.dim, &rows, offsets, None);
        if out.vertices().is_empty() {
            return Ok(Polytope::empty(self.dim));
        }
        Ok(out)
    }

    /// `ρ·self` for `ρ ≥ 0`.
    pub fn scaled(&self, rho: f64) -> Polytope {
        assert!(rho >= 0.0 && rho.is_finite(), "scale factor must be finite and non-negative");
        if self.is_empty() {
            return self.clone();
        }
        let verts: Vec<DVector<f64>> = self.vertices().iter().map(|v| v * rho).collect();
        if rho <= DEDUP_TOL {
            return Polytope::from_vertices(self.dim, &verts).expect("valid scaled polytope");
        }
        let rows: Vec<DVector<f64>> = (0..self.num_facets())
            .map(|i| self.normals.row(i).transpose())
            .collect();
        let offsets = self.offsets.iter().map(|o| o * rho).collect();
        Self::from_unit_rows(self.dim, &rows, offsets, Some(verts))
    }

    /// Irredundant representation rebuilt from the vertex set.
    pub fn minimal(&self) -> Polytope {
        if self.is_empty() {
            return Polytope::empty(self.dim);
        }
        Polytope::from_vertices(self.dim, self.vertices()).expect("vertices share dimension")
    }

    /// True iff every vertex of `self` satisfies every facet of `other` within `tol`.
    ///
    /// # Panics
    /// If the dimensions differ.
    pub fn is_subset_of(&self, other: &Polytope, tol: f64) -> bool {
        assert_eq!(self.dim, other.dim, "subset test on polytopes of different dimension");
        if self.is_empty() {
            return true;
        }
        if other.is_empty() {
            return false;
        }
        self.vertices().iter().all(|v| other.contains(v, tol))
    }

    /// Smallest facet offset; positive iff the origin is an interior point.
    pub fn origin_margin(&self) -> f64 {
        if self.is_empty() {
            return f64::NEG_INFINITY;
        }
        self.offsets.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Per-coordinate bounds of the vertex set.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for v in self.vertices() {
            for j in 0..self.dim {
                lo[j] = lo[j].min(v[j]);
                hi[j] = hi[j].max(v[j]);
            }
        }
        Ok((lo, hi))
    }

    fn check_dim(&self, got: usize, context: &'static str) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }
}

/// Whether the unit normals positively span `R^dim`, which makes any
/// polyhedron with these normals bounded.
fn positively_spanning(dim: usize, rows: &[DVector<f64>]) -> bool {
    if rows.len() <= dim {
        return false;
    }
    let h = hull::convex_hull(dim, rows);
    // The normals' hull must be full-dimensional and hold the origin strictly inside.
    let full = !h.normals.is_empty()
        && h.normals.iter().zip(&h.offsets).all(|(_, &o)| o > 1e-12)
        && DMatrix::from_columns(&h.normals).rank(1e-9) == dim;
    full
}
