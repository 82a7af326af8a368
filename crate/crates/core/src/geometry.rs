//! H-representation polytopes `{x : F x <= b}` and the operations the
//! constraint and invariant-set machinery is built on: membership, facet
//! iteration, Cartesian products, Fourier-Motzkin projection, redundancy
//! removal, and support-function based set comparison.
//!
//! Support maximizations and redundancy checks are solved with the embedded
//! QP solver in LP mode (zero quadratic term, tolerances tightened to 1e-8).
//! Polytopes are immutable after construction; all operations are re-entrant.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::qp::{self, QpError, SolveStatus};

/// Row cap for intermediate Fourier-Motzkin products.
pub const DEFAULT_FM_CAP: usize = 20_000;

const CANON_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lower bound exceeds upper bound in coordinate {0}")]
    BoundOrder(usize),
    #[error("polytope is empty")]
    EmptyPolytope,
    #[error("polytope is unbounded in the queried direction")]
    Unbounded,
    #[error("projection exceeded {cap} rows while eliminating coordinate {step}")]
    ProjectionBlowup { step: usize, cap: usize },
    #[error("LP solver did not reach a verdict (status {0:?})")]
    SolverStalled(SolveStatus),
    #[error(transparent)]
    Solver(#[from] QpError),
}

/// Convex polytope in H-representation `{x : F x <= b}`.
#[derive(Debug, Clone)]
pub struct Polytope {
    f: DMatrix<f64>,
    b: DVector<f64>,
}

impl Polytope {
    pub fn from_parts(f: DMatrix<f64>, b: DVector<f64>) -> Result<Self, GeometryError> {
        if f.nrows() != b.len() {
            return Err(GeometryError::Dimension(format!(
                "{} facet rows but {} offsets",
                f.nrows(),
                b.len()
            )));
        }
        if f.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::Dimension("non-finite facet data".into()));
        }
        Ok(Self { f, b })
    }

    /// Axis-aligned box `lower <= x <= upper`, emitted as `2n` facets
    /// (upper rows first, then lower rows).
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self, GeometryError> {
        if lower.len() != upper.len() {
            return Err(GeometryError::Dimension("bound lengths differ".into()));
        }
        let n = lower.len();
        for i in 0..n {
            if lower[i] > upper[i] {
                return Err(GeometryError::BoundOrder(i));
            }
        }
        let mut f = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            f[(i, i)] = 1.0;
            b[i] = upper[i];
            f[(n + i, i)] = -1.0;
            b[n + i] = -lower[i];
        }
        Ok(Self { f, b })
    }

    /// Canonical empty polytope `{x : 0 <= -1}`.
    pub fn empty(dim: usize) -> Self {
        Self {
            f: DMatrix::zeros(1, dim),
            b: DVector::from_element(1, -1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.f.nrows()
    }

    pub fn facet_matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn facet(&self, i: usize) -> (RowDVector<f64>, f64) {
        (RowDVector::from(self.f.row(i)), self.b[i])
    }

    /// A zero facet row with negative offset marks trivial infeasibility.
    pub fn is_trivially_empty(&self) -> bool {
        (0..self.num_facets()).any(|i| self.f.row(i).amax() == 0.0 && self.b[i] < 0.0)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        let fx = &self.f * x;
        (0..self.num_facets()).all(|i| fx[i] <= self.b[i] + tol)
    }

    /// Stacks the facets of `self` and `other` (set intersection).
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope, GeometryError> {
        if self.dim() != other.dim() {
            return Err(GeometryError::Dimension("intersect dims differ".into()));
        }
        let m = self.num_facets() + other.num_facets();
        let mut f = DMatrix::zeros(m, self.dim());
        let mut b = DVector::zeros(m);
        f.view_mut((0, 0), (self.num_facets(), self.dim()))
            .copy_from(&self.f);
        f.view_mut((self.num_facets(), 0), (other.num_facets(), self.dim()))
            .copy_from(&other.f);
        b.rows_mut(0, self.num_facets()).copy_from(&self.b);
        b.rows_mut(self.num_facets(), other.num_facets())
            .copy_from(&other.b);
        Ok(Polytope { f, b })
    }

    /// Cartesian product: `{(x, y) : x in self, y in other}`.
    pub fn product(&self, other: &Polytope) -> Polytope {
        let n = self.dim() + other.dim();
        let m = self.num_facets() + other.num_facets();
        let mut f = DMatrix::zeros(m, n);
        let mut b = DVector::zeros(m);
        f.view_mut((0, 0), (self.num_facets(), self.dim()))
            .copy_from(&self.f);
        f.view_mut(
            (self.num_facets(), self.dim()),
            (other.num_facets(), other.dim()),
        )
        .copy_from(&other.f);
        b.rows_mut(0, self.num_facets()).copy_from(&self.b);
        b.rows_mut(self.num_facets(), other.num_facets())
            .copy_from(&other.b);
        Polytope { f, b }
    }

    /// Normalizes facet rows to unit l2 norm. Zero rows with nonnegative
    /// offset are dropped (vacuous); a zero row with negative offset
    /// collapses the set to the canonical empty polytope.
    pub fn normalized(&self) -> Polytope {
        let mut rows: Vec<(RowDVector<f64>, f64)> = Vec::with_capacity(self.num_facets());
        for i in 0..self.num_facets() {
            let row = RowDVector::from(self.f.row(i));
            let norm = row.norm();
            if norm < 1e-12 {
                if self.b[i] < 0.0 {
                    return Polytope::empty(self.dim());
                }
                continue;
            }
            rows.push((row / norm, self.b[i] / norm));
        }
        Self::from_rows(self.dim(), rows)
    }

    /// Canonical form: normalized rows, sorted lexicographically with
    /// tolerance, duplicates merged keeping the tighter offset.
    pub fn canonicalize(&self) -> Polytope {
        let normalized = self.normalized();
        let mut rows: Vec<(RowDVector<f64>, f64)> = (0..normalized.num_facets())
            .map(|i| normalized.facet(i))
            .collect();
        rows.sort_by(|a, b| lex_cmp(&a.0, a.1, &b.0, b.1));
        let mut kept: Vec<(RowDVector<f64>, f64)> = Vec::with_capacity(rows.len());
        for (row, off) in rows {
            if let Some(last) = kept.last_mut() {
                if (&last.0 - &row).amax() <= CANON_TOL {
                    last.1 = last.1.min(off);
                    continue;
                }
            }
            kept.push((row, off));
        }
        Self::from_rows(normalized.dim(), kept)
    }

    fn from_rows(dim: usize, rows: Vec<(RowDVector<f64>, f64)>) -> Polytope {
        let m = rows.len();
        let mut f = DMatrix::zeros(m, dim);
        let mut b = DVector::zeros(m);
        for (i, (row, off)) in rows.into_iter().enumerate() {
            f.row_mut(i).copy_from(&row);
            b[i] = off;
        }
        Polytope { f, b }
    }

    /// Support value `max_{x in P} d'x` via an LP solve.
    pub fn support(&self, direction: &DVector<f64>) -> Result<f64, GeometryError> {
        if direction.len() != self.dim() {
            return Err(GeometryError::Dimension("support direction dim".into()));
        }
        if self.is_trivially_empty() {
            return Err(GeometryError::EmptyPolytope);
        }
        let sol = qp::solve_lp(
            -direction.clone(),
            self.f.clone(),
            DVector::from_element(self.num_facets(), f64::NEG_INFINITY),
            self.b.clone(),
        )?;
        match sol.status {
            SolveStatus::Solved => Ok(direction.dot(&sol.z)),
            SolveStatus::PrimalInfeasible => Err(GeometryError::EmptyPolytope),
            SolveStatus::DualInfeasible => Err(GeometryError::Unbounded),
            other => Err(GeometryError::SolverStalled(other)),
        }
    }

    /// Emptiness check by a feasibility solve.
    pub fn is_empty(&self) -> Result<bool, GeometryError> {
        if self.is_trivially_empty() {
            return Ok(true);
        }
        if self.num_facets() == 0 {
            return Ok(false);
        }
        let sol = qp::solve_lp(
            DVector::zeros(self.dim()),
            self.f.clone(),
            DVector::from_element(self.num_facets(), f64::NEG_INFINITY),
            self.b.clone(),
        )?;
        match sol.status {
            SolveStatus::Solved => Ok(false),
            SolveStatus::PrimalInfeasible => Ok(true),
            other => Err(GeometryError::SolverStalled(other)),
        }
    }

    /// Axis-aligned bounding box via `2n` support solves.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>), GeometryError> {
        let n = self.dim();
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for i in 0..n {
            let mut dir = DVector::zeros(n);
            dir[i] = 1.0;
            upper[i] = self.support(&dir)?;
            dir[i] = -1.0;
            lower[i] = -self.support(&dir)?;
        }
        Ok((lower, upper))
    }

    /// Exact projection eliminating the last `eliminate` coordinates by
    /// Fourier-Motzkin (last-to-first, redundancy removal after every
    /// elimination). Uses the default row cap of [`DEFAULT_FM_CAP`].
    pub fn fm_project(&self, eliminate: usize) -> Result<Polytope, GeometryError> {
        self.fm_project_capped(eliminate, DEFAULT_FM_CAP)
    }

    pub fn fm_project_capped(
        &self,
        eliminate: usize,
        cap: usize,
    ) -> Result<Polytope, GeometryError> {
        if eliminate == 0 {
            return Ok(self.clone());
        }
        if eliminate >= self.dim() {
            return Err(GeometryError::Dimension(
                "cannot eliminate every coordinate".into(),
            ));
        }
        let target_dim = self.dim() - eliminate;
        let mut current = self.clone();
        for step in 0..eliminate {
            let coord = current.dim() - 1;
            let mut kept: Vec<(RowDVector<f64>, f64)> = Vec::new();
            let mut pos: Vec<(RowDVector<f64>, f64, f64)> = Vec::new();
            let mut neg: Vec<(RowDVector<f64>, f64, f64)> = Vec::new();
            for i in 0..current.num_facets() {
                let (row, off) = current.facet(i);
                let c = row[coord];
                let reduced = RowDVector::from(row.columns(0, coord).clone_owned());
                if c > 1e-12 {
                    pos.push((reduced, off, c));
                } else if c < -1e-12 {
                    neg.push((reduced, off, c));
                } else {
                    kept.push((reduced, off));
                }
            }
            let combos = pos.len() * neg.len();
            if kept.len() + combos > cap {
                return Err(GeometryError::ProjectionBlowup { step, cap });
            }
            for (rp, bp, cp) in &pos {
                for (rn, bn, cn) in &neg {
                    // cp * row_n - cn * row_p eliminates the coordinate
                    let row = rn * *cp - rp * *cn;
                    let off = cp * bn - cn * bp;
                    kept.push((row, off));
                }
            }
            let raw = Polytope::from_rows(coord, kept).canonicalize();
            if raw.is_trivially_empty() {
                return Ok(Polytope::empty(target_dim));
            }
            current = match raw.remove_redundant() {
                Ok(p) => p,
                Err(GeometryError::EmptyPolytope) => return Ok(Polytope::empty(target_dim)),
                Err(e) => return Err(e),
            };
        }
        Ok(current)
    }

    /// Drops every facet that is not tight for some point of the set. The
    /// polytope must be nonempty (checked by a feasibility solve).
    pub fn remove_redundant(&self) -> Result<Polytope, GeometryError> {
        let canon = self.canonicalize();
        if canon.is_empty()? {
            return Err(GeometryError::EmptyPolytope);
        }
        let m = canon.num_facets();
        let mut keep = vec![true; m];
        for i in 0..m {
            // Maximize the candidate facet subject to all other kept rows,
            // with the candidate itself relaxed by one unit to bound the LP.
            let mut rows: Vec<usize> = (0..m).filter(|&j| j != i && keep[j]).collect();
            rows.push(i);
            let mut f = DMatrix::zeros(rows.len(), canon.dim());
            let mut b = DVector::zeros(rows.len());
            for (r, &j) in rows.iter().enumerate() {
                f.row_mut(r).copy_from(&canon.f.row(j));
                b[r] = if j == i { canon.b[j] + 1.0 } else { canon.b[j] };
            }
            let dir = RowDVector::from(canon.f.row(i)).transpose();
            let sol = qp::solve_lp(
                -dir.clone(),
                f,
                DVector::from_element(rows.len(), f64::NEG_INFINITY),
                b,
            )?;
            match sol.status {
                SolveStatus::Solved => {
                    let val = dir.dot(&sol.z);
                    if val <= canon.b[i] + 1e-8 {
                        keep[i] = false;
                    }
                }
                // keep the facet unless proven redundant
                _ => {}
            }
        }
        let rows: Vec<(RowDVector<f64>, f64)> = (0..m)
            .filter(|&i| keep[i])
            .map(|i| canon.facet(i))
            .collect();
        Ok(Polytope::from_rows(canon.dim(), rows))
    }

    /// Mutual containment via per-facet support maximization:
    /// `max_{x in P} f_Q' x <= b_Q + tol` and vice versa.
    pub fn set_equal(&self, other: &Polytope, tol: f64) -> Result<bool, GeometryError> {
        if self.dim() != other.dim() {
            return Err(GeometryError::Dimension("set_equal dims differ".into()));
        }
        if self.is_empty()? || other.is_empty()? {
            return Err(GeometryError::EmptyPolytope);
        }
        Ok(self.contained_in(other, tol)? && other.contained_in(self, tol)?)
    }

    /// `self` is contained in `other` up to `tol`, decided by support solves
    /// against every facet of `other`.
    pub fn contained_in(&self, other: &Polytope, tol: f64) -> Result<bool, GeometryError> {
        for i in 0..other.num_facets() {
            let (row, off) = other.facet(i);
            if row.amax() == 0.0 {
                if off < -tol {
                    return Ok(false);
                }
                continue;
            }
            match self.support(&row.transpose()) {
                Ok(v) => {
                    if v > off + tol {
                        return Ok(false);
                    }
                }
                Err(GeometryError::Unbounded) => return Ok(false),
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }
}

fn lex_cmp(
    a: &RowDVector<f64>,
    ab: f64,
    b: &RowDVector<f64>,
    bb: f64,
) -> std::cmp::Ordering {
    for i in 0..a.len() {
        let d = a[i] - b[i];
        if d.abs() > CANON_TOL {
            return a[i].partial_cmp(&b[i]).unwrap();
        }
    }
    ab.partial_cmp(&bb).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_state_box() {
        let x = Polytope::from_box(&[-8.0, -8.0], &[8.0, 8.0]).unwrap();
        assert_eq!(x.num_facets(), 4);
        assert!(x.contains(&DVector::from_vec(vec![8.0, 8.0]), 1e-12));
        assert!(!x.contains(&DVector::from_vec(vec![8.1, 0.0]), 1e-6));
    }

    #[test]
    fn paper_input_box() {
        let u = Polytope::from_box(&[-4.0], &[4.0]).unwrap();
        assert_eq!(u.num_facets(), 2);
        assert!(u.contains(&DVector::from_vec(vec![-4.0]), 0.0));
    }

    #[test]
    fn degenerate_singleton_box() {
        let p = Polytope::from_box(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(p.contains(&DVector::zeros(2), 0.0));
        assert!(!p.contains(&DVector::from_vec(vec![1e-3, 0.0]), 1e-6));
    }

    #[test]
    fn box_rejects_inverted_bounds() {
        match Polytope::from_box(&[1.0], &[0.0]) {
            Err(GeometryError::BoundOrder(0)) => {}
            other => panic!("expected bound order error, got {other:?}"),
        }
    }

    #[test]
    fn contains_respects_tolerance() {
        let p = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!(p.contains(&DVector::zeros(2), 0.0));
        let tol = 1e-6;
        assert!(!p.contains(&DVector::from_vec(vec![1.0 + 2.0 * tol, 0.0]), tol));
    }

    #[test]
    fn separable_box_projection() {
        // box over (x, u) with independent bounds projects to the x box
        let p = Polytope::from_box(&[-2.0, -1.0], &[3.0, 1.0]).unwrap();
        let proj = p.fm_project(1).unwrap();
        let expected = Polytope::from_box(&[-2.0], &[3.0]).unwrap();
        assert!(proj.set_equal(&expected, 1e-9).unwrap());
    }

    #[test]
    fn hand_derived_projection() {
        // {(x,u): |0.5x + u| <= 1, |u| <= 1} projected onto x gives |x| <= 4
        let f = DMatrix::from_row_slice(
            4,
            2,
            &[0.5, 1.0, -0.5, -1.0, 0.0, 1.0, 0.0, -1.0],
        );
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let p = Polytope::from_parts(f, b).unwrap();
        let proj = p.fm_project(1).unwrap();
        let expected = Polytope::from_box(&[-4.0], &[4.0]).unwrap();
        assert!(proj.set_equal(&expected, 1e-8).unwrap());
    }

    #[test]
    fn projection_cap_names_step() {
        let p = Polytope::from_box(&[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0]).unwrap();
        match p.fm_project_capped(2, 1) {
            Err(GeometryError::ProjectionBlowup { step: 0, cap: 1 }) => {}
            other => panic!("expected blow-up at step 0, got {other:?}"),
        }
    }

    #[test]
    fn redundant_duplicate_facet_dropped() {
        let unit = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let doubled = unit.intersect(&unit).unwrap();
        let reduced = doubled.remove_redundant().unwrap();
        assert_eq!(reduced.num_facets(), 4);
        assert!(reduced.set_equal(&unit, 1e-9).unwrap());
    }

    #[test]
    fn loose_facet_dropped() {
        let unit = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let mut f = DMatrix::zeros(5, 2);
        let mut b = DVector::zeros(5);
        f.view_mut((0, 0), (4, 2)).copy_from(unit.facet_matrix());
        b.rows_mut(0, 4).copy_from(unit.offsets());
        f[(4, 0)] = 1.0;
        b[4] = 5.0;
        let p = Polytope::from_parts(f, b).unwrap();
        let reduced = p.remove_redundant().unwrap();
        assert_eq!(reduced.num_facets(), 4);
    }

    #[test]
    fn remove_redundant_rejects_empty() {
        let p = Polytope::from_box(&[0.0], &[1.0])
            .unwrap()
            .intersect(&Polytope::from_box(&[2.0], &[3.0]).unwrap())
            .unwrap();
        assert!(matches!(
            p.remove_redundant(),
            Err(GeometryError::EmptyPolytope)
        ));
    }

    #[test]
    fn set_equal_cases() {
        let unit = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert!(unit.set_equal(&unit, 1e-9).unwrap());
        let shrunk = Polytope::from_box(&[-0.99, -0.99], &[0.99, 0.99]).unwrap();
        assert!(!unit.set_equal(&shrunk, 1e-6).unwrap());
        let redundant = unit.intersect(&unit).unwrap();
        assert!(unit.set_equal(&redundant, 1e-9).unwrap());
    }

    #[test]
    fn support_over_box() {
        let p = Polytope::from_box(&[-2.0, -3.0], &[2.0, 5.0]).unwrap();
        let v = p.support(&DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert!((v - 5.0).abs() <= 1e-7);
    }

    #[test]
    fn bounding_box_round_trip() {
        let p = Polytope::from_box(&[-2.0, 0.5], &[1.0, 4.0]).unwrap();
        let (lo, hi) = p.bounding_box().unwrap();
        assert!((lo[0] + 2.0).abs() <= 1e-6);
        assert!((hi[1] - 4.0).abs() <= 1e-6);
    }

    #[test]
    fn empty_polytope_detection() {
        assert!(Polytope::empty(2).is_empty().unwrap());
        let unit = Polytope::from_box(&[-1.0], &[1.0]).unwrap();
        assert!(!unit.is_empty().unwrap());
    }
}
