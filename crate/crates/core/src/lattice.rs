//! Geometry of the integer lattice Z^d: points, nearest-neighbour paths and
//! self-avoiding paths.
//!
//! Paths store their coordinates in one flat buffer (`d` integers per point),
//! which is what every hot loop in the crate works with. [`LatticePoint`] is
//! the owned, allocation-per-point type used at API boundaries.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::site_index::{hash_coords, SiteIndex};

/// Largest admissible absolute coordinate.
pub const COORD_LIMIT: i64 = i32::MAX as i64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticePoint {
    coords: Vec<i32>,
}

impl LatticePoint {
    pub fn new(coords: Vec<i32>) -> Result<Self> {
        if coords.is_empty() {
            return Err(LabError::Domain("lattice point needs d >= 1 coordinates".into()));
        }
        Ok(Self { coords })
    }

    pub fn origin(d: usize) -> Self {
        assert!(d >= 1, "dimension must be positive");
        Self { coords: vec![0; d] }
    }

    /// `k * e_axis` in dimension `d`.
    pub fn on_axis(d: usize, axis: usize, k: i32) -> Self {
        let mut p = Self::origin(d);
        p.coords[axis] = k;
        p
    }

    pub(crate) fn from_slice(c: &[i32]) -> Self {
        Self { coords: c.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    /// Squared Euclidean norm.
    pub fn norm2(&self) -> i64 {
        norm2(&self.coords)
    }

    pub fn norm(&self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    pub fn l1(&self) -> i64 {
        l1(&self.coords)
    }

    pub fn linf(&self) -> i64 {
        self.coords.iter().map(|&c| (c as i64).abs()).max().unwrap_or(0)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn norm2(c: &[i32]) -> i64 {
    c.iter().map(|&x| (x as i64) * (x as i64)).sum()
}

pub(crate) fn l1(c: &[i32]) -> i64 {
    c.iter().map(|&x| (x as i64).abs()).sum()
}

pub(crate) fn l1_dist(a: &[i32], b: &[i32]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| (x as i64 - y as i64).abs()).sum()
}

/// Nearest neighbours of `p` in the fixed order `+e_1, -e_1, ..., +e_d, -e_d`.
pub fn neighbors(p: &LatticePoint) -> Vec<LatticePoint> {
    (0..2 * p.dim())
        .map(|dir| {
            let mut q = p.clone();
            apply_direction(&mut q.coords, dir);
            q
        })
        .collect()
}

/// Moves `coords` one step in direction `dir` (index into the neighbour order).
#[inline]
pub(crate) fn apply_direction(coords: &mut [i32], dir: usize) {
    let axis = dir >> 1;
    if dir & 1 == 0 {
        coords[axis] += 1;
    } else {
        coords[axis] -= 1;
    }
}

/// A nearest-neighbour path: consecutive points are at l1 distance exactly 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticePath {
    dim: usize,
    coords: Vec<i32>,
}

impl LatticePath {
    /// A path with no points yet.
    pub fn empty(dim: usize) -> Self {
        Self { dim, coords: Vec::new() }
    }

    pub fn from_points(points: &[LatticePoint]) -> Result<Self> {
        let dim = points
            .first()
            .map(LatticePoint::dim)
            .ok_or_else(|| LabError::Domain("empty path".into()))?;
        let mut path = Self::empty(dim);
        for p in points {
            if p.dim() != dim {
                return Err(LabError::Domain("mixed dimensions in path".into()));
            }
            path.push(p.coords())?;
        }
        Ok(path)
    }

    /// Builds a path from a flat coordinate buffer, checking adjacency.
    pub fn from_flat(dim: usize, coords: Vec<i32>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(LabError::Domain("coordinate buffer is not a multiple of d".into()));
        }
        let path = Self { dim, coords };
        for i in 1..path.num_points() {
            if l1_dist(path.point(i - 1), path.point(i)) != 1 {
                return Err(LabError::Domain(format!("points {} and {} are not adjacent", i - 1, i)));
            }
        }
        Ok(path)
    }

    pub(crate) fn from_flat_unchecked(dim: usize, coords: Vec<i32>) -> Self {
        debug_assert!(coords.len().is_multiple_of(dim));
        Self { dim, coords }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_points(&self) -> usize {
        self.coords.len() / self.dim
    }

    /// Number of steps (points minus one); zero for an empty path.
    pub fn len(&self) -> usize {
        self.num_points().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[i32] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[i32]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn to_points(&self) -> Vec<LatticePoint> {
        self.points().map(LatticePoint::from_slice).collect()
    }

    pub fn flat(&self) -> &[i32] {
        &self.coords
    }

    pub fn last(&self) -> Option<&[i32]> {
        (!self.is_empty()).then(|| self.point(self.num_points() - 1))
    }

    pub fn push(&mut self, p: &[i32]) -> Result<()> {
        if p.len() != self.dim {
            return Err(LabError::Domain("point has wrong dimension".into()));
        }
        if let Some(last) = self.last() {
            if l1_dist(last, p) != 1 {
                return Err(LabError::Domain("consecutive points must be nearest neighbours".into()));
            }
        }
        self.coords.extend_from_slice(p);
        Ok(())
    }

    /// The sub-path `λ[i, j]` (inclusive).
    pub fn slice(&self, i: usize, j: usize) -> Result<Self> {
        if i > j || j >= self.num_points() {
            return Err(LabError::Domain(format!("slice [{i}, {j}] out of range")));
        }
        Ok(Self::from_flat_unchecked(self.dim, self.coords[i * self.dim..(j + 1) * self.dim].to_vec()))
    }

    /// True when no site repeats.
    pub fn is_simple(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.num_points());
        self.points().all(|p| seen.insert(p))
    }
}

/// A self-avoiding path together with a site -> position index.
#[derive(Clone, Debug)]
pub struct SimplePath {
    path: LatticePath,
    index: SiteIndex,
}

impl SimplePath {
    pub fn new(path: LatticePath) -> Result<Self> {
        let mut index = SiteIndex::with_capacity(path.num_points());
        for (i, p) in path.points().enumerate() {
            let h = hash_coords(p);
            if index.find(p, h, path.flat(), path.dim()).is_some() {
                return Err(LabError::Domain(format!("site repeats at index {i}; path is not simple")));
            }
            index.insert(h, i);
        }
        Ok(Self { path, index })
    }

    pub(crate) fn from_parts(path: LatticePath, index: SiteIndex) -> Self {
        Self { path, index }
    }

    pub fn path(&self) -> &LatticePath {
        &self.path
    }

    pub fn into_path(self) -> LatticePath {
        self.path
    }

    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn point(&self, i: usize) -> &[i32] {
        self.path.point(i)
    }

    /// Position of `p` on the path, if present.
    pub fn index_of(&self, p: &[i32]) -> Option<usize> {
        if p.len() != self.dim() {
            return None;
        }
        self.index.find(p, hash_coords(p), self.path.flat(), self.dim())
    }

    pub fn contains(&self, p: &[i32]) -> bool {
        self.index_of(p).is_some()
    }

    /// Index agrees with the point sequence (used by tests and debug checks).
    pub fn index_consistent(&self) -> bool {
        self.index.len() == self.path.num_points()
            && self.path.points().enumerate().all(|(i, p)| self.index_of(p) == Some(i))
    }
}

impl PartialEq for SimplePath {
    fn eq(&self, other: &Self) -> bool {
        self.path == other.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: &[i32]) -> LatticePoint {
        LatticePoint::new(c.to_vec()).unwrap()
    }

    #[test]
    fn neighbour_order_1d() {
        let n = neighbors(&pt(&[0]));
        assert_eq!(n, vec![pt(&[1]), pt(&[-1])]);
    }

    #[test]
    fn neighbour_order_2d() {
        let n = neighbors(&pt(&[0, 0]));
        assert_eq!(n, vec![pt(&[1, 0]), pt(&[-1, 0]), pt(&[0, 1]), pt(&[0, -1])]);
    }

    #[test]
    fn neighbours_5d_are_unit_l1() {
        let p = pt(&[3, -1, 0, 7, 2]);
        let n = neighbors(&p);
        assert_eq!(n.len(), 10);
        for q in &n {
            assert_eq!(l1_dist(p.coords(), q.coords()), 1);
        }
        let mut uniq = n.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 10);
    }

    #[test]
    fn empty_point_rejected() {
        assert!(LatticePoint::new(vec![]).is_err());
    }

    #[test]
    fn norms() {
        let p = pt(&[3, -4, 0]);
        assert_eq!(p.norm2(), 25);
        assert_eq!(p.l1(), 7);
        assert_eq!(p.linf(), 4);
        assert!((p.norm() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn path_rejects_jumps() {
        assert!(LatticePath::from_points(&[pt(&[0, 0]), pt(&[1, 1])]).is_err());
        assert!(LatticePath::from_points(&[pt(&[0, 0]), pt(&[0, 0])]).is_err());
        let p = LatticePath::from_points(&[pt(&[0, 0]), pt(&[1, 0]), pt(&[1, 1])]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.num_points(), 3);
    }

    #[test]
    fn simple_path_index() {
        let p = LatticePath::from_points(&[pt(&[0, 0]), pt(&[1, 0]), pt(&[1, 1]), pt(&[0, 1])]).unwrap();
        let s = SimplePath::new(p).unwrap();
        assert!(s.index_consistent());
        assert_eq!(s.index_of(&[1, 1]), Some(2));
        assert_eq!(s.index_of(&[5, 5]), None);

        let loopy = LatticePath::from_points(&[pt(&[0, 0]), pt(&[1, 0]), pt(&[0, 0])]).unwrap();
        assert!(SimplePath::new(loopy).is_err());
    }
}
