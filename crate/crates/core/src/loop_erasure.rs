//! Chronological loop-erasure, batch and online, plus hitting indices and
//! local cut points.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::lattice::{l1_dist, LatticePath, LatticePoint, SimplePath};
use crate::site_index::{hash_coords, SiteIndex};

/// Batch loop-erasure through the last-visit recursion: start from the last
/// visit to `λ_0`, then repeatedly jump to the last visit of the point that
/// follows, until the endpoint of `λ` is reached.
pub fn loop_erase(path: &LatticePath) -> Result<SimplePath> {
    if path.is_empty() {
        return Err(LabError::Domain("cannot loop-erase an empty path".into()));
    }
    let mut last_visit: HashMap<&[i32], usize> = HashMap::with_capacity(path.num_points());
    for (k, p) in path.points().enumerate() {
        last_visit.insert(p, k);
    }
    let end = path.num_points() - 1;
    let mut out = Vec::new();
    let mut sigma = last_visit[path.point(0)];
    loop {
        out.extend_from_slice(path.point(sigma));
        if sigma == end {
            break;
        }
        sigma = last_visit[path.point(sigma + 1)];
    }
    let erased = LatticePath::from_flat_unchecked(path.dim(), out);
    SimplePath::new(erased)
}

/// Online loop-erasure: after consuming `λ[0, m]` the held path equals
/// `loop_erase(λ[0, m])`. A revisit of a held site truncates back to that
/// site's (unique) position; each site is inserted and removed at most once
/// per visit, so the cost is amortised O(1) per step.
#[derive(Clone, Debug)]
pub struct IncrementalEraser {
    dim: usize,
    coords: Vec<i32>,
    hashes: Vec<u64>,
    index: SiteIndex,
}

impl IncrementalEraser {
    pub fn new(dim: usize) -> Self {
        Self { dim, coords: Vec::new(), hashes: Vec::new(), index: SiteIndex::with_capacity(1024) }
    }

    pub fn clear(&mut self) {
        self.coords.clear();
        self.hashes.clear();
        self.index.clear();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_points(&self) -> usize {
        self.hashes.len()
    }

    /// Length (steps) of the held path.
    pub fn len(&self) -> usize {
        self.num_points().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn point(&self, i: usize) -> &[i32] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn flat(&self) -> &[i32] {
        &self.coords
    }

    pub fn index_of(&self, p: &[i32]) -> Option<usize> {
        self.index.find(p, hash_coords(p), &self.coords, self.dim)
    }

    /// Feeds the next point of the walk, checking adjacency.
    pub fn push(&mut self, p: &[i32]) -> Result<()> {
        if p.len() != self.dim {
            return Err(LabError::Domain("point has wrong dimension".into()));
        }
        if !self.is_empty() {
            let last = self.point(self.num_points() - 1);
            if l1_dist(last, p) != 1 {
                return Err(LabError::Domain("consecutive inputs must be nearest neighbours".into()));
            }
        }
        self.push_unchecked(p);
        Ok(())
    }

    /// Feeds the next point without the adjacency check; returns the position
    /// the point now occupies.
    #[inline]
    pub fn push_unchecked(&mut self, p: &[i32]) -> usize {
        let h = hash_coords(p);
        match self.index.find(p, h, &self.coords, self.dim) {
            Some(i) => {
                self.truncate_to(i);
                i
            }
            None => self.append_hashed(p, h),
        }
    }

    /// Appends a point known not to be on the held path.
    #[inline]
    pub fn append_new(&mut self, p: &[i32]) -> usize {
        debug_assert!(self.index_of(p).is_none());
        self.append_hashed(p, hash_coords(p))
    }

    #[inline]
    fn append_hashed(&mut self, p: &[i32], h: u64) -> usize {
        let pos = self.hashes.len();
        self.coords.extend_from_slice(p);
        self.hashes.push(h);
        self.index.insert(h, pos);
        pos
    }

    /// Drops every point after position `i`.
    pub fn truncate_to(&mut self, i: usize) {
        for pos in (i + 1..self.hashes.len()).rev() {
            self.index.remove(self.hashes[pos], pos);
        }
        self.hashes.truncate(i + 1);
        self.coords.truncate((i + 1) * self.dim);
    }

    pub fn to_path(&self) -> LatticePath {
        LatticePath::from_flat_unchecked(self.dim, self.coords.clone())
    }

    pub fn to_simple_path(&self) -> SimplePath {
        let mut index = SiteIndex::with_capacity(self.hashes.len());
        for (pos, &h) in self.hashes.iter().enumerate() {
            index.insert(h, pos);
        }
        SimplePath::from_parts(self.to_path(), index)
    }
}

/// Loop-erases a path by feeding it through [`IncrementalEraser`].
pub fn loop_erase_incremental(path: &LatticePath) -> Result<SimplePath> {
    if path.is_empty() {
        return Err(LabError::Domain("cannot loop-erase an empty path".into()));
    }
    let mut e = IncrementalEraser::new(path.dim());
    for p in path.points() {
        e.push(p)?;
    }
    Ok(e.to_simple_path())
}

/// First index at which a simple path visits `target`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauSample {
    pub target: LatticePoint,
    pub hit: bool,
    pub tau: Option<usize>,
}

pub fn first_hit_index(path: &SimplePath, target: &LatticePoint) -> TauSample {
    let tau = path.index_of(target.coords());
    TauSample { target: target.clone(), hit: tau.is_some(), tau }
}

/// Local cut points of `λ[i, j]`: the points `λ_k`, `i <= k <= j`, such that
/// `λ[i, k]` and `λ[k+1, j]` share no site. Returned in path order.
///
/// `k` is a cut index exactly when no site of `λ[i, k]` is visited again in
/// `(k, j]`, i.e. when the running maximum of last-visit indices equals `k`.
pub fn local_cut_points(path: &LatticePath, i: usize, j: usize) -> Result<Vec<LatticePoint>> {
    if i > j || j >= path.num_points() {
        return Err(LabError::Domain(format!("index range [{i}, {j}] outside path of {} points", path.num_points())));
    }
    let mut last: HashMap<&[i32], usize> = HashMap::with_capacity(j - i + 1);
    for k in i..=j {
        last.insert(path.point(k), k);
    }
    let mut reach = 0usize;
    let mut out = Vec::new();
    for k in i..=j {
        reach = reach.max(last[path.point(k)]);
        if reach == k {
            out.push(LatticePoint::from_slice(path.point(k)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path(points: &[&[i32]]) -> LatticePath {
        let pts: Vec<LatticePoint> = points.iter().map(|c| LatticePoint::new(c.to_vec()).unwrap()).collect();
        LatticePath::from_points(&pts).unwrap()
    }

    #[test]
    fn erases_single_backtrack() {
        // [0, e1, 0, e2] -> [0, e2]
        let p = path(&[&[0, 0], &[1, 0], &[0, 0], &[0, 1]]);
        let le = loop_erase(&p).unwrap();
        assert_eq!(le.path(), &path(&[&[0, 0], &[0, 1]]));
    }

    #[test]
    fn closed_loop_erases_to_start() {
        let p = path(&[&[0, 0], &[1, 0], &[2, 0], &[1, 0], &[0, 0]]);
        let le = loop_erase(&p).unwrap();
        assert_eq!(le.path(), &path(&[&[0, 0]]));
    }

    #[test]
    fn simple_path_unchanged() {
        let p = path(&[&[0, 0], &[1, 0], &[1, 1], &[0, 1], &[-1, 1]]);
        assert_eq!(loop_erase(&p).unwrap().path(), &p);
    }

    #[test]
    fn empty_rejected() {
        assert!(loop_erase(&LatticePath::empty(3)).is_err());
        assert!(loop_erase_incremental(&LatticePath::empty(3)).is_err());
    }

    #[test]
    fn incremental_hand_case() {
        let steps: [&[i32]; 4] = [&[0, 0], &[1, 0], &[0, 0], &[0, 1]];
        let expected: [Vec<&[i32]>; 4] = [
            vec![&[0, 0]],
            vec![&[0, 0], &[1, 0]],
            vec![&[0, 0]],
            vec![&[0, 0], &[0, 1]],
        ];
        let mut e = IncrementalEraser::new(2);
        for (p, want) in steps.iter().zip(expected.iter()) {
            e.push(p).unwrap();
            assert_eq!(e.to_path(), path(want));
        }
    }

    #[test]
    fn incremental_rejects_jump() {
        let mut e = IncrementalEraser::new(2);
        e.push(&[0, 0]).unwrap();
        assert!(e.push(&[1, 1]).is_err());
    }

    #[test]
    fn first_hit_cases() {
        let le = SimplePath::new(path(&[&[0, 0], &[0, 1]])).unwrap();
        let t = first_hit_index(&le, &LatticePoint::new(vec![0, 1]).unwrap());
        assert_eq!(t.tau, Some(1));
        assert!(t.hit);
        let miss = first_hit_index(&le, &LatticePoint::new(vec![3, 3]).unwrap());
        assert!(!miss.hit);
        assert_eq!(miss.tau, None);
    }

    #[test]
    fn cut_points_hand_cases() {
        let p = path(&[&[0, 0], &[1, 0], &[0, 0]]);
        let cuts = local_cut_points(&p, 0, 2).unwrap();
        assert_eq!(cuts, vec![LatticePoint::new(vec![0, 0]).unwrap()]);

        let s = path(&[&[0, 0], &[1, 0], &[1, 1]]);
        assert_eq!(local_cut_points(&s, 0, 2).unwrap(), s.to_points());
        assert!(local_cut_points(&s, 2, 1).is_err());
        assert!(local_cut_points(&s, 0, 3).is_err());
    }

    fn arb_path(d: usize, max_len: usize) -> impl Strategy<Value = LatticePath> {
        proptest::collection::vec(0..2 * d, 0..max_len).prop_map(move |dirs| {
            let mut pos = vec![0i32; d];
            let mut coords = pos.clone();
            for dir in dirs {
                crate::lattice::apply_direction(&mut pos, dir);
                coords.extend_from_slice(&pos);
            }
            LatticePath::from_flat_unchecked(d, coords)
        })
    }

    fn brute_force_cuts(p: &LatticePath, i: usize, j: usize) -> Vec<LatticePoint> {
        (i..=j)
            .filter(|&k| {
                let before: Vec<&[i32]> = (i..=k).map(|a| p.point(a)).collect();
                (k + 1..=j).all(|b| !before.contains(&p.point(b)))
            })
            .map(|k| LatticePoint::from_slice(p.point(k)))
            .collect()
    }

    proptest! {
        #[test]
        fn le_invariants(p in prop_oneof![arb_path(2, 200), arb_path(5, 200)]) {
            let le = loop_erase(&p).unwrap();
            // simple, index consistent
            prop_assert!(le.path().is_simple());
            prop_assert!(le.index_consistent());
            // endpoints preserved
            prop_assert_eq!(le.point(0), p.point(0));
            prop_assert_eq!(le.point(le.path().num_points() - 1), p.last().unwrap());
            // containment
            let sites: std::collections::HashSet<&[i32]> = p.points().collect();
            prop_assert!(le.path().points().all(|q| sites.contains(q)));
            // idempotence
            let again = loop_erase(le.path()).unwrap();
            prop_assert_eq!(again.path(), le.path());
            // incremental agrees with batch
            let inc = loop_erase_incremental(&p).unwrap();
            prop_assert_eq!(inc.path(), le.path());
        }

        #[test]
        fn cut_points_match_definition(p in arb_path(2, 60), a in 0usize..60, b in 0usize..60) {
            let n = p.num_points();
            let (i, j) = (a.min(b) % n, a.max(b) % n);
            let (i, j) = (i.min(j), i.max(j));
            prop_assert_eq!(local_cut_points(&p, i, j).unwrap(), brute_force_cuts(&p, i, j));
        }

        #[test]
        fn hit_index_at_least_l1(p in arb_path(3, 120)) {
            let le = loop_erase(&p).unwrap();
            for (k, q) in le.path().points().enumerate() {
                let t = first_hit_index(&le, &LatticePoint::from_slice(q));
                prop_assert_eq!(t.tau, Some(k));
                prop_assert!(k as i64 >= crate::lattice::l1(q));
            }
        }
    }
}
