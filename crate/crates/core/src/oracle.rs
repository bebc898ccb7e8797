//! Brute-force ground truth at small scale: exhaustive enumeration of all
//! `(2d)^N` walks for the law of a loop-erasure functional, and a dense
//! matrix exponential for the half-line kernel.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, LabError, Result};
use crate::lattice::{LatticePath, LatticePoint};
use crate::loop_erasure::loop_erase;

/// Largest number of walks `enumerate_le_law` will visit.
pub const ENUMERATION_BUDGET: u64 = 100_000_000;
pub const MAX_EXPM_SIZE: usize = 2048;
pub const EXPM_DEFECT_LIMIT: f64 = 1e-9;

/// Statistic of `LE(S[0, N])` whose law is tabulated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    Endpoint,
    LeLength,
    /// Whether the erased path visits `x` at an index in `[lo, hi]`.
    TauWindow { x: LatticePoint, lo: usize, hi: usize },
}

impl Functional {
    pub fn parse(name: &str, d: usize) -> Result<Self> {
        match name {
            "endpoint" => Ok(Self::Endpoint),
            "le_length" => Ok(Self::LeLength),
            // Default window used by the oracle suite: x = e1, indices 1..=2.
            "tau_window" => Ok(Self::TauWindow { x: LatticePoint::on_axis(d, 0, 1), lo: 1, hi: 2 }),
            other => Err(LabError::Parse(format!("unknown functional '{other}' (endpoint, le_length, tau_window)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Endpoint => "endpoint",
            Self::LeLength => "le_length",
            Self::TauWindow { .. } => "tau_window",
        }
    }

    /// Evaluates the statistic on an erased path given as flat coordinates.
    pub fn outcome(&self, d: usize, erased: &[i32]) -> Outcome {
        let points = erased.len() / d;
        match self {
            Self::Endpoint => Outcome::Point(erased[erased.len() - d..].to_vec()),
            Self::LeLength => Outcome::Length(points - 1),
            Self::TauWindow { x, lo, hi } => {
                let hit = erased.chunks_exact(d).position(|p| p == x.coords());
                Outcome::InWindow(hit.is_some_and(|k| k >= *lo && k <= *hi))
            }
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if let Self::TauWindow { x, lo, hi } = self {
            if x.dim() != d {
                return precondition(format!("target has dimension {}, walk has {d}", x.dim()));
            }
            if lo > hi {
                return precondition(format!("empty window [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Outcome {
    Point(Vec<i32>),
    Length(usize),
    InWindow(bool),
}

/// Exact law of a functional as integer counts over all `(2d)^N` walks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedLaw {
    pub horizon: usize,
    pub d: usize,
    pub functional: Functional,
    pub total: u64,
    pub counts: BTreeMap<Outcome, u64>,
}

impl EnumeratedLaw {
    pub fn count(&self, o: &Outcome) -> u64 {
        self.counts.get(o).copied().unwrap_or(0)
    }

    pub fn probability(&self, o: &Outcome) -> f64 {
        self.count(o) as f64 / self.total as f64
    }
}

pub fn walk_count(n: usize, d: usize) -> Option<u64> {
    (2 * d as u64).checked_pow(n as u32)
}

/// Visits every walk of `n` steps whose first step is `first` (or every walk
/// when `n == 0`) with an odometer over the step digits, loop-erases it with
/// the batch algorithm and tallies the functional.
fn enumerate_branch(n: usize, d: usize, functional: &Functional, first: usize) -> Result<BTreeMap<Outcome, u64>> {
    let base = 2 * d;
    let mut tally = BTreeMap::new();
    let mut digits = vec![0usize; n];
    if n > 0 {
        digits[0] = first;
    }
    // positions[k] holds the walk after k steps.
    let mut positions = vec![0i32; (n + 1) * d];
    let refresh = |positions: &mut [i32], digits: &[usize], from: usize| {
        for k in from..digits.len() {
            let (done, rest) = positions.split_at_mut((k + 1) * d);
            rest[..d].copy_from_slice(&done[k * d..]);
            let dir = digits[k];
            rest[dir / 2] += if dir.is_multiple_of(2) { 1 } else { -1 };
        }
    };
    refresh(&mut positions, &digits, 0);
    loop {
        let path = LatticePath::from_flat(d, positions.clone())?;
        let erased = loop_erase(&path)?;
        *tally.entry(functional.outcome(d, erased.path().flat())).or_insert(0) += 1;
        // Advance the odometer on digits 1..n; digit 0 is fixed by the branch.
        let mut k = n;
        loop {
            if k <= 1 {
                return Ok(tally);
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < base {
                break;
            }
            digits[k] = 0;
        }
        refresh(&mut positions, &digits, k);
    }
}

/// Exact law of `functional(LE(S[0, N]))` for simple random walk from the
/// origin of Z^d.
pub fn enumerate_le_law(n: usize, d: usize, functional: &Functional) -> Result<EnumeratedLaw> {
    if d == 0 {
        return precondition("dimension must be positive");
    }
    functional.validate(d)?;
    let total = walk_count(n, d).filter(|&c| c <= ENUMERATION_BUDGET).ok_or_else(|| {
        LabError::ResourceGate(format!(
            "enumerating N={n}, d={d} needs (2d)^N = {}^{n} walks, budget is {ENUMERATION_BUDGET}",
            2 * d
        ))
    })?;
    let branches: Vec<usize> = if n == 0 { vec![0] } else { (0..2 * d).collect() };
    let parts: Vec<Result<BTreeMap<Outcome, u64>>> =
        branches.into_par_iter().map(|b| enumerate_branch(n, d, functional, b)).collect();
    let mut counts = BTreeMap::new();
    for part in parts {
        for (o, c) in part? {
            *counts.entry(o).or_insert(0) += c;
        }
    }
    debug_assert_eq!(counts.values().sum::<u64>(), total);
    Ok(EnumeratedLaw { horizon: n, d, functional: functional.clone(), total, counts })
}

/// `exp(tQ)` for the unit-rate walk on the path graph truncated to states
/// `0..size`. The last state loses rate 1/2 to the omitted neighbour, so the
/// row-sum defect measures how much mass the truncation lets escape.
#[derive(Clone, Debug)]
pub struct MatrixExpKernel {
    pub t: f64,
    pub size: usize,
    pub values: DMatrix<f64>,
    /// Largest `1 - row sum` over rows `0..=size/2`.
    pub defect: f64,
}

impl MatrixExpKernel {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[(a, b)]
    }

    /// Rows that are far enough from the cut to be trusted.
    pub fn trusted_rows(&self) -> usize {
        self.size / 2 + 1
    }
}

pub fn halfline_generator(size: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(size, size);
    for a in 0..size {
        q[(a, a)] = -1.0;
        if a == 0 {
            if size > 1 {
                q[(0, 1)] = 1.0;
            }
        } else {
            q[(a, a - 1)] = 0.5;
            if a + 1 < size {
                q[(a, a + 1)] = 0.5;
            }
        }
    }
    q
}

pub fn matrix_exponential_kernel(t: f64, size: usize) -> Result<MatrixExpKernel> {
    if !(t.is_finite() && t >= 0.0) {
        return precondition(format!("time must be finite and nonnegative, got {t}"));
    }
    if !(2..=MAX_EXPM_SIZE).contains(&size) {
        return precondition(format!("size must be in [2, {MAX_EXPM_SIZE}], got {size}"));
    }
    let values = (halfline_generator(size) * t).exp();
    let defect = (0..=size / 2).map(|a| (1.0 - values.row(a).sum()).abs()).fold(0.0, f64::max);
    if defect > EXPM_DEFECT_LIMIT {
        return Err(LabError::ResourceGate(format!(
            "row-sum defect {defect:.3e} at t={t} with {size} states exceeds {EXPM_DEFECT_LIMIT:e}; enlarge size"
        )));
    }
    Ok(MatrixExpKernel { t, size, values, defect })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_endpoint_is_uniform() {
        let law = enumerate_le_law(1, 5, &Functional::Endpoint).unwrap();
        assert_eq!(law.total, 10);
        assert_eq!(law.counts.len(), 10);
        assert!(law.counts.values().all(|&c| c == 1));
    }

    #[test]
    fn two_step_lengths() {
        let law = enumerate_le_law(2, 5, &Functional::LeLength).unwrap();
        assert_eq!(law.count(&Outcome::Length(0)), 10);
        assert_eq!(law.count(&Outcome::Length(2)), 90);
        assert_eq!(law.counts.len(), 2);
    }

    #[test]
    fn zero_steps() {
        let law = enumerate_le_law(0, 3, &Functional::LeLength).unwrap();
        assert_eq!(law.total, 1);
        assert_eq!(law.count(&Outcome::Length(0)), 1);
    }

    #[test]
    fn three_step_lengths_in_one_dimension() {
        // 8 walks of 3 steps on Z: +++ and --- keep length 3; every other walk
        // backtracks once and erases to a single step.
        let law = enumerate_le_law(3, 1, &Functional::LeLength).unwrap();
        assert_eq!(law.count(&Outcome::Length(3)), 2);
        assert_eq!(law.count(&Outcome::Length(1)), 6);
    }

    #[test]
    fn tau_window_two_steps() {
        // LE(S[0,2]) visits e1 at index 1 iff S_1 = e1 and S_2 != 0; it never
        // reaches e1 at index 2 since |S_2 - 0|_1 = 2 on a surviving path.
        let f = Functional::TauWindow { x: LatticePoint::on_axis(5, 0, 1), lo: 1, hi: 2 };
        let law = enumerate_le_law(2, 5, &f).unwrap();
        assert_eq!(law.count(&Outcome::InWindow(true)), 9);
        assert_eq!(law.count(&Outcome::InWindow(false)), 91);
    }

    #[test]
    fn counts_sum_to_total() {
        for (n, d) in [(4, 2), (4, 3), (3, 5)] {
            let law = enumerate_le_law(n, d, &Functional::Endpoint).unwrap();
            assert_eq!(law.counts.values().sum::<u64>(), law.total);
            assert_eq!(law.total, walk_count(n, d).unwrap());
        }
    }

    #[test]
    fn resource_gate() {
        assert!(matches!(enumerate_le_law(9, 5, &Functional::Endpoint), Err(LabError::ResourceGate(_))));
    }

    #[test]
    fn expm_identity_at_zero() {
        let k = matrix_exponential_kernel(0.0, 16).unwrap();
        for a in 0..16 {
            for b in 0..16 {
                assert_eq!(k.get(a, b), if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn expm_detailed_balance() {
        let k = matrix_exponential_kernel(3.0, 65).unwrap();
        let deg = |a: usize| if a == 0 { 1.0 } else { 2.0 };
        for a in 0..32 {
            for b in 0..32 {
                assert!((deg(a) * k.get(a, b) - deg(b) * k.get(b, a)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn expm_small_time_series() {
        // q_t(0,0) = 1 - t + 3t^2/4 + O(t^3).
        let t = 1e-3;
        let k = matrix_exponential_kernel(t, 8).unwrap();
        assert!((k.get(0, 0) - (1.0 - t + 0.75 * t * t)).abs() < 1e-9);
    }

    #[test]
    fn expm_defect_gate() {
        assert!(matches!(matrix_exponential_kernel(100.0, 16), Err(LabError::ResourceGate(_))));
        assert!(matrix_exponential_kernel(1.0, MAX_EXPM_SIZE + 1).is_err());
    }
}
