//! Exit laws of simple random walk from lattice balls, for skipping the walk
//! through regions where its path is irrelevant.
//!
//! For the ball `B_a = {z : |z| <= a}` the exit position of a walk started at
//! the centre is invariant under the hyperoctahedral group (coordinate
//! permutations and sign flips). The law is computed once per `(d, a)` on the
//! orbits: the Green's function `G_a(0, .)` solves a symmetric positive
//! definite system on orbit representatives, which conjugate gradients bring
//! to a relative residual of `1e-13`. Sampling draws an orbit from an alias
//! table and then a uniform group element, which is uniform on the orbit.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::RngCore;

use crate::error::{LabError, Result};
use crate::rng::uniform01;

/// Walker alias table over a finite distribution.
#[derive(Clone, Debug)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0 && n < u32::MAX as usize);
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        Self { prob, alias }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    #[inline]
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> usize {
        let i = ((rng.next_u64() as u128 * self.prob.len() as u128) >> 64) as usize;
        if uniform01(rng) < self.prob[i] {
            i
        } else {
            self.alias[i] as usize
        }
    }
}

fn canonical(z: &[i32]) -> Vec<i32> {
    let mut c: Vec<i32> = z.iter().map(|x| x.abs()).collect();
    c.sort_unstable_by(|a, b| b.cmp(a));
    c
}

/// Number of points in the orbit of a canonical (sorted, nonnegative) vector.
fn orbit_size(c: &[i32]) -> f64 {
    let d = c.len();
    let mut size: f64 = (1..=d).map(|k| k as f64).product();
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && c[j] == c[i] {
            j += 1;
        }
        size /= (1..=(j - i)).map(|k| k as f64).product::<f64>();
        i = j;
    }
    let nonzero = c.iter().filter(|&&x| x != 0).count();
    size * 2f64.powi(nonzero as i32)
}

/// Exit law of the walk from `B_a` started at its centre.
#[derive(Clone, Debug)]
pub struct BallExitLaw {
    d: usize,
    radius: i32,
    /// Canonical representatives of the exit orbits, flattened.
    reps: Vec<i32>,
    orbit_prob: Vec<f64>,
    table: AliasTable,
    /// |1 - total exit mass| after the solve.
    defect: f64,
    /// Expected exit time `sum_z G_a(0, z)`.
    mean_exit_time: f64,
}

impl BallExitLaw {
    pub fn build(d: usize, radius: i32) -> Result<Self> {
        if d == 0 || radius < 1 {
            return Err(LabError::Domain("ball exit law needs d >= 1 and radius >= 1".into()));
        }
        let a2 = radius as i64 * radius as i64;
        // Enumerate canonical interior points.
        let mut states: Vec<Vec<i32>> = Vec::new();
        let mut cur = vec![0i32; d];
        enumerate_sorted(&mut cur, 0, radius, a2, &mut states);
        let index: HashMap<Vec<i32>, usize> = states.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let n = states.len();
        let weight: Vec<f64> = states.iter().map(|s| orbit_size(s)).collect();

        // Orbit-to-orbit neighbour counts (interior) and exit counts.
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut exits: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut exit_index: HashMap<Vec<i32>, usize> = HashMap::new();
        let mut reps: Vec<i32> = Vec::new();
        let inv = 1.0 / (2 * d) as f64;
        for (zi, z) in states.iter().enumerate() {
            let mut w = z.clone();
            for axis in 0..d {
                for delta in [1, -1] {
                    w[axis] += delta;
                    let c = canonical(&w);
                    let r2: i64 = c.iter().map(|&x| x as i64 * x as i64).sum();
                    if r2 <= a2 {
                        push_count(&mut rows[zi], index[&c], inv);
                    } else {
                        let next = exit_index.len();
                        let ci = *exit_index.entry(c.clone()).or_insert_with(|| {
                            reps.extend_from_slice(&c);
                            next
                        });
                        push_count(&mut exits[zi], ci, inv);
                    }
                    w[axis] -= delta;
                }
            }
        }

        // Solve diag(weight) (I - P) g = e_0 by conjugate gradients.
        let apply = |x: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let mut s = x[i];
                for &(j, p) in &rows[i] {
                    s -= p * x[j];
                }
                out[i] = weight[i] * s;
            }
        };
        let mut g = vec![0.0; n];
        let mut r = vec![0.0; n];
        r[0] = 1.0;
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut rr: f64 = 1.0;
        let mut iter = 0;
        while rr.sqrt() > 1e-13 {
            apply(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for i in 0..n {
                g[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
            iter += 1;
            if iter > 50 * n + 1000 {
                return Err(LabError::Domain(format!("ball exit solve did not converge for d = {d}, a = {radius}")));
            }
        }

        let mut orbit_prob = vec![0.0; exit_index.len()];
        for zi in 0..n {
            for &(ci, p) in &exits[zi] {
                orbit_prob[ci] += weight[zi] * g[zi] * p;
            }
        }
        let total: f64 = orbit_prob.iter().sum();
        let mean_exit_time = (0..n).map(|i| weight[i] * g[i]).sum();
        Ok(Self {
            d,
            radius,
            table: AliasTable::new(&orbit_prob),
            reps,
            orbit_prob,
            defect: (1.0 - total).abs(),
            mean_exit_time,
        })
    }

    pub fn radius(&self) -> i32 {
        self.radius
    }

    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn mean_exit_time(&self) -> f64 {
        self.mean_exit_time
    }

    pub fn num_orbits(&self) -> usize {
        self.orbit_prob.len()
    }

    /// Representative and total probability of exit orbit `k`.
    pub fn orbit(&self, k: usize) -> (&[i32], f64) {
        (&self.reps[k * self.d..(k + 1) * self.d], self.orbit_prob[k])
    }

    /// Draws an exit displacement into `out`.
    #[inline]
    pub fn sample<R: RngCore>(&self, rng: &mut R, out: &mut [i32]) {
        let d = self.d;
        let k = self.table.sample(rng);
        out.copy_from_slice(&self.reps[k * d..(k + 1) * d]);
        // Uniform signed permutation: Fisher-Yates, then independent signs.
        let mut bits = rng.next_u64();
        for i in (1..d).rev() {
            let j = ((rng.next_u32() as u64 * (i as u64 + 1)) >> 32) as usize;
            out.swap(i, j);
        }
        for x in out.iter_mut() {
            if bits & 1 == 1 {
                *x = -*x;
            }
            bits >>= 1;
        }
    }
}

fn push_count(row: &mut Vec<(usize, f64)>, j: usize, p: f64) {
    match row.iter_mut().find(|(k, _)| *k == j) {
        Some(e) => e.1 += p,
        None => row.push((j, p)),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn enumerate_sorted(cur: &mut Vec<i32>, pos: usize, max: i32, budget: i64, out: &mut Vec<Vec<i32>>) {
    if pos == cur.len() {
        out.push(cur.clone());
        return;
    }
    let mut v = 0;
    while v <= max && (v as i64) * (v as i64) <= budget {
        cur[pos] = v;
        enumerate_sorted(cur, pos + 1, v, budget - v as i64 * v as i64, out);
        v += 1;
    }
    cur[pos] = 0;
}

/// Exit laws for an increasing ladder of radii.
#[derive(Debug)]
pub struct HopLadder {
    laws: Vec<BallExitLaw>,
}

/// Radii tried for the ladder; the largest ones are skipped when the orbit
/// count grows past a few hundred thousand.
const LADDER: [i32; 9] = [2, 3, 4, 6, 8, 12, 16, 24, 32];
const MAX_STATES: f64 = 2.0e5;

impl HopLadder {
    pub fn build(d: usize) -> Result<Self> {
        let mut laws = Vec::new();
        for &a in &LADDER {
            if estimated_states(d, a) > MAX_STATES {
                break;
            }
            laws.push(BallExitLaw::build(d, a)?);
        }
        if laws.is_empty() {
            return Err(LabError::Domain(format!("no ball exit law fits the state budget in d = {d}")));
        }
        Ok(Self { laws })
    }

    /// Shared ladder for dimension `d`, built on first use.
    pub fn shared(d: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<HopLadder>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("hop ladder cache poisoned");
        if let Some(l) = guard.get(&d) {
            return Ok(l.clone());
        }
        let l = Arc::new(Self::build(d)?);
        guard.insert(d, l.clone());
        Ok(l)
    }

    pub fn laws(&self) -> &[BallExitLaw] {
        &self.laws
    }

    pub fn smallest_radius(&self) -> i32 {
        self.laws[0].radius
    }

    /// Largest law whose ball radius is strictly below `room`.
    #[inline]
    pub fn fitting(&self, room: f64) -> Option<&BallExitLaw> {
        self.laws.iter().rev().find(|l| (l.radius as f64) < room)
    }
}

fn estimated_states(d: usize, a: i32) -> f64 {
    // Volume of the d-ball over the order of the symmetry group.
    let half = d as f64 / 2.0;
    let vol = std::f64::consts::PI.powf(half) / gamma_half_plus_one(d) * (a as f64 + 1.0).powi(d as i32);
    let group: f64 = 2f64.powi(d as i32) * (1..=d).map(|k| k as f64).product::<f64>();
    vol / group
}

fn gamma_half_plus_one(d: usize) -> f64 {
    // Gamma(d/2 + 1)
    if d.is_multiple_of(2) {
        (1..=d / 2).map(|k| k as f64).product()
    } else {
        let mut g = std::f64::consts::PI.sqrt() / 2.0;
        let mut x = 1.5;
        while x < d as f64 / 2.0 + 1.0 - 1e-9 {
            g *= x;
            x += 1.0;
        }
        g
    }
}
