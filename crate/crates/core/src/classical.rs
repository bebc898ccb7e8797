//! Classical simple random walk estimates: the two-step Gaussian bound, the
//! annulus exit and point-hitting formulas, the gambler's ruin estimate and
//! the mean exit time from a ball.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{collapse, fit_envelope, EnvelopeInput, Side, TwoSidedFit};
use crate::error::{precondition, Result};
use crate::hop::{BallExitLaw, HopLadder};
use crate::lattice::LatticePoint;
use crate::numeric::ln_factorial;
use crate::parallel::{run_replicas, ReplicaTask};
use crate::rng::{lane_stream, rng_stream, Stream};
use crate::stats::{clopper_pearson, normal_ci};
use crate::walk::{simulate_srw_until_exit, Walker};

/// Largest `n` handled by the exact convolution.
pub const MAX_EXACT_STEPS: u64 = 150;
/// First lane used by the classical checks; item `k` of a grid runs on
/// lane `LANE_CLASSICAL + k`.
pub const LANE_CLASSICAL: u64 = 16;

/// `P(S_n = x)` by convolving the per-coordinate step counts.
///
/// `P(S_n = x) = n! (2d)^{-n} sum_{k_1+..+k_d = n} prod_i a_i(k_i)` with
/// `a_i(k) = 1 / (j! (k-j)!)`, `j = (k + x_i) / 2`.
pub fn srw_point_probability(n: u64, x: &[i32]) -> Result<f64> {
    if n > MAX_EXACT_STEPS {
        return precondition(format!("exact SRW law limited to n <= {MAX_EXACT_STEPS}, got {n}"));
    }
    let d = x.len();
    if d == 0 {
        return precondition("dimension must be positive");
    }
    let n = n as usize;
    let lf: Vec<f64> = (0..=n as u64).map(ln_factorial).collect();
    let mut conv = vec![0.0; n + 1];
    conv[0] = 1.0;
    for &xi in x {
        let xi = xi.unsigned_abs() as usize;
        let a: Vec<f64> = (0..=n)
            .map(|k| {
                if k < xi || (k - xi) % 2 == 1 {
                    0.0
                } else {
                    let j = (k + xi) / 2;
                    (-lf[j] - lf[k - j]).exp()
                }
            })
            .collect();
        let mut next = vec![0.0; n + 1];
        for (s, &c) in conv.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for k in 0..=n - s {
                next[s + k] += c * a[k];
            }
        }
        conv = next;
    }
    Ok(conv[n] * (lf[n] - n as f64 * ((2 * d) as f64).ln()).exp())
}

/// `(P(S_n = x) + P(S_{n+1} = x)) / 2`.
pub fn two_step_average(n: u64, x: &[i32]) -> Result<f64> {
    Ok(0.5 * (srw_point_probability(n, x)? + srw_point_probability(n + 1, x)?))
}

/// Fits both directions of the pointwise Gaussian bound to the exact
/// two-step averaged law. The lower envelope is constrained only where
/// `n >= |x|_1`.
pub fn srw_gaussian_check(n_list: &[u64], x_list: &[LatticePoint]) -> Result<TwoSidedFit> {
    if n_list.is_empty() || x_list.is_empty() {
        return precondition("empty n or x list");
    }
    let d = x_list[0].dim();
    let mut inputs = Vec::new();
    for x in x_list {
        if x.dim() != d {
            return precondition("points of mixed dimension");
        }
        for &n in n_list {
            if n == 0 {
                return precondition("n must be at least 1");
            }
            let v = two_step_average(n, x.coords())?;
            let nf = n as f64;
            inputs.push(EnvelopeInput {
                label: format!("x={x} n={n}"),
                prefactor: nf.powf(-(d as f64) / 2.0),
                abscissa: x.norm2() as f64 / nf,
                estimate: v,
                ci: (v, v),
                active: n as i64 >= x.l1(),
            });
        }
    }
    let all: Vec<EnvelopeInput> = inputs.iter().cloned().map(|p| EnvelopeInput { active: true, ..p }).collect();
    let upper = fit_envelope("srw_two_step", Side::Upper, ("c_upper", "rate_upper"), &all, None)?;
    let lower = fit_envelope("srw_two_step", Side::Lower, ("c_lower", "rate_lower"), &inputs, None)?;
    let collapse = collapse(&inputs, |p| p.active);
    Ok(TwoSidedFit { upper, lower, collapse })
}

/// Walk from a fixed start until it leaves `{m <= |z| <= n}`, hopping across
/// balls that stay inside the annulus.
struct AnnulusTask {
    start: Vec<i32>,
    m: f64,
    n: f64,
    seed: u64,
    lane: u64,
    max_steps: u64,
    ladder: Arc<HopLadder>,
}

#[derive(Default)]
struct AnnulusAcc {
    inner: u64,
}

impl ReplicaTask for AnnulusTask {
    type Acc = AnnulusAcc;
    type Worker = (Walker, Vec<i32>);

    fn new_acc(&self) -> AnnulusAcc {
        AnnulusAcc::default()
    }

    fn new_worker(&self) -> Result<Self::Worker> {
        Ok((Walker::new(self.start.len()), vec![0; self.start.len()]))
    }

    fn run(&self, (w, disp): &mut Self::Worker, replica: u64, acc: &mut AnnulusAcc) -> Result<()> {
        let mut rng = lane_stream(self.seed, self.lane, replica);
        w.reset_to(&self.start);
        let (m2, n2) = (self.m * self.m, self.n * self.n);
        let mut work = 0u64;
        loop {
            let r2 = w.r2 as f64;
            if r2 < m2 {
                acc.inner += 1;
                break;
            }
            if r2 > n2 {
                break;
            }
            if work >= self.max_steps {
                return Err(crate::error::LabError::Truncated { steps: work, cap: self.max_steps });
            }
            let r = r2.sqrt();
            let room = (r - self.m).min(self.n - r);
            match self.ladder.fitting(room) {
                Some(law) => {
                    law.sample(&mut rng, disp);
                    for (p, &dz) in w.pos.iter_mut().zip(disp.iter()) {
                        *p += dz;
                    }
                    w.r2 = crate::lattice::norm2(&w.pos);
                    work += law.mean_exit_time().ceil() as u64;
                }
                None => {
                    w.step(&mut rng)?;
                    work += 1;
                }
            }
        }
        Ok(())
    }

    fn merge(&self, into: &mut AnnulusAcc, from: AnnulusAcc) {
        into.inner += from.inner;
    }
}

/// Monte Carlo `P^x(|S_tau| < m)` for the exit time `tau` of
/// `{m <= |z| <= n}`; returns the number of inner exits.
pub fn annulus_inner_exits(
    start: &LatticePoint,
    m: f64,
    n: f64,
    replicas: u64,
    seed: u64,
    lane: u64,
    workers: usize,
) -> Result<u64> {
    let task = AnnulusTask {
        start: start.coords().to_vec(),
        m,
        n,
        seed,
        lane,
        max_steps: crate::config::DEFAULT_MAX_STEPS,
        ladder: HopLadder::shared(start.dim())?,
    };
    Ok(run_replicas(&task, replicas, workers)?.inner)
}

/// Replication settings shared by the Monte Carlo checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub seed: u64,
    pub replicas: u64,
    /// Never part of a report: results do not depend on it.
    #[serde(skip, default)]
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormulaRow {
    pub x: LatticePoint,
    pub hits: u64,
    pub replicas: u64,
    pub estimate: f64,
    pub ci95: (f64, f64),
    pub formula: f64,
    /// `formula -+ slack * error_scale / denominator`.
    pub band: (f64, f64),
    pub pass: bool,
}

/// Mean number of visits to the origin, counted until the walk leaves the
/// ball of radius `escape_radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnCount {
    pub replicas: u64,
    pub escape_radius: f64,
    pub mean: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    /// Means and standard errors of the two halves of the replicas.
    pub halves: [(f64, f64); 2],
    /// `|mean_1 - mean_2| / sqrt(se_1^2 + se_2^2)`.
    pub split_z: f64,
}

struct ReturnTask {
    d: usize,
    radius: f64,
    seed: u64,
    lane: u64,
    ladder: Arc<HopLadder>,
}

impl ReplicaTask for ReturnTask {
    /// Per half: (sum, sum of squares, count).
    type Acc = [(f64, f64, u64); 2];
    type Worker = (Walker, Vec<i32>);

    fn new_acc(&self) -> Self::Acc {
        [(0.0, 0.0, 0); 2]
    }

    fn new_worker(&self) -> Result<Self::Worker> {
        Ok((Walker::new(self.d), vec![0; self.d]))
    }

    fn run(&self, (w, disp): &mut Self::Worker, replica: u64, acc: &mut Self::Acc) -> Result<()> {
        let mut rng = lane_stream(self.seed, self.lane, replica);
        w.reset_to(&vec![0; self.d]);
        let r2_max = self.radius * self.radius;
        let mut visits = 1u64;
        while (w.r2 as f64) <= r2_max {
            let r = (w.r2 as f64).sqrt();
            // A ball excluding the origin cannot add visits.
            match self.ladder.fitting(r) {
                Some(law) => {
                    law.sample(&mut rng, disp);
                    for (p, &dz) in w.pos.iter_mut().zip(disp.iter()) {
                        *p += dz;
                    }
                    w.r2 = crate::lattice::norm2(&w.pos);
                }
                None => {
                    w.step(&mut rng)?;
                    if w.r2 == 0 {
                        visits += 1;
                    }
                }
            }
        }
        let v = visits as f64;
        let half = &mut acc[(replica % 2) as usize];
        half.0 += v;
        half.1 += v * v;
        half.2 += 1;
        Ok(())
    }

    fn merge(&self, into: &mut Self::Acc, from: Self::Acc) {
        for (a, b) in into.iter_mut().zip(from) {
            a.0 += b.0;
            a.1 += b.1;
            a.2 += b.2;
        }
    }
}

fn mean_se(sum: f64, sq: f64, n: u64) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sq - nf * mean * mean) / (nf - 1.0).max(1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Estimates `G(0) = sum_j P(S_j = 0)` by the mean visit count. Returns after
/// the walk leaves `B(escape_radius)` are dropped; they have probability of
/// order `escape_radius^{2-d}`.
pub fn green_at_origin(d: usize, escape_radius: f64, mc: &McSettings) -> Result<ReturnCount> {
    if d < 3 {
        return precondition(format!("G(0) is finite only for d >= 3, got {d}"));
    }
    if mc.replicas < 4 {
        return precondition("at least 4 replicas");
    }
    let task = ReturnTask { d, radius: escape_radius, seed: mc.seed, lane: LANE_CLASSICAL, ladder: HopLadder::shared(d)? };
    let acc = run_replicas(&task, mc.replicas, mc.workers)?;
    let (sum, sq, n) = acc.iter().fold((0.0, 0.0, 0), |a, h| (a.0 + h.0, a.1 + h.1, a.2 + h.2));
    let (mean, se) = mean_se(sum, sq, n);
    let halves = [mean_se(acc[0].0, acc[0].1, acc[0].2), mean_se(acc[1].0, acc[1].1, acc[1].2)];
    let split_z = (halves[0].0 - halves[1].0).abs() / (halves[0].1.powi(2) + halves[1].1.powi(2)).sqrt().max(f64::MIN_POSITIVE);
    Ok(ReturnCount { replicas: n, escape_radius, mean, se, ci95: normal_ci(mean, se, 0.95), halves, split_z })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusReport {
    pub d: usize,
    pub m: f64,
    pub n: f64,
    pub slack: f64,
    pub exits: Vec<FormulaRow>,
    pub green_origin: ReturnCount,
    /// `a` solved per point from `P^x(S_tau = 0)` with `m = 1`, with the
    /// interval mapped from the hit-frequency interval.
    pub a_per_point: Vec<(LatticePoint, f64, (f64, f64))>,
    /// Inverse-variance mean of `a` over the outer half of the points.
    pub a_plateau: f64,
    pub returns: Vec<FormulaRow>,
}

impl AnnulusReport {
    pub fn pass(&self) -> bool {
        self.exits.iter().chain(&self.returns).all(|r| r.pass)
    }
}

fn pow(r: f64, e: f64) -> f64 {
    r.powf(e)
}

/// Compares Monte Carlo exit laws of the annulus `{m <= |z| <= n}` with
/// `(|x|^{2-d} - n^{2-d}) / (m^{2-d} - n^{2-d})` up to
/// `slack * m^{1-d} / (m^{2-d} - n^{2-d})`, and the probability of exiting
/// through the origin (`m = 1`) with
/// `(a |x|^{2-d} - a n^{2-d}) / (G(0) - a n^{2-d})` up to
/// `slack * |x|^{1-d} / (G(0) - a n^{2-d})`.
pub fn annulus_and_return_checks(
    m: f64,
    n: f64,
    x_list: &[LatticePoint],
    slack: f64,
    return_replicas: u64,
    mc: &McSettings,
) -> Result<AnnulusReport> {
    if x_list.is_empty() {
        return precondition("no start points");
    }
    if !(m >= 1.0 && m < n) {
        return precondition(format!("need 1 <= m < n, got m = {m}, n = {n}"));
    }
    let d = x_list[0].dim();
    if d < 3 {
        return precondition("annulus formulas need d >= 3");
    }
    for x in x_list {
        if x.dim() != d {
            return precondition("points of mixed dimension");
        }
        let r = x.norm();
        if r < m || r > n {
            return precondition(format!("|x| = {r} outside [m, n] = [{m}, {n}]"));
        }
    }
    let e = 2.0 - d as f64;
    let denom = pow(m, e) - pow(n, e);
    let mut exits = Vec::new();
    for (k, x) in x_list.iter().enumerate() {
        let hits = annulus_inner_exits(x, m, n, mc.replicas, mc.seed, LANE_CLASSICAL + 1 + k as u64, mc.workers)?;
        let formula = (pow(x.norm(), e) - pow(n, e)) / denom;
        let half = slack * pow(m, 1.0 - d as f64) / denom;
        exits.push(row(x, hits, mc.replicas, formula, half));
    }

    let green_origin = green_at_origin(d, 4.0 * n, mc)?;
    let g0 = green_origin.mean;
    let mut a_per_point = Vec::new();
    let mut return_hits = Vec::new();
    for (k, x) in x_list.iter().enumerate() {
        let lane = LANE_CLASSICAL + 1 + (x_list.len() + k) as u64;
        let hits = annulus_inner_exits(x, 1.0, n, return_replicas, mc.seed, lane, mc.workers)?;
        let (lo, hi) = clopper_pearson(hits, return_replicas, 0.95);
        let solve = |h: f64| h * g0 / (pow(x.norm(), e) - pow(n, e) + h * pow(n, e));
        let h = hits as f64 / return_replicas as f64;
        a_per_point.push((x.clone(), solve(h), (solve(lo), solve(hi))));
        return_hits.push(hits);
    }
    let mut by_norm: Vec<usize> = (0..x_list.len()).collect();
    by_norm.sort_by(|&i, &j| x_list[i].norm().total_cmp(&x_list[j].norm()));
    let outer = &by_norm[by_norm.len() / 2..];
    let (mut num, mut den) = (0.0, 0.0);
    for &i in outer {
        let (_, a, (lo, hi)) = &a_per_point[i];
        let w = 1.0 / ((hi - lo) / 3.92).powi(2).max(f64::MIN_POSITIVE);
        num += w * a;
        den += w;
    }
    let a_plateau = num / den;
    let returns = x_list
        .iter()
        .zip(&return_hits)
        .map(|(x, &hits)| {
            let den = g0 - a_plateau * pow(n, e);
            let formula = (a_plateau * pow(x.norm(), e) - a_plateau * pow(n, e)) / den;
            let half = slack * pow(x.norm(), 1.0 - d as f64) / den;
            row(x, hits, return_replicas, formula, half)
        })
        .collect();
    Ok(AnnulusReport { d, m, n, slack, exits, green_origin, a_per_point, a_plateau, returns })
}

fn row(x: &LatticePoint, hits: u64, replicas: u64, formula: f64, half: f64) -> FormulaRow {
    let estimate = hits as f64 / replicas as f64;
    let band = (formula - half, formula + half);
    FormulaRow {
        x: x.clone(),
        hits,
        replicas,
        estimate,
        ci95: clopper_pearson(hits, replicas, 0.95),
        formula,
        band,
        pass: estimate >= band.0 && estimate <= band.1,
    }
}

/// One-dimensional ruin with absorbing barriers `{0, n}` from `m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuinExact {
    pub m: u64,
    pub n: u64,
    pub hits: u64,
    pub replicas: u64,
    pub frequency: f64,
    pub ci99: (f64, f64),
    pub exact: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectedRuin {
    pub m: u64,
    pub hits: u64,
    pub replicas: u64,
    pub estimate: f64,
    pub ci95: (f64, f64),
    /// `estimate / ((m + 1) / n)`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GamblerReport {
    pub d: usize,
    pub n: u64,
    pub exact_1d: RuinExact,
    pub projected: Vec<ProjectedRuin>,
    /// Smallest and largest ratio over the grid (candidate `alpha_1`,
    /// `alpha_2`).
    pub alpha: (f64, f64),
    pub ratio_spread: f64,
}

/// Walk in `Z^d` from `m e_1` until the first coordinate is `<= 0` or
/// `>= n`; counts exits at the far end.
struct RuinTask {
    d: usize,
    m: i32,
    n: i32,
    seed: u64,
    lane: u64,
    max_steps: u64,
}

impl ReplicaTask for RuinTask {
    type Acc = u64;
    type Worker = Walker;

    fn new_acc(&self) -> u64 {
        0
    }

    fn new_worker(&self) -> Result<Walker> {
        Ok(Walker::new(self.d))
    }

    fn run(&self, w: &mut Walker, replica: u64, acc: &mut u64) -> Result<()> {
        let mut rng: Stream = lane_stream(self.seed, self.lane, replica);
        let mut start = vec![0; self.d];
        start[0] = self.m;
        w.reset_to(&start);
        while w.pos[0] > 0 && w.pos[0] < self.n {
            if w.steps >= self.max_steps {
                return Err(crate::error::LabError::Truncated { steps: w.steps, cap: self.max_steps });
            }
            w.step(&mut rng)?;
        }
        if w.pos[0] >= self.n {
            *acc += 1;
        }
        Ok(())
    }

    fn merge(&self, into: &mut u64, from: u64) {
        *into += from;
    }
}

fn ruin_hits(d: usize, m: u64, n: u64, lane: u64, mc: &McSettings) -> Result<u64> {
    let task = RuinTask {
        d,
        m: m as i32,
        n: n as i32,
        seed: mc.seed,
        lane,
        max_steps: crate::config::DEFAULT_MAX_STEPS,
    };
    run_replicas(&task, mc.replicas, mc.workers)
}

/// Gambler's ruin: the exact one-dimensional check (`m_exact`, `n_exact`)
/// and the projection of the `d`-dimensional walk onto `e_1` over `m_list`.
pub fn gambler_ruin_check(
    d: usize,
    m_list: &[u64],
    n: u64,
    exact: (u64, u64),
    mc: &McSettings,
) -> Result<GamblerReport> {
    let (me, ne) = exact;
    if !(1 <= me && me <= ne) || ne > i32::MAX as u64 || n > i32::MAX as u64 {
        return precondition(format!("exact check needs 1 <= m <= n, got m = {me}, n = {ne}"));
    }
    if m_list.is_empty() || m_list.iter().any(|&m| m < 1 || m > n) {
        return precondition(format!("grid values must lie in 1..={n}"));
    }
    let hits = ruin_hits(1, me, ne, LANE_CLASSICAL, mc)?;
    let ci99 = clopper_pearson(hits, mc.replicas, 0.99);
    let p = me as f64 / ne as f64;
    let exact_1d = RuinExact {
        m: me,
        n: ne,
        hits,
        replicas: mc.replicas,
        frequency: hits as f64 / mc.replicas as f64,
        ci99,
        exact: p,
        pass: ci99.0 <= p && p <= ci99.1,
    };
    let mut projected = Vec::new();
    for (k, &m) in m_list.iter().enumerate() {
        let hits = ruin_hits(d, m, n, LANE_CLASSICAL + 1 + k as u64, mc)?;
        let estimate = hits as f64 / mc.replicas as f64;
        projected.push(ProjectedRuin {
            m,
            hits,
            replicas: mc.replicas,
            estimate,
            ci95: clopper_pearson(hits, mc.replicas, 0.95),
            ratio: estimate / ((m + 1) as f64 / n as f64),
        });
    }
    let lo = projected.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let hi = projected.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(GamblerReport { d, n, exact_1d, projected, alpha: (lo, hi), ratio_spread: hi / lo })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeReport {
    pub d: usize,
    pub radius: i32,
    pub replicas: u64,
    pub mean: f64,
    pub se: f64,
    /// Mean exit time from the Dirichlet problem on the ball.
    pub exact: f64,
    pub z: f64,
}

struct ExitTask {
    d: usize,
    radius: f64,
    seed: u64,
}

impl ReplicaTask for ExitTask {
    type Acc = (f64, f64);
    type Worker = ();

    fn new_acc(&self) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn new_worker(&self) -> Result<()> {
        Ok(())
    }

    fn run(&self, _: &mut (), replica: u64, acc: &mut (f64, f64)) -> Result<()> {
        let path = simulate_srw_until_exit(
            &LatticePoint::origin(self.d),
            self.radius,
            &mut rng_stream(self.seed, replica),
            crate::config::DEFAULT_MAX_STEPS,
        )?;
        let t = path.len() as f64;
        acc.0 += t;
        acc.1 += t * t;
        Ok(())
    }

    fn merge(&self, into: &mut (f64, f64), from: (f64, f64)) {
        into.0 += from.0;
        into.1 += from.1;
    }
}

/// Mean exit time of the walk from the ball of radius `radius`, against the
/// linear-system value.
pub fn exit_time_check(d: usize, radius: i32, mc: &McSettings) -> Result<ExitTimeReport> {
    if mc.replicas < 2 {
        return precondition("at least 2 replicas");
    }
    let exact = BallExitLaw::build(d, radius)?.mean_exit_time();
    let (s, sq) = run_replicas(&ExitTask { d, radius: radius as f64, seed: mc.seed }, mc.replicas, mc.workers)?;
    let (mean, se) = mean_se(s, sq, mc.replicas);
    Ok(ExitTimeReport { d, radius, replicas: mc.replicas, mean, se, exact, z: (mean - exact) / se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::DEFAULT_SLACK;

    fn brute_force(n: u64, x: &[i32]) -> f64 {
        // Transfer the full law step by step.
        use std::collections::HashMap;
        let d = x.len();
        let mut law: HashMap<Vec<i32>, f64> = HashMap::from([(vec![0; d], 1.0)]);
        for _ in 0..n {
            let mut next = HashMap::new();
            for (p, w) in &law {
                for i in 0..d {
                    for s in [-1, 1] {
                        let mut q = p.clone();
                        q[i] += s;
                        *next.entry(q).or_insert(0.0) += w / (2 * d) as f64;
                    }
                }
            }
            law = next;
        }
        law.get(x).copied().unwrap_or(0.0)
    }

    #[test]
    fn exact_law_matches_transfer() {
        for (n, x) in [(1, vec![1, 0, 0]), (4, vec![0, 0, 0]), (5, vec![1, -2, 0]), (6, vec![2, 2, 0]), (3, vec![1, 1, 0])] {
            let a = srw_point_probability(n, &x).unwrap();
            let b = brute_force(n, &x);
            assert!((a - b).abs() < 1e-14, "n={n} x={x:?}: {a} vs {b}");
        }
        assert!(srw_point_probability(MAX_EXACT_STEPS + 1, &[0]).is_err());
    }

    #[test]
    fn one_step_average() {
        let v = two_step_average(1, &[1, 0, 0, 0, 0]).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
        assert_eq!(two_step_average(2, &[3, 1, 0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_return_law() {
        // P(S_{2k} = 0) = C(2k, k) 4^{-k}.
        let v = srw_point_probability(20, &[0]).unwrap();
        assert!((v - 184756.0 / 1048576.0).abs() < 1e-14);
    }

    fn grid_points() -> Vec<LatticePoint> {
        let mut xs = Vec::new();
        for k in [1, 2, 4, 7, 10] {
            xs.push(LatticePoint::on_axis(5, 0, k));
        }
        xs.push(LatticePoint::new(vec![1, 1, 1, 1, 1]).unwrap());
        xs.push(LatticePoint::new(vec![3, 3, 3, 0, 0]).unwrap());
        xs.push(LatticePoint::new(vec![4, 4, 4, 4, 4]).unwrap());
        xs
    }

    #[test]
    fn gaussian_envelopes_feasible() {
        let ns: Vec<u64> = (1..=40).collect();
        let fit = srw_gaussian_check(&ns, &grid_points()).unwrap();
        assert!(fit.upper.feasible, "{:?}", fit.upper.violations);
        assert!(fit.lower.feasible, "{:?}", fit.lower.violations);
        assert!(fit.collapse.unwrap().slope < 0.0);
    }

    #[test]
    fn below_l1_norm_lower_is_inactive() {
        let x = LatticePoint::on_axis(5, 0, 10);
        let fit = srw_gaussian_check(&[4], &[x]).unwrap();
        let p = &fit.lower.per_point[0];
        assert!(!p.active && p.pass && p.estimate == 0.0);
    }

    fn mc(replicas: u64) -> McSettings {
        McSettings { seed: 9, replicas, workers: 1 }
    }

    #[test]
    fn one_dimensional_ruin_and_projection() {
        let r = gambler_ruin_check(5, &[1, 4, 16, 64], 64, (3, 10), &mc(20_000)).unwrap();
        assert!(r.exact_1d.pass, "{:?}", r.exact_1d);
        let last = r.projected.last().unwrap();
        assert_eq!(last.estimate, 1.0);
        assert!(r.ratio_spread < 4.0);
    }

    #[test]
    fn outer_boundary_start_never_exits_inside() {
        let x = LatticePoint::on_axis(5, 0, 32);
        assert_eq!(annulus_inner_exits(&x, 4.0, 32.0, 500, 1, 99, 1).unwrap(), 0);
    }

    #[test]
    fn green_at_origin_matches_known_value() {
        // G(0) for the simple random walk on Z^5 is 1.156308...
        let g = green_at_origin(5, 64.0, &mc(200_000)).unwrap();
        assert!((g.mean - 1.156308).abs() < 4.0 * g.se, "{} +- {}", g.mean, g.se);
        assert!(g.split_z < 4.0);
    }

    #[test]
    fn point_hitting_constant_near_green_asymptote() {
        // G(x) ~ a_d |x|^{2-d} with a_d = d Gamma(d/2 - 1) / (2 pi^{d/2}).
        let a5 = 5.0 * std::f64::consts::PI.sqrt() / 2.0 / (2.0 * std::f64::consts::PI.powf(2.5));
        let xs: Vec<LatticePoint> = [3, 4, 6].iter().map(|&k| LatticePoint::on_axis(5, 0, k)).collect();
        let r = annulus_and_return_checks(2.0, 32.0, &xs, DEFAULT_SLACK, 400_000, &mc(4_000)).unwrap();
        assert!((r.a_plateau / a5 - 1.0).abs() < 0.2, "a = {} vs {a5}", r.a_plateau);
        assert!(r.pass());
    }

    #[test]
    fn exit_time_small_ball() {
        let r = exit_time_check(3, 4, &mc(20_000)).unwrap();
        assert!(r.z.abs() < 4.0, "{r:?}");
    }
}
