//! Monte Carlo estimators for the LERW site law, the hitting index `tau_x`,
//! the annealed heat kernel of the walk on the trace, `P(x in G)` and the
//! extrinsic displacement.
//!
//! Most of them read one shared [`MasterSample`]: every replica draws a
//! certified prefix of length at least `horizon` and records, for each target,
//! the index at which the prefix visits it. Window probabilities, histograms
//! and the Rao-Blackwell estimator are functions of those counts. The direct
//! estimator additionally draws `Y_t` on an independent clock lane and reads
//! `L_{Y_t}` from the prefix.

use std::collections::BTreeMap;

use rand::RngCore;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{precondition, LabError, Result};
use crate::kernel::KernelRow;
use crate::lattice::LatticePoint;
use crate::lerw::{PrefixPlan, PrefixSampler};
use crate::loop_erasure::IncrementalEraser;
use crate::oracle::{Functional, Outcome};
use crate::parallel::{run_replicas, ReplicaTask};
use crate::records::EstimateRecord;
use crate::rng::{lane_stream, rng_stream, LANE_CLOCK};
use crate::stats::{binomial_sigma, clopper_pearson, linear_fit, multinomial_simultaneous, normal_ci, slope_weights};
use crate::walk::Walker;

/// Largest rejected fraction of the direct estimator.
pub const MAX_OVERRUN_FRACTION: f64 = 1e-3;

/// Position of the walk on `Z_+` after a Poisson(`t`) number of jump-chain
/// steps: `|S_N|` for a simple walk `S` on `Z`, i.e. `|2 Bin(N, 1/2) - N|`.
pub fn sample_clock<R: RngCore>(t: f64, rng: &mut R) -> u64 {
    if t <= 0.0 {
        return 0;
    }
    let n = Poisson::new(t).expect("positive finite rate").sample(rng) as u64;
    if n == 0 {
        return 0;
    }
    let b = Binomial::new(n, 0.5).expect("valid binomial").sample(rng);
    (2 * b).abs_diff(n)
}

/// What a shared run records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterPlan {
    pub config: SimConfig,
    pub targets: Vec<LatticePoint>,
    /// Every replica's certified prefix has at least this many points past
    /// the origin; hitting indices below it are tabulated.
    pub horizon: usize,
    /// Times at which the direct estimator samples `L_{Y_t}`.
    pub clock_times: Vec<f64>,
}

impl MasterPlan {
    pub fn new(config: SimConfig, targets: Vec<LatticePoint>, horizon: usize) -> Self {
        Self { config, targets, horizon, clock_times: Vec::new() }
    }

    pub fn with_clock_times(mut self, times: Vec<f64>) -> Self {
        self.clock_times = times;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate_experiment()?;
        for x in &self.targets {
            if x.dim() != self.config.d {
                return precondition(format!("target {x} is not in dimension {}", self.config.d));
            }
            if 2.0 * x.norm() > self.config.r_in {
                return precondition(format!("target {x} needs r_in >= {}", 2.0 * x.norm()));
            }
        }
        if let Some(t) = self.clock_times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return precondition(format!("clock time {t} is not a finite nonnegative number"));
        }
        Ok(())
    }
}

/// Integer tallies of a shared run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterSample {
    pub plan: MasterPlan,
    pub replicas: u64,
    pub bias_bound: f64,
    /// `hist[k][m]`: replicas whose prefix visits target `k` at index `m`.
    pub hist: Vec<Vec<u64>>,
    /// Visits at an index at or beyond the horizon (still certified).
    pub beyond: Vec<u64>,
    /// Replicas whose certified prefix misses the target.
    pub miss: Vec<u64>,
    /// `direct_hits[k][i]`: replicas with `L_{Y_{t_i}}` equal to target `k`.
    pub direct_hits: Vec<Vec<u64>>,
    /// Replicas whose `Y_{t_i}` fell beyond their certified prefix.
    pub direct_overruns: Vec<u64>,
    pub steps: u64,
    pub hops: u64,
    pub stable_len_total: u64,
    pub max_inner_radius: f64,
}

struct MasterTask<'a> {
    plan: &'a MasterPlan,
    prefix: PrefixPlan,
}

impl ReplicaTask for MasterTask<'_> {
    type Acc = MasterSample;
    type Worker = PrefixSampler;

    fn new_acc(&self) -> MasterSample {
        let nt = self.plan.targets.len();
        let nc = self.plan.clock_times.len();
        MasterSample {
            plan: self.plan.clone(),
            replicas: 0,
            bias_bound: self.plan.config.bias_bound(),
            hist: vec![vec![0; self.plan.horizon]; nt],
            beyond: vec![0; nt],
            miss: vec![0; nt],
            direct_hits: vec![vec![0; nc]; nt],
            direct_overruns: vec![0; nc],
            steps: 0,
            hops: 0,
            stable_len_total: 0,
            max_inner_radius: 0.0,
        }
    }

    fn new_worker(&self) -> Result<PrefixSampler> {
        PrefixSampler::new(self.prefix.clone())
    }

    fn run(&self, s: &mut PrefixSampler, replica: u64, acc: &mut MasterSample) -> Result<()> {
        let seed = self.plan.config.seed;
        s.sample(&mut rng_stream(seed, replica))?;
        for (k, x) in self.plan.targets.iter().enumerate() {
            match s.index_of(x.coords()) {
                Some(i) if i < self.plan.horizon => acc.hist[k][i] += 1,
                Some(_) => acc.beyond[k] += 1,
                None => acc.miss[k] += 1,
            }
        }
        if !self.plan.clock_times.is_empty() {
            let mut clock = lane_stream(seed, LANE_CLOCK, replica);
            for (i, &t) in self.plan.clock_times.iter().enumerate() {
                let y = sample_clock(t, &mut clock);
                if y > s.stable_len() as u64 {
                    acc.direct_overruns[i] += 1;
                    continue;
                }
                let here = s.point(y as usize);
                for (k, x) in self.plan.targets.iter().enumerate() {
                    if here == x.coords() {
                        acc.direct_hits[k][i] += 1;
                    }
                }
            }
        }
        acc.replicas += 1;
        acc.steps += s.steps();
        acc.hops += s.hops();
        acc.stable_len_total += s.stable_len() as u64;
        acc.max_inner_radius = acc.max_inner_radius.max(s.inner_radius());
        Ok(())
    }

    fn merge(&self, into: &mut MasterSample, from: MasterSample) {
        into.replicas += from.replicas;
        for (a, b) in into.hist.iter_mut().zip(&from.hist) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in into.direct_hits.iter_mut().zip(&from.direct_hits) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        into.beyond.iter_mut().zip(&from.beyond).for_each(|(x, y)| *x += y);
        into.miss.iter_mut().zip(&from.miss).for_each(|(x, y)| *x += y);
        into.direct_overruns.iter_mut().zip(&from.direct_overruns).for_each(|(x, y)| *x += y);
        into.steps += from.steps;
        into.hops += from.hops;
        into.stable_len_total += from.stable_len_total;
        into.max_inner_radius = into.max_inner_radius.max(from.max_inner_radius);
    }
}

pub fn run_master(plan: &MasterPlan, workers: usize) -> Result<MasterSample> {
    plan.validate()?;
    let prefix = PrefixPlan::new(&plan.config, plan.horizon);
    let task = MasterTask { plan, prefix };
    run_replicas(&task, plan.config.replica_count, workers)
}

impl MasterSample {
    pub fn target_index(&self, x: &LatticePoint) -> Result<usize> {
        self.plan
            .targets
            .iter()
            .position(|t| t == x)
            .ok_or_else(|| LabError::Precondition(format!("target {x} was not recorded in this run")))
    }

    /// Replicas whose certified prefix visits the target at an index in
    /// `[lo, hi]`.
    pub fn window_count(&self, k: usize, lo: usize, hi: usize) -> Result<u64> {
        if hi >= self.plan.horizon {
            return precondition(format!(
                "window [{lo}, {hi}] is not resolvable: prefixes are certified up to index {}",
                self.plan.horizon - 1
            ));
        }
        if lo > hi {
            return Ok(0);
        }
        Ok(self.hist[k][lo..=hi].iter().sum())
    }
}

/// Estimate of `(1/n) sum_{m in window} P(L_m = x) = P(tau_x in window) / n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitWindowEstimate {
    pub x: LatticePoint,
    pub n: u64,
    pub window: (usize, usize),
    pub hits: u64,
    pub replicas: u64,
    pub estimate: f64,
    pub ci95: (f64, f64),
    /// Binomial standard error of `estimate`.
    pub sigma: f64,
    pub bias_bound: f64,
}

impl HitWindowEstimate {
    pub fn record(&self, seed: u64) -> EstimateRecord {
        EstimateRecord {
            quantity: "window_hit".into(),
            x: self.x.coords().to_vec(),
            t: None,
            n: Some(self.n),
            method: "monte_carlo".into(),
            value: self.estimate,
            ci_lo: self.ci95.0,
            ci_hi: self.ci95.1,
            replicas: self.replicas,
            bias_bound: self.bias_bound,
            seed,
        }
    }
}

/// `R_in >= 2 (|x| v sqrt(2n))`.
pub fn check_window_resolved(x: &LatticePoint, n: u64, r_in: f64) -> Result<()> {
    let need = 2.0 * x.norm().max((2.0 * n as f64).sqrt());
    if r_in < need {
        return precondition(format!("window n = {n} at x = {x} needs r_in >= {need}, got {r_in}"));
    }
    Ok(())
}

/// Window estimate over `[lo, hi]`, normalised by `n`.
pub fn window_estimate(master: &MasterSample, x: &LatticePoint, n: u64, lo: usize, hi: usize) -> Result<HitWindowEstimate> {
    if n == 0 {
        return precondition("n must be at least 1");
    }
    check_window_resolved(x, n, master.plan.config.r_in)?;
    let k = master.target_index(x)?;
    let hits = master.window_count(k, lo, hi)?;
    let r = master.replicas;
    let (lo_p, hi_p) = clopper_pearson(hits, r, 0.95);
    let nf = n as f64;
    Ok(HitWindowEstimate {
        x: x.clone(),
        n,
        window: (lo, hi),
        hits,
        replicas: r,
        estimate: hits as f64 / r as f64 / nf,
        ci95: (lo_p / nf, hi_p / nf),
        sigma: binomial_sigma(hits, r) / nf,
        bias_bound: master.bias_bound,
    })
}

/// The standard window `[n, 2n - 1]`.
pub fn window_hit(master: &MasterSample, x: &LatticePoint, n: u64) -> Result<HitWindowEstimate> {
    window_estimate(master, x, n, n as usize, 2 * n as usize - 1)
}

/// Stand-alone window estimate with its own run.
pub fn estimate_window_hit(x: &LatticePoint, n: u64, config: &SimConfig, workers: usize) -> Result<HitWindowEstimate> {
    if x.is_origin() {
        return precondition("x must differ from the origin");
    }
    if n == 0 {
        return precondition("n must be at least 1");
    }
    check_window_resolved(x, n, config.r_in)?;
    let master = run_master(&MasterPlan::new(config.clone(), vec![x.clone()], 2 * n as usize), workers)?;
    window_hit(&master, x, n)
}

/// Histogram of `tau_x` over caller-chosen bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauHistogram {
    pub x: LatticePoint,
    pub bins: Vec<(usize, usize)>,
    pub counts: Vec<u64>,
    /// Visits inside the certified prefix but outside every bin.
    pub other: u64,
    pub miss: u64,
    pub replicas: u64,
    /// Simultaneous 95% intervals for the bin probabilities, then `other`,
    /// then `miss`.
    pub ci95: Vec<(f64, f64)>,
}

pub fn tau_histogram(master: &MasterSample, x: &LatticePoint, bins: &[(usize, usize)]) -> Result<TauHistogram> {
    if x.is_origin() {
        return precondition("x must differ from the origin");
    }
    let k = master.target_index(x)?;
    let l1 = x.l1() as usize;
    let mut sorted = bins.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[1].0 <= w[0].1) || sorted.iter().any(|b| b.0 > b.1) {
        return precondition("bins must be nonempty and disjoint");
    }
    if let Some(b) = sorted.first() {
        if b.0 > l1 {
            return precondition(format!("bins must start at |x|_1 = {l1}"));
        }
    }
    let mut counts = Vec::with_capacity(bins.len());
    for &(lo, hi) in bins {
        counts.push(master.window_count(k, lo, hi)?);
    }
    let binned: u64 = counts.iter().sum();
    let in_prefix: u64 = master.hist[k].iter().sum::<u64>() + master.beyond[k];
    let other = in_prefix - binned;
    let mut cells = counts.clone();
    cells.push(other);
    cells.push(master.miss[k]);
    Ok(TauHistogram {
        x: x.clone(),
        bins: bins.to_vec(),
        counts,
        other,
        miss: master.miss[k],
        replicas: master.replicas,
        ci95: multinomial_simultaneous(&cells, 0.95),
    })
}

/// Stand-alone histogram run.
pub fn estimate_tau_histogram(x: &LatticePoint, bins: &[(usize, usize)], config: &SimConfig, workers: usize) -> Result<TauHistogram> {
    let horizon = bins.iter().map(|b| b.1 + 1).max().unwrap_or(1);
    let master = run_master(&MasterPlan::new(config.clone(), vec![x.clone()], horizon), workers)?;
    tau_histogram(&master, x, bins)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealedMethod {
    RaoBlackwell,
    Direct,
}

/// Estimate of `P(X_t = x)` for the walk on the trace, averaged over the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealedEstimate {
    pub x: LatticePoint,
    pub t: f64,
    pub method: AnnealedMethod,
    pub value: f64,
    pub ci95: (f64, f64),
    pub se: f64,
    pub replicas: u64,
    /// Direct estimator only: replicas whose clock overran the prefix.
    pub rejected: u64,
    /// LERW truncation certificate plus the kernel mass the estimator ignores.
    pub bias_bound: f64,
}

impl AnnealedEstimate {
    pub fn record(&self, seed: u64) -> EstimateRecord {
        EstimateRecord {
            quantity: "annealed_kernel".into(),
            x: self.x.coords().to_vec(),
            t: Some(self.t),
            n: None,
            method: match self.method {
                AnnealedMethod::RaoBlackwell => "rao_blackwell".into(),
                AnnealedMethod::Direct => "direct".into(),
            },
            value: self.value,
            ci_lo: self.ci95.0,
            ci_hi: self.ci95.1,
            replicas: self.replicas,
            bias_bound: self.bias_bound,
            seed,
        }
    }
}

/// Mean over replicas of `q_t(0, tau_x) 1{tau_x < horizon}`.
pub fn rao_blackwell(master: &MasterSample, x: &LatticePoint, row: &KernelRow) -> Result<AnnealedEstimate> {
    let k = master.target_index(x)?;
    let h = master.plan.horizon;
    if row.m_max + 1 < h {
        return precondition(format!("kernel row ends at {} but the horizon is {h}", row.m_max));
    }
    let ignored = row.tail_beyond(h - 1) + row.truncation_error;
    if ignored >= row.tol {
        return Err(LabError::Overrun(format!(
            "kernel mass {ignored:.2e} beyond horizon {h} at t = {} is not below tol {:e}",
            row.t, row.tol
        )));
    }
    let r = master.replicas as f64;
    let mut mean = 0.0;
    let mut second = 0.0;
    for (m, &c) in master.hist[k].iter().enumerate() {
        if c > 0 {
            let q = row.get(m);
            let f = c as f64 / r;
            mean += q * f;
            second += q * q * f;
        }
    }
    let var = if master.replicas > 1 { (second - mean * mean).max(0.0) * r / (r - 1.0) } else { 0.0 };
    let se = (var / r).sqrt();
    let (lo, hi) = normal_ci(mean, se, 0.95);
    Ok(AnnealedEstimate {
        x: x.clone(),
        t: row.t,
        method: AnnealedMethod::RaoBlackwell,
        value: mean,
        ci95: (lo.max(0.0), hi.min(1.0)),
        se,
        replicas: master.replicas,
        rejected: 0,
        bias_bound: master.bias_bound + ignored,
    })
}

/// Frequency of `L_{Y_t} = x` over replicas whose clock stayed inside the
/// certified prefix.
pub fn direct(master: &MasterSample, x: &LatticePoint, t: f64) -> Result<AnnealedEstimate> {
    let k = master.target_index(x)?;
    let i = master
        .plan
        .clock_times
        .iter()
        .position(|&s| s == t)
        .ok_or_else(|| LabError::Precondition(format!("time {t} was not sampled in this run")))?;
    let rejected = master.direct_overruns[i];
    if rejected as f64 > MAX_OVERRUN_FRACTION * master.replicas as f64 {
        return Err(LabError::Overrun(format!(
            "{rejected} of {} replicas overran the prefix at t = {t}",
            master.replicas
        )));
    }
    let used = master.replicas - rejected;
    let hits = master.direct_hits[k][i];
    let (lo, hi) = clopper_pearson(hits, used, 0.95);
    Ok(AnnealedEstimate {
        x: x.clone(),
        t,
        method: AnnealedMethod::Direct,
        value: hits as f64 / used as f64,
        ci95: (lo, hi),
        se: binomial_sigma(hits, used),
        replicas: used,
        rejected,
        bias_bound: master.bias_bound + rejected as f64 / master.replicas as f64,
    })
}

/// Horizon large enough for every time in `times`: kernel rows built at
/// `tol` then ignore less than `tol` beyond it (half for the tail, the rest
/// for the rows' own truncation error).
pub fn annealed_horizon(times: &[f64], tol: f64) -> Result<usize> {
    let mut h = 1;
    for &t in times {
        h = h.max(crate::kernel::kernel_horizon(t, tol / 2.0)? + 1);
    }
    Ok(h)
}

/// Both annealed estimators for one `(x, t)`, from a dedicated run.
pub fn estimate_annealed(x: &LatticePoint, t: f64, config: &SimConfig, tol: f64, workers: usize) -> Result<(AnnealedEstimate, AnnealedEstimate)> {
    let horizon = annealed_horizon(&[t], tol)?;
    let plan = MasterPlan::new(config.clone(), vec![x.clone()], horizon).with_clock_times(vec![t]);
    let master = run_master(&plan, workers)?;
    let row = KernelRow::origin(t, horizon, tol)?;
    Ok((rao_blackwell(&master, x, &row)?, direct(&master, x, t)?))
}

/// `P(x in G)` next to `P(x in S[0, oo))`, recorded on the same walks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenReport {
    pub x: LatticePoint,
    pub replicas: u64,
    pub lerw_hits: u64,
    pub srw_hits: u64,
    /// Replicas where the prefix visits `x` but the walk does not; always 0.
    pub violations: u64,
    pub p_lerw: f64,
    pub p_lerw_ci: (f64, f64),
    pub p_srw: f64,
    pub p_srw_ci: (f64, f64),
    /// `|x|^{d-2}` times the probabilities and their intervals.
    pub ratio_lerw: f64,
    pub ratio_lerw_ci: (f64, f64),
    pub ratio_srw: f64,
    pub ratio_srw_ci: (f64, f64),
    pub bias_bound: f64,
}

impl GreenReport {
    pub fn records(&self, seed: u64) -> [EstimateRecord; 2] {
        let rec = |quantity: &str, v: f64, ci: (f64, f64)| EstimateRecord {
            quantity: quantity.into(),
            x: self.x.coords().to_vec(),
            t: None,
            n: None,
            method: "monte_carlo".into(),
            value: v,
            ci_lo: ci.0,
            ci_hi: ci.1,
            replicas: self.replicas,
            bias_bound: self.bias_bound,
            seed,
        };
        [rec("p_lerw", self.p_lerw, self.p_lerw_ci), rec("p_srw", self.p_srw, self.p_srw_ci)]
    }
}

#[derive(Clone, Debug, Default)]
struct GreenAcc {
    replicas: u64,
    lerw: Vec<u64>,
    srw: Vec<u64>,
    violations: Vec<u64>,
}

struct GreenTask<'a> {
    seed: u64,
    targets: &'a [LatticePoint],
    prefix: PrefixPlan,
}

impl ReplicaTask for GreenTask<'_> {
    type Acc = GreenAcc;
    type Worker = PrefixSampler;

    fn new_acc(&self) -> GreenAcc {
        let n = self.targets.len();
        GreenAcc { replicas: 0, lerw: vec![0; n], srw: vec![0; n], violations: vec![0; n] }
    }

    fn new_worker(&self) -> Result<PrefixSampler> {
        PrefixSampler::new(self.prefix.clone())
    }

    fn run(&self, s: &mut PrefixSampler, replica: u64, acc: &mut GreenAcc) -> Result<()> {
        s.sample(&mut rng_stream(self.seed, replica))?;
        for (k, x) in self.targets.iter().enumerate() {
            let on_lerw = s.index_of(x.coords()).is_some();
            let on_srw = s.watched_hits()[k];
            acc.lerw[k] += on_lerw as u64;
            acc.srw[k] += on_srw as u64;
            acc.violations[k] += (on_lerw && !on_srw) as u64;
        }
        acc.replicas += 1;
        Ok(())
    }

    fn merge(&self, into: &mut GreenAcc, from: GreenAcc) {
        into.replicas += from.replicas;
        for (a, b) in [(&mut into.lerw, &from.lerw), (&mut into.srw, &from.srw), (&mut into.violations, &from.violations)] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

pub fn estimate_green(targets: &[LatticePoint], config: &SimConfig, workers: usize) -> Result<Vec<GreenReport>> {
    // The master validation covers dimension and r_in >= 2|x|.
    MasterPlan::new(config.clone(), targets.to_vec(), 0).validate()?;
    let prefix = PrefixPlan::new(config, 0).with_watch(targets.to_vec());
    let task = GreenTask { seed: config.seed, targets, prefix };
    let acc = run_replicas(&task, config.replica_count, workers)?;
    let r = acc.replicas;
    Ok(targets
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let scale = if x.is_origin() { 1.0 } else { x.norm().powi(config.d as i32 - 2) };
            let p_lerw_ci = clopper_pearson(acc.lerw[k], r, 0.95);
            let p_srw_ci = clopper_pearson(acc.srw[k], r, 0.95);
            let p_lerw = acc.lerw[k] as f64 / r as f64;
            let p_srw = acc.srw[k] as f64 / r as f64;
            GreenReport {
                x: x.clone(),
                replicas: r,
                lerw_hits: acc.lerw[k],
                srw_hits: acc.srw[k],
                violations: acc.violations[k],
                p_lerw,
                p_lerw_ci,
                p_srw,
                p_srw_ci,
                ratio_lerw: scale * p_lerw,
                ratio_lerw_ci: (scale * p_lerw_ci.0, scale * p_lerw_ci.1),
                ratio_srw: scale * p_srw,
                ratio_srw_ci: (scale * p_srw_ci.0, scale * p_srw_ci.1),
                bias_bound: config.bias_bound(),
            }
        })
        .collect())
}

/// Regression of `log E|X_t|` on `log t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementFit {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub slope: f64,
    /// Delta-method standard error from the replica covariance of the means.
    pub slope_se: f64,
    pub slope_ci95: (f64, f64),
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementReport {
    pub t_grid: Vec<f64>,
    pub replicas: u64,
    pub horizon: usize,
    pub tol: f64,
    pub lerw: DisplacementFit,
    /// Same harness with `|S_m|` of the underlying walk in place of `|L_m|`.
    pub control: Option<DisplacementFit>,
    pub bias_bound: f64,
}

#[derive(Clone, Debug)]
struct MomentAcc {
    replicas: u64,
    sum: Vec<f64>,
    cross: Vec<f64>,
    ctrl_sum: Vec<f64>,
    ctrl_cross: Vec<f64>,
}

fn add_moments(v: &[f64], sum: &mut [f64], cross: &mut [f64]) {
    let n = v.len();
    for i in 0..n {
        sum[i] += v[i];
        for j in 0..n {
            cross[i * n + j] += v[i] * v[j];
        }
    }
}

struct DisplacementTask<'a> {
    seed: u64,
    rows: &'a [KernelRow],
    horizon: usize,
    control: bool,
    prefix: PrefixPlan,
}

struct DisplacementWorker {
    sampler: PrefixSampler,
    norms: Vec<f64>,
    f: Vec<f64>,
}

impl ReplicaTask for DisplacementTask<'_> {
    type Acc = MomentAcc;
    type Worker = DisplacementWorker;

    fn new_acc(&self) -> MomentAcc {
        let t = self.rows.len();
        let c = if self.control { t } else { 0 };
        MomentAcc { replicas: 0, sum: vec![0.0; t], cross: vec![0.0; t * t], ctrl_sum: vec![0.0; c], ctrl_cross: vec![0.0; c * c] }
    }

    fn new_worker(&self) -> Result<DisplacementWorker> {
        Ok(DisplacementWorker {
            sampler: PrefixSampler::new(self.prefix.clone())?,
            norms: vec![0.0; self.horizon],
            f: vec![0.0; self.rows.len()],
        })
    }

    fn run(&self, w: &mut DisplacementWorker, replica: u64, acc: &mut MomentAcc) -> Result<()> {
        w.sampler.sample(&mut rng_stream(self.seed, replica))?;
        for (m, slot) in w.norms.iter_mut().enumerate() {
            *slot = (crate::lattice::norm2(w.sampler.point(m)) as f64).sqrt();
        }
        kernel_weighted(self.rows, &w.norms, &mut w.f);
        add_moments(&w.f, &mut acc.sum, &mut acc.cross);
        if self.control {
            for (slot, &r2) in w.norms.iter_mut().zip(w.sampler.walk_norm2()) {
                *slot = (r2 as f64).sqrt();
            }
            kernel_weighted(self.rows, &w.norms, &mut w.f);
            add_moments(&w.f, &mut acc.ctrl_sum, &mut acc.ctrl_cross);
        }
        acc.replicas += 1;
        Ok(())
    }

    fn merge(&self, into: &mut MomentAcc, from: MomentAcc) {
        into.replicas += from.replicas;
        for (a, b) in [
            (&mut into.sum, &from.sum),
            (&mut into.cross, &from.cross),
            (&mut into.ctrl_sum, &from.ctrl_sum),
            (&mut into.ctrl_cross, &from.ctrl_cross),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// `f_i = sum_m q_{t_i}(0, m) g(m)`.
fn kernel_weighted(rows: &[KernelRow], g: &[f64], out: &mut [f64]) {
    for (row, slot) in rows.iter().zip(out.iter_mut()) {
        *slot = row.values.iter().zip(g).map(|(q, v)| q * v).sum();
    }
}

fn displacement_fit(t_grid: &[f64], replicas: u64, sum: &[f64], cross: &[f64]) -> Result<DisplacementFit> {
    let n = t_grid.len();
    let r = replicas as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / r).collect();
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cov[i * n + j] = (cross[i * n + j] / r - mean[i] * mean[j]) * r / (r - 1.0) / r;
        }
    }
    let se: Vec<f64> = (0..n).map(|i| cov[i * n + i].max(0.0).sqrt()).collect();
    if mean.iter().any(|&m| m <= 0.0) {
        return Err(LabError::Domain("mean displacement vanished at some time".into()));
    }
    let lx: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = mean.iter().map(|m| m.ln()).collect();
    let fit = linear_fit(&lx, &ly).ok_or_else(|| LabError::Domain("degenerate time grid".into()))?;
    let w = slope_weights(&lx);
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            var += w[i] * w[j] * cov[i * n + j] / (mean[i] * mean[j]);
        }
    }
    let slope_se = var.max(0.0).sqrt();
    Ok(DisplacementFit {
        mean,
        se,
        slope: fit.slope,
        slope_se,
        slope_ci95: normal_ci(fit.slope, slope_se, 0.95),
        r2: fit.r2,
    })
}

/// Estimates `E|X_t|` on a time grid by averaging `sum_m q_t(0, m) |L_m|`
/// over replicas, and regresses its logarithm on `log t`. With `control` the
/// same harness is run on `|S_m|` of the underlying walk.
pub fn estimate_displacement_exponent(
    t_grid: &[f64],
    config: &SimConfig,
    tol: f64,
    control: bool,
    workers: usize,
) -> Result<DisplacementReport> {
    config.validate_experiment()?;
    if t_grid.len() < 3 || t_grid.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return precondition("time grid needs at least three positive times");
    }
    let (lo, hi) = t_grid.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
    if (hi / lo).log10() < 2.5 {
        return precondition(format!("time grid spans {:.2} decades, at least 2.5 are needed", (hi / lo).log10()));
    }
    if config.replica_count < 2 {
        return precondition("at least two replicas are needed");
    }
    let horizon = annealed_horizon(t_grid, tol)?;
    let rows = t_grid
        .iter()
        .map(|&t| KernelRow::origin(t, horizon - 1, tol))
        .collect::<Result<Vec<_>>>()?;
    for row in &rows {
        let ignored = row.tail_mass + row.truncation_error;
        if ignored >= tol {
            return Err(LabError::Overrun(format!("kernel mass {ignored:.2e} beyond horizon at t = {}", row.t)));
        }
    }
    let mut prefix = PrefixPlan::new(config, horizon);
    if control {
        prefix = prefix.with_record_walk(horizon);
    }
    let task = DisplacementTask { seed: config.seed, rows: &rows, horizon, control, prefix };
    let acc = run_replicas(&task, config.replica_count, workers)?;
    let lerw = displacement_fit(t_grid, acc.replicas, &acc.sum, &acc.cross)?;
    let control = if control { Some(displacement_fit(t_grid, acc.replicas, &acc.ctrl_sum, &acc.ctrl_cross)?) } else { None };
    Ok(DisplacementReport {
        t_grid: t_grid.to_vec(),
        replicas: acc.replicas,
        horizon,
        tol,
        lerw,
        control,
        bias_bound: config.bias_bound(),
    })
}

/// Monte Carlo law of functionals of `LE(S[0, N])`, the quantity the
/// enumeration oracle computes exactly. Uses the online eraser.
pub fn sample_truncated_laws(
    n: usize,
    d: usize,
    functionals: &[Functional],
    replicas: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<BTreeMap<Outcome, u64>>> {
    if d == 0 || d > 16 {
        return precondition(format!("dimension {d} outside 1..=16"));
    }
    struct Task<'a> {
        n: usize,
        d: usize,
        seed: u64,
        functionals: &'a [Functional],
    }
    impl ReplicaTask for Task<'_> {
        type Acc = Vec<BTreeMap<Outcome, u64>>;
        type Worker = (Walker, IncrementalEraser);

        fn new_acc(&self) -> Self::Acc {
            vec![BTreeMap::new(); self.functionals.len()]
        }
        fn new_worker(&self) -> Result<Self::Worker> {
            Ok((Walker::new(self.d), IncrementalEraser::new(self.d)))
        }
        fn run(&self, (w, le): &mut Self::Worker, replica: u64, acc: &mut Self::Acc) -> Result<()> {
            let mut rng = rng_stream(self.seed, replica);
            w.reset_to(&vec![0; self.d]);
            le.clear();
            le.push_unchecked(&w.pos);
            for _ in 0..self.n {
                w.step(&mut rng)?;
                le.push_unchecked(&w.pos);
            }
            for (f, tally) in self.functionals.iter().zip(acc.iter_mut()) {
                *tally.entry(f.outcome(self.d, le.flat())).or_insert(0) += 1;
            }
            Ok(())
        }
        fn merge(&self, into: &mut Self::Acc, from: Self::Acc) {
            for (a, b) in into.iter_mut().zip(from) {
                for (o, c) in b {
                    *a.entry(o).or_insert(0) += c;
                }
            }
        }
    }
    run_replicas(&Task { n, d, seed, functionals }, replicas, workers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(replicas: u64) -> SimConfig {
        SimConfig::new(5, replicas, 8.0)
    }

    #[test]
    fn clock_matches_kernel_at_origin() {
        // P(Y_t = 0) = q_t(0, 0).
        let t = 3.0;
        let q = crate::kernel::q_t(t, 0, 0, 1e-9).unwrap();
        let reps = 200_000u64;
        let mut rng = lane_stream(5, LANE_CLOCK, 0);
        let zeros = (0..reps).filter(|_| sample_clock(t, &mut rng) == 0).count() as u64;
        let (lo, hi) = clopper_pearson(zeros, reps, 0.999);
        assert!(lo <= q && q <= hi, "{lo} {q} {hi}");
        assert_eq!(sample_clock(0.0, &mut rng), 0);
    }

    #[test]
    fn histogram_partitions_replicas() {
        let x = LatticePoint::on_axis(5, 0, 2);
        let plan = MasterPlan::new(small_config(3000), vec![x.clone()], 30);
        let m = run_master(&plan, 1).unwrap();
        let h = tau_histogram(&m, &x, &[(2, 5), (6, 29)]).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>() + h.other + h.miss, h.replicas);
        assert_eq!(h.ci95.len(), 4);
        // Windows below |x|_1 are empty.
        assert_eq!(m.window_count(0, 0, 1).unwrap(), 0);
        assert!(m.window_count(0, 0, 30).is_err());
    }

    #[test]
    fn window_consistent_with_histogram() {
        let x = LatticePoint::on_axis(5, 0, 1);
        let plan = MasterPlan::new(small_config(2000), vec![x.clone()], 8);
        let m = run_master(&plan, 1).unwrap();
        let w = window_hit(&m, &x, 2).unwrap();
        let h = tau_histogram(&m, &x, &[(1, 1), (2, 3)]).unwrap();
        assert_eq!(w.hits, h.counts[1]);
        assert!(w.ci95.0 <= w.estimate && w.estimate <= w.ci95.1);
        assert!(w.estimate <= 1.0 / 2.0);
    }

    #[test]
    fn rao_blackwell_at_origin_is_exact() {
        let o = LatticePoint::origin(5);
        let plan = MasterPlan::new(small_config(500), vec![o.clone()], 60).with_clock_times(vec![0.0, 4.0]);
        let m = run_master(&plan, 1).unwrap();
        for t in [0.0, 4.0] {
            let row = KernelRow::origin(t, 59, 1e-7).unwrap();
            let rb = rao_blackwell(&m, &o, &row).unwrap();
            assert_eq!(rb.value, row.get(0));
            assert_eq!(rb.se, 0.0);
        }
        assert_eq!(direct(&m, &o, 0.0).unwrap().value, 1.0);
    }

    #[test]
    fn rao_blackwell_zero_time_off_origin() {
        let x = LatticePoint::on_axis(5, 0, 1);
        let plan = MasterPlan::new(small_config(500), vec![x.clone()], 10);
        let m = run_master(&plan, 1).unwrap();
        let row = KernelRow::origin(0.0, 9, 1e-7).unwrap();
        assert_eq!(rao_blackwell(&m, &x, &row).unwrap().value, 0.0);
    }

    #[test]
    fn short_kernel_row_rejected() {
        let x = LatticePoint::on_axis(5, 0, 1);
        let plan = MasterPlan::new(small_config(10), vec![x.clone()], 10);
        let m = run_master(&plan, 1).unwrap();
        let row = KernelRow::origin(50.0, 9, 1e-7).unwrap();
        assert!(matches!(rao_blackwell(&m, &x, &row), Err(LabError::Overrun(_))));
    }

    #[test]
    fn green_domination_and_origin() {
        let targets = vec![LatticePoint::origin(5), LatticePoint::on_axis(5, 1, 2), LatticePoint::on_axis(5, 0, -3)];
        let r = estimate_green(&targets, &small_config(4000), 1).unwrap();
        assert_eq!(r[0].p_lerw, 1.0);
        for g in &r {
            assert_eq!(g.violations, 0);
            assert!(g.lerw_hits <= g.srw_hits);
        }
    }

    #[test]
    fn first_step_law_is_uniform() {
        let x = LatticePoint::on_axis(5, 0, 1);
        let w = estimate_window_hit(&x, 1, &small_config(20_000), 1).unwrap();
        let (lo, hi) = clopper_pearson(w.hits, w.replicas, 0.99);
        assert!(lo <= 0.1 && 0.1 <= hi);
    }

    #[test]
    fn unresolved_window_rejected() {
        let x = LatticePoint::on_axis(5, 0, 1);
        assert!(matches!(estimate_window_hit(&x, 20, &small_config(10), 1), Err(LabError::Precondition(_))));
    }

    #[test]
    fn truncated_laws_partition() {
        let fs = [Functional::Endpoint, Functional::LeLength];
        let laws = sample_truncated_laws(2, 3, &fs, 5000, 1, 1).unwrap();
        for l in &laws {
            assert_eq!(l.values().sum::<u64>(), 5000);
        }
        // Two steps erase to length 0 or 2.
        assert!(laws[1].keys().all(|o| matches!(o, Outcome::Length(0) | Outcome::Length(2))));
    }
}
