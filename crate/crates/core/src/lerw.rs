//! Truncated sampling of the infinite loop-erased walk started at the origin.
//!
//! The walk is run until it leaves `B(0, R_out)` and loop-erased; the part of
//! the erased path up to its first exit of `B(0, R_in)` can only change later
//! if the walk re-enters `B(0, R_in)` after leaving `B(0, R_out)`, which costs
//! at most `C_bias * rho^(2-d)` in total variation.
//!
//! [`sample_lerw_prefix`] does exactly that, step by step. [`PrefixSampler`]
//! produces the same prefix faster: once the walk has left `B(0, R_in)` it
//! stops maintaining the erasure and only watches for returns onto the
//! prefix, and far from the prefix it moves by whole ball exits drawn from
//! [`HopLadder`]. It stops at the first position outside `B(0, R_out)`; with
//! hops that position may lie beyond the first exit, which leaves the
//! certificate unchanged since the walk is outside `B(0, R_out)` there.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::config::{bias_bound, SimConfig};
use std::sync::Arc;

use crate::error::{precondition, LabError, Result};
use crate::hop::HopLadder;
use crate::lattice::{norm2, LatticePoint, SimplePath};
use crate::loop_erasure::IncrementalEraser;
use crate::walk::Walker;

/// A loop-erased path together with the length of its certified prefix.
#[derive(Clone, Debug)]
pub struct LerwSample {
    pub path: SimplePath,
    /// `path[0..=stable_len]` is the certified prefix; `path[stable_len]` is
    /// the first point outside `B(0, R_in)`.
    pub stable_len: usize,
    pub bias_bound: f64,
    /// Outer radius the walk was run to.
    pub exited_radius: f64,
}

/// Serializable summary of a [`LerwSample`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LerwSummary {
    pub len: usize,
    pub stable_len: usize,
    pub bias_bound: f64,
    pub exited_radius: f64,
}

impl LerwSample {
    pub fn summary(&self) -> LerwSummary {
        LerwSummary {
            len: self.path.len(),
            stable_len: self.stable_len,
            bias_bound: self.bias_bound,
            exited_radius: self.exited_radius,
        }
    }
}

#[inline]
fn radius_limit(r: f64) -> i64 {
    (r * r).floor() as i64
}

/// Runs the walk from the origin to the exit of `B(0, rho * R_in)`, erasing
/// loops as it goes, and certifies the prefix up to the first exit of
/// `B(0, R_in)`.
pub fn sample_lerw_prefix<R: RngCore>(config: &SimConfig, rng: &mut R) -> Result<LerwSample> {
    config.validate_experiment()?;
    let d = config.d;
    let out_lim = radius_limit(config.r_out());
    let mut w = Walker::new(d);
    let mut le = IncrementalEraser::new(d);
    le.push_unchecked(&w.pos);
    while w.r2 <= out_lim {
        if w.steps >= config.max_steps {
            return Err(LabError::Truncated { steps: w.steps, cap: config.max_steps });
        }
        w.step(rng)?;
        le.push_unchecked(&w.pos);
    }
    let in_lim = radius_limit(config.r_in);
    let stable_len = (0..le.num_points()).find(|&i| norm2(le.point(i)) > in_lim).expect("endpoint lies outside");
    Ok(LerwSample {
        path: le.to_simple_path(),
        stable_len,
        bias_bound: config.bias_bound(),
        exited_radius: config.r_out(),
    })
}

/// Settings of the fast prefix sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixPlan {
    pub d: usize,
    /// Starting inner radius.
    pub r_in: f64,
    pub rho: f64,
    /// Minimal certified prefix length. When the prefix at the exit of the
    /// current inner radius is shorter, the radius is enlarged by `growth`
    /// and the walk continues.
    pub horizon: usize,
    pub growth: f64,
    /// Move by ball exits away from the prefix.
    pub hops: bool,
    /// Cap on single steps plus hops.
    pub max_steps: u64,
    /// Sites whose visits by the underlying walk are recorded.
    pub watch: Vec<LatticePoint>,
    /// Number of walk positions `S_1..S_k` whose squared norms are recorded.
    pub record_walk: usize,
}

impl PrefixPlan {
    pub fn new(config: &SimConfig, horizon: usize) -> Self {
        Self {
            d: config.d,
            r_in: config.r_in,
            rho: config.rho,
            horizon,
            growth: 1.25,
            hops: true,
            max_steps: config.max_steps,
            watch: Vec::new(),
            record_walk: 0,
        }
    }

    /// The plan that reproduces [`sample_lerw_prefix`] draw for draw.
    pub fn exact(config: &SimConfig) -> Self {
        Self { hops: false, ..Self::new(config, 0) }
    }

    pub fn with_watch(mut self, watch: Vec<LatticePoint>) -> Self {
        self.watch = watch;
        self
    }

    pub fn with_record_walk(mut self, k: usize) -> Self {
        self.record_walk = k;
        self
    }

    pub fn bias_bound(&self) -> f64 {
        bias_bound(self.d, self.rho)
    }

    pub fn validate(&self) -> Result<()> {
        SimConfig { d: self.d, seed: 0, replica_count: 1, r_in: self.r_in, rho: self.rho, max_steps: self.max_steps }
            .validate_experiment()?;
        if !(self.growth.is_finite() && self.growth > 1.0) {
            return precondition("growth factor must exceed 1");
        }
        if self.watch.iter().any(|p| p.dim() != self.d || p.norm() > self.r_in) {
            return precondition("watched sites must lie in B(0, r_in) in the sampling dimension");
        }
        Ok(())
    }
}

/// Reusable state for drawing certified prefixes; see the module docs.
#[derive(Clone, Debug)]
pub struct PrefixSampler {
    plan: PrefixPlan,
    le: IncrementalEraser,
    w: Walker,
    ladder: Option<Arc<HopLadder>>,
    hops: u64,
    disp: Vec<i32>,
    watch_flat: Vec<i32>,
    watch_r2: i64,
    watched: Vec<bool>,
    walk_r2: Vec<i64>,
    r_in: f64,
    stable_len: usize,
}

impl PrefixSampler {
    pub fn new(plan: PrefixPlan) -> Result<Self> {
        plan.validate()?;
        let d = plan.d;
        let watch_flat = plan.watch.iter().flat_map(|p| p.coords().iter().copied()).collect();
        let watch_r2 = plan.watch.iter().map(|p| p.norm2()).max().unwrap_or(-1);
        let n_watch = plan.watch.len();
        let cap = plan.record_walk;
        let ladder = if plan.hops { Some(HopLadder::shared(d)?) } else { None };
        Ok(Self {
            le: IncrementalEraser::new(d),
            w: Walker::new(d),
            ladder,
            hops: 0,
            disp: vec![0; d],
            watch_flat,
            watch_r2,
            watched: vec![false; n_watch],
            walk_r2: Vec::with_capacity(cap),
            r_in: plan.r_in,
            stable_len: 0,
            plan,
        })
    }

    pub fn plan(&self) -> &PrefixPlan {
        &self.plan
    }

    #[inline]
    fn note_position(&mut self) {
        if self.w.r2 <= self.watch_r2 {
            let d = self.plan.d;
            for (k, site) in self.watch_flat.chunks_exact(d).enumerate() {
                if site == &self.w.pos[..] {
                    self.watched[k] = true;
                }
            }
        }
        if self.walk_r2.len() < self.plan.record_walk {
            self.walk_r2.push(self.w.r2);
        }
    }

    #[inline]
    fn check_cap(&self) -> Result<()> {
        let moves = self.w.steps + self.hops;
        if moves >= self.plan.max_steps {
            return Err(LabError::Truncated { steps: moves, cap: self.plan.max_steps });
        }
        Ok(())
    }

    #[inline]
    fn step<R: RngCore>(&mut self, rng: &mut R) -> Result<()> {
        self.check_cap()?;
        self.w.step(rng)?;
        self.note_position();
        Ok(())
    }

    /// Draws one certified prefix.
    pub fn sample<R: RngCore>(&mut self, rng: &mut R) -> Result<()> {
        let d = self.plan.d;
        self.w.reset_to(&vec![0; d]);
        self.le.clear();
        self.le.push_unchecked(&self.w.pos);
        self.watched.iter_mut().for_each(|h| *h = false);
        self.walk_r2.clear();
        self.hops = 0;
        self.r_in = self.plan.r_in;
        self.note_position();

        'open: loop {
            // The held path lies in B(r_in); extend it until the walk leaves.
            let mut in_lim = radius_limit(self.r_in);
            loop {
                self.step(rng)?;
                if self.w.r2 > in_lim {
                    let j = self.le.append_new(&self.w.pos);
                    if j >= self.plan.horizon {
                        break;
                    }
                    self.r_in = (self.r_in * self.plan.growth).max(self.r_in + 1.0);
                    if self.r_in * self.plan.rho > 1.0e6 {
                        return precondition("prefix horizon not reached below the radius cap");
                    }
                    in_lim = radius_limit(self.r_in);
                } else {
                    self.le.push_unchecked(&self.w.pos);
                }
            }

            // Prefix closed at index j. Only a return onto L[0, j) can change
            // it; such points lie in B(r_in).
            let j = self.le.num_points() - 1;
            let out_lim = radius_limit(self.r_in * self.plan.rho);
            let hop_lim = match &self.ladder {
                Some(l) => {
                    let r = self.r_in + l.smallest_radius() as f64;
                    (r * r).floor() as i64 + 1
                }
                None => i64::MAX,
            };
            while self.w.r2 <= out_lim {
                if self.w.r2 >= hop_lim && self.walk_r2.len() >= self.plan.record_walk {
                    // A ball of radius a < |S| - r_in around S misses B(r_in),
                    // so only its exit point can touch the prefix.
                    let room = (self.w.r2 as f64).sqrt() - self.r_in;
                    let ladder = self.ladder.as_ref().expect("hops enabled");
                    if let Some(law) = ladder.fitting(room) {
                        self.check_cap()?;
                        law.sample(rng, &mut self.disp);
                        for (x, dx) in self.w.pos.iter_mut().zip(&self.disp) {
                            *x += dx;
                        }
                        self.w.r2 = norm2(&self.w.pos);
                        self.hops += 1;
                        self.note_position();
                        if self.w.r2 <= in_lim {
                            if let Some(i) = self.le.index_of(&self.w.pos) {
                                if i < j {
                                    self.le.truncate_to(i);
                                    continue 'open;
                                }
                            }
                        }
                        continue;
                    }
                }
                self.step(rng)?;
                if self.w.r2 <= in_lim {
                    if let Some(i) = self.le.index_of(&self.w.pos) {
                        if i < j {
                            self.le.truncate_to(i);
                            continue 'open;
                        }
                    }
                }
            }
            self.stable_len = j;
            return Ok(());
        }
    }

    /// Index of the last certified point; the prefix is `0..=stable_len`.
    pub fn stable_len(&self) -> usize {
        self.stable_len
    }

    pub fn point(&self, i: usize) -> &[i32] {
        self.le.point(i)
    }

    /// Index of `p` within the certified prefix.
    pub fn index_of(&self, p: &[i32]) -> Option<usize> {
        self.le.index_of(p)
    }

    /// For each watched site, whether the walk visited it.
    pub fn watched_hits(&self) -> &[bool] {
        &self.watched
    }

    /// `|S_m|^2` for `m = 0, 1, ..., record_walk - 1`.
    pub fn walk_norm2(&self) -> &[i64] {
        &self.walk_r2
    }

    /// Inner radius at which the prefix was certified.
    pub fn inner_radius(&self) -> f64 {
        self.r_in
    }

    /// Single steps taken in the last sample.
    pub fn steps(&self) -> u64 {
        self.w.steps
    }

    /// Ball exits taken in the last sample.
    pub fn hops(&self) -> u64 {
        self.hops
    }

    pub fn to_sample(&self) -> LerwSample {
        LerwSample {
            path: self.le.to_simple_path(),
            stable_len: self.stable_len,
            bias_bound: self.plan.bias_bound(),
            exited_radius: self.r_in * self.plan.rho,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;

    fn cfg(r_in: f64) -> SimConfig {
        SimConfig::new(5, 1, r_in)
    }

    #[test]
    fn exact_sample_invariants() {
        let c = cfg(4.0);
        for r in 0..200 {
            let s = sample_lerw_prefix(&c, &mut rng_stream(1, r)).unwrap();
            assert!(s.path.point(0).iter().all(|&x| x == 0));
            assert!(s.stable_len >= 1 && s.stable_len <= s.path.len());
            assert!(norm2(s.path.point(s.stable_len)) > 16);
            assert!((0..s.stable_len).all(|i| norm2(s.path.point(i)) <= 16));
            assert!(s.path.path().is_simple());
            assert!(norm2(s.path.point(s.path.len())) > 32 * 32);
        }
        let s = sample_lerw_prefix(&c, &mut rng_stream(1, 0)).unwrap();
        assert!((s.bias_bound - 2.0 / 512.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_low_dimension() {
        assert!(sample_lerw_prefix(&SimConfig::new(3, 1, 4.0), &mut rng_stream(1, 0)).is_err());
    }

    #[test]
    fn fast_sampler_without_jumps_matches_exact_pathwise() {
        let c = cfg(5.0);
        let mut fast = PrefixSampler::new(PrefixPlan::exact(&c)).unwrap();
        for r in 0..300 {
            let s = sample_lerw_prefix(&c, &mut rng_stream(4, r)).unwrap();
            fast.sample(&mut rng_stream(4, r)).unwrap();
            assert_eq!(fast.stable_len(), s.stable_len);
            for i in 0..=s.stable_len {
                assert_eq!(fast.point(i), s.path.point(i));
            }
        }
    }

    #[test]
    fn horizon_is_always_reached() {
        let c = cfg(3.0);
        let plan = PrefixPlan::new(&c, 60);
        let mut s = PrefixSampler::new(plan).unwrap();
        for r in 0..300 {
            s.sample(&mut rng_stream(8, r)).unwrap();
            assert!(s.stable_len() >= 60);
            let lim = radius_limit(s.inner_radius());
            assert!(norm2(s.point(s.stable_len())) > lim);
            assert!((0..s.stable_len()).all(|i| norm2(s.point(i)) <= lim));
        }
    }

    #[test]
    fn watched_sites_dominate_prefix_hits() {
        let c = cfg(6.0);
        let watch: Vec<LatticePoint> = (1..=4).map(|k| LatticePoint::on_axis(5, 0, k)).collect();
        let plan = PrefixPlan::new(&c, 0).with_watch(watch.clone()).with_record_walk(50);
        let mut s = PrefixSampler::new(plan).unwrap();
        for r in 0..500 {
            s.sample(&mut rng_stream(2, r)).unwrap();
            for (k, x) in watch.iter().enumerate() {
                if s.index_of(x.coords()).is_some_and(|i| i <= s.stable_len()) {
                    assert!(s.watched_hits()[k]);
                }
            }
            assert_eq!(s.walk_norm2().len(), 50);
            assert_eq!(s.walk_norm2()[0], 0);
            assert_eq!(s.walk_norm2()[1], 1);
        }
    }

    #[test]
    fn watched_sites_outside_inner_ball_rejected() {
        let plan = PrefixPlan::new(&cfg(3.0), 0).with_watch(vec![LatticePoint::on_axis(5, 0, 5)]);
        assert!(PrefixSampler::new(plan).is_err());
    }
}
