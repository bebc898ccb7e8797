//! Desk-scale experiment grids for the LERW site law and the annealed
//! kernel, run from one shared sample.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bounds::{fit_annealed_envelopes, fit_thm1_envelopes, TwoSidedFit};
use crate::config::SimConfig;
use crate::error::Result;
use crate::estimators::{annealed_horizon, direct, rao_blackwell, run_master, window_hit, AnnealedEstimate, HitWindowEstimate, MasterPlan, MasterSample};
use crate::kernel::KernelRow;
use crate::lattice::LatticePoint;
use crate::stats::clopper_pearson;

pub const DIM: usize = 5;
pub const NORMS: [i32; 5] = [2, 3, 4, 5, 6];
/// Stabilisation radius: resolves `[n, 2n - 1]` up to `n = 8 * 6^2`.
pub const R_IN: f64 = 48.0;
pub const MIN_HORIZON: usize = 576;
/// Times are capped here, which keeps the kernel horizon inside the typical
/// certified prefix.
pub const T_MAX: f64 = 30_000.0;
pub const KERNEL_TOL: f64 = 1e-8;
/// `t >= eps |x|` for the annealed envelopes.
pub const EPS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeskSettings {
    pub seed: u64,
    pub replicas: u64,
    pub rho: f64,
    #[serde(skip, default)]
    pub workers: usize,
}

impl DeskSettings {
    pub fn config(&self) -> SimConfig {
        SimConfig::new(DIM, self.replicas, R_IN).with_seed(self.seed).with_rho(self.rho)
    }
}

/// Eight log-spaced window sizes in `[ceil(|x|^2/4), 8|x|^2]`, rounded,
/// duplicates dropped.
pub fn window_sizes(norm: i32) -> Vec<u64> {
    let r2 = (norm * norm) as f64;
    let lo = (r2 / 4.0).ceil();
    let hi = 8.0 * r2;
    let mut out = BTreeSet::new();
    for i in 0..8 {
        let v = lo * (hi / lo).powf(i as f64 / 7.0);
        out.insert(v.round() as u64);
    }
    out.into_iter().collect()
}

pub fn thm1_grid() -> Vec<(LatticePoint, u64)> {
    NORMS
        .iter()
        .flat_map(|&k| window_sizes(k).into_iter().map(move |n| (LatticePoint::on_axis(DIM, 0, k), n)))
        .collect()
}

/// Cells `(x, t)` with `s = (|x|^4/t)^{1/3}` on `4 * 10^{-j/6}`, `j = 0..=10`,
/// kept when `|x| <= t <= T_MAX`.
pub fn annealed_grid() -> Vec<(LatticePoint, f64)> {
    let mut cells = Vec::new();
    for &k in &NORMS {
        let r = k as f64;
        for j in 0..=10 {
            let s = 4.0 * 10f64.powf(-(j as f64) / 6.0);
            let t = r.powi(4) / s.powi(3);
            if t >= EPS * r && t <= T_MAX {
                cells.push((LatticePoint::on_axis(DIM, 0, k), t));
            }
        }
    }
    cells
}

/// Times of the origin column.
pub fn origin_times() -> Vec<f64> {
    (0..=9).map(|i| 10f64.powf(i as f64 / 2.0)).filter(|&t| t <= T_MAX).collect()
}

pub fn clock_times() -> Vec<f64> {
    let mut ts: Vec<f64> = annealed_grid().iter().map(|c| c.1).chain(origin_times()).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

pub fn desk_plan(settings: &DeskSettings) -> Result<MasterPlan> {
    let targets = std::iter::once(LatticePoint::origin(DIM))
        .chain(NORMS.iter().map(|&k| LatticePoint::on_axis(DIM, 0, k)))
        .collect();
    let times = clock_times();
    let horizon = MIN_HORIZON.max(annealed_horizon(&times, KERNEL_TOL)?);
    Ok(MasterPlan::new(settings.config(), targets, horizon).with_clock_times(times))
}

pub fn desk_sample(settings: &DeskSettings) -> Result<MasterSample> {
    run_master(&desk_plan(settings)?, settings.workers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm1Desk {
    pub estimates: Vec<HitWindowEstimate>,
    pub fit: TwoSidedFit,
}

pub fn thm1_desk(master: &MasterSample) -> Result<Thm1Desk> {
    let estimates = thm1_grid().iter().map(|(x, n)| window_hit(master, x, *n)).collect::<Result<Vec<_>>>()?;
    let fit = fit_thm1_envelopes(&estimates, DIM)?;
    Ok(Thm1Desk { estimates, fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealedCell {
    pub rao_blackwell: AnnealedEstimate,
    pub direct: AnnealedEstimate,
    /// `|rb - direct| / sqrt(se_rb^2 + se_direct^2)`.
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginCell {
    pub t: f64,
    pub q: f64,
    pub direct: AnnealedEstimate,
    pub band99: (f64, f64),
    pub pass: bool,
    /// `q_t(0,0) / (1 ^ t^{-1/2})`.
    pub rescaled: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealedDesk {
    pub cells: Vec<AnnealedCell>,
    /// Share of cells with `z <= 3`.
    pub agreement: f64,
    pub origin: Vec<OriginCell>,
    /// Envelopes fitted to the Rao-Blackwellised values, origin column
    /// included.
    pub fit: TwoSidedFit,
}

fn z_score(a: &AnnealedEstimate, b: &AnnealedEstimate) -> f64 {
    let s = (a.se * a.se + b.se * b.se).sqrt();
    if s == 0.0 {
        if a.value == b.value { 0.0 } else { f64::INFINITY }
    } else {
        (a.value - b.value).abs() / s
    }
}

pub fn annealed_desk(master: &MasterSample) -> Result<AnnealedDesk> {
    let h = master.plan.horizon;
    let mut cells = Vec::new();
    for (x, t) in annealed_grid() {
        let row = KernelRow::origin(t, h - 1, KERNEL_TOL)?;
        let rb = rao_blackwell(master, &x, &row)?;
        let di = direct(master, &x, t)?;
        let z = z_score(&rb, &di);
        cells.push(AnnealedCell { rao_blackwell: rb, direct: di, z });
    }
    let agreement = cells.iter().filter(|c| c.z <= 3.0).count() as f64 / cells.len() as f64;
    let o = LatticePoint::origin(DIM);
    let mut origin = Vec::new();
    let mut fit_input: Vec<AnnealedEstimate> = cells.iter().map(|c| c.rao_blackwell.clone()).collect();
    for t in origin_times() {
        let row = KernelRow::origin(t, h - 1, KERNEL_TOL)?;
        let di = direct(master, &o, t)?;
        let q = row.get(0);
        let hits = (di.value * di.replicas as f64).round() as u64;
        let band99 = clopper_pearson(hits, di.replicas, 0.99);
        let pass = band99.0 <= q && q <= band99.1;
        fit_input.push(rao_blackwell(master, &o, &row)?);
        origin.push(OriginCell { t, q, direct: di, band99, pass, rescaled: q / t.max(1.0).powf(-0.5) });
    }
    let fit = fit_annealed_envelopes(&fit_input, DIM, EPS)?;
    Ok(AnnealedDesk { cells, agreement, origin, fit })
}
