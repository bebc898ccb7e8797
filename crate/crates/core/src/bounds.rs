//! Envelope fitting: turns a bound of the form
//! `value <= amp * prefactor * exp(-rate * abscissa)` (or `>=`) into a search
//! for the constants, checked point by point against confidence intervals.
//!
//! Rates are searched on a log grid; for each rate the amplitude is the
//! extreme ratio over the points, and the rate whose envelope leaves the
//! least total log-slack is kept. Upper envelopes must clear `ci_hi`, lower
//! envelopes must stay below `ci_lo`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::estimators::{AnnealedEstimate, HitWindowEstimate};
use crate::kernel::ln_q_origin;
use crate::stats::linear_fit;

pub const RATES_PER_DECADE: usize = 32;
pub const RATE_MIN: f64 = 1e-3;
pub const RATE_MAX: f64 = 1e3;
/// Amplitudes above this (upper) or below its inverse (lower) count as
/// divergent.
pub const AMPLITUDE_CAP: f64 = 1e12;
/// Multiplier of the unnamed constants in `O(.)` error terms.
pub const DEFAULT_SLACK: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

/// One constraint: `envelope = amp * prefactor * exp(-rate * abscissa)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeInput {
    pub label: String,
    pub prefactor: f64,
    pub abscissa: f64,
    pub estimate: f64,
    pub ci: (f64, f64),
    /// Inactive points are reported but not constrained.
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub label: String,
    pub abscissa: f64,
    pub estimate: f64,
    pub ci: (f64, f64),
    pub envelope: f64,
    pub active: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub bound: String,
    pub side: Side,
    /// Amplitude and rate under the caller's names.
    pub constants: BTreeMap<String, f64>,
    pub per_point: Vec<EnvelopePoint>,
    pub feasible: bool,
    pub violations: Vec<String>,
}

impl EnvelopeFit {
    pub fn constant(&self, name: &str) -> f64 {
        self.constants[name]
    }
}

pub fn rate_grid() -> Vec<f64> {
    let decades = (RATE_MAX / RATE_MIN).log10().round() as usize;
    (0..=decades * RATES_PER_DECADE)
        .map(|i| RATE_MIN * 10f64.powf(i as f64 / RATES_PER_DECADE as f64))
        .collect()
}

/// The bounding value for this side at a point.
fn bound_value(side: Side, p: &EnvelopeInput) -> f64 {
    match side {
        Side::Upper => p.ci.1,
        Side::Lower => p.ci.0,
    }
}

/// Tightest amplitude at `rate`, or `None` when some lower bound is not
/// positive.
fn amplitude(side: Side, points: &[&EnvelopeInput], rate: f64) -> Option<f64> {
    let ratios = points.iter().map(|p| bound_value(side, p) / (p.prefactor * (-rate * p.abscissa).exp()));
    match side {
        Side::Upper => Some(ratios.fold(0.0, f64::max)),
        Side::Lower => {
            let m = ratios.fold(f64::INFINITY, f64::min);
            (m > 0.0).then_some(m)
        }
    }
}

fn envelope_at(amp: f64, rate: f64, p: &EnvelopeInput) -> f64 {
    amp * p.prefactor * (-rate * p.abscissa).exp()
}

fn passes(side: Side, env: f64, p: &EnvelopeInput) -> bool {
    let b = bound_value(side, p);
    // The binding point meets its bound up to rounding.
    let tol = 1e-12 * b.abs();
    match side {
        Side::Upper => env >= b - tol,
        Side::Lower => b > 0.0 && env <= b + tol,
    }
}

/// Log-slack of the envelope against the bounds it must respect.
fn slack(side: Side, points: &[&EnvelopeInput], amp: f64, rate: f64) -> f64 {
    points
        .iter()
        .filter(|p| bound_value(side, p) > 0.0)
        .map(|p| (envelope_at(amp, rate, p) / bound_value(side, p)).ln().abs())
        .sum()
}

/// Evaluates a given envelope on every point.
pub fn evaluate_envelope(
    bound: &str,
    side: Side,
    names: (&str, &str),
    inputs: &[EnvelopeInput],
    amp: f64,
    rate: f64,
) -> EnvelopeFit {
    let mut per_point = Vec::with_capacity(inputs.len());
    let mut violations = Vec::new();
    for p in inputs {
        let envelope = envelope_at(amp, rate, p);
        let pass = !p.active || passes(side, envelope, p);
        if !pass {
            violations.push(p.label.clone());
        }
        per_point.push(EnvelopePoint {
            label: p.label.clone(),
            abscissa: p.abscissa,
            estimate: p.estimate,
            ci: p.ci,
            envelope,
            active: p.active,
            pass,
        });
    }
    let amp_ok = amp.is_finite() && amp > 0.0 && (1.0 / AMPLITUDE_CAP..=AMPLITUDE_CAP).contains(&amp);
    let constants = BTreeMap::from([(names.0.to_string(), amp), (names.1.to_string(), rate)]);
    EnvelopeFit { bound: bound.into(), side, constants, per_point, feasible: amp_ok && violations.is_empty(), violations }
}

/// Fits amplitude and rate (or only the amplitude, when `rate` is given).
pub fn fit_envelope(
    bound: &str,
    side: Side,
    names: (&str, &str),
    inputs: &[EnvelopeInput],
    rate: Option<f64>,
) -> Result<EnvelopeFit> {
    if inputs.is_empty() {
        return precondition(format!("{bound}: no points to fit"));
    }
    let active: Vec<&EnvelopeInput> = inputs.iter().filter(|p| p.active).collect();
    if active.is_empty() {
        return Ok(evaluate_envelope(bound, side, names, inputs, 1.0, rate.unwrap_or(1.0)));
    }
    let candidates = match rate {
        Some(r) => vec![r],
        None => rate_grid(),
    };
    let mut best: Option<(f64, f64, (bool, f64))> = None;
    for &c in &candidates {
        let Some(amp) = amplitude(side, &active, c) else {
            continue;
        };
        let amp = amp.max(f64::MIN_POSITIVE);
        // Prefer rates whose amplitude stays inside the caps, then least slack.
        let capped = !(1.0 / AMPLITUDE_CAP..=AMPLITUDE_CAP).contains(&amp);
        let s = slack(side, &active, amp, c);
        if best.is_none_or(|(_, _, b)| (capped, s) < b) {
            best = Some((amp, c, (capped, s)));
        }
    }
    let (amp, c) = match best {
        Some((a, c, _)) => (a, c),
        // A nonpositive lower bound: report with a zero amplitude.
        None => (0.0, candidates[0]),
    };
    Ok(evaluate_envelope(bound, side, names, inputs, amp, c))
}

/// Least-squares line of `log(estimate / prefactor)` against the abscissa.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    /// `(abscissa, rescaled value, rescaled ci_lo, rescaled ci_hi)`.
    pub rows: Vec<(f64, f64, f64, f64)>,
}

impl Collapse {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["abscissa", "rescaled_value", "ci_lo", "ci_hi"])?;
        for r in &self.rows {
            w.write_record([r.0.to_string(), r.1.to_string(), r.2.to_string(), r.3.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::records::write_atomic(path, |f| self.write_csv(f))
    }
}

pub fn collapse(inputs: &[EnvelopeInput], keep: impl Fn(&EnvelopeInput) -> bool) -> Option<Collapse> {
    let used: Vec<&EnvelopeInput> = inputs.iter().filter(|p| p.estimate > 0.0 && keep(p)).collect();
    let x: Vec<f64> = used.iter().map(|p| p.abscissa).collect();
    let y: Vec<f64> = used.iter().map(|p| (p.estimate / p.prefactor).ln()).collect();
    let fit = linear_fit(&x, &y)?;
    let rows = used
        .iter()
        .map(|p| (p.abscissa, p.estimate / p.prefactor, p.ci.0 / p.prefactor, p.ci.1 / p.prefactor))
        .collect();
    Some(Collapse { slope: fit.slope, intercept: fit.intercept, r2: fit.r2, points: used.len(), rows })
}

/// Upper and lower envelopes of a two-sided bound plus its collapse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSidedFit {
    pub upper: EnvelopeFit,
    pub lower: EnvelopeFit,
    pub collapse: Option<Collapse>,
}

impl TwoSidedFit {
    pub fn feasible(&self) -> bool {
        self.upper.feasible && self.lower.feasible
    }
}

/// Constraint set of the time-averaged Gaussian bound on the LERW site law:
/// prefactor `n^{-d/2}`, abscissa `|x|^2 / n`; the lower bound applies for
/// `n >= |x|`.
pub fn thm1_inputs(estimates: &[HitWindowEstimate], d: usize) -> Vec<EnvelopeInput> {
    estimates
        .iter()
        .map(|e| {
            let n = e.n as f64;
            EnvelopeInput {
                label: format!("x={} n={}", e.x, e.n),
                prefactor: n.powf(-(d as f64) / 2.0),
                abscissa: e.x.norm2() as f64 / n,
                estimate: e.estimate,
                ci: e.ci95,
                active: n >= e.x.norm(),
            }
        })
        .collect()
}

/// Fits `c_1 n^{-d/2} e^{-c_2 |x|^2/n}` from above (all points) and
/// `c_5 n^{-d/2} e^{-c_6 |x|^2/n}` from below (points with `n >= |x|`), and
/// regresses `log(n^{d/2} estimate)` on `|x|^2/n` over `n >= |x|`.
pub fn fit_thm1_envelopes(estimates: &[HitWindowEstimate], d: usize) -> Result<TwoSidedFit> {
    if estimates.is_empty() {
        return precondition("no window estimates to fit");
    }
    let mut inputs = thm1_inputs(estimates, d);
    let lower_inputs = inputs.clone();
    for p in inputs.iter_mut() {
        p.active = true;
    }
    let upper = fit_envelope("lerw_site_law", Side::Upper, ("c1", "c2"), &inputs, None)?;
    let lower = fit_envelope("lerw_site_law", Side::Lower, ("c5", "c6"), &lower_inputs, None)?;
    let collapse = collapse(&lower_inputs, |p| p.active);
    Ok(TwoSidedFit { upper, lower, collapse })
}

/// `(|x|^4 / (1 v t))^{1/3}`.
pub fn annealed_abscissa(norm: f64, t: f64) -> f64 {
    (norm.powi(4) / t.max(1.0)).cbrt()
}

/// `(1 ^ |x|^{2-d}) (1 ^ t^{-1/2})`.
pub fn annealed_prefactor(norm: f64, t: f64, d: usize) -> f64 {
    let space = if norm <= 1.0 { 1.0 } else { norm.powf(2.0 - d as f64) };
    let time = if t <= 1.0 { 1.0 } else { t.powf(-0.5) };
    space * time
}

pub fn annealed_inputs(estimates: &[AnnealedEstimate], d: usize, eps: f64) -> Vec<EnvelopeInput> {
    estimates
        .iter()
        .map(|e| {
            let r = e.x.norm();
            EnvelopeInput {
                label: format!("x={} t={}", e.x, e.t),
                prefactor: annealed_prefactor(r, e.t, d),
                abscissa: annealed_abscissa(r, e.t),
                estimate: e.value,
                ci: e.ci95,
                active: e.t >= eps * r,
            }
        })
        .collect()
}

/// Sub-Gaussian envelopes of the annealed kernel on `t >= eps |x|`. The
/// exponent 1/3 is part of the functional form, not fitted. The collapse
/// uses the cells with `x != 0`.
pub fn fit_annealed_envelopes(estimates: &[AnnealedEstimate], d: usize, eps: f64) -> Result<TwoSidedFit> {
    if estimates.is_empty() {
        return precondition("no annealed estimates to fit");
    }
    let inputs = annealed_inputs(estimates, d, eps);
    let spread: Vec<f64> = inputs.iter().filter(|p| p.active && p.abscissa > 0.0).map(|p| p.abscissa).collect();
    let (lo, hi) = spread.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
    if spread.is_empty() || (hi / lo).log10() < 1.5 - 1e-9 {
        return precondition(format!(
            "annealed grid must span 1.5 decades of (|x|^4/t)^(1/3); it spans [{lo:.3}, {hi:.3}]"
        ));
    }
    let upper = fit_envelope("annealed_kernel", Side::Upper, ("c1", "c2"), &inputs, None)?;
    let lower = fit_envelope("annealed_kernel", Side::Lower, ("c3", "c4"), &inputs, None)?;
    let collapse = collapse(&inputs, |p| p.active && p.abscissa > 0.0);
    Ok(TwoSidedFit { upper, lower, collapse })
}

/// Envelopes of the half-line kernel `q_t(0, m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEnvelopeReport {
    pub eps: f64,
    pub diffusive: TwoSidedFit,
    /// `q_t(0, m) <= c5 exp(-c6 m (1 + log(m/t)))` for `m >= 1`, `t < eps m`.
    pub poisson: Option<EnvelopeFit>,
    /// Collapse restricted to `m <= sqrt(10 t)`.
    pub diffusive_window: Option<Collapse>,
}

/// Checks the Gaussian envelopes of `q_t(0, m)` on `t >= eps m` and the
/// Poisson-regime bound on `t < eps m`. Values come from the log-space
/// series, so entries far below any table tolerance keep full relative
/// accuracy.
pub fn qtlem_envelope_check(points: &[(f64, usize)], eps: f64) -> Result<KernelEnvelopeReport> {
    if points.is_empty() {
        return precondition("no (t, m) points");
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return precondition("eps must be positive");
    }
    let mut gauss = Vec::new();
    let mut poisson = Vec::new();
    for &(t, m) in points {
        if !(t.is_finite() && t >= 0.0) {
            return precondition(format!("time {t} is not finite and nonnegative"));
        }
        let q = ln_q_origin(t, m).exp();
        let mf = m as f64;
        if t >= eps * mf {
            gauss.push(EnvelopeInput {
                label: format!("t={t} m={m}"),
                prefactor: annealed_prefactor(0.0, t, 1),
                abscissa: mf * mf / t.max(1.0),
                estimate: q,
                ci: (q, q),
                active: true,
            });
        } else if m >= 1 {
            poisson.push(EnvelopeInput {
                label: format!("t={t} m={m}"),
                prefactor: 1.0,
                abscissa: mf * (1.0 + (mf / t).ln()),
                estimate: q,
                ci: (q, q),
                active: true,
            });
        }
    }
    let diffusive = if gauss.is_empty() {
        let empty = |side, names| EnvelopeFit {
            bound: "halfline_kernel".into(),
            side,
            constants: BTreeMap::from([(String::from(names), 0.0)]),
            per_point: Vec::new(),
            feasible: true,
            violations: Vec::new(),
        };
        TwoSidedFit { upper: empty(Side::Upper, "c1"), lower: empty(Side::Lower, "c3"), collapse: None }
    } else {
        TwoSidedFit {
            upper: fit_envelope("halfline_kernel", Side::Upper, ("c1", "c2"), &gauss, None)?,
            lower: fit_envelope("halfline_kernel", Side::Lower, ("c3", "c4"), &gauss, None)?,
            collapse: collapse(&gauss, |_| true),
        }
    };
    let poisson = if poisson.is_empty() {
        None
    } else {
        Some(fit_envelope("halfline_kernel_short_time", Side::Upper, ("c5", "c6"), &poisson, None)?)
    };
    let window = collapse(&gauss, |p| {
        // abscissa = m^2/(1 v t) <= 10 t/(1 v t); for t >= 1 this is m <= sqrt(10 t).
        let t = p.prefactor.powi(-2).max(1.0);
        p.abscissa * t <= 10.0 * t
    });
    Ok(KernelEnvelopeReport { eps, diffusive, poisson, diffusive_window: window })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticePoint;
    use proptest::prelude::*;

    fn synthetic_thm1(c: f64, rate: f64) -> Vec<HitWindowEstimate> {
        let mut v = Vec::new();
        for k in 2..=6 {
            let x = LatticePoint::on_axis(5, 0, k);
            for n in [k * k / 4 + 1, k * k, 4 * k * k, 8 * k * k] {
                let nf = n as f64;
                let val = c * nf.powf(-2.5) * (-rate * (k * k) as f64 / nf).exp();
                v.push(HitWindowEstimate {
                    x: x.clone(),
                    n: n as u64,
                    window: (n as usize, 2 * n as usize - 1),
                    hits: 0,
                    replicas: 1,
                    estimate: val,
                    ci95: (val, val),
                    sigma: 0.0,
                    bias_bound: 0.0,
                });
            }
        }
        v
    }

    fn grid_step() -> f64 {
        10f64.powf(1.0 / RATES_PER_DECADE as f64)
    }

    #[test]
    fn synthetic_thm1_roundtrip() {
        let fit = fit_thm1_envelopes(&synthetic_thm1(0.7, 2.0), 5).unwrap();
        assert!(fit.feasible());
        let c2 = fit.upper.constant("c2");
        let c6 = fit.lower.constant("c6");
        assert!(c2 / 2.0 < grid_step() && 2.0 / c2 < grid_step(), "c2 = {c2}");
        assert!(c6 / 2.0 < grid_step() && 2.0 / c6 < grid_step(), "c6 = {c6}");
        let col = fit.collapse.unwrap();
        assert!((col.slope + 2.0).abs() < 1e-9 && col.r2 > 0.999999);
    }

    #[test]
    fn single_point_is_feasible() {
        let one = &synthetic_thm1(1.0, 1.0)[..1];
        let fit = fit_thm1_envelopes(one, 5).unwrap();
        assert!(fit.upper.feasible);
        assert!(fit_thm1_envelopes(&[], 5).is_err());
    }

    #[test]
    fn rate_above_truth_diverges() {
        let data = synthetic_thm1(1.0, 2.0);
        let inputs = thm1_inputs(&data, 5);
        let all: Vec<_> = inputs.into_iter().map(|p| EnvelopeInput { active: true, ..p }).collect();
        let fit = fit_envelope("t", Side::Upper, ("c1", "c2"), &all, Some(20.0)).unwrap();
        assert!(!fit.feasible);
        assert!(fit.constant("c1") > AMPLITUDE_CAP);
    }

    #[test]
    fn lower_fails_on_zero_interval() {
        let mut data = synthetic_thm1(1.0, 2.0);
        let last = data.len() - 1;
        data[last].ci95.0 = 0.0;
        let fit = fit_thm1_envelopes(&data, 5).unwrap();
        assert!(fit.upper.feasible);
        assert!(!fit.lower.feasible);
        assert_eq!(fit.lower.violations.len(), 1);
    }

    fn synthetic_annealed(c: f64, rate: f64) -> Vec<AnnealedEstimate> {
        let mut v = Vec::new();
        for k in 1..=6 {
            let x = LatticePoint::on_axis(5, 0, k);
            let r = k as f64;
            for j in 0..=10 {
                let s = 4.0 * 10f64.powf(-(j as f64) / 6.0);
                let t = r.powi(4) / s.powi(3);
                if t < r {
                    continue;
                }
                let val = c * annealed_prefactor(r, t, 5) * (-rate * annealed_abscissa(r, t)).exp();
                v.push(AnnealedEstimate {
                    x: x.clone(),
                    t,
                    method: crate::estimators::AnnealedMethod::RaoBlackwell,
                    value: val,
                    ci95: (val, val),
                    se: 0.0,
                    replicas: 1,
                    rejected: 0,
                    bias_bound: 0.0,
                });
            }
        }
        v
    }

    #[test]
    fn synthetic_annealed_roundtrip() {
        let fit = fit_annealed_envelopes(&synthetic_annealed(0.3, 1.5), 5, 1.0).unwrap();
        assert!(fit.feasible());
        let c2 = fit.upper.constant("c2");
        assert!(c2 / 1.5 < grid_step() && 1.5 / c2 < grid_step(), "c2 = {c2}");
        assert!(fit.collapse.unwrap().slope < 0.0);
        assert!(fit_annealed_envelopes(&[], 5, 1.0).is_err());
    }

    #[test]
    fn kernel_single_point() {
        let r = qtlem_envelope_check(&[(1.0, 0)], 1.0).unwrap();
        assert!(r.diffusive.feasible());
        let q = crate::kernel::q_t(1.0, 0, 0, 1e-9).unwrap();
        assert!(r.diffusive.upper.constant("c1") >= q - 1e-9);
    }

    #[test]
    fn kernel_grid_feasible_and_gaussian() {
        let mut pts = Vec::new();
        for i in 0..=16 {
            let t = 10f64.powf(i as f64 / 4.0);
            for m in 0..=200 {
                pts.push((t, m));
            }
        }
        let r = qtlem_envelope_check(&pts, 1.0).unwrap();
        assert!(r.diffusive.feasible());
        let p = r.poisson.as_ref().unwrap();
        assert!(p.feasible, "{:?} {:?}", p.constants, p.violations);
        let w = r.diffusive_window.unwrap();
        assert!(w.slope < 0.0 && w.r2 >= 0.99, "{} {}", w.slope, w.r2);
    }

    proptest! {
        #[test]
        fn enlarging_amplitude_keeps_upper_passes(scale in 1.0f64..100.0, rate in 0.01f64..10.0) {
            let data = synthetic_thm1(1.0, 2.0);
            let inputs = thm1_inputs(&data, 5);
            let base = evaluate_envelope("t", Side::Upper, ("a", "c"), &inputs, 1.0, rate);
            let big = evaluate_envelope("t", Side::Upper, ("a", "c"), &inputs, scale, rate);
            for (a, b) in base.per_point.iter().zip(&big.per_point) {
                prop_assert!(!a.pass || b.pass);
            }
            let low = evaluate_envelope("t", Side::Lower, ("a", "c"), &inputs, 1.0, rate);
            let smaller = evaluate_envelope("t", Side::Lower, ("a", "c"), &inputs, 1.0 / scale, rate);
            for (a, b) in low.per_point.iter().zip(&smaller.per_point) {
                prop_assert!(!a.pass || b.pass);
            }
        }
    }
}
