//! Named verification suites. Each returns per-check pass/fail lines and the
//! fitted constants; the rendered text holds no timings, so it is identical
//! for every worker count.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bounds::{qtlem_envelope_check, DEFAULT_SLACK};
use crate::classical::{annulus_and_return_checks, exit_time_check, gambler_ruin_check, srw_gaussian_check, McSettings};
use crate::config::DEFAULT_SEED;
use crate::desk::{annealed_desk, desk_sample, thm1_desk, AnnealedDesk, DeskSettings, Thm1Desk};
use crate::error::{LabError, Result};
use crate::estimators::sample_truncated_laws;
use crate::kernel::{discrete_halfline_kernel, HalfLineKernelTable};
use crate::lattice::{LatticePath, LatticePoint};
use crate::loop_erasure::{loop_erase, loop_erase_incremental};
use crate::oracle::{enumerate_le_law, matrix_exponential_kernel, Functional, Outcome};
use crate::rng::rng_stream;
use crate::stats::normal_quantile;
use crate::walk::Walker;

pub const SUITES: [&str; 6] = ["unit", "oracle", "kernel", "thm1-desk", "annealed-desk", "srw-classical"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<CheckLine>,
    pub constants: BTreeMap<String, f64>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), checks: Vec::new(), constants: BTreeMap::new() }
    }

    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(CheckLine { name: name.into(), pass, detail: detail.into() });
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.checks {
            let tag = if c.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag}  {:<width$}  {}", c.name, c.detail);
        }
        for (k, v) in &self.constants {
            let _ = writeln!(out, "const {k} = {v:.6e}");
        }
        let _ = writeln!(out, "suite {}: {}", self.suite, if self.pass() { "pass" } else { "FAIL" });
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub workers: usize,
    /// Overrides the replica count of the Monte Carlo checks.
    pub replicas: Option<u64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: DEFAULT_SEED, workers: 1, replicas: None }
    }
}

impl VerifyOptions {
    fn reps(&self, default: u64) -> u64 {
        self.replicas.unwrap_or(default)
    }
}

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    match name {
        "unit" => unit_suite(opts),
        "oracle" => oracle_suite(opts),
        "kernel" => kernel_suite(),
        "thm1-desk" => {
            let master = desk_sample(&desk_settings(opts, 8.0))?;
            Ok(thm1_report(&thm1_desk(&master)?))
        }
        "annealed-desk" => {
            let master = desk_sample(&desk_settings(opts, 8.0))?;
            Ok(annealed_report(&annealed_desk(&master)?))
        }
        "srw-classical" => classical_suite(opts),
        other => Err(LabError::Parse(format!("unknown suite '{other}'; expected one of {}", SUITES.join(", ")))),
    }
}

pub fn desk_settings(opts: &VerifyOptions, rho: f64) -> DeskSettings {
    DeskSettings { seed: opts.seed, replicas: opts.reps(1_000_000), rho, workers: opts.workers }
}

fn random_walk_path(d: usize, seed: u64, replica: u64) -> Result<LatticePath> {
    let mut rng = rng_stream(seed, replica);
    let len = 1 + (rng.next_u32() % 1000) as usize;
    let mut w = Walker::new(d);
    let mut flat = vec![0; d];
    for _ in 0..len {
        w.step(&mut rng)?;
        flat.extend_from_slice(&w.pos);
    }
    LatticePath::from_flat(d, flat)
}

fn path_of(d: usize, pts: &[&[i32]]) -> Result<LatticePath> {
    LatticePath::from_flat(d, pts.iter().flat_map(|p| p.iter().copied()).collect())
}

/// Loop-erasure correctness on a corpus of random walk paths.
pub fn unit_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("unit");

    let e1: &[i32] = &[1, 0];
    let e2: &[i32] = &[0, 1];
    let o: &[i32] = &[0, 0];
    let two: &[i32] = &[2, 0];
    let cases: [(Vec<&[i32]>, Vec<&[i32]>); 3] = [
        (vec![o, e1, o, e2], vec![o, e2]),
        (vec![o, e1, two, e1, o], vec![o]),
        (vec![o, e1, two], vec![o, e1, two]),
    ];
    let mut hand_ok = true;
    for (input, want) in &cases {
        let got = loop_erase(&path_of(2, input)?)?;
        let inc = loop_erase_incremental(&path_of(2, input)?)?;
        hand_ok &= got.path().flat() == path_of(2, want)?.flat() && inc.path().flat() == got.path().flat();
    }
    rep.check("loop_erasure_hand_cases", hand_ok, format!("{} cases", cases.len()));

    let count = opts.reps(10_000);
    let (mut same, mut idem, mut contained) = (0u64, 0u64, 0u64);
    for i in 0..count {
        let d = if i % 2 == 0 { 2 } else { 5 };
        let path = random_walk_path(d, opts.seed, i)?;
        let batch = loop_erase(&path)?;
        let inc = loop_erase_incremental(&path)?;
        same += (batch.path().flat() == inc.path().flat()) as u64;
        idem += (loop_erase(batch.path())?.path().flat() == batch.path().flat()) as u64;
        let sites: HashSet<&[i32]> = path.points().collect();
        let inside = batch.path().points().all(|p| sites.contains(p))
            && batch.path().point(0) == path.point(0)
            && batch.path().last() == path.last();
        contained += inside as u64;
    }
    rep.check("incremental_equals_batch", same == count, format!("{same}/{count} paths, d in {{2, 5}}"));
    rep.check("erasure_idempotent", idem == count, format!("{idem}/{count} paths"));
    rep.check("erasure_contained_in_path", contained == count, format!("{contained}/{count} paths"));

    let a = sample_truncated_laws(4, 3, &[Functional::LeLength], 5000, opts.seed, 1)?;
    let b = sample_truncated_laws(4, 3, &[Functional::LeLength], 5000, opts.seed, 3)?;
    rep.check("parallel_determinism", a == b, "1 vs 3 workers");
    Ok(rep)
}

/// Canonical representative under coordinate permutations and sign flips.
fn symmetry_class(o: &Outcome) -> Outcome {
    match o {
        Outcome::Point(p) => {
            let mut v: Vec<i32> = p.iter().map(|c| c.abs()).collect();
            v.sort_unstable();
            Outcome::Point(v)
        }
        other => other.clone(),
    }
}

fn classes(counts: &BTreeMap<Outcome, u64>) -> BTreeMap<Outcome, u64> {
    let mut out = BTreeMap::new();
    for (o, c) in counts {
        *out.entry(symmetry_class(o)).or_insert(0) += c;
    }
    out
}

/// Largest standardized deviation of Monte Carlo class frequencies from
/// the exact law, and the threshold: 3 sigma, widened to the Bonferroni
/// level of 3 sigma over the compared classes.
pub fn oracle_deviation(exact: &BTreeMap<Outcome, u64>, total: u64, mc: &BTreeMap<Outcome, u64>, replicas: u64) -> (f64, f64, bool) {
    let ex = classes(exact);
    let mcc = classes(mc);
    let cells = ex.len().max(1) as f64;
    let z_star = normal_quantile(1.0 - 0.0027 / (2.0 * cells)).max(3.0);
    let mut worst: f64 = 0.0;
    let unseen_ok = mcc.keys().all(|o| ex.contains_key(o));
    for (o, &c) in &ex {
        let p = c as f64 / total as f64;
        let f = mcc.get(o).copied().unwrap_or(0) as f64 / replicas as f64;
        let sigma = (p * (1.0 - p) / replicas as f64).sqrt();
        let z = if sigma == 0.0 { if f == p { 0.0 } else { f64::INFINITY } } else { (f - p).abs() / sigma };
        worst = worst.max(z);
    }
    (worst, z_star, unseen_ok && worst <= z_star)
}

/// Monte Carlo on the truncated functionals against exact enumeration.
pub fn oracle_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("oracle");
    let replicas = opts.reps(1_000_000);
    for (di, d) in [2usize, 3, 5].into_iter().enumerate() {
        for n in 1..=6usize {
            let functionals = [
                Functional::Endpoint,
                Functional::LeLength,
                Functional::TauWindow { x: LatticePoint::on_axis(d, 0, 1), lo: 1, hi: 2 },
            ];
            let seed = opts.seed.wrapping_add((di * 16 + n) as u64);
            let mc = sample_truncated_laws(n, d, &functionals, replicas, seed, opts.workers)?;
            for (f, tally) in functionals.iter().zip(&mc) {
                let law = enumerate_le_law(n, d, f)?;
                let (z, z_star, pass) = oracle_deviation(&law.counts, law.total, tally, replicas);
                rep.check(
                    &format!("oracle_d{d}_n{n}_{}", f.name()),
                    pass,
                    format!("max |z| = {z:.3} (limit {z_star:.3}), {replicas} replicas"),
                );
            }
        }
    }
    Ok(rep)
}

/// Kernel exactness: matrix exponential, Chapman-Kolmogorov, detailed
/// balance, row sums, hand values, envelopes.
pub fn kernel_suite() -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("kernel");
    let p = discrete_halfline_kernel(4, 4)?;
    rep.check(
        "discrete_hand_values",
        p.get(2, 0, 0) == 0.5 && p.get(4, 0, 0) == 0.375 && p.get(3, 0, 0) == 0.0,
        format!("p_2(0,0) = {}, p_4(0,0) = {}", p.get(2, 0, 0), p.get(4, 0, 0)),
    );

    let mut worst_expm: f64 = 0.0;
    let mut worst_db: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    let mut sums_ok = true;
    for t in [0.5, 1.0, 10.0, 100.0] {
        let tol = 1e-11;
        let tab = HalfLineKernelTable::build(t, 64, tol)?;
        let ex = matrix_exponential_kernel(t, 512)?;
        let deg = |m: usize| if m == 0 { 1.0 } else { 2.0 };
        for a in 0..=64 {
            for m in 0..=64 {
                worst_expm = worst_expm.max((tab.get(a, m) - ex.get(a, m)).abs());
                worst_db = worst_db.max((deg(a) * tab.get(a, m) - deg(m) * tab.get(m, a)).abs());
            }
        }
        for tol in [1e-6, 1e-9] {
            let tab = HalfLineKernelTable::build(t, 64, tol)?;
            for a in 0..=8 {
                let s: f64 = tab.row(a).iter().sum::<f64>() + tab.row_tail(a);
                worst_sum = worst_sum.max((s - 1.0).abs());
                sums_ok &= (s - 1.0).abs() <= tol;
            }
        }
    }
    rep.check("uniformization_vs_matrix_exponential", worst_expm <= 1e-10, format!("max |diff| = {worst_expm:.3e} (limit 1e-10)"));
    rep.check("detailed_balance", worst_db <= 1e-9, format!("max defect = {worst_db:.3e} (limit 1e-9)"));
    rep.check("row_sums_within_tol", sums_ok, format!("max |row sum - 1| = {worst_sum:.3e}"));

    let mut worst_ck: f64 = 0.0;
    let times = [0.5, 2.0, 17.0];
    let tol = 1e-10;
    let tables: Vec<HalfLineKernelTable> = times.iter().map(|&t| HalfLineKernelTable::build(t, 160, tol)).collect::<Result<_>>()?;
    for (i, &s) in times.iter().enumerate() {
        for (j, &t) in times.iter().enumerate() {
            let st = HalfLineKernelTable::build(s + t, 50, tol)?;
            for m in 0..=50 {
                let composed: f64 = (0..=160).map(|k| tables[i].get(0, k) * tables[j].get(k, m)).sum();
                worst_ck = worst_ck.max((composed - st.get(0, m)).abs());
            }
        }
    }
    rep.check("chapman_kolmogorov", worst_ck <= 1e-8, format!("max defect = {worst_ck:.3e} (limit 1e-8)"));

    let mut pts = Vec::new();
    for i in 0..=16 {
        let t = 10f64.powf(i as f64 / 4.0);
        for m in 0..=200 {
            pts.push((t, m));
        }
    }
    let env = qtlem_envelope_check(&pts, 1.0)?;
    let window = env.diffusive_window.as_ref();
    let poisson_ok = env.poisson.as_ref().is_none_or(|p| p.feasible);
    rep.check(
        "halfline_envelopes",
        env.diffusive.feasible() && poisson_ok && window.is_some_and(|w| w.slope < 0.0 && w.r2 >= 0.99),
        format!(
            "upper {}, lower {}, short-time {}, window slope {:.4}, R^2 {:.5}",
            env.diffusive.upper.feasible,
            env.diffusive.lower.feasible,
            poisson_ok,
            window.map_or(f64::NAN, |w| w.slope),
            window.map_or(f64::NAN, |w| w.r2)
        ),
    );
    for (k, v) in env.diffusive.upper.constants.iter().chain(&env.diffusive.lower.constants) {
        rep.constants.insert(format!("halfline_{k}"), *v);
    }
    if let Some(p) = &env.poisson {
        for (k, v) in &p.constants {
            rep.constants.insert(format!("halfline_{k}"), *v);
        }
    }
    Ok(rep)
}

pub fn thm1_report(desk: &Thm1Desk) -> SuiteReport {
    let mut rep = SuiteReport::new("thm1-desk");
    let fit = &desk.fit;
    rep.check("site_law_upper_envelope", fit.upper.feasible, format!("{} points, violations {:?}", fit.upper.per_point.len(), fit.upper.violations));
    rep.check("site_law_lower_envelope", fit.lower.feasible, format!("violations {:?}", fit.lower.violations));
    let (slope, r2) = fit.collapse.as_ref().map_or((f64::NAN, f64::NAN), |c| (c.slope, c.r2));
    rep.check("gaussian_collapse", slope < 0.0 && r2 >= 0.9, format!("slope {slope:.4}, R^2 {r2:.4} (need < 0 and >= 0.9)"));
    for (k, v) in fit.upper.constants.iter().chain(&fit.lower.constants) {
        rep.constants.insert(k.clone(), *v);
    }
    rep.constants.insert("collapse_slope".into(), slope);
    rep.constants.insert("collapse_r2".into(), r2);
    rep
}

pub fn annealed_report(desk: &AnnealedDesk) -> SuiteReport {
    let mut rep = SuiteReport::new("annealed-desk");
    let bad = desk.cells.iter().filter(|c| c.z > 3.0).count();
    rep.check(
        "estimators_agree",
        desk.agreement >= 0.95,
        format!("{:.1}% of {} cells within joint 3 sigma ({bad} outside)", 100.0 * desk.agreement, desk.cells.len()),
    );
    let fit = &desk.fit;
    rep.check("annealed_upper_envelope", fit.upper.feasible, format!("violations {:?}", fit.upper.violations));
    rep.check("annealed_lower_envelope", fit.lower.feasible, format!("violations {:?}", fit.lower.violations));
    let (slope, r2) = fit.collapse.as_ref().map_or((f64::NAN, f64::NAN), |c| (c.slope, c.r2));
    rep.check("subgaussian_collapse", slope < 0.0 && r2 >= 0.85, format!("slope {slope:.4}, R^2 {r2:.4} (need < 0 and >= 0.85)"));
    let origin_fail: Vec<String> = desk.origin.iter().filter(|o| !o.pass).map(|o| format!("t={}", o.t)).collect();
    rep.check("origin_column_matches_kernel", origin_fail.is_empty(), format!("{} times, outside 99% band: {origin_fail:?}", desk.origin.len()));
    let r: Vec<f64> = desk.origin.iter().map(|o| o.rescaled).collect();
    let (lo, hi) = r.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    rep.check("origin_column_bounded", lo > 0.0 && hi.is_finite(), format!("q_t(0,0)/(1 ^ t^-1/2) in [{lo:.4}, {hi:.4}]"));
    for (k, v) in fit.upper.constants.iter().chain(&fit.lower.constants) {
        rep.constants.insert(k.clone(), *v);
    }
    rep.constants.insert("collapse_slope".into(), slope);
    rep.constants.insert("collapse_r2".into(), r2);
    rep
}

/// Settings of the classical suite.
pub fn classical_mc(opts: &VerifyOptions) -> McSettings {
    McSettings { seed: opts.seed, replicas: opts.reps(100_000), workers: opts.workers }
}

pub fn classical_suite(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut rep = SuiteReport::new("srw-classical");
    let mc = classical_mc(opts);

    let ms: Vec<u64> = vec![1, 2, 4, 8, 16, 32];
    let g = gambler_ruin_check(5, &ms, 64, (3, 10), &mc)?;
    let e = &g.exact_1d;
    rep.check(
        "ruin_exact_1d",
        e.pass,
        format!("m=3 n=10: {}/{} = {:.5}, 99% band [{:.5}, {:.5}] vs 0.3", e.hits, e.replicas, e.frequency, e.ci99.0, e.ci99.1),
    );
    rep.check("ruin_projected_ratio_spread", g.ratio_spread < 4.0, format!("d=5 n=64: spread {:.3} (limit 4)", g.ratio_spread));
    let full = gambler_ruin_check(5, &[64], 64, (10, 10), &McSettings { replicas: 100, ..mc.clone() })?;
    rep.check("ruin_boundary_m_equals_n", full.projected[0].estimate == 1.0 && full.exact_1d.frequency == 1.0, "probability 1");
    rep.constants.insert("alpha_1".into(), g.alpha.0);
    rep.constants.insert("alpha_2".into(), g.alpha.1);

    let xs: Vec<LatticePoint> = [4, 6, 8, 12, 16].iter().map(|&k| LatticePoint::on_axis(5, 0, k)).collect();
    let ann = annulus_and_return_checks(4.0, 32.0, &xs, DEFAULT_SLACK, 10 * mc.replicas, &mc)?;
    let fmt_rows = |rows: &[crate::classical::FormulaRow]| {
        rows.iter()
            .map(|r| format!("|x|={}: {:.3e} in [{:.3e}, {:.3e}]", r.x.norm(), r.estimate, r.band.0, r.band.1))
            .collect::<Vec<_>>()
            .join("; ")
    };
    rep.check("annulus_exit_within_slack", ann.exits.iter().all(|r| r.pass), fmt_rows(&ann.exits));
    rep.check("point_return_within_slack", ann.returns.iter().all(|r| r.pass), fmt_rows(&ann.returns));
    let gz = &ann.green_origin;
    rep.check(
        "green_origin_split_consistent",
        gz.split_z <= 3.0,
        format!("G(0) = {:.5} +- {:.5}, halves differ by {:.2} sigma", gz.mean, gz.se, gz.split_z),
    );
    rep.constants.insert("G0".into(), gz.mean);
    rep.constants.insert("a_d".into(), ann.a_plateau);

    let ns: Vec<u64> = (1..=40).collect();
    let pts: Vec<LatticePoint> = [
        vec![1, 0, 0, 0, 0],
        vec![2, 0, 0, 0, 0],
        vec![4, 0, 0, 0, 0],
        vec![7, 0, 0, 0, 0],
        vec![10, 0, 0, 0, 0],
        vec![1, 1, 1, 1, 1],
        vec![3, 3, 3, 0, 0],
        vec![4, 4, 4, 4, 4],
    ]
    .into_iter()
    .map(LatticePoint::new)
    .collect::<Result<_>>()?;
    let gauss = srw_gaussian_check(&ns, &pts)?;
    rep.check(
        "srw_gaussian_envelopes",
        gauss.feasible(),
        format!("n <= 40, {} points; upper {}, lower {}", gauss.upper.per_point.len(), gauss.upper.feasible, gauss.lower.feasible),
    );
    for (k, v) in gauss.upper.constants.iter().chain(&gauss.lower.constants) {
        rep.constants.insert(format!("srw_{k}"), *v);
    }

    let ex = exit_time_check(5, 20, &McSettings { replicas: opts.reps(10_000).clamp(100, 10_000), ..mc })?;
    rep.check(
        "ball_exit_time",
        ex.z.abs() <= 3.0,
        format!("radius 20: {:.2} +- {:.2} vs exact {:.4} ({:.2} SE)", ex.mean, ex.se, ex.exact, ex.z),
    );
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_usage_error() {
        let e = run_suite("nope", &VerifyOptions::default()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn deviation_flags_unseen_outcomes() {
        let exact = BTreeMap::from([(Outcome::Length(0), 1), (Outcome::Length(2), 9)]);
        let mc = BTreeMap::from([(Outcome::Length(0), 100), (Outcome::Length(2), 900)]);
        assert!(oracle_deviation(&exact, 10, &mc, 1000).2);
        let odd = BTreeMap::from([(Outcome::Length(1), 1000)]);
        assert!(!oracle_deviation(&exact, 10, &odd, 1000).2);
    }

    #[test]
    fn symmetry_classes_merge_reflections() {
        assert_eq!(symmetry_class(&Outcome::Point(vec![0, -1])), Outcome::Point(vec![0, 1]));
        assert_eq!(symmetry_class(&Outcome::Point(vec![1, 0])), Outcome::Point(vec![0, 1]));
    }

    #[test]
    fn small_unit_suite_passes_and_renders() {
        let r = unit_suite(&VerifyOptions { replicas: Some(200), ..Default::default() }).unwrap();
        assert!(r.pass(), "{}", r.render());
        assert!(r.render().contains("PASS  incremental_equals_batch"));
    }
}
