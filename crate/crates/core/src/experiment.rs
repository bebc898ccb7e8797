//! Experiment spec files: parsing, validation against the target
//! operation's preconditions, execution, and atomic outputs.
//!
//! A spec is a TOML file:
//!
//! ```toml
//! name = "window_hit_x4"
//! kind = "window_hit"
//!
//! [sim]
//! seed = 7
//! replicas = 100000
//! r_in = 16
//!
//! [params]
//! x = [4, 0, 0, 0, 0]
//! n = [4, 8, 16, 32]
//!
//! [output]
//! dir = "out/window_hit_x4"
//! ```
//!
//! Everything is validated before any simulation starts. The output
//! directory receives `result.json`, which embeds the fully resolved spec,
//! plus kind-specific CSV tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{fit_annealed_envelopes, fit_thm1_envelopes, qtlem_envelope_check};
use crate::classical::srw_gaussian_check;
use crate::config::{SimConfig, DEFAULT_MAX_STEPS, DEFAULT_RHO, DEFAULT_SEED};
use crate::desk::{self, DeskSettings};
use crate::error::{precondition, LabError, Result};
use crate::estimators::{
    annealed_horizon, check_window_resolved, direct, estimate_displacement_exponent, estimate_green, rao_blackwell, run_master,
    tau_histogram, window_hit, HitWindowEstimate, MasterPlan,
};
use crate::kernel::{kernel_horizon, HalfLineKernelTable, KernelRow};
use crate::lattice::LatticePoint;
use crate::oracle::{enumerate_le_law, Functional};
use crate::records::{write_atomic, write_json_atomic, EstimateRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    WindowHit,
    TauHist,
    Annealed,
    Green,
    Displacement,
    KernelTable,
    Oracle,
    Envelope,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimSection {
    d: Option<usize>,
    seed: Option<u64>,
    replicas: Option<u64>,
    r_in: Option<f64>,
    rho: Option<f64>,
    max_steps: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    kind: Kind,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    params: toml::Table,
    #[serde(default)]
    output: OutputSection,
}

/// Parameters of each kind, with defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Params {
    WindowHit {
        x: Vec<i32>,
        n: Vec<u64>,
    },
    TauHist {
        x: Vec<i32>,
        bins: Vec<(usize, usize)>,
    },
    Annealed {
        x: Vec<Vec<i32>>,
        t: Vec<f64>,
        #[serde(default = "default_annealed_tol")]
        tol: f64,
    },
    Green {
        x: Vec<Vec<i32>>,
    },
    Displacement {
        t: Vec<f64>,
        #[serde(default = "default_displacement_tol")]
        tol: f64,
        #[serde(default = "default_true")]
        control: bool,
    },
    KernelTable {
        t: f64,
        m_max: usize,
        #[serde(default = "default_kernel_tol")]
        tol: f64,
    },
    Oracle {
        n: usize,
        functional: String,
    },
    Envelope {
        /// `thm1`, `annealed`, `halfline` or `srw_gaussian`.
        target: String,
        #[serde(default = "default_eps")]
        eps: f64,
        /// `halfline`: largest time and state of the grid.
        #[serde(default = "default_t_max")]
        t_max: f64,
        #[serde(default = "default_m_max")]
        m_max: usize,
        /// `srw_gaussian`: largest `n` and the points.
        #[serde(default = "default_n_max")]
        n_max: u64,
        #[serde(default)]
        x: Vec<Vec<i32>>,
    },
}

fn default_annealed_tol() -> f64 {
    1e-8
}
fn default_displacement_tol() -> f64 {
    1e-7
}
fn default_kernel_tol() -> f64 {
    1e-9
}
fn default_true() -> bool {
    true
}
fn default_eps() -> f64 {
    1.0
}
fn default_t_max() -> f64 {
    1e4
}
fn default_m_max() -> usize {
    200
}
fn default_n_max() -> u64 {
    40
}

/// A spec with every default resolved. Serialised into each output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub sim: SimConfig,
    pub params: Params,
    pub output_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn kind(&self) -> Kind {
        match self.params {
            Params::WindowHit { .. } => Kind::WindowHit,
            Params::TauHist { .. } => Kind::TauHist,
            Params::Annealed { .. } => Kind::Annealed,
            Params::Green { .. } => Kind::Green,
            Params::Displacement { .. } => Kind::Displacement,
            Params::KernelTable { .. } => Kind::KernelTable,
            Params::Oracle { .. } => Kind::Oracle,
            Params::Envelope { .. } => Kind::Envelope,
        }
    }
}

fn parse_err(e: impl std::fmt::Display) -> LabError {
    LabError::Parse(e.to_string())
}

/// Parses a spec and resolves defaults. Parse failures only; preconditions
/// are checked by [`validate`].
pub fn parse_spec(text: &str) -> Result<ExperimentSpec> {
    let raw: RawSpec = toml::from_str(text).map_err(parse_err)?;
    if raw.name.is_empty() || raw.name.contains(['/', '\\']) {
        return Err(LabError::Parse(format!("name '{}' must be a nonempty plain file name", raw.name)));
    }
    let mut table = raw.params.clone();
    let kind = toml::Value::try_from(raw.kind).map_err(parse_err)?;
    table.insert("kind".into(), kind);
    let params: Params = toml::Value::Table(table).try_into().map_err(parse_err)?;
    let desk_kind = matches!(&params, Params::Envelope { target, .. } if target == "thm1" || target == "annealed");
    let s = &raw.sim;
    let sim = SimConfig {
        d: s.d.unwrap_or(desk::DIM),
        seed: s.seed.unwrap_or(DEFAULT_SEED),
        replica_count: s.replicas.unwrap_or(100_000),
        r_in: s.r_in.unwrap_or(if desk_kind { desk::R_IN } else { 16.0 }),
        rho: s.rho.unwrap_or(DEFAULT_RHO),
        max_steps: s.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
    };
    let output_dir = raw.output.dir.unwrap_or_else(|| Path::new("out").join(&raw.name));
    Ok(ExperimentSpec { name: raw.name, sim, params, output_dir })
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&text)
}

fn point(coords: &[i32], d: usize) -> Result<LatticePoint> {
    if coords.len() != d {
        return precondition(format!("point {coords:?} is not in dimension {d}"));
    }
    LatticePoint::new(coords.to_vec())
}

fn nonzero_target(coords: &[i32], sim: &SimConfig) -> Result<LatticePoint> {
    let x = point(coords, sim.d)?;
    if x.is_origin() {
        return precondition("x must differ from the origin");
    }
    if 2.0 * x.norm() > sim.r_in {
        return precondition(format!("x = {x} needs r_in >= {}", 2.0 * x.norm()));
    }
    Ok(x)
}

fn times_ok(ts: &[f64]) -> Result<()> {
    if ts.is_empty() {
        return precondition("empty time list");
    }
    if let Some(t) = ts.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return precondition(format!("time {t} is not finite and nonnegative"));
    }
    Ok(())
}

/// Checks every precondition of the operation the spec targets.
pub fn validate(spec: &ExperimentSpec) -> Result<()> {
    let sim = &spec.sim;
    match &spec.params {
        Params::WindowHit { x, n } => {
            sim.validate_experiment()?;
            let x = nonzero_target(x, sim)?;
            if n.is_empty() {
                return precondition("empty n list");
            }
            for &n in n {
                if n == 0 {
                    return precondition("n must be at least 1");
                }
                if ((2 * n - 1) as i64) < x.l1() {
                    return precondition(format!("window [{n}, {}] lies below |x|_1 = {}", 2 * n - 1, x.l1()));
                }
                check_window_resolved(&x, n, sim.r_in)?;
            }
        }
        Params::TauHist { x, bins } => {
            sim.validate_experiment()?;
            let x = nonzero_target(x, sim)?;
            if bins.is_empty() {
                return precondition("no bins");
            }
            let mut sorted = bins.clone();
            sorted.sort();
            if sorted.windows(2).any(|w| w[1].0 <= w[0].1) || sorted.iter().any(|b| b.0 > b.1) {
                return precondition("bins must be nonempty and disjoint");
            }
            if sorted[0].0 > x.l1() as usize {
                return precondition(format!("bins must start at |x|_1 = {}", x.l1()));
            }
            let top = sorted.last().map_or(0, |b| b.1) as f64;
            if top > sim.r_in * sim.r_in {
                return precondition(format!("bins reach index {top}, beyond r_in^2 = {}", sim.r_in * sim.r_in));
            }
        }
        Params::Annealed { x, t, tol } => {
            sim.validate_experiment()?;
            for c in x {
                let p = point(c, sim.d)?;
                if 2.0 * p.norm() > sim.r_in {
                    return precondition(format!("x = {p} needs r_in >= {}", 2.0 * p.norm()));
                }
            }
            times_ok(t)?;
            annealed_horizon(t, *tol)?;
            for &s in t {
                KernelRow::origin(s, 0, *tol)?;
            }
        }
        Params::Green { x } => {
            sim.validate_experiment()?;
            for c in x {
                nonzero_target(c, sim)?;
            }
        }
        Params::Displacement { t, tol, .. } => {
            sim.validate_experiment()?;
            times_ok(t)?;
            for &s in t {
                kernel_horizon(s, *tol)?;
            }
            let lo = t.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = t.iter().cloned().fold(0.0, f64::max);
            if t.len() < 3 || lo <= 0.0 || (hi / lo).log10() < 2.5 {
                return precondition("time grid needs three or more positive times over at least 2.5 decades");
            }
        }
        Params::KernelTable { t, m_max, tol } => {
            times_ok(&[*t])?;
            if *m_max > 4096 {
                return Err(LabError::ResourceGate(format!("m_max {m_max} above 4096")));
            }
            KernelRow::origin(*t, 0, *tol)?;
        }
        Params::Oracle { n, functional } => {
            Functional::parse(functional, sim.d)?;
            if crate::oracle::walk_count(*n, sim.d).is_none_or(|c| c > crate::oracle::ENUMERATION_BUDGET) {
                return Err(LabError::ResourceGate(format!("(2d)^N walks for N = {n}, d = {} exceed the enumeration budget", sim.d)));
            }
        }
        Params::Envelope { target, eps, t_max, m_max, n_max, x } => match target.as_str() {
            "thm1" | "annealed" => {
                sim.validate_experiment()?;
                if sim.d != desk::DIM || sim.r_in != desk::R_IN {
                    return precondition(format!("the {target} grid runs with d = {} and r_in = {}", desk::DIM, desk::R_IN));
                }
            }
            "halfline" => {
                if !(*eps > 0.0 && eps.is_finite()) || !(*t_max >= 1.0 && t_max.is_finite()) {
                    return precondition("eps must be positive and t_max >= 1");
                }
                if *m_max > 10_000 {
                    return Err(LabError::ResourceGate(format!("m_max {m_max} above 10000")));
                }
            }
            "srw_gaussian" => {
                if *n_max < 1 || *n_max > crate::classical::MAX_EXACT_STEPS - 1 {
                    return precondition(format!("n_max must be in 1..{}", crate::classical::MAX_EXACT_STEPS));
                }
                if x.is_empty() {
                    return precondition("srw_gaussian needs points x");
                }
                for c in x {
                    point(c, sim.d)?;
                }
            }
            other => return Err(LabError::Parse(format!("unknown envelope target '{other}' (thm1, annealed, halfline, srw_gaussian)"))),
        },
    }
    Ok(())
}

/// What a run wrote, for the caller to report.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    spec: &'a ExperimentSpec,
    result: T,
}

fn write_records_csv(path: &Path, records: &[EstimateRecord]) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["quantity", "x", "t", "n", "method", "value", "ci_lo", "ci_hi", "replicas", "bias_bound", "seed"])?;
        for r in records {
            let x = r.x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
            c.write_record([
                r.quantity.clone(),
                x,
                r.t.map(|t| t.to_string()).unwrap_or_default(),
                r.n.map(|n| n.to_string()).unwrap_or_default(),
                r.method.clone(),
                format!("{:e}", r.value),
                format!("{:e}", r.ci_lo),
                format!("{:e}", r.ci_hi),
                r.replicas.to_string(),
                format!("{:e}", r.bias_bound),
                r.seed.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })
}

/// `P(x in gamma[n, 2n - 1])` for each `n`, from one master sample.
/// Validates like a `window_hit` spec.
pub fn window_hit_estimates(sim: &SimConfig, x: &[i32], n: &[u64], workers: usize) -> Result<Vec<HitWindowEstimate>> {
    let params = Params::WindowHit { x: x.to_vec(), n: n.to_vec() };
    validate(&ExperimentSpec { name: "window_hit".into(), sim: sim.clone(), params, output_dir: PathBuf::new() })?;
    let x = LatticePoint::new(x.to_vec())?;
    let horizon = 2 * *n.iter().max().expect("validated") as usize;
    let master = run_master(&MasterPlan::new(sim.clone(), vec![x.clone()], horizon), workers)?;
    n.iter().map(|&n| window_hit(&master, &x, n)).collect()
}

/// Validates, runs, and writes the outputs of a spec.
pub fn run_spec(spec: &ExperimentSpec, workers: usize) -> Result<RunOutcome> {
    validate(spec)?;
    let dir = &spec.output_dir;
    let json = dir.join("result.json");
    let mut files = vec![json.clone()];
    let sim = &spec.sim;
    let seed = sim.seed;
    macro_rules! emit {
        ($result:expr) => {
            write_json_atomic(&json, &Output { spec, result: $result })?
        };
    }
    match &spec.params {
        Params::WindowHit { x, n } => {
            let est = window_hit_estimates(sim, x, n, workers)?;
            let recs: Vec<EstimateRecord> = est.iter().map(|e| e.record(seed)).collect();
            let csv = dir.join("estimates.csv");
            write_records_csv(&csv, &recs)?;
            files.push(csv);
            emit!(&est);
        }
        Params::TauHist { x, bins } => {
            let x = LatticePoint::new(x.clone())?;
            let horizon = bins.iter().map(|b| b.1 + 1).max().expect("validated");
            let master = run_master(&MasterPlan::new(sim.clone(), vec![x.clone()], horizon), workers)?;
            let h = tau_histogram(&master, &x, bins)?;
            let csv = dir.join("histogram.csv");
            write_atomic(&csv, |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["lo", "hi", "count", "probability", "ci_lo", "ci_hi"])?;
                for (i, (b, k)) in h.bins.iter().zip(&h.counts).enumerate() {
                    let p = *k as f64 / h.replicas as f64;
                    c.write_record([b.0.to_string(), b.1.to_string(), k.to_string(), format!("{p:e}"), format!("{:e}", h.ci95[i].0), format!("{:e}", h.ci95[i].1)])?;
                }
                c.flush()?;
                Ok(())
            })?;
            files.push(csv);
            emit!(&h);
        }
        Params::Annealed { x, t, tol } => {
            let xs = x.iter().map(|c| LatticePoint::new(c.clone())).collect::<Result<Vec<_>>>()?;
            let horizon = annealed_horizon(t, *tol)?;
            let plan = MasterPlan::new(sim.clone(), xs.clone(), horizon).with_clock_times(t.clone());
            let master = run_master(&plan, workers)?;
            let mut est = Vec::new();
            for &s in t {
                let row = KernelRow::origin(s, horizon - 1, *tol)?;
                for x in &xs {
                    est.push(rao_blackwell(&master, x, &row)?);
                    est.push(direct(&master, x, s)?);
                }
            }
            let recs: Vec<EstimateRecord> = est.iter().map(|e| e.record(seed)).collect();
            let csv = dir.join("estimates.csv");
            write_records_csv(&csv, &recs)?;
            files.push(csv);
            emit!(&est);
        }
        Params::Green { x } => {
            let xs = x.iter().map(|c| LatticePoint::new(c.clone())).collect::<Result<Vec<_>>>()?;
            let rep = estimate_green(&xs, sim, workers)?;
            let recs: Vec<EstimateRecord> = rep.iter().flat_map(|g| g.records(seed)).collect();
            let csv = dir.join("estimates.csv");
            write_records_csv(&csv, &recs)?;
            files.push(csv);
            emit!(&rep);
        }
        Params::Displacement { t, tol, control } => {
            let rep = estimate_displacement_exponent(t, sim, *tol, *control, workers)?;
            emit!(&rep);
        }
        Params::KernelTable { t, m_max, tol } => {
            let tab = HalfLineKernelTable::build(*t, *m_max, *tol)?;
            let csv = dir.join("kernel.csv");
            tab.save_csv(&csv)?;
            files.push(csv);
            emit!(serde_json::json!({
                "t": tab.t, "m_max": tab.m_max, "tol": tab.tol, "k_max": tab.k_max,
                "truncation_error": tab.truncation_error,
            }));
        }
        Params::Oracle { n, functional } => {
            let f = Functional::parse(functional, sim.d)?;
            let law = enumerate_le_law(*n, sim.d, &f)?;
            emit!(&law_json(&law));
        }
        Params::Envelope { target, eps, t_max, m_max, n_max, x } => {
            let (fit, collapse) = match target.as_str() {
                "thm1" | "annealed" => {
                    let settings = DeskSettings { seed, replicas: sim.replica_count, rho: sim.rho, workers };
                    let master = desk::desk_sample(&settings)?;
                    if target == "thm1" {
                        let d = desk::thm1_desk(&master)?;
                        let fit = fit_thm1_envelopes(&d.estimates, desk::DIM)?;
                        (serde_json::to_value((&d.estimates, &fit))?, fit.collapse)
                    } else {
                        let d = desk::annealed_desk(&master)?;
                        let rb: Vec<_> = d.cells.iter().map(|c| c.rao_blackwell.clone()).collect();
                        let fit = fit_annealed_envelopes(&rb, desk::DIM, *eps)?;
                        (serde_json::to_value((&d, &fit))?, fit.collapse)
                    }
                }
                "halfline" => {
                    let mut pts = Vec::new();
                    let steps = (4.0 * t_max.log10()).round().max(1.0) as usize;
                    for i in 0..=steps {
                        let t = t_max.powf(i as f64 / steps as f64);
                        for m in 0..=*m_max {
                            pts.push((t, m));
                        }
                    }
                    let r = qtlem_envelope_check(&pts, *eps)?;
                    let c = r.diffusive.collapse.clone();
                    (serde_json::to_value(&r)?, c)
                }
                _ => {
                    let xs = x.iter().map(|c| LatticePoint::new(c.clone())).collect::<Result<Vec<_>>>()?;
                    let ns: Vec<u64> = (1..=*n_max).collect();
                    let fit = srw_gaussian_check(&ns, &xs)?;
                    let c = fit.collapse.clone();
                    (serde_json::to_value(&fit)?, c)
                }
            };
            if let Some(c) = collapse {
                let csv = dir.join("collapse.csv");
                c.save_csv(&csv)?;
                files.push(csv);
            }
            emit!(&fit);
        }
    }
    Ok(RunOutcome { files })
}

/// Enumerated law as `[outcome, count, probability]` rows.
pub fn law_json(law: &crate::oracle::EnumeratedLaw) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = law
        .counts
        .iter()
        .map(|(o, c)| serde_json::json!({ "outcome": o, "count": c, "probability": *c as f64 / law.total as f64 }))
        .collect();
    serde_json::json!({
        "horizon": law.horizon, "d": law.d, "functional": law.functional, "total": law.total, "law": rows,
    })
}
