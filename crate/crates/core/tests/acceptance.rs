//! Acceptance criteria 1 to 10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Runtime limits are part of each criterion.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lerwlab::config::{SimConfig, DEFAULT_SEED};
use lerwlab::desk::{self, DeskSettings};
use lerwlab::estimators::{estimate_displacement_exponent, estimate_green, MasterSample};
use lerwlab::lattice::LatticePoint;
use lerwlab::verify::{self, run_suite, SuiteReport, VerifyOptions, SUITES};
use lerwlab::Result;

const DESK_REPLICAS: u64 = 1_000_000;
const GREEN_REPLICAS: u64 = 10_000_000;
const DISPLACEMENT_REPLICAS: u64 = 100_000;
/// Replica count of the Monte Carlo suites in the determinism rerun.
const DETERMINISM_REPLICAS: u64 = 20_000;

/// Errors as text, so one failed sample can feed several criteria.
type Res<T> = std::result::Result<T, String>;

fn text<T>(r: Result<T>) -> Res<T> {
    r.map_err(|e| e.to_string())
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn suite_outcome(rep: &SuiteReport) -> Outcome {
    let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let consts: Vec<String> = rep.constants.iter().map(|(k, v)| format!("{k}={v:.3e}")).collect();
    let detail = if failed.is_empty() {
        format!("{} checks; {}", rep.checks.len(), consts.join(" "))
    } else {
        format!("failed: {}", failed.join(", "))
    };
    Outcome { pass: rep.pass(), detail }
}

fn report(id: usize, name: &str, limit: Duration, start: Instant, res: Res<Outcome>) -> bool {
    let secs = start.elapsed();
    let (pass, detail) = match res {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = secs <= limit;
    let ok = pass && in_time;
    let tag = if ok { "PASS" } else { "FAIL" };
    let time_note = if in_time { String::new() } else { format!(" over the {}s limit", limit.as_secs()) };
    println!("{tag}  criterion {id:>2}  {name}: {detail} [{:.1}s{time_note}]", secs.as_secs_f64());
    ok
}

fn opts() -> VerifyOptions {
    VerifyOptions { seed: DEFAULT_SEED, workers: lerwlab::config::workers_from_env().unwrap_or(1), replicas: None }
}

fn desk(rho: f64, seed: u64) -> Result<MasterSample> {
    desk::desk_sample(&DeskSettings { seed, replicas: DESK_REPLICAS, rho, workers: opts().workers })
}

fn green() -> Result<Outcome> {
    let config = SimConfig::new(5, GREEN_REPLICAS, 16.0).with_seed(DEFAULT_SEED);
    let xs: Vec<LatticePoint> = (3..=6).map(|k| LatticePoint::on_axis(5, 0, k)).collect();
    let rep = estimate_green(&xs, &config, opts().workers)?;
    let violations: u64 = rep.iter().map(|g| g.violations).sum();
    let ratios: Vec<f64> = rep.iter().map(|g| g.ratio_lerw).collect();
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let nondegenerate = rep.iter().all(|g| g.ratio_lerw_ci.0 > 0.0 && g.p_lerw_ci.1 < 1.0);
    let cells: Vec<String> = rep
        .iter()
        .map(|g| format!("|x|={} {:.4} [{:.4}, {:.4}]", g.x.norm(), g.ratio_lerw, g.ratio_lerw_ci.0, g.ratio_lerw_ci.1))
        .collect();
    Ok(Outcome {
        pass: violations == 0 && hi / lo < 2.0 && nondegenerate,
        detail: format!("violations {violations}, |x|^3 p spread {:.3}; {}", hi / lo, cells.join("; ")),
    })
}

fn displacement() -> Result<Outcome> {
    let config = SimConfig::new(5, DISPLACEMENT_REPLICAS, 16.0).with_seed(DEFAULT_SEED);
    let t: Vec<f64> = (0..=6).map(|i| 10f64.powf(2.0 + i as f64 / 2.0)).collect();
    let rep = estimate_displacement_exponent(&t, &config, 1e-7, true, opts().workers)?;
    let s = rep.lerw.slope;
    let control = rep.control.as_ref().map_or(f64::NAN, |c| c.slope);
    Ok(Outcome {
        pass: (0.20..=0.30).contains(&s),
        detail: format!("slope {s:.4} ci95 [{:.4}, {:.4}] R^2 {:.5}; walk-on-Z control {control:.4}", rep.lerw.slope_ci95.0, rep.lerw.slope_ci95.1, rep.lerw.r2),
    })
}

fn truncation(base: &desk::Thm1Desk) -> Result<Outcome> {
    let doubled = desk::thm1_desk(&desk(16.0, DEFAULT_SEED + 1)?)?;
    let bias = lerwlab::config::bias_bound(desk::DIM, 8.0);
    let mut worst: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut bad = Vec::new();
    for (a, b) in base.estimates.iter().zip(&doubled.estimates) {
        let joint = (a.sigma * a.sigma + b.sigma * b.sigma).sqrt();
        let delta = (a.estimate - b.estimate).abs();
        let limit = bias + 3.0 * joint;
        worst = worst.max(delta / limit);
        worst_z = worst_z.max(delta / joint);
        if delta >= limit {
            bad.push(format!("x={} n={}", a.x, a.n));
        }
    }
    Ok(Outcome {
        pass: bad.is_empty(),
        detail: format!("{} points, max |delta| / (bias_bound(8) + 3 joint SE) = {worst:.3e}, max |delta| / joint SE = {worst_z:.2}{}", base.estimates.len(), if bad.is_empty() { String::new() } else { format!("; exceeded at {}", bad.join(", ")) }),
    })
}

fn verify_stdout(suite: &str, workers: usize) -> std::io::Result<(Vec<u8>, i32)> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lerwlab"));
    cmd.args(["verify", suite]).env("LERWLAB_WORKERS", workers.to_string());
    if suite != "kernel" {
        cmd.args(["--replicas", &DETERMINISM_REPLICAS.to_string()]);
    }
    let out = cmd.output()?;
    Ok((out.stdout, out.status.code().unwrap_or(-1)))
}

fn determinism() -> Result<Outcome> {
    let mut differing = Vec::new();
    for suite in SUITES {
        let one = verify_stdout(suite, 1)?;
        let eight = verify_stdout(suite, 8)?;
        if one != eight || one.0.is_empty() {
            differing.push(suite);
        }
    }
    Ok(Outcome {
        pass: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{} suites byte-identical under 1 and 8 workers", SUITES.len())
        } else {
            format!("output differs for {}", differing.join(", "))
        },
    })
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut all = true;

    let t = Instant::now();
    all &= report(1, "loop erasure", secs(30), t, text(verify::unit_suite(&opts())).map(|r| suite_outcome(&r)));

    let t = Instant::now();
    all &= report(2, "oracle equivalence", secs(300), t, text(run_suite("oracle", &opts())).map(|r| suite_outcome(&r)));

    let t = Instant::now();
    all &= report(3, "kernel exactness", secs(60), t, text(verify::kernel_suite()).map(|r| suite_outcome(&r)));

    let t = Instant::now();
    let master = text(desk(8.0, DEFAULT_SEED));
    let master_time = t.elapsed();
    let thm1 = master.as_ref().map_err(Clone::clone).and_then(|m| text(desk::thm1_desk(m)));
    let outcome = thm1.clone().map(|d| suite_outcome(&verify::thm1_report(&d)));
    all &= report(4, "window hitting envelopes", secs(3600), t, outcome);

    let t = Instant::now() - master_time;
    let outcome = master.and_then(|m| text(desk::annealed_desk(&m))).map(|d| suite_outcome(&verify::annealed_report(&d)));
    all &= report(5, "annealed kernel envelopes", secs(3600), t, outcome);

    let t = Instant::now();
    all &= report(6, "Green asymptotics", secs(1800), t, text(green()));

    let t = Instant::now();
    all &= report(7, "extrinsic walk dimension", secs(1800), t, text(displacement()));

    let t = Instant::now();
    all &= report(8, "classical walk estimates", secs(600), t, text(verify::classical_suite(&opts())).map(|r| suite_outcome(&r)));

    let t = Instant::now();
    all &= report(9, "truncation robustness", secs(3600), t, thm1.and_then(|d| text(truncation(&d))));

    let t = Instant::now();
    all &= report(10, "determinism", secs(3600), t, text(determinism()));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
