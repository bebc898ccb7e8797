use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lerwlab::config::workers_from_env;
use lerwlab::experiment::{law_json, load_spec, run_spec};
use lerwlab::kernel::HalfLineKernelTable;
use lerwlab::oracle::{enumerate_le_law, Functional};
use lerwlab::verify::{run_suite, VerifyOptions, SUITES};
use lerwlab::{LabError, Result};

/// Loop-erased random walk simulation and verification lab.
#[derive(Parser)]
#[command(name = "lerwlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec file.
    Run { spec: PathBuf },
    /// Run a verification suite: unit, oracle, kernel, thm1-desk,
    /// annealed-desk or srw-classical.
    Verify {
        suite: String,
        /// Replica count for the Monte Carlo checks.
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the half-line kernel table q_t(a, m), a, m <= m_max, as CSV.
    Kernel {
        #[arg(long)]
        t: f64,
        #[arg(long = "m-max")]
        m_max: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the exact law of a functional of the loop erasure of an
    /// N-step walk as JSON.
    Oracle {
        #[arg(long = "N")]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value = "endpoint")]
        functional: String,
    },
}

fn dispatch(cli: Cli) -> Result<bool> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Run { spec } => {
            let spec = load_spec(&spec)?;
            let outcome = run_spec(&spec, workers_from_env()?)?;
            for f in outcome.files {
                writeln!(out, "{}", f.display())?;
            }
            Ok(true)
        }
        Command::Verify { suite, replicas, seed } => {
            if !SUITES.contains(&suite.as_str()) {
                return Err(LabError::Parse(format!("unknown suite '{suite}'; expected one of {}", SUITES.join(", "))));
            }
            let mut opts = VerifyOptions { workers: workers_from_env()?, replicas, ..VerifyOptions::default() };
            if let Some(s) = seed {
                opts.seed = s;
            }
            let report = run_suite(&suite, &opts)?;
            write!(out, "{}", report.render())?;
            Ok(report.pass())
        }
        Command::Kernel { t, m_max, tol, out: path } => {
            let table = HalfLineKernelTable::build(t, m_max, tol)?;
            match path {
                Some(p) => table.save_csv(&p)?,
                None => table.write_csv(&mut out)?,
            }
            Ok(true)
        }
        Command::Oracle { n, d, functional } => {
            let f = Functional::parse(&functional, d)?;
            let law = enumerate_le_law(n, d, &f)?;
            let text = serde_json::to_string_pretty(&law_json(&law))?;
            writeln!(out, "{text}")?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
