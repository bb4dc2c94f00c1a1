use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hardylab::cp::{CpError, Which};
use hardylab::identities::IdentityError;
use hardylab::suite::{
    compute_constants_cmd, describe_case_text, list_cases_text, run_suite, SuiteError,
};

/// Exit codes: 0 all pass, 1 verification failures, 2 invalid config schema
/// or bad arguments, 3 unknown case id, 4 invalid case data, 5 quadrature
/// abort on a non-finite integrand, 6 constant exponent out of range,
/// 7 io failure.
#[derive(Parser)]
#[command(
    name = "hardylab",
    version,
    about = "Verify weighted first- and second-order integral identities with explicit \
             nonnegative remainders, and estimate the sharp constants of the underlying \
             algebraic functional"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite described by a JSON config
    Verify {
        /// Suite config path (schema "1")
        config: PathBuf,
        /// Output directory for per-case JSON reports and summary.csv
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// Estimate sharp constants and write JSON records
    Constants {
        /// Comma-separated exponents
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        /// Comma-separated subset of c1,c2,c3
        #[arg(long, value_delimiter = ',', default_value = "c1,c2,c3")]
        which: Vec<String>,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
    },
    /// List registered case ids
    List,
    /// Print one registered case's data
    Describe { id: String },
}

fn exit_for(err: &SuiteError) -> u8 {
    match err {
        SuiteError::Schema(_) => 2,
        SuiteError::UnknownCase(_) => 3,
        SuiteError::InvalidCase { .. } => 4,
        SuiteError::Identity(IdentityError::Quadrature(_)) => 5,
        SuiteError::Identity(_) => 4,
        SuiteError::Constant(CpError::OutOfRangeP { .. } | CpError::InvalidP(_)) => 6,
        SuiteError::Constant(_) => 4,
        SuiteError::Io { .. } | SuiteError::Write { .. } => 7,
    }
}

fn which_name(w: Which) -> &'static str {
    match w {
        Which::C1 => "c1",
        Which::C2 => "c2",
        Which::C3 => "c3",
    }
}

fn run(cli: Cli) -> Result<ExitCode, SuiteError> {
    match cli.command {
        Command::Verify { config, out } => {
            let outcome = run_suite(&config, &out)?;
            let mut failures = 0usize;
            for r in &outcome.reports {
                if !r.pass {
                    failures += 1;
                }
                println!(
                    "{} [{}] {} rel_residual={:.3e} (quad err {:.1e})",
                    r.case_id,
                    r.field_label,
                    if r.pass { "PASS" } else { "FAIL" },
                    r.rel_residual,
                    r.quad_err_total
                );
            }
            println!(
                "suite '{}': {} runs, {} failures; reports in {}",
                outcome.suite_name,
                outcome.reports.len(),
                failures,
                out.display()
            );
            Ok(if outcome.all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Constants { p, which, out } => {
            let mut which_list = Vec::new();
            for w in &which {
                match w.as_str() {
                    "c1" => which_list.push(Which::C1),
                    "c2" => which_list.push(Which::C2),
                    "c3" => which_list.push(Which::C3),
                    other => {
                        eprintln!("error: unknown constant '{other}' (expected c1, c2, c3)");
                        return Ok(ExitCode::from(2));
                    }
                }
            }
            let (path, estimates) = compute_constants_cmd(&p, &which_list, &out)?;
            for e in &estimates {
                println!(
                    "{}(p = {}) = {:.12} in [{:.12}, {:.12}]{}",
                    which_name(e.which),
                    e.p,
                    e.value,
                    e.bracket[0],
                    e.bracket[1],
                    if e.converged { "" } else { "  (not converged)" }
                );
            }
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::List => {
            print!("{}", list_cases_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::Describe { id } => {
            print!("{}", describe_case_text(&id)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("HARDYLAB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("warning: ignoring HARDYLAB_THREADS='{v}' (want a positive integer)");
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
