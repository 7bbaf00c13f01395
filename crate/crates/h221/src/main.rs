//! Thin command-line front end over the verification harness: each
//! subcommand loads a JSON run configuration, executes one layer of
//! checks, writes `report.json` plus CSV data files, and exits nonzero
//! if any enabled check fails.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use h221::harness::{run_command, RunConfig};

#[derive(Parser)]
#[command(
    name = "h221",
    version,
    about = "Numerical certification of a two-time Hamiltonian system, its linear problem, and the induced evolution equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (complex scalars as [re, im] pairs).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Corrupt one ingredient to demonstrate the check catches it.
    #[arg(long)]
    mutate: Option<String>,
    /// Override the residual-ladder steps, e.g. --steps 1e-3,5e-4,2.5e-4.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the canonical flows; check commutativity and reversibility.
    Flow(Common),
    /// Check the linear-system families: algebraic invariants and the
    /// deformation-compatibility residual ladder.
    LaxCheck(Common),
    /// Check the reduced first- and second-order field equations on grids.
    Prlg(Common),
    /// Build the two-point kernel and certify the evolution equations it
    /// satisfies in every chart, plus the solution-grid invariants.
    Psi(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Flow(a) => ("flow", a),
        Command::LaxCheck(a) => ("lax-check", a),
        Command::Prlg(a) => ("prlg", a),
        Command::Psi(a) => ("psi", a),
    };

    let cfg = match RunConfig::load(&common.config) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };

    let out = match run_command(name, &cfg, &common.out, common.mutate.as_deref(), common.steps.as_deref()) {
        Ok(out) => out,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };

    // Write through the handle and ignore errors so a closed pipe
    // (e.g. `| head`) ends the program quietly instead of panicking.
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for row in &out.report.checks {
        let verdict = if row.pass { "PASS" } else { "FAIL" };
        let worst = row
            .residuals
            .iter()
            .map(|r| r.max_residual)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut line = format!("[{verdict}] {:<26} max {:>10.3e}", row.id, worst);
        if let Some(order) = row.fitted_order {
            line.push_str(&format!("  order {order:>5.2}"));
        }
        if let Some(floor) = row.extrapolated_floor {
            line.push_str(&format!("  floor {floor:>9.3e}"));
        }
        let _ = writeln!(w, "{line}");
    }
    for file in &out.files {
        let _ = writeln!(w, "wrote {}", file.display());
    }

    if out.report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
