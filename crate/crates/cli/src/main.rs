use std::process::ExitCode;

use clap::{Parser, Subcommand as ClapSubcommand};

use cr_afem_cli::commands::{execute, CommandError};
use cr_afem_cli::config::{Flags, RunConfig, Subcommand};

#[derive(Parser)]
#[command(name = "cr-afem", version = concat!(env!("CARGO_PKG_VERSION"), "-", env!("CR_AFEM_DESCRIBE")), about = "Adaptive Crouzeix-Raviart FEM for Stokes optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Adaptive (or uniform) solve loop; writes trace, indicators, solution and mesh.
    Run(#[command(flatten)] Flags),
    /// A-priori rates and estimator two-sidedness on uniform meshes.
    Rates(#[command(flatten)] Flags),
    /// Empirical check of the adaptivity axioms on an adaptive run.
    Axioms(#[command(flatten)] Flags),
    /// Equivalence of the error to the discrete distances.
    Equivalence(#[command(flatten)] Flags),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (sub, flags) = match cli.command {
        Command::Run(f) => (Subcommand::Run, f),
        Command::Rates(f) => (Subcommand::Rates, f),
        Command::Axioms(f) => (Subcommand::Axioms, f),
        Command::Equivalence(f) => (Subcommand::Equivalence, f),
    };
    let cfg = match RunConfig::resolve(sub, &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cfg) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}: check failed", sub.name());
                ExitCode::from(1)
            }
        }
        Err(CommandError::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
