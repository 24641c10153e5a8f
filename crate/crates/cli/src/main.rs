use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slitfb::experiment::{self, ExperimentConfig};
use slitfb::exponents::exponent_row;
use slitfb::Ellipticity;

#[derive(Parser)]
#[command(name = "slitfb", version, about = "Numerical lab for the fully nonlinear thin obstacle problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Check a config and its input files without running it.
    Validate { config: PathBuf },
    /// Critical exponents of the Pucci operators.
    Exponents {
        #[arg(long)]
        lambda: f64,
        #[arg(long = "Lambda")]
        big_lambda: f64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
}

fn status(code: i32) -> ExitCode {
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return status(code);
        }
    };
    match cli.command {
        Command::Run { config } => {
            let c = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("slitfb: {}: {e}", config.display());
                    return status(1);
                }
            };
            let r = experiment::run(&c);
            match &r {
                Ok(_) => println!("{}", c.output_dir().join(experiment::MANIFEST).display()),
                Err(e) => eprintln!("slitfb: {e}"),
            }
            status(experiment::exit_code(&r))
        }
        Command::Validate { config } => {
            let r = ExperimentConfig::load(&config).and_then(|c| experiment::check(&c));
            match &r {
                Ok(()) => println!("{}: ok", config.display()),
                Err(e) => eprintln!("slitfb: {}: {e}", config.display()),
            }
            status(experiment::exit_code(&r).min(1))
        }
        Command::Exponents { lambda, big_lambda, tol } => {
            let r = Ellipticity::new(lambda, big_lambda).and_then(|ell| exponent_row(&ell, tol));
            match &r {
                Ok(row) => match serde_json::to_string_pretty(row) {
                    Ok(s) => println!("{s}"),
                    Err(e) => {
                        eprintln!("slitfb: {e}");
                        return status(1);
                    }
                },
                Err(e) => eprintln!("slitfb: {e}"),
            }
            status(experiment::exit_code(&r))
        }
    }
}
