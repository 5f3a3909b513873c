use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use chainph_cli::commands::parse_vector;
use chainph_cli::{
    simulate, transform, verify, CliError, Direction, ExitStatus, FloatStyle, Overrides,
    SimulateOptions, TransformOptions,
};
use chainph_core::verify::{Subset, VerifyOptions};
use clap::{ArgGroup, Parser, Subcommand};

/// Chained-structure port-Hamiltonian control of a car-like vehicle.
#[derive(Parser)]
#[command(name = "chainph", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop from a config file and write CSV, summary and plots.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.directory`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        dt: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        duration: Option<f64>,
        #[arg(long)]
        no_plots: bool,
        /// Print floats with 17 significant digits.
        #[arg(long)]
        exact_floats: bool,
    },
    /// Run the numerical property checks and print a pass/fail table.
    Verify {
        #[arg(long, default_value = "all", value_parser = parse_subset)]
        subset: Subset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate the w-chart: `--forward` maps z to w, `--inverse` maps w to z.
    #[command(group(ArgGroup::new("direction").required(true).args(["forward", "inverse"])))]
    Transform {
        #[arg(long)]
        n: usize,
        #[arg(long, allow_hyphen_values = true, value_name = "Z1,...,Zn")]
        forward: Option<String>,
        #[arg(long, allow_hyphen_values = true, value_name = "W1,...,Wn")]
        inverse: Option<String>,
        #[arg(long)]
        exact_floats: bool,
    },
}

fn parse_subset(s: &str) -> Result<Subset, String> {
    s.parse()
}

fn floats(exact: bool) -> FloatStyle {
    if exact {
        FloatStyle::Exact
    } else {
        FloatStyle::Shortest
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<ExitStatus, CliError> {
    match cli.command {
        Command::Simulate {
            config,
            out: directory,
            dt,
            duration,
            no_plots,
            exact_floats,
        } => simulate(
            &SimulateOptions {
                config,
                overrides: Overrides {
                    dt,
                    duration,
                    out: directory,
                },
                plots: !no_plots,
                floats: floats(exact_floats),
            },
            out,
        ),
        Command::Verify { subset, seed } => verify(
            &VerifyOptions {
                subset,
                seed,
                ..VerifyOptions::default()
            },
            out,
        ),
        Command::Transform {
            n,
            forward,
            inverse,
            exact_floats,
        } => {
            let (direction, text) = match (forward, inverse) {
                (Some(text), None) => (Direction::Forward, text),
                (None, Some(text)) => (Direction::Inverse, text),
                _ => unreachable!("clap enforces exactly one direction"),
            };
            transform(
                &TransformOptions {
                    n,
                    direction,
                    values: parse_vector(&text)?,
                    floats: floats(exact_floats),
                },
                out,
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let status = match run(cli, &mut out) {
        Ok(status) => status,
        Err(err) => {
            let _ = out.flush();
            eprintln!("error: {}", err.message);
            eprintln!("status {}", err.status);
            err.status
        }
    };
    let _ = out.flush();
    ExitCode::from(status.code() as u8)
}
