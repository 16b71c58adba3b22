use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hilbert_ot::cli;
use hilbert_ot::Error;

/// Semi-dual neural optimal transport on spectral coefficients.
///
/// Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 check failure.
#[derive(Parser)]
#[command(name = "hilbert-ot", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace all four seeds by ones derived from N.
    #[arg(long, global = true, value_name = "N")]
    seed_override: Option<u64>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write source.csv and target.csv for inspection.
    GenData,
    /// Train the transport map and potential; write checkpoints, log and metrics.
    Train,
    /// Evaluate a transport checkpoint on a fresh held-out set.
    Eval {
        /// Checkpoint file or run directory (default: <out>/checkpoints/transport.json).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render SVG figures for a trained run directory.
    Plot {
        /// Run directory (default: the output directory).
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Check {
        /// Monte Carlo checks at N = 1e4 with widened tolerances.
        #[arg(long)]
        quick: bool,
    },
    /// Train at several terminal noise levels and tabulate transport costs.
    SweepSigma {
        /// Comma-separated terminal sigmas; 0 means no smoothing.
        #[arg(long, default_value = "0.3,0.15,0.06")]
        sigmas: String,
        /// Comma-separated seed bases.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let c = &cli.common;
    let cfg = cli::load_config(c.config.as_deref(), c.out.as_deref(), c.seed_override)?;
    match cli.command {
        Command::GenData => {
            cli::cmd_gen_data(&cfg)?;
            if !c.quiet {
                eprintln!("wrote {}/source.csv and target.csv", cfg.output_dir.display());
            }
        }
        Command::Train => {
            cli::cmd_train(&cfg, c.quiet)?;
        }
        Command::Eval { checkpoint } => {
            let m = cli::cmd_eval(&cfg, checkpoint.as_deref())?;
            println!("{}", m.to_json_line()?);
        }
        Command::Plot { run_dir } => {
            let dir = run_dir.unwrap_or_else(|| cfg.output_dir.clone());
            for p in cli::cmd_plot(&dir)? {
                if !c.quiet {
                    eprintln!("wrote {}", p.display());
                }
            }
        }
        Command::Check { quick } => {
            let report = cli::cmd_check(&cfg, quick, c.out.is_some() || c.config.is_some())?;
            if !c.quiet {
                for r in &report.results {
                    eprintln!(
                        "{} {:<32} value {:<12.4e} tol {:<10.3e} {}",
                        if r.passed { "PASS" } else { "FAIL" },
                        r.name,
                        r.value,
                        r.tolerance,
                        r.detail
                    );
                }
            }
            println!("{}", serde_json::to_string(&report)?);
            if !report.passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::SweepSigma { sigmas, seeds } => {
            let sigmas: Vec<f64> = cli::parse_list(&sigmas)?;
            let seeds: Vec<u64> = cli::parse_list(&seeds)?;
            let rows = cli::cmd_sweep_sigma(&cfg, &sigmas, &seeds, cli::thread_cap()?)?;
            println!("{}", hilbert_ot::experiment::SWEEP_CSV_HEADER);
            for r in rows {
                println!("{}", r.csv_row());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
