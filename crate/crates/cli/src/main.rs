//! `cloakq` — command-line front end for the anonymizer-queue toolkit.
//!
//! Five subcommands cover the analysis layers in `cloakq-core`:
//!
//! * `analyze`   — characteristic root, stationary distribution, metrics
//! * `simulate`  — discrete-event simulation (single run or replications)
//! * `validate`  — simulation vs. CTMC / analytic references with bounds
//! * `sweep`     — one parameter swept across a value grid, per layer
//! * `prob`      — clique-cover success probability for the geometric model
//!
//! Settings merge in order: built-in defaults, then a TOML config file
//! (`--config` or `$CLOAKQ_CONFIG`), then command-line flags. Output is
//! CSV or JSON with identical values either way, and every run is
//! deterministic for a fixed seed.
//!
//! Exit codes: 0 success, 2 validation bounds exceeded, 3 bad
//! configuration or usage, 4 I/O failure while writing output.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod output;

use commands::SweepVar;
use config::{EdgeRule, FileConfig, Format, Mode, Reference, Retry, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cloakq", version, about = "Queueing analysis for k-anonymity location anonymizers")]
struct Cli {
    /// TOML config file; falls back to $CLOAKQ_CONFIG, then defaults
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the model in closed form and print distribution and metrics
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Also print the M/M/1 baseline metrics
        #[arg(long)]
        mm1: bool,
        /// How many leading state probabilities to print
        #[arg(long, default_value_t = 10, value_name = "N")]
        head: usize,
    },
    /// Run the discrete-event simulation
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        geom: GeomArgs,
        /// Record the event trace (single run only); written as
        /// <out>.trace.csv next to the report, or trace.csv
        #[arg(long)]
        trace: bool,
        /// Replay a scripted arrival/attempt schedule instead of sampling
        #[arg(long, value_name = "FILE")]
        replay: Option<PathBuf>,
    },
    /// Simulate, then check L and W against a reference layer
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Reference layer the bound applies to
        #[arg(long, value_enum)]
        reference: Option<Reference>,
        /// Relative-error bound on L and W
        #[arg(long)]
        bound: Option<f64>,
        /// Exit 2 on exceeded bounds even for a non-CTMC reference
        #[arg(long)]
        strict: bool,
    },
    /// Sweep one parameter and tabulate metrics per layer
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Parameter to sweep
        #[arg(long, value_enum, default_value_t = SweepVar::Lambda)]
        var: SweepVar,
        /// Comma-separated sweep values (defaults depend on --var)
        #[arg(long, value_name = "LIST")]
        values: Option<String>,
        /// Comma-separated layers: paper, distribution, ctmc, mm1, sim
        #[arg(long, value_name = "LIST")]
        layers: Option<String>,
    },
    /// Estimate the anonymization success probability geometrically
    Prob {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        geom: GeomArgs,
        /// Monte Carlo sample count
        #[arg(long)]
        samples: Option<u64>,
        /// RNG seed for the Monte Carlo estimate
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Model parameters and output destination, shared by every subcommand.
#[derive(Debug, Args)]
struct CommonArgs {
    /// Query arrival rate (per second)
    #[arg(long)]
    lambda: Option<f64>,
    /// Anonymization attempt rate (per second)
    #[arg(long)]
    mu: Option<f64>,
    /// Anonymity level: queries consumed by each successful batch
    #[arg(long)]
    k: Option<usize>,
    /// Per-attempt success probability
    #[arg(long)]
    r: Option<f64>,
    /// Output format
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write the report here instead of stdout
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Simulation controls.
#[derive(Debug, Args)]
struct SimArgs {
    /// Simulated time horizon in seconds
    #[arg(long)]
    horizon: Option<f64>,
    /// Warm-up period discarded from statistics, in seconds
    #[arg(long)]
    warmup: Option<f64>,
    /// Number of independent replications
    #[arg(long)]
    reps: Option<u32>,
    /// Base RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Service model: bernoulli coin flips or geometric clique checks
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Clique-check window in queries (geometric mode; defaults to 2k)
    #[arg(long)]
    window: Option<usize>,
    /// What the server does after a failed attempt
    #[arg(long, value_enum)]
    retry: Option<Retry>,
}

/// Geometric-model controls.
#[derive(Debug, Args)]
struct GeomArgs {
    /// Service region width
    #[arg(long)]
    region_x: Option<f64>,
    /// Service region height
    #[arg(long)]
    region_y: Option<f64>,
    /// Tolerance-rectangle width per query
    #[arg(long)]
    tol_dx: Option<f64>,
    /// Tolerance-rectangle height per query
    #[arg(long)]
    tol_dy: Option<f64>,
    /// Edge rule for the constraint graph
    #[arg(long, value_enum)]
    edge_rule: Option<EdgeRule>,
    /// Minimum bounding box area per query (mmb edge rule)
    #[arg(long)]
    mmb_area: Option<f64>,
}

/// Copies `Some` flag values onto the run configuration. The `Option`
/// fields of `RunConfig` (`window`, `out`) take the flag via `Into`.
macro_rules! override_with {
    ($cfg:ident, $args:expr, $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() {
            $cfg.$field = v.into();
        })*
    };
}

fn apply_common(cfg: &mut RunConfig, args: &CommonArgs) {
    override_with!(cfg, args, lambda, mu, k, r, format, out);
}

fn apply_sim(cfg: &mut RunConfig, args: &SimArgs) {
    override_with!(cfg, args, horizon, warmup, reps, seed, mode, window, retry);
}

fn apply_geom(cfg: &mut RunConfig, args: &GeomArgs) {
    override_with!(cfg, args, region_x, region_y, tol_dx, tol_dy, edge_rule, mmb_area);
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let mut cfg = RunConfig::default();
    FileConfig::load(cli.config.as_deref())?.apply(&mut cfg);
    match cli.command {
        Command::Analyze { common, mm1, head } => {
            apply_common(&mut cfg, &common);
            let table = commands::analyze(&cfg, mm1, head)?;
            output::emit(&table, cfg.format, cfg.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { common, sim, geom, trace, replay } => {
            apply_common(&mut cfg, &common);
            apply_sim(&mut cfg, &sim);
            apply_geom(&mut cfg, &geom);
            let (table, rendered) = commands::simulate(&cfg, trace, replay.as_deref())?;
            output::emit(&table, cfg.format, cfg.out.as_deref())?;
            if let Some(text) = rendered {
                let path = output::trace_path(cfg.out.as_deref());
                std::fs::write(&path, text)
                    .map_err(|e| CliError::io(&format!("writing {}", path.display()), e))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { common, sim, reference, bound, strict } => {
            apply_common(&mut cfg, &common);
            apply_sim(&mut cfg, &sim);
            if let Some(reference) = reference {
                cfg.reference = reference;
            }
            if let Some(bound) = bound {
                cfg.bound = bound;
            }
            let (table, exceeded) = commands::validate(&cfg, strict)?;
            output::emit(&table, cfg.format, cfg.out.as_deref())?;
            Ok(if exceeded { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Sweep { common, sim, var, values, layers } => {
            apply_common(&mut cfg, &common);
            apply_sim(&mut cfg, &sim);
            let table = commands::sweep(&cfg, var, values.as_deref(), layers.as_deref())?;
            output::emit(&table, cfg.format, cfg.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Prob { common, geom, samples, seed } => {
            apply_common(&mut cfg, &common);
            apply_geom(&mut cfg, &geom);
            if let Some(samples) = samples {
                cfg.samples = samples;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let table = commands::prob(&cfg)?;
            output::emit(&table, cfg.format, cfg.out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
