//! Argument parsing and the four subcommands.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::analyze::{self, Analysis};
use crate::output;
use crate::sweep::{self, Manifest, SweepSpec};
use crate::ue;
use crate::{CliError, CliResult};
use braess_core::simulation::{run, SimError};
use clap::{Parser, Subcommand};

/// Stop-sign grid traffic simulator and static equilibrium solver.
#[derive(Parser, Debug)]
#[command(name = "braess", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one config and write trips.csv, samples.csv and summary.json
    Run {
        /// Simulation config (TOML)
        #[arg(long)]
        config: PathBuf,
        /// Directory for the run's files
        #[arg(long)]
        out: PathBuf,
        /// Overrides the demand seed of the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every cell of a sweep spec and write a manifest
    Sweep {
        /// Sweep spec (TOML)
        #[arg(long)]
        spec: PathBuf,
        /// Root directory; runs go to runs/<config hash>/
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs; defaults to the number of CPUs
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Print an analysis of a finished sweep as CSV
    Analyze {
        /// manifest.json written by `sweep`
        manifest: PathBuf,
        #[arg(long, value_enum)]
        analysis: Analysis,
        /// Bin width of the flow-density analysis, seconds
        #[arg(long, default_value_t = 60.0)]
        bin_s: f64,
    },
    /// Solve static user equilibrium; a second problem adds the Braess delta
    UeSolve {
        /// Problem file (TOML)
        problem: PathBuf,
        /// Second problem, usually the first plus one link
        with: Option<PathBuf>,
        /// Convergence tolerance of the continuous solver
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn cmd_run(config: &Path, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let mut config = output::load_config(config)?;
    if let Some(seed) = seed {
        config.demand.seed = seed;
    }
    fs::create_dir_all(out)?;
    match run(&config) {
        Ok(log) => {
            output::write_run(out, &log)?;
            eprintln!(
                "{} trips, output flow {:.1} veh/hr",
                log.trips.len(),
                log.output_flow()
            );
            Ok(())
        }
        Err(e @ SimError::Collision { .. }) => {
            sweep::write_abort(out, &e)?;
            Err(CliError::Abort(anyhow::anyhow!(
                "{e} (details in {})",
                out.join(output::ABORT_FILE).display()
            )))
        }
        Err(e) => Err(CliError::usage(e)),
    }
}

fn cmd_sweep(spec: &Path, out: &Path, parallelism: Option<usize>) -> CliResult<()> {
    let text = fs::read_to_string(spec)
        .map_err(|e| CliError::usage(format!("{}: {e}", spec.display())))?;
    let spec = SweepSpec::parse(&text)?;
    let parallelism =
        parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let manifest = sweep::run_sweep(&spec, out, parallelism)?;
    let failed: Vec<_> = manifest.failed().collect();
    if failed.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = failed
        .iter()
        .map(|r| format!("{}: {}", r.hash, r.error.as_deref().unwrap_or("")))
        .collect();
    Err(CliError::Abort(anyhow::anyhow!(
        "{} runs failed:\n  {}",
        failed.len(),
        list.join("\n  ")
    )))
}

fn cmd_analyze(path: &Path, analysis: Analysis, bin: f64, stdout: &mut dyn Write) -> CliResult<()> {
    if bin.is_nan() || bin <= 0.0 {
        return Err(CliError::usage("--bin-s must be positive"));
    }
    let manifest = Manifest::load(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let table = analyze::analyze(&manifest, root, analysis, bin)?;
    table.write_csv(stdout)
}

fn cmd_ue_solve(
    problem: &Path,
    with: Option<&Path>,
    tolerance: f64,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let mut problems = vec![ue::load_problem(problem)?];
    if let Some(with) = with {
        problems.push(ue::load_problem(with)?);
    }
    let rows = ue::solve(&problems, tolerance)?;
    let mut w = csv::Writer::from_writer(stdout);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the command line `args` (program name first), writing tables to
/// `stdout` and diagnostics to stderr. Returns the process exit status.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests go to stdout and succeed.
            if e.use_stderr() {
                eprint!("{}", e.render());
            } else {
                let _ = write!(stdout, "{}", e.render());
            }
            return e.exit_code() as u8;
        }
    };
    let result = match &cli.command {
        Command::Run { config, out, seed } => cmd_run(config, out, *seed),
        Command::Sweep {
            spec,
            out,
            parallelism,
        } => cmd_sweep(spec, out, *parallelism),
        Command::Analyze {
            manifest,
            analysis,
            bin_s,
        } => cmd_analyze(manifest, *analysis, *bin_s, stdout),
        Command::UeSolve {
            problem,
            with,
            tolerance,
        } => cmd_ue_solve(problem, with.as_deref(), *tolerance, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
