use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adslab_core::experiment::{
    self, incentive_label, outer_name, ExperimentConfig, RunOutcome, PRESETS,
};
use adslab_core::report::report;
use adslab_core::Error;
use clap::{Args, Parser, Subcommand};

/// Population-based simulation lab for auto-induced distributional shift.
#[derive(Debug, Parser)]
#[command(name = "adslab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every sweep point and seed of an experiment.
    Run(RunArgs),
    /// Run a sweep and write the failure-rate table.
    Sweep(RunArgs),
    /// Aggregate a finished run directory into report tables.
    Report {
        /// Run directory written by `run` or `sweep`.
        dir: PathBuf,
    },
    /// List the shipped presets.
    Presets,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with = "preset",
        required_unless_present = "preset"
    )]
    config: Option<PathBuf>,
    /// Shipped experiment by name (see `adslab presets`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory. Defaults to the config's `out`, then
    /// `$ADSLAB_OUT/<name>`, then `runs/<name>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of seeds, overriding `n_seeds`.
    #[arg(long, value_name = "K")]
    seeds: Option<usize>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, value_name = "W", default_value_t = 0)]
    workers: usize,
    /// Root for default output directories.
    #[arg(long, env = "ADSLAB_OUT", hide = true)]
    out_root: Option<PathBuf>,
}

const EXIT_TRIAL_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn exit_for(e: &Error) -> ExitCode {
    if e.is_config() {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::from(EXIT_TRIAL_FAILURE)
    }
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let (mut config, name) = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            (
                ExperimentConfig::load(path)?,
                stem.unwrap_or_else(|| "run".into()),
            )
        }
        (None, Some(name)) => (experiment::preset(name)?, name.clone()),
        (None, None) => return Err(Error::config("config", "pass --config or --preset")),
    };
    if let Some(k) = args.seeds {
        config.n_seeds = k;
        config.validate()?;
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.out.clone())
        .or_else(|| args.out_root.as_ref().map(|root| root.join(&name)))
        .unwrap_or_else(|| Path::new("runs").join(&name));
    Ok((config, out))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn print_outcome(outcome: &RunOutcome, out: &Path) {
    for row in experiment::failure_rates(&outcome.summary) {
        let point = &outcome.manifest.points[row.point];
        let incentive = row.beta.map(incentive_label).unwrap_or("");
        println!(
            "{}  {:<16} N={:<5} T={:<3} swap={:<5} {} mean={} stderr={} failures={}/{}",
            point.dir,
            outer_name(row.outer),
            row.population,
            row.interval,
            row.swap,
            incentive,
            fmt_opt(row.mean_behaviour),
            fmt_opt(row.stderr_behaviour),
            row.failures,
            row.seeds - row.errors,
        );
    }
    for f in &outcome.manifest.failures {
        eprintln!("point {} trial {} failed: {}", f.point, f.trial, f.error);
    }
    println!("wrote {}", out.display());
}

fn run(args: &RunArgs, sweep: bool) -> ExitCode {
    let (config, out) = match load(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_for(&e);
        }
    };
    let result = if sweep {
        experiment::run_sweep(&config, args.workers, &out)
    } else {
        experiment::run_experiment(&config, args.workers, &out)
    };
    match result {
        Ok(outcome) => {
            print_outcome(&outcome, &out);
            if outcome.failed() {
                ExitCode::from(EXIT_TRIAL_FAILURE)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(&args, false),
        Command::Sweep(args) => run(&args, true),
        Command::Report { dir } => match report(&dir) {
            Ok(r) => {
                println!(
                    "{} failure-grid rows, {} q-learning seeds, {} drift rows, {} shift buckets",
                    r.failure_grid.len(),
                    r.qlearning.len(),
                    r.drift.len(),
                    r.shift.len()
                );
                println!("wrote {}", r.dir.display());
                ExitCode::SUCCESS
            }
            Err(Error::MissingFiles(files)) => {
                eprintln!("error: missing files in {}:", dir.display());
                for f in files {
                    eprintln!("  {}", f.display());
                }
                ExitCode::from(EXIT_TRIAL_FAILURE)
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit_for(&e)
            }
        },
        Command::Presets => {
            for (name, text) in PRESETS {
                let about = text.lines().next().unwrap_or("").trim_start_matches("# ");
                println!("{name:<24} {about}");
            }
            ExitCode::SUCCESS
        }
    }
}
