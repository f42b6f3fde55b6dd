use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scalesep::commands::{self, Options, Outcome};
use scalesep::config::{extract_overrides, RunConfig};
use scalesep::exit::{self, Failure};

/// Two-scale phase-field experiments. Any `--section.key=value` argument overrides the config file.
#[derive(Debug, Parser)]
#[command(name = "scalesep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Also write SVG plots (sweep only).
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the homogenized potential.
    Whom,
    /// Solve the constrained cell problem along a decreasing eta list.
    Weta,
    /// Homogenized surface tension and the geodesic between the wells.
    Sigma,
    /// Minimize the two-scale energy from an initial field.
    Minimize,
    /// Build one recovery field.
    Recover,
    /// Recovery energy along a scale sequence.
    Sweep,
    /// Sample the structural hypotheses on the potential.
    Validate,
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<Vec<String>, Failure> {
    let path = cli.config.ok_or_else(|| Failure::usage("--config is required"))?;
    let mut cfg = RunConfig::load(&path, &overrides)?;
    if let Some(out) = cli.out {
        cfg.out = out;
        cfg.base_dir = None;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        cfg.jobs = jobs;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    let opts = Options { plot: cli.plot };
    let (summary, files) = match cli.command {
        Command::Whom => split(commands::cmd_whom(&cfg)?),
        Command::Weta => split(commands::cmd_weta(&cfg)?),
        Command::Sigma => split(commands::cmd_sigma(&cfg)?),
        Command::Minimize => split(commands::cmd_minimize(&cfg)?),
        Command::Recover => split(commands::cmd_recover(&cfg)?),
        Command::Sweep => split(commands::cmd_sweep(&cfg, &opts)?),
        Command::Validate => split(commands::cmd_validate(&cfg)?),
    };
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(summary)
}

fn split<T>(o: Outcome<T>) -> (Vec<String>, Vec<PathBuf>) {
    (o.summary, o.files)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCALESEP_LOG", "warn")).init();
    let (args, overrides) = extract_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    match run(cli, overrides) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
