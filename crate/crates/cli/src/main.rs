use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use e2fl_cli::compare::{compare_baseline, compare_dirs, write_comparison};
use e2fl_cli::run::run_experiment;
use e2fl_cli::{exit_code, ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "e2fl", version, about = "Group-fair federated rank learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) cell of a config file.
    Run {
        config: PathBuf,
        /// Output directory. Falls back to E2FL_OUT, then the config's `out`, then `runs`.
        #[arg(long, env = "E2FL_OUT")]
        out: Option<PathBuf>,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
    },
    /// Compare run summaries: each directory against the first, or every algorithm against a baseline.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        baseline: Option<String>,
        /// Write comparison.csv here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            out,
            jobs,
            seed_override,
        } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(|e| anyhow::Error::new(ConfigError(e)))?;
            if let Some(seeds) = seed_override {
                cfg.seeds = seeds;
                cfg.validate().map_err(|e| anyhow::Error::new(ConfigError(e)))?;
            }
            let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
            let result = run_experiment(&cfg, &out, jobs)?;
            for s in &result.summary {
                let group_var = s.stats[3].map_or(String::from("-"), |(m, _)| format!("{m:.2}"));
                let group_avg = s.stats[0].map_or(String::from("-"), |(m, _)| format!("{m:.2}"));
                println!("{:<8} n={} group_avg={group_avg} group_var={group_var}", s.algorithm, s.n);
            }
            println!("wrote {}", out.display());
        }
        Command::Compare { dirs, baseline, out } => {
            let rows = match &baseline {
                Some(b) => {
                    if dirs.len() != 1 {
                        anyhow::bail!("--baseline compares algorithms within a single directory");
                    }
                    compare_baseline(&dirs[0], b)?
                }
                None => compare_dirs(&dirs)?,
            };
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join("comparison.csv");
                    let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    write_comparison(f, &rows)?;
                }
                None => write_comparison(std::io::stdout().lock(), &rows)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
