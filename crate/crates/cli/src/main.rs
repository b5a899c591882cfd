use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use duelq_core::harness::{self, ExperimentConfig, ScoreRecord};
use duelq_core::Error;

/// Dueling Q-network experiments on the corridor environment.
#[derive(Debug, Parser)]
#[command(name = "duelq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (architecture, action count, seed) cell of a config.
    Run {
        /// JSON experiment config; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds, overriding the config: `1,2,7` or `1-5`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<SeedList>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Median SE curve per (architecture, action count).
    Aggregate {
        /// Curve CSVs, or directories whose `se_*.csv` files are used.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalized improvement of an agent over the better of human and baseline.
    Metric {
        #[arg(long, allow_hyphen_values = true)]
        agent: f64,
        #[arg(long, allow_hyphen_values = true)]
        baseline: f64,
        #[arg(long, allow_hyphen_values = true)]
        human: f64,
        #[arg(long, allow_hyphen_values = true)]
        random: f64,
    },
    /// Per-state value and advantage saliency of a dueling checkpoint.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact Q*, Q^pi, V^pi and A^pi tables for one action count.
    OracleDump {
        #[arg(long, default_value_t = 5)]
        actions: usize,
        #[arg(long, default_value_t = duelq_core::corridor::BEHAVIOR_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(text: &str) -> Result<SeedList, String> {
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim) {
        let bad = || format!("bad seed list entry {part:?}");
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
                let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                seeds.extend(lo..=hi);
            }
            None => seeds.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(SeedList(seeds))
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            out,
            seeds,
            jobs,
        } => {
            let mut config = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                    ExperimentConfig::from_json(&text)
                        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
                }
                None => ExperimentConfig::default(),
            };
            if let Some(out) = out {
                config.output_dir = out.to_string_lossy().into_owned();
            }
            if let Some(seeds) = seeds {
                config.seeds = seeds.0;
            }
            if jobs == 0 {
                return Err(Failure::Usage("--jobs must be positive".into()));
            }
            config.validate()?;
            let manifest = harness::run(&config, jobs)?;
            println!(
                "{} runs written to {} in {:.1}s (config {})",
                manifest.runs.len(),
                config.output_dir,
                manifest.wall_seconds,
                &manifest.config_hash[..12]
            );
            Ok(())
        }
        Command::Aggregate { inputs, out } => {
            let files = expand_inputs(&inputs)?;
            for path in harness::aggregate_files(&files, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Metric {
            agent,
            baseline,
            human,
            random,
        } => {
            let value = harness::improvement_metric(&ScoreRecord {
                agent,
                baseline,
                human,
                random,
            })?;
            println!("{value} ({:.1}%)", 100.0 * value);
            Ok(())
        }
        Command::Saliency { checkpoint, out } => {
            let rows = harness::dump_saliency(&checkpoint, &out)?;
            println!("{} rows written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::OracleDump { actions, epsilon, out } => {
            harness::dump_oracle(actions, epsilon, &out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            files.extend(curve_files(input).map_err(|e| Failure::Runtime(format!("{}: {e}", input.display())))?);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        return Err(Failure::Usage("no curve files found".into()));
    }
    Ok(files)
}

fn curve_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("se_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("1-5").unwrap().0, vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seeds("3,1, 9").unwrap().0, vec![3, 1, 9]);
        assert_eq!(parse_seeds("1-2,7").unwrap().0, vec![1, 2, 7]);
        assert!(parse_seeds("5-1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
