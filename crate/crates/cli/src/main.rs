use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use daovfl::exp::{self, ExperimentConfig};
use daovfl::par::Exec;
use daovfl::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Online vertical federated learning simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seed of an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Pre-trained actor for the DAO-PPO schedule.
        #[arg(long)]
        agent: Option<PathBuf>,
    },
    /// Run an inclusive seed range, one directory per seed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range such as `0..9`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        agent: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Aggregate metrics files grouped by a manifest key.
    Compare {
        #[arg(long)]
        glob: String,
        /// Dotted manifest key, e.g. `engine.noise_mode` or `schedule`.
        #[arg(long)]
        group_by: String,
        /// Per-round table; scalar summaries go next to it as `<stem>.summary.csv`.
        #[arg(long)]
        out: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => EXIT_CONFIG,
        Some(Error::Divergence { .. }) | Some(Error::Numeric(_)) => EXIT_DIVERGENCE,
        _ => 1,
    }
}

fn parse_seeds(s: &str) -> anyhow::Result<Vec<u64>> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow!(Error::Config(format!("seed range {s:?} is not of the form a..b"))))?;
    let parse = |x: &str| {
        x.trim()
            .parse::<u64>()
            .map_err(|_| anyhow!(Error::Config(format!("bad seed {x:?} in range {s:?}"))))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a > b {
        return Err(anyhow!(Error::Config(format!("empty seed range {s:?}"))));
    }
    Ok((a..=b).collect())
}

fn load_config(path: &Path, agent: Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if agent.is_some() {
        cfg.agent_path = agent;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            agent,
        } => {
            let cfg = load_config(&config, agent)?;
            let art = exp::run_experiment(&cfg, seed, &out)?;
            println!(
                "{}: final acc {:.4}, mean latency {:.3}, mean reward {:.4}",
                art.metrics.display(),
                art.summary.final_test_acc,
                art.summary.mean_latency,
                art.summary.mean_reward
            );
        }
        Command::Sweep {
            config,
            seeds,
            out,
            agent,
            sequential,
        } => {
            let cfg = load_config(&config, agent)?;
            let seeds = parse_seeds(&seeds)?;
            let exec = if sequential { Exec::Sequential } else { Exec::default() };
            let results = exp::sweep(&cfg, &seeds, &out, exec)?;
            let mut first_err = None;
            for (seed, r) in seeds.iter().zip(results) {
                match r {
                    Ok(a) => println!("seed {seed}: final acc {:.4}", a.summary.final_test_acc),
                    Err(e) => {
                        eprintln!("seed {seed}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e.into());
            }
        }
        Command::Compare { glob, group_by, out } => {
            let files = glob::glob(&glob)
                .with_context(|| format!("bad glob pattern {glob:?}"))?
                .collect::<Result<Vec<_>, _>>()?;
            if files.is_empty() {
                bail!("no files match {glob:?}");
            }
            let groups = exp::load_groups(&files, &group_by)?;
            let stats = exp::compare_runs(&groups)?;
            std::fs::write(&out, exp::rounds_csv(&stats)).with_context(|| format!("writing {}", out.display()))?;
            let summary = out.with_extension("summary.csv");
            std::fs::write(&summary, exp::summary_csv(&stats))
                .with_context(|| format!("writing {}", summary.display()))?;
            for g in &stats {
                println!(
                    "{}: {} runs, final acc {:.4} ± {:.4}, avg latency {:.3}, avg reward {:.4}",
                    g.label,
                    g.summary.runs,
                    g.summary.final_test_acc.0,
                    g.summary.final_test_acc.1,
                    g.summary.avg_latency.0,
                    g.summary.avg_reward.0
                );
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
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges_are_inclusive() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("5..5").unwrap(), vec![5]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
        assert_eq!(exit_code(&parse_seeds("x").unwrap_err()), EXIT_CONFIG);
    }
}
