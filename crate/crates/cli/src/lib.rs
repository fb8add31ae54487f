//! Command-line front end for the `fedpoison` simulator.
//!
//! Subcommands share one set of flags and an optional TOML config file:
//! `prepare` splits a dataset into client shards, `importance` ranks features
//! for FP, `run` executes one scenario and `sweep` executes the clean baseline
//! plus every attack at every percentage.

pub mod commands;
pub mod config;
pub mod prepared;

use anyhow::bail;
use clap::{Parser, Subcommand};

pub use config::{Options, Settings};

#[derive(Debug, Parser)]
#[command(name = "fedpoison", version, about = "Federated learning poisoning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub options: Options,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Split a CSV or synthetic dataset into client shards, validation and test sets.
    Prepare,
    /// Rank features by random-forest permutation importance.
    Importance,
    /// Run one scenario and add its record to results.csv.
    Run,
    /// Run the baseline and every attack/percentage pair into results.csv.
    Sweep,
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let settings = Settings::resolve(&cli.options)?;
    match cli.command {
        Command::Prepare => {
            let m = prepared::prepare(&settings)?;
            let shards: Vec<String> = m
                .files
                .iter()
                .filter(|f| f.name.starts_with("client_"))
                .map(|f| f.rows.to_string())
                .collect();
            println!(
                "prepared {} seed={} train={} validation={} test={} shards={}",
                prepared::data_dir(&settings.out).display(),
                m.seed,
                m.train_rows,
                m.validation_rows,
                m.test_rows,
                shards.join("/")
            );
        }
        Command::Importance => {
            commands::importance(&settings)?;
        }
        Command::Run => {
            commands::run(&settings)?;
        }
        Command::Sweep => {
            let s = commands::sweep(&settings)?;
            println!(
                "sweep: {} completed, {} skipped, {} failed -> {}",
                s.completed,
                s.skipped,
                s.failed.len(),
                s.results.display()
            );
            if !s.failed.is_empty() {
                bail!("{} sweep runs failed", s.failed.len());
            }
        }
    }
    Ok(())
}
