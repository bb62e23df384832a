//! `dynex`: run, sweep and audit overlay simulations.
//!
//! Exit codes: 0 on success, 1 on usage or I/O errors, 2 when an invariant
//! is violated (during a run, in any sweep trial, or in an audited log).

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dynex_core::engine::{self, parse_grid, RunConfig};
use dynex_core::events::{audit, EventLog};
use dynex_core::Error;

#[derive(Parser)]
#[command(name = "dynex", version, about = "Byzantine-resilient overlay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a config over a parameter grid and a seed range.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// `a..b` (exclusive) or `a..=b`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Replay the invariant audits over an event log.
    Analyze {
        #[arg(long)]
        events: PathBuf,
        /// Degree constant the log was produced with.
        #[arg(long, default_value_t = 4)]
        d: usize,
    },
}

fn parse_seeds(s: &str) -> std::result::Result<Range<u64>, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected a..b or a..=b, got {s:?}"));
    };
    let a: u64 = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    let end = if inclusive { b + 1 } else { b };
    if end <= a {
        return Err(format!("seed range {s:?} is empty"));
    }
    Ok(a..end)
}

/// Outcome of a subcommand that completed without an I/O error.
enum Verdict {
    Clean,
    Violation,
}

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> Result<Verdict> {
    let mut cfg = RunConfig::from_file(config).with_context(|| format!("reading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let res = match engine::run(&cfg, Some(out)) {
        Ok(r) => r,
        Err(e @ Error::Invariant { .. }) => {
            eprintln!("invariant violated: {e}");
            eprintln!("snapshot written to {}", out.join("failure_snapshot.txt").display());
            return Ok(Verdict::Violation);
        }
        Err(e) => return Err(e.into()),
    };
    let report = audit(&res.events, cfg.protocol.d);
    fs::write(out.join("audit.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "rounds={} phases={} reports={} joins={} leaves={} max_byzantine={} events={} secs={:.2}",
        res.stats.rounds,
        res.stats.phases,
        res.reports.len(),
        res.stats.joins,
        res.stats.leaves,
        res.stats.max_byzantine,
        res.stats.events,
        res.stats.wall_clock_secs
    );
    if report.is_clean() {
        Ok(Verdict::Clean)
    } else {
        for v in report.violations.iter().take(20) {
            eprintln!("audit: {v}");
        }
        Ok(Verdict::Violation)
    }
}

fn cmd_sweep(config: &Path, grid: &Path, seeds: Range<u64>, out: &Path) -> Result<Verdict> {
    let cfg = RunConfig::from_file(config).with_context(|| format!("reading {}", config.display()))?;
    let text = fs::read_to_string(grid).with_context(|| format!("reading {}", grid.display()))?;
    let grid = parse_grid(&text)?;
    let res = engine::sweep(&cfg, &grid, seeds)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("runs.csv"), res.runs_csv())?;
    fs::write(out.join("summary.csv"), res.summary_csv())?;
    fs::write(out.join("failures.csv"), res.failures_csv())?;
    println!("trials={} failures={}", res.rows.len(), res.failures());
    let invariant = res
        .rows
        .iter()
        .any(|r| matches!(&r.outcome, Err(e) if e.starts_with("invariant")));
    Ok(if invariant { Verdict::Violation } else { Verdict::Clean })
}

fn cmd_analyze(events: &Path, d: usize) -> Result<Verdict> {
    if d == 0 {
        bail!("d must be at least 1");
    }
    let f = fs::File::open(events).with_context(|| format!("opening {}", events.display()))?;
    let log = EventLog::read_jsonl(std::io::BufReader::new(f))?;
    let report = audit(&log, d);
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.is_clean() {
        Verdict::Clean
    } else {
        Verdict::Violation
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap exits with 2 on usage errors, which would read as a violation.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let verdict = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, &out),
        Command::Sweep {
            config,
            grid,
            seeds,
            out,
        } => cmd_sweep(&config, &grid, seeds, &out),
        Command::Analyze { events, d } => cmd_analyze(&events, d),
    };
    match verdict {
        Ok(Verdict::Clean) => ExitCode::SUCCESS,
        Ok(Verdict::Violation) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..5").unwrap(), 0..5);
        assert_eq!(parse_seeds("3..=4").unwrap(), 3..5);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("x..2").is_err());
        assert!(parse_seeds("7").is_err());
    }
}
