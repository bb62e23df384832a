//! The synchronous round loop and its plumbing: run configuration, the
//! simulation itself, output files and parameter sweeps.
//!
//! Each round runs, in order: scheduled leaves, joins, mailbox delivery,
//! honest walk steps, Byzantine actions and, every `eta * log_n` rounds, the
//! phase boundary (maintenance, reporting, token re-initiation). Every random
//! draw comes from a stream keyed by `(master seed, stream, node, round)`, so
//! a run is a pure function of its configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryConfig;
use crate::churn::ChurnConfig;
use crate::error::{config_err, Error, Result};
use crate::events::EventLog;
use crate::metrics::{write_csv, PhaseReport, SpectralOptions, EXACT_THRESHOLD};
use crate::overlay::OverlaySnapshot;
use crate::params::{ProtocolParams, Resolved};
use crate::rng::{derive_seed, Stream};
use crate::walk::WalkStats;

mod sim;
mod sweep;

pub use sim::Simulation;
pub use sweep::{apply_assignments, parse_grid, sweep, Cell, Grid, SweepResult, SweepRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Report every this many phases.
    pub every: u64,
    /// Largest core for which exact conductance is also computed.
    pub exact_threshold: usize,
    pub spectral_tolerance: f64,
    pub spectral_max_iterations: usize,
    /// Full structural scan of the overlay after every round.
    pub check_invariants: bool,
    /// Record every walk verification in the event log. Needed to audit
    /// verified acceptances; makes logs much larger.
    pub log_verifications: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let s = SpectralOptions::default();
        Self {
            every: 1,
            exact_threshold: EXACT_THRESHOLD,
            spectral_tolerance: s.tolerance,
            spectral_max_iterations: s.max_iterations,
            check_invariants: true,
            log_verifications: false,
        }
    }
}

impl MetricsConfig {
    pub fn spectral(&self) -> SpectralOptions {
        SpectralOptions {
            tolerance: self.spectral_tolerance,
            max_iterations: self.spectral_max_iterations,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for output files. The CLI's `--out` takes precedence.
    pub dir: Option<PathBuf>,
    pub write_events: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            write_events: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. The churn schedule seed is derived from it; any seed in
    /// the `churn` table is overwritten.
    #[serde(default)]
    pub seed: u64,
    pub churn: ChurnConfig,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn new(churn: ChurnConfig, seed: u64) -> Self {
        Self {
            seed,
            churn,
            protocol: ProtocolParams::default(),
            adversary: AdversaryConfig::default(),
            metrics: MetricsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Churn configuration with the seed derived from the master seed.
    pub fn churn_config(&self) -> ChurnConfig {
        ChurnConfig {
            seed: derive_seed(self.seed, Stream::Churn, 0, 0),
            ..self.churn.clone()
        }
    }

    pub fn resolved(&self) -> Result<Resolved> {
        let r = self.protocol.resolve(self.churn.n_stable)?;
        r.construct.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        self.churn.validate()?;
        self.adversary.validate()?;
        self.resolved()?;
        if self.metrics.every == 0 {
            return Err(config_err("metrics.every must be at least 1"));
        }
        if self.metrics.spectral_tolerance.is_nan()
            || self.metrics.spectral_tolerance <= 0.0
            || self.metrics.spectral_max_iterations == 0
        {
            return Err(config_err("spectral tolerance and iteration limit must be positive"));
        }
        Ok(())
    }

    /// First round at which a phase window may start and be reported:
    /// `max(3 * ceil(sqrt(n)), phase length)`.
    pub fn warmup(&self) -> Result<u64> {
        let n = self.churn.n_stable as f64;
        Ok((3 * n.sqrt().ceil() as u64).max(self.resolved()?.phase_len()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub rounds: u64,
    pub phases: u64,
    pub joins: u64,
    pub leaves: u64,
    pub forced_leaves: u64,
    pub join_failures: u64,
    pub max_byzantine: usize,
    pub events: usize,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub reports: Vec<PhaseReport>,
    pub walk_stats: Vec<WalkStats>,
    pub final_snapshot: OverlaySnapshot,
    pub events: EventLog,
    /// Where the event log was written, if anywhere.
    pub event_log_path: Option<PathBuf>,
    pub stats: RunStats,
}

impl RunResult {
    pub fn reports_csv(&self) -> String {
        write_csv(&self.reports)
    }

    pub fn walk_stats_csv(&self) -> String {
        let mut s = String::from(WalkStats::CSV_HEADER);
        s.push('\n');
        for w in &self.walk_stats {
            s.push_str(&w.csv_row());
            s.push('\n');
        }
        s
    }
}

/// Runs `cfg` to its horizon. With an output directory, writes
/// `reports.csv`, `walk_stats.csv`, `events.jsonl`, `final_snapshot.txt` and
/// `summary.json`; on an invariant violation writes `failure_snapshot.txt`
/// before returning the error.
pub fn run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunResult> {
    let started = Instant::now();
    let out = out.map(Path::to_path_buf).or_else(|| cfg.output.dir.clone());
    if let Some(dir) = &out {
        fs::create_dir_all(dir)?;
    }
    let mut sim = Simulation::new(cfg.clone())?;
    if let Err(e) = sim.run_to_end() {
        if let (Some(dir), Error::Invariant { .. }) = (&out, &e) {
            let snap = sim.overlay().snapshot(sim.round());
            fs::write(dir.join("failure_snapshot.txt"), snap.to_edge_list())?;
        }
        return Err(e);
    }
    let mut result = sim.finish();
    result.stats.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = &out {
        write_outputs(cfg, &mut result, dir)?;
    }
    Ok(result)
}

fn write_outputs(cfg: &RunConfig, result: &mut RunResult, dir: &Path) -> Result<()> {
    fs::write(dir.join("reports.csv"), result.reports_csv())?;
    fs::write(dir.join("walk_stats.csv"), result.walk_stats_csv())?;
    fs::write(dir.join("final_snapshot.txt"), result.final_snapshot.to_edge_list())?;
    if cfg.output.write_events {
        let path = dir.join("events.jsonl");
        let f = std::io::BufWriter::new(fs::File::create(&path)?);
        result.events.write_jsonl(f)?;
        result.event_log_path = Some(path);
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.stats)?)?;
    Ok(())
}
