//! Parameter sweeps: the cartesian product of a grid of config overrides,
//! each cell run over a range of seeds, aggregated per cell and phase.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use toml::Value;

use crate::engine::{run, RunConfig};
use crate::error::{config_err, Result};
use crate::metrics::PhaseReport;

/// Dotted config paths mapped to the values to try, in key order.
pub type Grid = BTreeMap<String, Vec<Value>>;

/// Reads a grid file. Every leaf must be an array; nested tables are
/// flattened into dotted keys, so `[adversary]\nbeta = [0.0, 0.02]` and
/// `"adversary.beta" = [0.0, 0.02]` are equivalent.
pub fn parse_grid(s: &str) -> Result<Grid> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut Grid) -> Result<()> {
        for (k, v) in table {
            let key = if prefix.is_empty() {
                k.clone()
            } else {
                format!("{prefix}.{k}")
            };
            match v {
                Value::Table(t) => walk(&key, t, out)?,
                Value::Array(a) if !a.is_empty() => {
                    out.insert(key, a.clone());
                }
                _ => return Err(config_err(format!("grid entry {key} must be a non-empty array"))),
            }
        }
        Ok(())
    }
    let table: toml::Table = toml::from_str(s)?;
    let mut grid = Grid::new();
    walk("", &table, &mut grid)?;
    if grid.is_empty() {
        return Err(config_err("grid is empty"));
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub assignments: Vec<(String, Value)>,
}

/// All combinations, the last key varying fastest.
pub fn cells(grid: &Grid) -> Vec<Cell> {
    let mut out = vec![Vec::<(String, Value)>::new()];
    for (k, values) in grid {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((k.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    out.into_iter()
        .map(|assignments| Cell {
            label: assignments
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";"),
            assignments,
        })
        .collect()
}

/// Returns `template` with every dotted path overwritten.
pub fn apply_assignments(template: &RunConfig, assignments: &[(String, Value)]) -> Result<RunConfig> {
    let mut root = Value::try_from(template).map_err(|e| config_err(e.to_string()))?;
    for (path, value) in assignments {
        let mut node = &mut root;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let Value::Table(t) = node else {
                return Err(config_err(format!("{path}: {part} is not inside a table")));
            };
            if i + 1 == parts.len() {
                t.insert((*part).to_owned(), value.clone());
                break;
            }
            node = t
                .entry((*part).to_owned())
                .or_insert_with(|| Value::Table(toml::Table::new()));
        }
    }
    let cfg: RunConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub cell: String,
    pub seed: u64,
    pub outcome: std::result::Result<Vec<PhaseReport>, String>,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Runs every cell for every seed. Trials run on as many threads as the
/// machine offers; a failing trial is recorded and the sweep continues.
pub fn sweep(template: &RunConfig, grid: &Grid, seeds: Range<u64>) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(config_err("grid is empty"));
    }
    if seeds.is_empty() {
        return Err(config_err("seed range is empty"));
    }
    let mut trials = Vec::new();
    for cell in cells(grid) {
        let cfg = apply_assignments(template, &cell.assignments).map_err(|e| e.to_string());
        for seed in seeds.clone() {
            trials.push((cell.label.clone(), seed, cfg.clone()));
        }
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; trials.len()]);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(trials.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cell, seed, cfg)) = trials.get(i) else { break };
                let outcome = match cfg {
                    Ok(c) => {
                        let mut c = c.clone().with_seed(*seed);
                        c.output.dir = None;
                        run(&c, None).map(|r| r.reports).map_err(|e| e.to_string())
                    }
                    Err(e) => Err(e.to_string()),
                };
                slots.lock().expect("no worker panicked")[i] = Some(SweepRow {
                    cell: cell.clone(),
                    seed: *seed,
                    outcome,
                });
            });
        }
    });
    let rows = slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every trial ran"))
        .collect();
    Ok(SweepResult { rows })
}

impl SweepResult {
    /// One line per trial and phase: `cell,seed,` followed by the phase
    /// report columns.
    pub fn runs_csv(&self) -> String {
        let mut s = format!("cell,seed,{}\n", PhaseReport::CSV_HEADER);
        for row in &self.rows {
            if let Ok(reports) = &row.outcome {
                for r in reports {
                    let _ = writeln!(s, "{},{},{}", csv_quote(&row.cell), row.seed, r.csv_row());
                }
            }
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("cell,seed,error\n");
        for row in &self.rows {
            if let Err(e) = &row.outcome {
                let _ = writeln!(s, "{},{},{}", csv_quote(&row.cell), row.seed, csv_quote(e));
            }
        }
        s
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    /// Per cell and phase: number of runs, then mean, min and max of every
    /// numeric report column. Undefined values are skipped.
    pub fn summary_csv(&self) -> String {
        let names: Vec<&str> = PhaseReport::default()
            .numeric_columns()
            .iter()
            .map(|(n, _)| *n)
            .collect();
        let mut s = String::from("cell,phase,runs");
        for n in &names {
            let _ = write!(s, ",{n}_mean,{n}_min,{n}_max");
        }
        s.push('\n');
        let mut groups: BTreeMap<(usize, u64), (String, Vec<&PhaseReport>)> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for row in &self.rows {
            let Ok(reports) = &row.outcome else { continue };
            let ci = match order.iter().position(|c| c == &row.cell) {
                Some(i) => i,
                None => {
                    order.push(row.cell.clone());
                    order.len() - 1
                }
            };
            for r in reports {
                groups
                    .entry((ci, r.phase))
                    .or_insert_with(|| (row.cell.clone(), Vec::new()))
                    .1
                    .push(r);
            }
        }
        for ((_, phase), (cell, reports)) in groups {
            let _ = write!(s, "{},{},{}", csv_quote(&cell), phase, reports.len());
            let cols: Vec<Vec<(&str, Option<f64>)>> = reports.iter().map(|r| r.numeric_columns()).collect();
            for j in 0..names.len() {
                let vals: Vec<f64> = cols.iter().filter_map(|c| c[j].1).collect();
                if vals.is_empty() {
                    s.push_str(",,,");
                } else {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let _ = write!(s, ",{mean},{min},{max}");
                }
            }
            s.push('\n');
        }
        s
    }
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
