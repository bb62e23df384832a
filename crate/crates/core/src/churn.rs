//! M/M/∞ churn: Poisson arrivals at rate `lambda`, exponential lifetimes with
//! rate `mu = lambda / n_stable`, plus the statistical validators used to
//! check the generated stream against the model's concentration properties.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng::{derive_rng, Stream};
use crate::NodeId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnConfig {
    /// Expected arrivals per round.
    pub lambda: f64,
    /// Stable network size `lambda / mu`.
    pub n_stable: u64,
    /// Last simulated round.
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
}

impl ChurnConfig {
    pub fn new(lambda: f64, n_stable: u64, horizon: u64, seed: u64) -> Self {
        Self {
            lambda,
            n_stable,
            horizon,
            seed,
        }
    }

    /// Per-node departure rate.
    pub fn mu(&self) -> f64 {
        self.lambda / self.n_stable as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(config_err(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.n_stable < 2 {
            return Err(config_err(format!(
                "n_stable must be at least 2, got {}",
                self.n_stable
            )));
        }
        if self.horizon < 1 {
            return Err(config_err("horizon must be at least 1 round"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Join,
    Leave,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub time: u64,
    pub kind: EventKind,
    pub node: NodeId,
}

impl ChurnEvent {
    fn sort_key(&self) -> (u64, EventKind, NodeId) {
        (self.time, self.kind, self.node)
    }
}

/// Arrivals observed in `[t_start, t_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalWindow {
    pub t_start: u64,
    pub t_end: u64,
    pub count: u64,
}

/// Continuous-time draw behind one scheduled node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lifetime {
    pub node: NodeId,
    pub arrival: f64,
    pub holding: f64,
}

/// Per-node join/leave rounds. `leave == None` means the node outlives the
/// horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub join: u64,
    pub leave: Option<u64>,
}

impl Span {
    pub fn alive_at(&self, t: u64) -> bool {
        self.join <= t && self.leave.is_none_or(|l| t < l)
    }
}

/// Policy applied by the engine to corrupted nodes' scheduled departures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifetimeOverride {
    /// Corrupted nodes leave when scheduled.
    #[default]
    None,
    /// Corrupted nodes ignore their scheduled leave and stay until the
    /// corruption budget forces them out.
    Persist,
}

impl LifetimeOverride {
    /// Whether the scheduled leave of a node should be honored.
    pub fn honors_leave(self, is_byzantine: bool) -> bool {
        !(is_byzantine && self == LifetimeOverride::Persist)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub config: ChurnConfig,
    pub events: Vec<ChurnEvent>,
    /// Continuous draws, one per node in identifier order. Empty for
    /// schedules loaded from JSONL.
    pub lifetimes: Vec<Lifetime>,
    spans: Vec<Span>,
}

/// Draws the join/leave stream for `cfg`.
pub fn build_schedule(cfg: &ChurnConfig) -> Result<Schedule> {
    cfg.validate()?;
    let mut rng = derive_rng(cfg.seed, Stream::Churn, 0, 0);
    let inter = Exp::new(cfg.lambda).map_err(|e| config_err(e.to_string()))?;
    let life = Exp::new(cfg.mu()).map_err(|e| config_err(e.to_string()))?;
    let end = (cfg.horizon + 1) as f64;

    let mut events = Vec::new();
    let mut lifetimes = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += inter.sample(&mut rng);
        if t >= end {
            break;
        }
        let node = NodeId(lifetimes.len() as u32);
        let holding = life.sample(&mut rng);
        lifetimes.push(Lifetime {
            node,
            arrival: t,
            holding,
        });
        events.push(ChurnEvent {
            time: t.floor() as u64,
            kind: EventKind::Join,
            node,
        });
        let leave = t + holding;
        if leave < end {
            events.push(ChurnEvent {
                time: leave.floor() as u64,
                kind: EventKind::Leave,
                node,
            });
        }
    }
    events.sort_by_key(ChurnEvent::sort_key);
    Schedule::from_parts(cfg.clone(), events, lifetimes)
}

impl Schedule {
    fn from_parts(config: ChurnConfig, events: Vec<ChurnEvent>, lifetimes: Vec<Lifetime>) -> Result<Self> {
        let mut spans: Vec<Option<Span>> = Vec::new();
        for (i, ev) in events.iter().enumerate() {
            let idx = ev.node.index();
            if idx >= spans.len() {
                spans.resize(idx + 1, None);
            }
            match ev.kind {
                EventKind::Join => {
                    if spans[idx].is_some() {
                        return Err(Error::Parse {
                            line: i + 1,
                            detail: format!("node {} joins twice", ev.node),
                        });
                    }
                    spans[idx] = Some(Span {
                        join: ev.time,
                        leave: None,
                    });
                }
                EventKind::Leave => match spans[idx].as_mut() {
                    Some(s) if s.leave.is_none() && ev.time >= s.join => s.leave = Some(ev.time),
                    _ => {
                        return Err(Error::Parse {
                            line: i + 1,
                            detail: format!("leave of node {} without a preceding join", ev.node),
                        })
                    }
                },
            }
        }
        let spans = spans
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| Error::Parse {
                    line: 0,
                    detail: format!("node identifier {i} never joins"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            events,
            lifetimes,
            spans,
        })
    }

    pub fn node_count(&self) -> usize {
        self.spans.len()
    }

    pub fn span(&self, node: NodeId) -> Option<Span> {
        self.spans.get(node.index()).copied()
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    /// Events scheduled for round `t`, Joins first.
    pub fn events_at(&self, t: u64) -> &[ChurnEvent] {
        let lo = self.events.partition_point(|e| e.time < t);
        let hi = self.events.partition_point(|e| e.time <= t);
        &self.events[lo..hi]
    }

    /// Nodes with `join <= t < leave`.
    pub fn alive_set(&self, t: u64) -> BTreeSet<NodeId> {
        self.spans
            .iter()
            .enumerate()
            .filter(|(_, s)| s.alive_at(t))
            .map(|(i, _)| NodeId(i as u32))
            .collect()
    }

    pub fn alive_count(&self, t: u64) -> usize {
        self.spans.iter().filter(|s| s.alive_at(t)).count()
    }

    /// Alive counts for every round `0..=horizon`, by sweeping the event list.
    pub fn alive_counts(&self) -> Vec<usize> {
        let h = self.config.horizon as usize;
        let mut delta = vec![0i64; h + 2];
        for s in &self.spans {
            let end = s.leave.map_or(h + 1, |l| l as usize);
            if (s.join as usize) < end {
                delta[s.join as usize] += 1;
                delta[end] -= 1;
            }
        }
        let mut acc = 0i64;
        delta[..=h]
            .iter()
            .map(|d| {
                acc += d;
                acc as usize
            })
            .collect()
    }

    /// Number of joins in `[t_start, t_end)`.
    pub fn arrivals_in(&self, t_start: u64, t_end: u64) -> ArrivalWindow {
        let count = self
            .spans
            .iter()
            .filter(|s| s.join >= t_start && s.join < t_end)
            .count() as u64;
        ArrivalWindow { t_start, t_end, count }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Loads a schedule exported by [`Schedule::write_jsonl`]. The lifetime
    /// draws are not part of the export and come back empty.
    pub fn read_jsonl<R: BufRead>(r: R, config: ChurnConfig) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev: ChurnEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?;
            events.push(ev);
        }
        if events.windows(2).any(|w| w[0].sort_key() > w[1].sort_key()) {
            return Err(Error::Parse {
                line: 0,
                detail: "events are not in (time, kind, node) order".into(),
            });
        }
        Self::from_parts(config, events, Vec::new())
    }
}

/// One window's verdict in an arrival-concentration check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowCheck {
    pub window: ArrivalWindow,
    pub expected: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcentrationReport {
    pub windows: Vec<WindowCheck>,
    pub pass_fraction: f64,
}

/// Checks `|N(t', t) - lambda (t - t')| <= 4 sqrt(lambda (t - t') ln n)` for
/// each requested `[t', t)`.
pub fn validate_arrival_concentration(schedule: &Schedule, windows: &[(u64, u64)]) -> ConcentrationReport {
    let ln_n = (schedule.config.n_stable as f64).ln();
    let checks: Vec<WindowCheck> = windows
        .iter()
        .map(|&(a, b)| {
            let window = schedule.arrivals_in(a, b.max(a));
            let expected = schedule.config.lambda * b.saturating_sub(a) as f64;
            let bound = 4.0 * (expected * ln_n).sqrt();
            let pass = (window.count as f64 - expected).abs() <= bound;
            WindowCheck {
                window,
                expected,
                bound,
                pass,
            }
        })
        .collect();
    let pass_fraction = if checks.is_empty() {
        1.0
    } else {
        checks.iter().filter(|c| c.pass).count() as f64 / checks.len() as f64
    };
    ConcentrationReport {
        windows: checks,
        pass_fraction,
    }
}

/// Fraction of `rounds` whose alive count lies in `[lo * n, hi * n]`.
pub fn stability_fraction(schedule: &Schedule, rounds: impl IntoIterator<Item = u64>, lo: f64, hi: f64) -> f64 {
    let counts = schedule.alive_counts();
    let n = schedule.config.n_stable as f64;
    let (mut ok, mut total) = (0usize, 0usize);
    for t in rounds {
        let c = counts[t as usize] as f64;
        total += 1;
        if c >= lo * n && c <= hi * n {
            ok += 1;
        }
    }
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}

/// Empirical survival `Pr(H > t)` over the schedule's lifetime draws with
/// its binomial standard error.
pub fn survival(lifetimes: &[Lifetime], t: f64) -> (f64, f64) {
    let n = lifetimes.len() as f64;
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let p = lifetimes.iter().filter(|l| l.holding > t).count() as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Uniform draw of a window start such that the window fits in the horizon.
pub fn random_window<R: Rng>(rng: &mut R, len: u64, horizon: u64) -> (u64, u64) {
    let start = rng.random_range(0..=horizon.saturating_sub(len));
    (start, start + len)
}
