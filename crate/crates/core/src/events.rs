//! Append-only event log of every membership and link change, plus the
//! replay audit that re-checks the overlay invariants from the log alone.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlay::LinkOutcome;
use crate::NodeId;

/// Which kind of connection request an event records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Join,
    Phase,
}

/// Why an acceptor let a request through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// `(requester, token)` was in the acceptor's verified record.
    Verified,
    /// The requester was still new.
    NewNode,
    /// The acceptor is Byzantine and accepts anything.
    Byzantine,
    /// Not accepted.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Maintain,
    Departure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinStatus {
    Joined,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum Event {
    Join {
        round: u64,
        node: NodeId,
        byzantine: bool,
    },
    JoinOutcome {
        round: u64,
        node: NodeId,
        attempts: u32,
        connections: usize,
        status: JoinStatus,
    },
    Leave {
        round: u64,
        node: NodeId,
        forced: bool,
    },
    Request {
        round: u64,
        from: NodeId,
        to: NodeId,
        kind: RequestKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<u64>,
        outcome: LinkOutcome,
        basis: Basis,
    },
    Drop {
        round: u64,
        from: NodeId,
        to: NodeId,
        reason: DropReason,
    },
    Verify {
        round: u64,
        endpoint: NodeId,
        source: NodeId,
        token: u64,
    },
    Blacklist {
        round: u64,
        node: NodeId,
        offender: NodeId,
    },
    Phase {
        round: u64,
        index: u64,
    },
}

impl Event {
    pub fn round(&self) -> u64 {
        match self {
            Event::Join { round, .. }
            | Event::JoinOutcome { round, .. }
            | Event::Leave { round, .. }
            | Event::Request { round, .. }
            | Event::Drop { round, .. }
            | Event::Verify { round, .. }
            | Event::Blacklist { round, .. }
            | Event::Phase { round, .. } => *round,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventLog {
    pub events: Vec<Event>,
    /// Whether walk verifications are recorded. Without them the audit can
    /// not re-check verified acceptances.
    pub log_verifications: bool,
}

impl EventLog {
    pub fn new(log_verifications: bool) -> Self {
        Self {
            events: Vec::new(),
            log_verifications,
        }
    }

    pub fn push(&mut self, ev: Event) {
        self.events.push(ev);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?);
        }
        let log_verifications = events.iter().any(|e| matches!(e, Event::Verify { .. }));
        Ok(Self {
            events,
            log_verifications,
        })
    }
}

/// Outcome of replaying a log.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub events: usize,
    pub rounds: u64,
    pub phases: u64,
    pub accepted_verified: u64,
    pub accepted_new_node: u64,
    pub accepted_by_byzantine: u64,
    /// Verified acceptances that could not be matched because the log has no
    /// verification events.
    pub unchecked_verified: u64,
    pub max_honest_out: usize,
    pub max_honest_in: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Default)]
struct Ledger {
    out: BTreeMap<NodeId, BTreeSet<NodeId>>,
    inn: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Ledger {
    fn linked(&self, a: NodeId, b: NodeId) -> bool {
        self.out.get(&a).is_some_and(|s| s.contains(&b)) || self.out.get(&b).is_some_and(|s| s.contains(&a))
    }
}

/// Replays `log` and checks, from the log alone:
///
/// - links are only dropped if present and never duplicated;
/// - honest nodes stay within `3d` out and `6d` in at every round boundary;
/// - every link accepted by an honest node is backed either by a matching
///   verification at that node during the current phase, or by the
///   requester being new (joined since the last phase boundary);
/// - departed nodes never appear again.
pub fn audit(log: &EventLog, d: usize) -> AuditReport {
    let (max_out, max_in) = (3 * d, 6 * d);
    let mut rep = AuditReport {
        events: log.events.len(),
        ..Default::default()
    };
    let mut ledger = Ledger::default();
    let mut byzantine: HashSet<NodeId> = HashSet::new();
    let mut alive: HashSet<NodeId> = HashSet::new();
    let mut departed: HashSet<NodeId> = HashSet::new();
    let mut new_nodes: HashSet<NodeId> = HashSet::new();
    let mut records: HashSet<(NodeId, NodeId, u64)> = HashSet::new();
    let mut touched: BTreeSet<NodeId> = BTreeSet::new();
    let mut current_round = None;

    let check_caps =
        |ledger: &Ledger, touched: &mut BTreeSet<NodeId>, byz: &HashSet<NodeId>, rep: &mut AuditReport, round: u64| {
            for n in std::mem::take(touched) {
                if byz.contains(&n) {
                    continue;
                }
                let o = ledger.out.get(&n).map_or(0, BTreeSet::len);
                let i = ledger.inn.get(&n).map_or(0, BTreeSet::len);
                rep.max_honest_out = rep.max_honest_out.max(o);
                rep.max_honest_in = rep.max_honest_in.max(i);
                if o > max_out || i > max_in {
                    rep.violations
                        .push(format!("round {round}: honest {n} has out {o} / in {i}"));
                }
            }
        };

    for ev in &log.events {
        let round = ev.round();
        if current_round != Some(round) {
            if let Some(r) = current_round {
                check_caps(&ledger, &mut touched, &byzantine, &mut rep, r);
            }
            current_round = Some(round);
            rep.rounds = rep.rounds.max(round);
        }
        let reappears = |n: NodeId, rep: &mut AuditReport| {
            if departed.contains(&n) {
                rep.violations
                    .push(format!("round {round}: departed node {n} reappears"));
            }
        };
        match *ev {
            Event::Join { node, byzantine: b, .. } => {
                reappears(node, &mut rep);
                if !alive.insert(node) {
                    rep.violations.push(format!("round {round}: node {node} joins twice"));
                }
                if b {
                    byzantine.insert(node);
                }
                new_nodes.insert(node);
            }
            Event::JoinOutcome { node, .. } => reappears(node, &mut rep),
            Event::Leave { node, .. } => {
                reappears(node, &mut rep);
                alive.remove(&node);
                departed.insert(node);
                new_nodes.remove(&node);
                if ledger.out.get(&node).is_some_and(|s| !s.is_empty())
                    || ledger.inn.get(&node).is_some_and(|s| !s.is_empty())
                {
                    rep.violations
                        .push(format!("round {round}: node {node} leaves with links still recorded"));
                }
                ledger.out.remove(&node);
                ledger.inn.remove(&node);
            }
            Event::Request {
                from,
                to,
                kind,
                token,
                outcome,
                basis,
                ..
            } => {
                if outcome != LinkOutcome::Established {
                    continue;
                }
                reappears(from, &mut rep);
                reappears(to, &mut rep);
                if ledger.linked(from, to) {
                    rep.violations
                        .push(format!("round {round}: duplicate link {from} -> {to}"));
                }
                ledger.out.entry(from).or_default().insert(to);
                ledger.inn.entry(to).or_default().insert(from);
                touched.insert(from);
                touched.insert(to);
                if byzantine.contains(&to) {
                    rep.accepted_by_byzantine += 1;
                    continue;
                }
                match basis {
                    Basis::NewNode => {
                        rep.accepted_new_node += 1;
                        if !new_nodes.contains(&from) {
                            rep.violations
                                .push(format!("round {round}: {to} accepted {from} as new, but it is not new"));
                        }
                    }
                    Basis::Verified => {
                        rep.accepted_verified += 1;
                        let ok = token.is_some_and(|t| records.contains(&(to, from, t)));
                        if !log.log_verifications {
                            rep.unchecked_verified += 1;
                        } else if !ok {
                            rep.violations.push(format!(
                                "round {round}: {to} accepted {from} without a matching verification (token {token:?})"
                            ));
                        }
                    }
                    other => rep.violations.push(format!(
                        "round {round}: honest {to} accepted {from} ({kind:?}) with basis {other:?}"
                    )),
                }
            }
            Event::Drop { from, to, .. } => {
                let present = ledger.out.get(&from).is_some_and(|s| s.contains(&to));
                if !present {
                    rep.violations
                        .push(format!("round {round}: drop of absent link {from} -> {to}"));
                }
                if let Some(s) = ledger.out.get_mut(&from) {
                    s.remove(&to);
                }
                if let Some(s) = ledger.inn.get_mut(&to) {
                    s.remove(&from);
                }
            }
            Event::Verify {
                endpoint,
                source,
                token,
                ..
            } => {
                records.insert((endpoint, source, token));
            }
            Event::Blacklist { .. } => {}
            Event::Phase { .. } => {
                rep.phases += 1;
                records.clear();
                new_nodes.clear();
            }
        }
    }
    if let Some(r) = current_round {
        check_caps(&ledger, &mut touched, &byzantine, &mut rep, r);
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(round: u64, from: u32, to: u32, token: Option<u64>, basis: Basis) -> Event {
        Event::Request {
            round,
            from: NodeId(from),
            to: NodeId(to),
            kind: RequestKind::Phase,
            token,
            outcome: LinkOutcome::Established,
            basis,
        }
    }

    fn join(round: u64, node: u32) -> Event {
        Event::Join {
            round,
            node: NodeId(node),
            byzantine: false,
        }
    }

    #[test]
    fn clean_log_passes() {
        let mut log = EventLog::new(true);
        log.push(join(0, 0));
        log.push(join(1, 1));
        log.push(req(1, 1, 0, None, Basis::NewNode));
        log.push(Event::Phase { round: 10, index: 1 });
        log.push(Event::Verify {
            round: 12,
            endpoint: NodeId(1),
            source: NodeId(0),
            token: 5,
        });
        log.push(Event::Drop {
            round: 20,
            from: NodeId(1),
            to: NodeId(0),
            reason: DropReason::Maintain,
        });
        log.push(req(20, 0, 1, Some(5), Basis::Verified));
        let rep = audit(&log, 1);
        assert!(rep.is_clean(), "{:?}", rep.violations);
        assert_eq!(rep.accepted_verified, 1);
        assert_eq!(rep.accepted_new_node, 1);
    }

    #[test]
    fn unmatched_verified_acceptance_is_flagged() {
        let mut log = EventLog::new(true);
        log.push(join(0, 0));
        log.push(join(0, 1));
        log.push(Event::Phase { round: 10, index: 1 });
        log.push(req(20, 0, 1, Some(9), Basis::Verified));
        assert_eq!(audit(&log, 1).violations.len(), 1);
    }

    #[test]
    fn stale_new_node_claim_is_flagged() {
        let mut log = EventLog::new(false);
        log.push(join(0, 0));
        log.push(join(0, 1));
        log.push(Event::Phase { round: 10, index: 1 });
        log.push(req(11, 1, 0, None, Basis::NewNode));
        assert_eq!(audit(&log, 1).violations.len(), 1);
    }

    #[test]
    fn degree_cap_violation_is_flagged() {
        let mut log = EventLog::new(false);
        for i in 0..8 {
            log.push(join(0, i));
        }
        // d = 1: node 0 may hold at most 6 incoming links.
        for i in 1..8 {
            log.push(req(0, i, 0, None, Basis::NewNode));
        }
        let rep = audit(&log, 1);
        assert_eq!(rep.max_honest_in, 7);
        assert!(!rep.is_clean());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut log = EventLog::new(true);
        log.push(join(0, 0));
        log.push(req(3, 0, 1, Some(2), Basis::Verified));
        log.push(Event::Leave {
            round: 4,
            node: NodeId(0),
            forced: false,
        });
        let bytes = log.to_jsonl();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("{\"ev\":\"join\",\"round\":0,\"node\":0,\"byzantine\":false}\n"));
        let back = EventLog::read_jsonl(&bytes[..]).unwrap();
        assert_eq!(back.events, log.events);
    }
}
