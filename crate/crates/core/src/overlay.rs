//! The dynamic graph `G_t`: per-node outgoing/incoming connection ledgers,
//! hard degree caps for honest nodes, a one-round synchronous mailbox, and
//! snapshot export.
//!
//! Outgoing/incoming is bookkeeping only. For walks and metrics every link is
//! an undirected edge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rustc_hash::FxHashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NodeId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub joined_at: u64,
    pub is_byzantine: bool,
    /// Links established by this node.
    pub out_links: BTreeSet<NodeId>,
    /// Links accepted by this node.
    pub in_links: BTreeSet<NodeId>,
    pub blacklist: BTreeSet<NodeId>,
    /// Set from arrival until the node's first phase boundary.
    pub is_new: bool,
    /// Cleared when a join procedure exhausts its retries.
    pub joined: bool,
}

impl NodeRecord {
    pub fn new(id: NodeId, joined_at: u64, is_byzantine: bool) -> Self {
        Self {
            id,
            joined_at,
            is_byzantine,
            out_links: BTreeSet::new(),
            in_links: BTreeSet::new(),
            blacklist: BTreeSet::new(),
            is_new: true,
            joined: true,
        }
    }

    pub fn degree(&self) -> usize {
        self.out_links.len() + self.in_links.len()
    }

    pub fn is_linked(&self, other: NodeId) -> bool {
        self.out_links.contains(&other) || self.in_links.contains(&other)
    }

    /// All neighbors in ascending order.
    pub fn neighbors(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.out_links.iter().chain(self.in_links.iter()).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn is_honest(&self) -> bool {
        !self.is_byzantine
    }
}

/// Result of a connection attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkOutcome {
    Established,
    RejectedFull,
    RejectedUnverified,
    RejectedFlooded,
    /// Self-loop or already-linked pair; nothing changes.
    Duplicate,
    /// The target is not in the network.
    Unreachable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Caps {
    pub max_out: usize,
    pub max_in: usize,
}

impl Caps {
    pub fn for_degree(d: usize) -> Self {
        Self {
            max_out: 3 * d,
            max_in: 6 * d,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Overlay {
    caps: Caps,
    nodes: Vec<Option<NodeRecord>>,
    /// Establishment counter per live link, keyed `(out side, in side)`.
    epochs: FxHashMap<(NodeId, NodeId), u64>,
    next_epoch: u64,
    alive: usize,
    byzantine: usize,
}

impl Overlay {
    pub fn new(caps: Caps) -> Self {
        Self {
            caps,
            nodes: Vec::new(),
            epochs: FxHashMap::default(),
            next_epoch: 1,
            alive: 0,
            byzantine: 0,
        }
    }

    pub fn caps(&self) -> Caps {
        self.caps
    }

    pub fn insert_node(&mut self, rec: NodeRecord) {
        let idx = rec.id.index();
        if idx >= self.nodes.len() {
            self.nodes.resize(idx + 1, None);
        }
        debug_assert!(self.nodes[idx].is_none(), "node {} inserted twice", rec.id);
        self.alive += 1;
        if rec.is_byzantine {
            self.byzantine += 1;
        }
        self.nodes[idx] = Some(rec);
    }

    /// Removes `u` and every incident link. Returns the dropped links as
    /// `(out side, in side)` pairs.
    pub fn remove_node(&mut self, u: NodeId) -> Vec<(NodeId, NodeId)> {
        let Some(rec) = self.nodes.get_mut(u.index()).and_then(Option::take) else {
            return Vec::new();
        };
        self.alive -= 1;
        if rec.is_byzantine {
            self.byzantine -= 1;
        }
        let mut dropped = Vec::with_capacity(rec.degree());
        for &v in &rec.out_links {
            if let Some(n) = self.get_mut(v) {
                n.in_links.remove(&u);
            }
            self.epochs.remove(&(u, v));
            dropped.push((u, v));
        }
        for &v in &rec.in_links {
            if let Some(n) = self.get_mut(v) {
                n.out_links.remove(&u);
            }
            self.epochs.remove(&(v, u));
            dropped.push((v, u));
        }
        for n in self.nodes.iter_mut().flatten() {
            n.blacklist.remove(&u);
        }
        dropped
    }

    pub fn get(&self, u: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(u.index()).and_then(Option::as_ref)
    }

    pub fn get_mut(&mut self, u: NodeId) -> Option<&mut NodeRecord> {
        self.nodes.get_mut(u.index()).and_then(Option::as_mut)
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.get(u).is_some()
    }

    pub fn alive_count(&self) -> usize {
        self.alive
    }

    pub fn byzantine_count(&self) -> usize {
        self.byzantine
    }

    pub fn is_byzantine(&self, u: NodeId) -> bool {
        self.get(u).is_some_and(|r| r.is_byzantine)
    }

    /// Live records in identifier order.
    pub fn records(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.iter().flatten()
    }

    pub fn records_mut(&mut self) -> impl Iterator<Item = &mut NodeRecord> {
        self.nodes.iter_mut().flatten()
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.records().map(|r| r.id).collect()
    }

    /// Upper bound on identifiers seen so far, for index-addressed side tables.
    pub fn id_bound(&self) -> usize {
        self.nodes.len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.get(u).is_some_and(|r| r.is_linked(v))
    }

    /// Establishment stamp of the live link between `u` and `v`, if any.
    pub fn link_epoch(&self, u: NodeId, v: NodeId) -> Option<u64> {
        self.epochs.get(&(u, v)).or_else(|| self.epochs.get(&(v, u))).copied()
    }

    /// Records the link `u -> v` if both are alive, the pair is not already
    /// linked, and neither honest endpoint's hard cap is exceeded. Acceptance
    /// rules beyond the caps belong to the caller.
    pub fn add_link(&mut self, u: NodeId, v: NodeId) -> LinkOutcome {
        if u == v {
            return LinkOutcome::Duplicate;
        }
        let (Some(ru), Some(rv)) = (self.get(u), self.get(v)) else {
            return LinkOutcome::Unreachable;
        };
        if ru.is_linked(v) {
            return LinkOutcome::Duplicate;
        }
        if rv.is_honest() && rv.in_links.len() >= self.caps.max_in {
            return LinkOutcome::RejectedFull;
        }
        if ru.is_honest() && ru.out_links.len() >= self.caps.max_out {
            return LinkOutcome::RejectedFull;
        }
        self.get_mut(u).unwrap().out_links.insert(v);
        self.get_mut(v).unwrap().in_links.insert(u);
        self.epochs.insert((u, v), self.next_epoch);
        self.next_epoch += 1;
        LinkOutcome::Established
    }

    /// Removes the link between `u` and `v` in whichever direction it was
    /// recorded. Returns the `(out side, in side)` pair, or `None` if there
    /// was no link.
    pub fn drop_link(&mut self, u: NodeId, v: NodeId) -> Option<(NodeId, NodeId)> {
        let (a, b) = if self.epochs.contains_key(&(u, v)) {
            (u, v)
        } else if self.epochs.contains_key(&(v, u)) {
            (v, u)
        } else {
            return None;
        };
        self.epochs.remove(&(a, b));
        if let Some(r) = self.get_mut(a) {
            r.out_links.remove(&b);
        }
        if let Some(r) = self.get_mut(b) {
            r.in_links.remove(&a);
        }
        Some((a, b))
    }

    pub fn edge_count(&self) -> usize {
        self.epochs.len()
    }

    pub fn snapshot(&self, time: u64) -> OverlaySnapshot {
        let nodes: Vec<NodeRecord> = self.records().cloned().collect();
        let mut edges: Vec<(NodeId, NodeId)> = Vec::with_capacity(self.epochs.len());
        for r in &nodes {
            for &v in &r.out_links {
                edges.push(if r.id < v { (r.id, v) } else { (v, r.id) });
            }
        }
        edges.sort_unstable();
        OverlaySnapshot { time, nodes, edges }
    }

    /// Full scan of the structural invariants. Returns a description of the
    /// first violation found.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut seen = 0usize;
        for r in self.records() {
            if r.is_linked(r.id) {
                return Err(format!("self-loop at {}", r.id));
            }
            for &v in &r.out_links {
                let Some(rv) = self.get(v) else {
                    return Err(format!("{} links to departed node {}", r.id, v));
                };
                if !rv.in_links.contains(&r.id) {
                    return Err(format!("asymmetric ledger: {} -> {} missing at {}", r.id, v, v));
                }
                if r.in_links.contains(&v) {
                    return Err(format!("parallel links between {} and {}", r.id, v));
                }
                if !self.epochs.contains_key(&(r.id, v)) {
                    return Err(format!("link {} -> {} has no epoch", r.id, v));
                }
                seen += 1;
            }
            for &v in &r.in_links {
                let Some(rv) = self.get(v) else {
                    return Err(format!("{} links to departed node {}", r.id, v));
                };
                if !rv.out_links.contains(&r.id) {
                    return Err(format!("asymmetric ledger: {} <- {} missing at {}", r.id, v, v));
                }
            }
            if let Some(b) = r.blacklist.iter().find(|b| !self.contains(**b)) {
                return Err(format!("{} blacklists departed node {}", r.id, b));
            }
            if r.is_honest() {
                if r.out_links.len() > self.caps.max_out {
                    return Err(format!("honest {} has out-degree {}", r.id, r.out_links.len()));
                }
                if r.in_links.len() > self.caps.max_in {
                    return Err(format!("honest {} has in-degree {}", r.id, r.in_links.len()));
                }
            }
        }
        if seen != self.epochs.len() {
            return Err(format!("{} epochs recorded for {} links", self.epochs.len(), seen));
        }
        Ok(())
    }
}

/// Immutable copy of the overlay at the end of a round.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlaySnapshot {
    pub time: u64,
    /// Live nodes in identifier order.
    pub nodes: Vec<NodeRecord>,
    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(NodeId, NodeId)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub time: u64,
    pub n_alive: usize,
    pub n_byzantine: usize,
}

impl OverlaySnapshot {
    pub fn header(&self) -> SnapshotHeader {
        SnapshotHeader {
            time: self.time,
            n_alive: self.nodes.len(),
            n_byzantine: self.nodes.iter().filter(|n| n.is_byzantine).count(),
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes
            .binary_search_by_key(&id, |n| n.id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    /// Byzantine identifiers in ascending order.
    pub fn byzantine(&self) -> BTreeSet<NodeId> {
        self.nodes.iter().filter(|n| n.is_byzantine).map(|n| n.id).collect()
    }

    /// Edge-list export: a JSON header line followed by one sorted `u v`
    /// pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = serde_json::to_string(&self.header()).expect("header serializes");
        out.push('\n');
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }
}

/// Parsed edge-list file: header plus the undirected edges it lists.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeList {
    pub header: SnapshotHeader,
    pub edges: Vec<(NodeId, NodeId)>,
}

pub fn read_edge_list<R: BufRead>(r: R) -> Result<EdgeList> {
    let mut lines = r.lines();
    let header_line = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        detail: "missing header".into(),
    })??;
    let header: SnapshotHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        detail: e.to_string(),
    })?;
    let mut edges = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::Parse {
                line: i + 2,
                detail: format!("expected two identifiers, got {line:?}"),
            });
        };
        let parse = |s: &str| {
            s.parse::<u32>().map(NodeId).map_err(|e| Error::Parse {
                line: i + 2,
                detail: e.to_string(),
            })
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(EdgeList { header, edges })
}

/// A message in flight on a link, stamped with the link's establishment
/// epoch so that traffic on a dropped link is never delivered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Envelope<M> {
    pub from: NodeId,
    pub to: NodeId,
    pub epoch: u64,
    pub msg: M,
}

/// One-round synchronous transport. Messages sent during round `r` are
/// readable by the receiver at round `r + 1`.
#[derive(Clone, Debug)]
pub struct RoundMailbox<M> {
    in_flight: Vec<Envelope<M>>,
    pub sent_without_edge: u64,
}

impl<M> Default for RoundMailbox<M> {
    fn default() -> Self {
        Self {
            in_flight: Vec::new(),
            sent_without_edge: 0,
        }
    }
}

/// Messages handed to receivers at a round boundary, plus those discarded
/// because their link or receiver disappeared.
#[derive(Debug)]
pub struct Delivery<M> {
    /// Per receiver, grouped by sender in ascending order; FIFO within a sender.
    pub inboxes: BTreeMap<NodeId, Vec<Envelope<M>>>,
    pub discarded: Vec<Envelope<M>>,
}

impl<M> RoundMailbox<M> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues `msg` on the link `(from, to)`. Returns `false` and counts a
    /// diagnostic when there is no such link.
    pub fn send(&mut self, overlay: &Overlay, from: NodeId, to: NodeId, msg: M) -> bool {
        match overlay.link_epoch(from, to) {
            Some(epoch) => {
                self.in_flight.push(Envelope { from, to, epoch, msg });
                true
            }
            None => {
                self.sent_without_edge += 1;
                false
            }
        }
    }

    pub fn pending(&self) -> usize {
        self.in_flight.len()
    }

    pub fn pending_iter(&self) -> impl Iterator<Item = &Envelope<M>> {
        self.in_flight.iter()
    }

    /// Hands over everything sent in the previous round. Messages whose link
    /// was dropped (or dropped and re-established) since sending are
    /// discarded.
    pub fn deliver(&mut self, overlay: &Overlay) -> Delivery<M> {
        let mut inboxes: BTreeMap<NodeId, Vec<Envelope<M>>> = BTreeMap::new();
        let mut discarded = Vec::new();
        for env in self.in_flight.drain(..) {
            if overlay.link_epoch(env.from, env.to) == Some(env.epoch) {
                inboxes.entry(env.to).or_default().push(env);
            } else {
                discarded.push(env);
            }
        }
        for batch in inboxes.values_mut() {
            batch.sort_by_key(|e| e.from);
        }
        Delivery { inboxes, discarded }
    }
}
