//! Full-information Byzantine adversary: who gets corrupted on join, and what
//! corrupted nodes do each round.
//!
//! Strategies see the whole overlay, everything in flight and every node's
//! past randomness, but nothing drawn for future rounds. Their only state is
//! the adversary's own per-node store.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::churn::LifetimeOverride;
use crate::construct::ConnRequest;
use crate::error::{config_err, Result};
use crate::events::RequestKind;
use crate::overlay::{Envelope, Overlay, RoundMailbox};
use crate::rng::{derive_rng, SimRng, Stream};
use crate::walk::{return_receiver, ReturnHop, TokenArena, TokenFate, TokenRef, WalkBatch, WalkParams};
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionPolicy {
    #[default]
    None,
    RandomOnJoin {
        p: f64,
    },
    /// Corrupts joiners whose candidate list includes an honest node of
    /// below-typical degree.
    TargetedOnJoin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Sends nothing.
    #[default]
    Silent,
    /// Sends `cap + k` fabricated tokens per link per round to every honest
    /// neighbor that has not blacklisted it yet.
    TokenFlood { k: usize },
    /// Forwards every token to its lowest-identifier honest neighbor, within
    /// the cap, and claims itself as endpoint of walks that end on it.
    WalkBias,
    /// Sends `6d` connection requests to every honest node each phase.
    ConnFlood,
    /// Takes tokens and never forwards or returns them.
    Absorb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    /// Budget constant: at most `beta * |V| / log2 |V|` corrupted nodes.
    pub beta: f64,
    pub corruption: CorruptionPolicy,
    pub strategy: Strategy,
    pub lifetime_override: LifetimeOverride,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            beta: 0.02,
            corruption: CorruptionPolicy::None,
            strategy: Strategy::Silent,
            lifetime_override: LifetimeOverride::Persist,
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(config_err(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if let CorruptionPolicy::RandomOnJoin { p } = self.corruption {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(format!(
                    "corruption probability must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }

    /// Largest allowed Byzantine population for `v` live nodes.
    pub fn budget(&self, v: usize) -> usize {
        if v < 2 {
            return 0;
        }
        let v = v as f64;
        (self.beta * v / v.log2()).floor() as usize
    }
}

/// Read-only view handed to the adversary.
pub struct AdversaryView<'a> {
    pub round: u64,
    pub overlay: &'a Overlay,
    pub in_flight: &'a RoundMailbox<WalkBatch>,
    pub arena: &'a TokenArena,
    pub d: usize,
    master_seed: u64,
}

impl<'a> AdversaryView<'a> {
    pub fn new(
        round: u64,
        overlay: &'a Overlay,
        in_flight: &'a RoundMailbox<WalkBatch>,
        arena: &'a TokenArena,
        d: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            round,
            overlay,
            in_flight,
            arena,
            d,
            master_seed,
        }
    }

    /// Replays any node's random stream for `round`, which must not lie in
    /// the future.
    pub fn past_rng(&self, stream: Stream, node: NodeId, round: u64) -> Option<SimRng> {
        (round <= self.round).then(|| derive_rng(self.master_seed, stream, node.0 as u64, round))
    }
}

/// Per-node memory of a corrupted node.
#[derive(Clone, Debug, Default)]
struct Store {
    forward: VecDeque<TokenRef>,
    returns: BTreeMap<NodeId, VecDeque<ReturnHop>>,
}

/// What the corrupted nodes did, for the per-phase counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActionCount {
    pub tokens_sent: u64,
    pub fabricated: u64,
    pub requests: u64,
}

impl ActionCount {
    pub fn total(&self) -> u64 {
        self.tokens_sent + self.requests
    }
}

#[derive(Clone, Debug)]
pub struct Adversary {
    pub config: AdversaryConfig,
    stores: BTreeMap<NodeId, Store>,
    pub actions: ActionCount,
}

impl Adversary {
    pub fn new(config: AdversaryConfig) -> Self {
        Self {
            config,
            stores: BTreeMap::new(),
            actions: ActionCount::default(),
        }
    }

    /// Whether the node joining this round should be corrupted. Never
    /// exceeds the budget for the population including the joiner.
    pub fn decide_corruption(&self, view: &AdversaryView<'_>, node: NodeId, candidates: &[NodeId]) -> bool {
        let budget = self.config.budget(view.overlay.alive_count() + 1);
        if view.overlay.byzantine_count() >= budget {
            return false;
        }
        match self.config.corruption {
            CorruptionPolicy::None => false,
            CorruptionPolicy::RandomOnJoin { p } => {
                let mut rng = derive_rng(view.master_seed, Stream::Adversary, node.0 as u64, view.round);
                rng.random::<f64>() < p
            }
            CorruptionPolicy::TargetedOnJoin => candidates.iter().any(|&c| {
                view.overlay
                    .get(c)
                    .is_some_and(|r| r.is_honest() && r.degree() < 3 * view.d)
            }),
        }
    }

    /// Departure hook for strategies that time their exits. The built-in
    /// strategies never leave early.
    pub fn wants_departure(&self, _view: &AdversaryView<'_>, _node: NodeId) -> bool {
        false
    }

    pub fn forget(&mut self, node: NodeId) {
        self.stores.remove(&node);
    }

    /// Runs one round for corrupted `node`. `inbox` holds what it received;
    /// honest tokens in it have already been marked absorbed. May create
    /// fabricated tokens in `arena`.
    pub fn round_actions(
        &mut self,
        node: NodeId,
        inbox: &[Envelope<WalkBatch>],
        overlay: &Overlay,
        arena: &mut TokenArena,
        walk: &WalkParams,
        mailbox: &mut RoundMailbox<WalkBatch>,
    ) {
        let Some(rec) = overlay.get(node) else {
            return;
        };
        let phase = arena.phase();
        match self.config.strategy {
            Strategy::Silent | Strategy::Absorb | Strategy::ConnFlood => {}
            Strategy::TokenFlood { k } => {
                for v in rec.neighbors() {
                    let Some(rv) = overlay.get(v) else { continue };
                    if rv.is_byzantine || rv.blacklist.contains(&node) {
                        continue;
                    }
                    let n = walk.cap + k;
                    let forward: Vec<TokenRef> = (0..n).map(|_| arena.create(node, false, 0)).collect();
                    self.actions.fabricated += n as u64;
                    self.actions.tokens_sent += n as u64;
                    mailbox.send(
                        overlay,
                        node,
                        v,
                        WalkBatch {
                            phase,
                            forward,
                            returns: Vec::new(),
                        },
                    );
                }
            }
            Strategy::WalkBias => {
                let neighbors = rec.neighbors();
                let target = neighbors.iter().copied().find(|&v| {
                    overlay
                        .get(v)
                        .is_some_and(|r| r.is_honest() && !r.blacklist.contains(&node))
                });
                let store = self.stores.entry(node).or_default();
                for env in inbox {
                    if env.msg.phase != phase {
                        continue;
                    }
                    for &t in &env.msg.forward {
                        let Some(tok) = arena.get_mut(t) else { continue };
                        if tok.verified || tok.rw_counter as usize >= walk.rw_length {
                            continue;
                        }
                        tok.rw_counter += 1;
                        tok.path.push(node);
                        if tok.rw_counter as usize == walk.rw_length {
                            tok.verified = true;
                            tok.endpoint = Some(node);
                            let at = walk.rw_length as u32 - 1;
                            let next = return_receiver(tok, at);
                            store
                                .returns
                                .entry(next)
                                .or_default()
                                .push_back(ReturnHop { token: t, at });
                        } else {
                            store.forward.push_back(t);
                        }
                    }
                    for hop in &env.msg.returns {
                        let Some(tok) = arena.get(hop.token) else { continue };
                        if hop.at == 0 || hop.at as usize > tok.path.len() {
                            continue;
                        }
                        let next = return_receiver(tok, hop.at - 1);
                        store.returns.entry(next).or_default().push_back(ReturnHop {
                            token: hop.token,
                            at: hop.at - 1,
                        });
                    }
                }
                let mut batches: BTreeMap<NodeId, WalkBatch> = BTreeMap::new();
                if let Some(v) = target {
                    let k = store.forward.len().min(walk.cap);
                    if k > 0 {
                        let b = batches.entry(v).or_insert_with(|| WalkBatch {
                            phase,
                            ..Default::default()
                        });
                        b.forward.extend(store.forward.drain(..k));
                    }
                }
                store.returns.retain(|&v, q| {
                    if !overlay.has_edge(node, v) {
                        return false;
                    }
                    let k = q.len().min(walk.cap);
                    let b = batches.entry(v).or_insert_with(|| WalkBatch {
                        phase,
                        ..Default::default()
                    });
                    b.returns.extend(q.drain(..k));
                    !q.is_empty()
                });
                for (v, b) in batches {
                    self.actions.tokens_sent += (b.forward.len() + b.returns.len()) as u64;
                    mailbox.send(overlay, node, v, b);
                }
            }
        }
    }

    /// Connection requests corrupted `node` sends at a phase boundary.
    pub fn boundary_requests(&mut self, node: NodeId, overlay: &Overlay, d: usize) -> Vec<ConnRequest> {
        if self.config.strategy != Strategy::ConnFlood {
            return Vec::new();
        }
        let mut out = Vec::new();
        for r in overlay.records() {
            if r.is_byzantine || r.id == node {
                continue;
            }
            for i in 0..6 * d {
                out.push(ConnRequest {
                    from: node,
                    to: r.id,
                    kind: RequestKind::Phase,
                    token: Some(u64::MAX - i as u64),
                });
            }
        }
        self.actions.requests += out.len() as u64;
        out
    }

    /// Called at the start of each phase; queued tokens belong to the old
    /// phase and are dropped.
    pub fn phase_reset(&mut self) {
        for s in self.stores.values_mut() {
            s.forward.clear();
            s.returns.clear();
        }
    }
}

/// Marks every honest token in `inbox` as absorbed by a Byzantine receiver.
pub fn absorb_inbox(inbox: &[Envelope<WalkBatch>], arena: &mut TokenArena) {
    let phase = arena.phase();
    for env in inbox {
        if env.msg.phase != phase {
            continue;
        }
        for &t in &env.msg.forward {
            if (t as usize) < arena.len() {
                arena.settle(t, TokenFate::AbsorbedByz);
            }
        }
        for r in &env.msg.returns {
            if (r.token as usize) < arena.len() {
                arena.settle(r.token, TokenFate::AbsorbedByz);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{Caps, NodeRecord};
    use crate::walk::{RoundReport, WalkState};
    use std::collections::BTreeSet;

    fn walk_params() -> WalkParams {
        WalkParams {
            numtokens: 2,
            cap: 4,
            rw_length: 3,
            scale: 0.125,
        }
    }

    #[test]
    fn budget_function() {
        let cfg = AdversaryConfig::default();
        assert_eq!(cfg.budget(0), 0);
        assert_eq!(cfg.budget(1), 0);
        // 0.02 * 512 / 9 = 1.14
        assert_eq!(cfg.budget(512), 1);
        let cfg = AdversaryConfig { beta: 1.0, ..cfg };
        assert_eq!(cfg.budget(1024), 102);
    }

    fn view_fixture(n: u32, byz: &[u32]) -> (Overlay, RoundMailbox<WalkBatch>, TokenArena) {
        let mut o = Overlay::new(Caps::for_degree(2));
        for i in 0..n {
            o.insert_node(NodeRecord::new(NodeId(i), 0, byz.contains(&i)));
        }
        (o, RoundMailbox::new(), TokenArena::new())
    }

    #[test]
    fn exhausted_budget_never_corrupts() {
        let (o, m, a) = view_fixture(100, &[0]);
        let cfg = AdversaryConfig {
            corruption: CorruptionPolicy::RandomOnJoin { p: 1.0 },
            ..Default::default()
        };
        let adv = Adversary::new(cfg);
        let view = AdversaryView::new(5, &o, &m, &a, 2, 1);
        // 0.02 * 101 / log2(101) < 1
        assert!(!adv.decide_corruption(&view, NodeId(100), &[]));
    }

    #[test]
    fn random_on_join_with_headroom_corrupts() {
        let (o, m, a) = view_fixture(1000, &[]);
        let cfg = AdversaryConfig {
            corruption: CorruptionPolicy::RandomOnJoin { p: 1.0 },
            ..Default::default()
        };
        let adv = Adversary::new(cfg);
        let view = AdversaryView::new(5, &o, &m, &a, 2, 1);
        assert!(adv.decide_corruption(&view, NodeId(1000), &[]));
    }

    #[test]
    fn view_hides_future_randomness() {
        let (o, m, a) = view_fixture(2, &[]);
        let view = AdversaryView::new(5, &o, &m, &a, 2, 1);
        assert!(view.past_rng(Stream::Walk, NodeId(0), 5).is_some());
        assert!(view.past_rng(Stream::Walk, NodeId(0), 6).is_none());
    }

    #[test]
    fn token_flood_gets_blacklisted_in_one_round() {
        let (mut o, mut mailbox, mut arena) = view_fixture(3, &[0]);
        o.add_link(NodeId(0), NodeId(1));
        o.add_link(NodeId(0), NodeId(2));
        let wp = walk_params();
        let mut adv = Adversary::new(AdversaryConfig {
            strategy: Strategy::TokenFlood { k: 1 },
            ..Default::default()
        });
        adv.round_actions(NodeId(0), &[], &o, &mut arena, &wp, &mut mailbox);
        let delivery = mailbox.deliver(&o);
        for v in [1u32, 2] {
            let inbox = &delivery.inboxes[&NodeId(v)];
            let mut bl = BTreeSet::new();
            let mut rep = RoundReport::default();
            let kept = WalkState::screen(NodeId(v), inbox, &mut bl, &wp, &mut arena, &mut rep);
            assert!(kept.is_empty());
            assert!(bl.contains(&NodeId(0)));
            o.get_mut(NodeId(v)).unwrap().blacklist = bl;
        }
        // Nobody left to flood.
        adv.round_actions(NodeId(0), &[], &o, &mut arena, &wp, &mut mailbox);
        assert_eq!(mailbox.pending(), 0);
    }

    #[test]
    fn conn_flood_targets_every_honest_node() {
        let (o, _, _) = view_fixture(5, &[4]);
        let mut adv = Adversary::new(AdversaryConfig {
            strategy: Strategy::ConnFlood,
            ..Default::default()
        });
        let reqs = adv.boundary_requests(NodeId(4), &o, 2);
        assert_eq!(reqs.len(), 4 * 12);
        assert!(reqs.iter().all(|r| r.to != NodeId(4)));
    }

    #[test]
    fn walk_bias_funnels_to_lowest_honest_neighbor() {
        let (mut o, mut mailbox, mut arena) = view_fixture(4, &[3]);
        for v in 0..3 {
            o.add_link(NodeId(3), NodeId(v));
        }
        let wp = walk_params();
        let t = arena.create(NodeId(2), true, 3);
        arena.get_mut(t).unwrap().rw_counter = 0;
        let inbox = vec![Envelope {
            from: NodeId(2),
            to: NodeId(3),
            epoch: o.link_epoch(NodeId(2), NodeId(3)).unwrap(),
            msg: WalkBatch {
                phase: 0,
                forward: vec![t],
                returns: vec![],
            },
        }];
        absorb_inbox(&inbox, &mut arena);
        assert_eq!(arena.fate(t), TokenFate::AbsorbedByz);
        let mut adv = Adversary::new(AdversaryConfig {
            strategy: Strategy::WalkBias,
            ..Default::default()
        });
        adv.round_actions(NodeId(3), &inbox, &o, &mut arena, &wp, &mut mailbox);
        let d = mailbox.deliver(&o);
        assert_eq!(d.inboxes.keys().copied().collect::<Vec<_>>(), vec![NodeId(0)]);
        assert_eq!(arena.get(t).unwrap().path, vec![NodeId(3)]);
    }
}
