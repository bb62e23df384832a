//! Capped random-walk token circulation.
//!
//! Every honest node starts `numtokens` walks per phase. Tokens move one hop
//! per round through per-neighbor FIFO outboxes, at most `cap` per link per
//! round. A neighbor that pushes more than `cap` tokens (or returns) in one
//! round is blacklisted and ignored from then on. A token that completes
//! `rw_length` hops is recorded by its endpoint and retraces its path back to
//! the source, which adds the endpoint to its verified list.
//!
//! Two stores are kept apart on purpose: `verified_record` lives at the walk
//! endpoint and is what acceptors check, `verified_list` lives at the source
//! and is what it spends on new connections.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rustc_hash::FxHashSet;
use serde::Serialize;

use crate::error::{config_err, Result};
use crate::overlay::{Envelope, Overlay, RoundMailbox};
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WalkParams {
    /// Tokens started per node per phase.
    pub numtokens: usize,
    /// Tokens allowed per link per round, in each of the forward and return
    /// directions.
    pub cap: usize,
    /// Hops per walk.
    pub rw_length: usize,
    pub scale: f64,
}

impl WalkParams {
    pub fn validate(&self) -> Result<()> {
        if self.numtokens == 0 || self.cap == 0 || self.rw_length == 0 {
            return Err(config_err("numtokens, cap and rw_length must all be at least 1"));
        }
        Ok(())
    }
}

/// Index of a token in the current phase's [`TokenArena`].
pub type TokenRef = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub token_id: u64,
    pub source: NodeId,
    pub phase: u64,
    pub rw_counter: u32,
    /// Nodes visited after the source; `path.len() == rw_counter`.
    pub path: Vec<NodeId>,
    pub verified: bool,
    pub endpoint: Option<NodeId>,
    /// Started by an honest node (as opposed to fabricated).
    pub honest: bool,
}

/// Where an honest-initiated token ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenFate {
    InTransit,
    Returned,
    LostChurn,
    AbsorbedByz,
    DroppedBlacklist,
}

/// Per-phase token storage. Messages carry [`TokenRef`]s into it together
/// with the phase tag, so stale references are recognized without lookup.
#[derive(Clone, Debug, Default)]
pub struct TokenArena {
    phase: u64,
    tokens: Vec<Token>,
    fates: Vec<TokenFate>,
    next_id: u64,
}

impl TokenArena {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phase(&self) -> u64 {
        self.phase
    }

    /// Starts a new phase; references from earlier phases become stale.
    pub fn reset(&mut self, phase: u64) {
        self.phase = phase;
        self.tokens.clear();
        self.fates.clear();
    }

    pub fn create(&mut self, source: NodeId, honest: bool, capacity: usize) -> TokenRef {
        let r = self.tokens.len() as TokenRef;
        self.tokens.push(Token {
            token_id: self.next_id,
            source,
            phase: self.phase,
            rw_counter: 0,
            path: Vec::with_capacity(capacity),
            verified: false,
            endpoint: None,
            honest,
        });
        self.fates.push(TokenFate::InTransit);
        self.next_id += 1;
        r
    }

    pub fn get(&self, r: TokenRef) -> Option<&Token> {
        self.tokens.get(r as usize)
    }

    pub fn get_mut(&mut self, r: TokenRef) -> Option<&mut Token> {
        self.tokens.get_mut(r as usize)
    }

    pub fn fate(&self, r: TokenRef) -> TokenFate {
        self.fates[r as usize]
    }

    /// Moves an honest, in-transit token to a terminal fate. Terminal fates
    /// are never overwritten.
    pub fn settle(&mut self, r: TokenRef, fate: TokenFate) {
        let i = r as usize;
        if self.tokens[i].honest && self.fates[i] == TokenFate::InTransit {
            self.fates[i] = fate;
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenRef, &Token, TokenFate)> {
        self.tokens
            .iter()
            .zip(self.fates.iter())
            .enumerate()
            .map(|(i, (t, f))| (i as TokenRef, t, *f))
    }
}

/// A verified token on its way back. The receiver is `path[at - 1]`, or the
/// source when `at == 0`; the sender is `path[at]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReturnHop {
    pub token: TokenRef,
    pub at: u32,
}

/// Everything one node sends one neighbor in one round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WalkBatch {
    pub phase: u64,
    pub forward: Vec<TokenRef>,
    pub returns: Vec<ReturnHop>,
}

impl WalkBatch {
    pub fn is_empty(&self) -> bool {
        self.forward.is_empty() && self.returns.is_empty()
    }
}

/// `(source, token_id)` pair recorded at a walk endpoint.
pub type RecordKey = (NodeId, u64);

/// An endpoint learned through a returned token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VerifiedEntry {
    pub endpoint: NodeId,
    pub token_id: u64,
}

/// A walk that completed at this node during the round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Verification {
    pub endpoint: NodeId,
    pub source: NodeId,
    pub token_id: u64,
}

/// Counters for one node-round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundReport {
    pub verified: Vec<Verification>,
    pub newly_blacklisted: Vec<NodeId>,
    pub returns_completed: usize,
    pub lost: usize,
    pub stale: usize,
    pub malformed: usize,
    pub ignored_blacklisted: usize,
    pub sent_forward: usize,
}

#[derive(Clone, Debug, Default)]
pub struct WalkState {
    outboxes: BTreeMap<NodeId, VecDeque<TokenRef>>,
    return_outboxes: BTreeMap<NodeId, VecDeque<ReturnHop>>,
    verified_record: FxHashSet<RecordKey>,
    verified_list: Vec<VerifiedEntry>,
}

impl WalkState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn verified_record(&self) -> &FxHashSet<RecordKey> {
        &self.verified_record
    }

    pub fn has_record(&self, source: NodeId, token_id: u64) -> bool {
        self.verified_record.contains(&(source, token_id))
    }

    pub fn verified_list(&self) -> &[VerifiedEntry] {
        &self.verified_list
    }

    pub fn take_verified_list(&mut self) -> Vec<VerifiedEntry> {
        std::mem::take(&mut self.verified_list)
    }

    /// Tokens currently queued for forwarding.
    pub fn queued_forward(&self) -> usize {
        self.outboxes.values().map(VecDeque::len).sum()
    }

    pub fn queued_returns(&self) -> usize {
        self.return_outboxes.values().map(VecDeque::len).sum()
    }

    pub fn outbox(&self, v: NodeId) -> Option<&VecDeque<TokenRef>> {
        self.outboxes.get(&v)
    }

    /// Creates `numtokens` fresh tokens and pushes each to a uniformly random
    /// neighbor's outbox. A node without neighbors starts nothing.
    pub fn initiate_phase_tokens<R: Rng + ?Sized>(
        &mut self,
        me: NodeId,
        neighbors: &[NodeId],
        params: &WalkParams,
        arena: &mut TokenArena,
        rng: &mut R,
    ) -> usize {
        if neighbors.is_empty() {
            return 0;
        }
        for _ in 0..params.numtokens {
            let t = arena.create(me, true, params.rw_length);
            let v = neighbors[rng.random_range(0..neighbors.len())];
            self.outboxes.entry(v).or_default().push_back(t);
        }
        params.numtokens
    }

    /// Applies the blacklist rule to a round's inbox and returns the batches
    /// that survive. A sender is blacklisted if it pushed more than `cap`
    /// forward tokens or more than `cap` returns; its whole batch is dropped,
    /// as is anything from an already blacklisted sender.
    pub fn screen<'a>(
        me: NodeId,
        inbox: &'a [Envelope<WalkBatch>],
        blacklist: &mut BTreeSet<NodeId>,
        params: &WalkParams,
        arena: &mut TokenArena,
        report: &mut RoundReport,
    ) -> Vec<&'a Envelope<WalkBatch>> {
        let mut kept = Vec::with_capacity(inbox.len());
        let mut i = 0;
        while i < inbox.len() {
            let from = inbox[i].from;
            let mut j = i;
            let (mut fwd, mut ret) = (0usize, 0usize);
            while j < inbox.len() && inbox[j].from == from {
                fwd += inbox[j].msg.forward.len();
                ret += inbox[j].msg.returns.len();
                j += 1;
            }
            let group = &inbox[i..j];
            i = j;
            debug_assert!(group.iter().all(|e| e.to == me));
            let flooded = fwd > params.cap || ret > params.cap;
            if flooded && blacklist.insert(from) {
                report.newly_blacklisted.push(from);
            }
            if flooded || blacklist.contains(&from) {
                for env in group {
                    report.ignored_blacklisted += env.msg.forward.len() + env.msg.returns.len();
                    if env.msg.phase == arena.phase() {
                        for &t in &env.msg.forward {
                            if (t as usize) < arena.len() {
                                arena.settle(t, TokenFate::DroppedBlacklist);
                            }
                        }
                        for r in &env.msg.returns {
                            if (r.token as usize) < arena.len() {
                                arena.settle(r.token, TokenFate::DroppedBlacklist);
                            }
                        }
                    }
                }
                continue;
            }
            kept.extend(group.iter());
        }
        kept
    }

    /// Advances every accepted forward token by one hop. Tokens reaching
    /// `rw_length` are verified here and start their return.
    #[allow(clippy::too_many_arguments)]
    pub fn walk_round<R: Rng + ?Sized>(
        &mut self,
        me: NodeId,
        neighbors: &[NodeId],
        accepted: &[&Envelope<WalkBatch>],
        params: &WalkParams,
        arena: &mut TokenArena,
        rng: &mut R,
        report: &mut RoundReport,
    ) {
        let phase = arena.phase();
        for env in accepted {
            if env.msg.phase != phase {
                report.stale += env.msg.forward.len();
                continue;
            }
            for &t in &env.msg.forward {
                let Some(tok) = arena.get_mut(t) else {
                    report.malformed += 1;
                    continue;
                };
                if tok.verified || tok.rw_counter as usize >= params.rw_length {
                    report.malformed += 1;
                    continue;
                }
                tok.rw_counter += 1;
                tok.path.push(me);
                if tok.rw_counter as usize == params.rw_length {
                    tok.verified = true;
                    tok.endpoint = Some(me);
                    let (source, token_id) = (tok.source, tok.token_id);
                    self.verified_record.insert((source, token_id));
                    report.verified.push(Verification {
                        endpoint: me,
                        source,
                        token_id,
                    });
                    let at = params.rw_length as u32 - 1;
                    let next = return_receiver(tok, at);
                    self.queue_return(next, ReturnHop { token: t, at }, neighbors, arena, report);
                } else if neighbors.is_empty() {
                    arena.settle(t, TokenFate::LostChurn);
                    report.lost += 1;
                } else {
                    let v = neighbors[rng.random_range(0..neighbors.len())];
                    self.outboxes.entry(v).or_default().push_back(t);
                }
            }
        }
    }

    /// Moves every accepted return one hop closer to its source. Returns
    /// arriving at their source land in the verified list.
    pub fn return_round(
        &mut self,
        me: NodeId,
        neighbors: &[NodeId],
        accepted: &[&Envelope<WalkBatch>],
        arena: &mut TokenArena,
        report: &mut RoundReport,
    ) {
        let phase = arena.phase();
        for env in accepted {
            if env.msg.phase != phase {
                report.stale += env.msg.returns.len();
                continue;
            }
            for hop in &env.msg.returns {
                let Some(tok) = arena.get(hop.token) else {
                    report.malformed += 1;
                    continue;
                };
                let at = hop.at as usize;
                let well_formed = tok.verified
                    && at < tok.path.len()
                    && tok.path[at] == env.from
                    && return_receiver(tok, hop.at) == me;
                if !well_formed {
                    report.malformed += 1;
                    continue;
                }
                if hop.at == 0 {
                    let endpoint = tok.endpoint.expect("verified token has an endpoint");
                    self.verified_list.push(VerifiedEntry {
                        endpoint,
                        token_id: tok.token_id,
                    });
                    arena.settle(hop.token, TokenFate::Returned);
                    report.returns_completed += 1;
                } else {
                    let next = return_receiver(tok, hop.at - 1);
                    self.queue_return(
                        next,
                        ReturnHop {
                            token: hop.token,
                            at: hop.at - 1,
                        },
                        neighbors,
                        arena,
                        report,
                    );
                }
            }
        }
    }

    fn queue_return(
        &mut self,
        next: NodeId,
        hop: ReturnHop,
        neighbors: &[NodeId],
        arena: &mut TokenArena,
        report: &mut RoundReport,
    ) {
        if neighbors.binary_search(&next).is_ok() {
            self.return_outboxes.entry(next).or_default().push_back(hop);
        } else {
            arena.settle(hop.token, TokenFate::LostChurn);
            report.lost += 1;
        }
    }

    /// Dequeues up to `cap` forward tokens and `cap` returns per neighbor and
    /// hands them to the mailbox. Queues for links that no longer exist are
    /// discarded and their tokens counted as lost.
    pub fn dequeue_and_send(
        &mut self,
        me: NodeId,
        overlay: &Overlay,
        mailbox: &mut RoundMailbox<WalkBatch>,
        params: &WalkParams,
        arena: &mut TokenArena,
        report: &mut RoundReport,
    ) {
        let phase = arena.phase();
        let mut batches: BTreeMap<NodeId, WalkBatch> = BTreeMap::new();
        self.outboxes.retain(|&v, q| {
            if q.is_empty() {
                return false;
            }
            if !overlay.has_edge(me, v) {
                for t in q.drain(..) {
                    arena.settle(t, TokenFate::LostChurn);
                    report.lost += 1;
                }
                return false;
            }
            let k = q.len().min(params.cap);
            let b = batches.entry(v).or_insert_with(|| WalkBatch {
                phase,
                ..Default::default()
            });
            b.forward.extend(q.drain(..k));
            report.sent_forward += k;
            !q.is_empty()
        });
        self.return_outboxes.retain(|&v, q| {
            if q.is_empty() {
                return false;
            }
            if !overlay.has_edge(me, v) {
                for h in q.drain(..) {
                    arena.settle(h.token, TokenFate::LostChurn);
                    report.lost += 1;
                }
                return false;
            }
            let k = q.len().min(params.cap);
            let b = batches.entry(v).or_insert_with(|| WalkBatch {
                phase,
                ..Default::default()
            });
            b.returns.extend(q.drain(..k));
            !q.is_empty()
        });
        for (v, batch) in batches {
            mailbox.send(overlay, me, v, batch);
        }
    }

    /// One full honest round: screen the inbox, advance forward tokens and
    /// returns, then send.
    #[allow(clippy::too_many_arguments)]
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        me: NodeId,
        inbox: &[Envelope<WalkBatch>],
        blacklist: &mut BTreeSet<NodeId>,
        neighbors: &[NodeId],
        overlay: &Overlay,
        mailbox: &mut RoundMailbox<WalkBatch>,
        params: &WalkParams,
        arena: &mut TokenArena,
        rng: &mut R,
    ) -> RoundReport {
        let mut report = RoundReport::default();
        let accepted = Self::screen(me, inbox, blacklist, params, arena, &mut report);
        let usable: Vec<NodeId> = neighbors.iter().copied().filter(|v| !blacklist.contains(v)).collect();
        self.walk_round(me, &usable, &accepted, params, arena, rng, &mut report);
        self.return_round(me, &usable, &accepted, arena, &mut report);
        self.dequeue_and_send(me, overlay, mailbox, params, arena, &mut report);
        report
    }

    /// Clears both verification stores and drops queued tokens, which stay
    /// `InTransit` and are discarded with the phase.
    pub fn phase_reset(&mut self) {
        self.verified_list.clear();
        self.verified_record.clear();
        self.outboxes.clear();
        self.return_outboxes.clear();
    }

    /// Empties every queue, e.g. when the node departs. Returns the affected
    /// tokens.
    pub fn drain_all(&mut self) -> Vec<TokenRef> {
        let mut out: Vec<TokenRef> = self.outboxes.values_mut().flat_map(|q| q.drain(..)).collect();
        out.extend(
            self.return_outboxes
                .values_mut()
                .flat_map(|q| q.drain(..))
                .map(|h| h.token),
        );
        self.outboxes.clear();
        self.return_outboxes.clear();
        out
    }
}

/// Receiver of a return hop carrying position `at`.
pub fn return_receiver(tok: &Token, at: u32) -> NodeId {
    if at == 0 {
        tok.source
    } else {
        tok.path[at as usize - 1]
    }
}

/// Per-phase token accounting, one CSV row per phase.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WalkStats {
    pub phase: u64,
    pub initiated: u64,
    pub verified: u64,
    pub returned: u64,
    pub lost_churn: u64,
    pub absorbed_byz: u64,
    pub dropped_blacklist: u64,
    pub in_transit: u64,
    pub blacklist_events: u64,
}

impl WalkStats {
    pub const CSV_HEADER: &'static str =
        "phase,initiated,verified,returned,lost_churn,absorbed_byz,dropped_blacklist,in_transit,blacklist_events";

    /// Tallies the honest tokens of the arena's phase.
    pub fn from_arena(arena: &TokenArena, blacklist_events: u64) -> Self {
        let mut s = WalkStats {
            phase: arena.phase(),
            blacklist_events,
            ..Default::default()
        };
        for (_, tok, fate) in arena.iter() {
            if !tok.honest {
                continue;
            }
            s.initiated += 1;
            if tok.verified {
                s.verified += 1;
            }
            match fate {
                TokenFate::InTransit => s.in_transit += 1,
                TokenFate::Returned => s.returned += 1,
                TokenFate::LostChurn => s.lost_churn += 1,
                TokenFate::AbsorbedByz => s.absorbed_byz += 1,
                TokenFate::DroppedBlacklist => s.dropped_blacklist += 1,
            }
        }
        s
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.phase,
            self.initiated,
            self.verified,
            self.returned,
            self.lost_churn,
            self.absorbed_byz,
            self.dropped_blacklist,
            self.in_transit,
            self.blacklist_events
        )
    }
}

pub mod harness;
