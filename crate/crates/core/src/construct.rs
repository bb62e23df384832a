//! Overlay construction: the join procedure, per-phase maintenance driven by
//! verified walk endpoints, and the acceptor's admission policy.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::entry::EntryState;
use crate::error::{config_err, Result};
use crate::events::{Basis, Event, EventLog, JoinStatus, RequestKind};
use crate::overlay::{LinkOutcome, NodeRecord, Overlay};
use crate::walk::VerifiedEntry;
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ConstructParams {
    pub d: usize,
    /// Phase length is `eta * log_n` rounds.
    pub eta: u64,
    pub max_join_retries: u32,
}

impl ConstructParams {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.eta == 0 || self.max_join_retries == 0 {
            return Err(config_err("d, eta and max_join_retries must all be at least 1"));
        }
        Ok(())
    }

    pub fn max_out(&self) -> usize {
        3 * self.d
    }

    pub fn max_in(&self) -> usize {
        6 * self.d
    }
}

/// A connection request. Phase requests cite the token whose walk ended at
/// the target; join requests cite nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConnRequest {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: RequestKind,
    pub token: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct JoinOutcome {
    pub node: NodeId,
    pub attempts: u32,
    pub connections: usize,
    pub status: JoinStatus,
}

fn log_request(log: &mut EventLog, round: u64, req: &ConnRequest, outcome: LinkOutcome, basis: Basis) {
    log.push(Event::Request {
        round,
        from: req.from,
        to: req.to,
        kind: req.kind,
        token: req.token,
        outcome,
        basis,
    });
}

/// Runs the join procedure for `u`, which must already be in `overlay`.
///
/// Each attempt queries the entry manager for `3d` candidates (the first
/// attempt uses `first`, drawn by the caller) and asks each one in turn until
/// `u` holds `3d` outgoing links. Honest candidates accept while below their
/// incoming cap; Byzantine ones accept everything. Attempts repeat while `u`
/// has at most `d` links, up to `max_join_retries`. A candidate list
/// shorter than `3d` means the network is still bootstrapping, and whatever
/// was obtained is kept.
#[allow(clippy::too_many_arguments)]
pub fn join<R: Rng + ?Sized>(
    u: NodeId,
    first: Vec<NodeId>,
    overlay: &mut Overlay,
    entry: &EntryState,
    params: &ConstructParams,
    rng: &mut R,
    round: u64,
    log: &mut EventLog,
) -> JoinOutcome {
    let want = params.max_out();
    let mut candidates = first;
    let mut attempts = 0;
    let out_degree = |o: &Overlay| o.get(u).map_or(0, |r| r.out_links.len());
    let status = loop {
        attempts += 1;
        for &v in &candidates {
            if out_degree(overlay) >= want {
                break;
            }
            let req = ConnRequest {
                from: u,
                to: v,
                kind: RequestKind::Join,
                token: None,
            };
            let outcome = overlay.add_link(u, v);
            let basis = match (outcome, overlay.is_byzantine(v)) {
                (LinkOutcome::Established, true) => Basis::Byzantine,
                (LinkOutcome::Established, false) => Basis::NewNode,
                _ => Basis::None,
            };
            log_request(log, round, &req, outcome, basis);
        }
        let got = out_degree(overlay);
        if got > params.d || candidates.len() < want {
            break JoinStatus::Joined;
        }
        if attempts >= params.max_join_retries {
            break JoinStatus::Failed;
        }
        candidates = entry.query(u, want, rng);
    };
    let connections = out_degree(overlay);
    if status == JoinStatus::Failed {
        if let Some(r) = overlay.get_mut(u) {
            r.joined = false;
        }
    }
    log.push(Event::JoinOutcome {
        round,
        node: u,
        attempts,
        connections,
        status,
    });
    JoinOutcome {
        node: u,
        attempts,
        connections,
        status,
    }
}

/// What one honest node does at a phase boundary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaintainPlan {
    pub drops: Vec<NodeId>,
    pub requests: Vec<ConnRequest>,
    /// Links wanted but not requested for lack of verified targets.
    pub shortfall: usize,
}

/// Plans the boundary maintenance of `rec` from its verified list.
///
/// A node with at least `2d` outgoing links drops `d` of them at random and
/// requests `d` replacements, but only if it has `d` distinct usable targets;
/// otherwise it leaves its links alone. A node below `2d` requests up to
/// `3d - d_out` new links. Targets are distinct verified endpoints other than
/// itself and current neighbors, sampled without replacement.
pub fn plan_maintenance<R: Rng + ?Sized>(
    rec: &NodeRecord,
    verified: &[VerifiedEntry],
    params: &ConstructParams,
    rng: &mut R,
) -> MaintainPlan {
    let d = params.d;
    let d_out = rec.out_links.len();
    let mut seen = BTreeSet::new();
    let pool: Vec<VerifiedEntry> = verified
        .iter()
        .filter(|e| e.endpoint != rec.id && !rec.is_linked(e.endpoint) && seen.insert(e.endpoint))
        .copied()
        .collect();
    let mut plan = MaintainPlan::default();
    let wanted = if d_out >= 2 * d {
        if pool.len() < d {
            return plan;
        }
        let outs: Vec<NodeId> = rec.out_links.iter().copied().collect();
        let mut idx = sample(rng, outs.len(), d).into_vec();
        idx.sort_unstable();
        plan.drops = idx.into_iter().map(|i| outs[i]).collect();
        d
    } else {
        params.max_out() - d_out
    };
    let take = wanted.min(pool.len());
    plan.shortfall = wanted - take;
    let mut idx = sample(rng, pool.len(), take).into_vec();
    idx.sort_unstable();
    plan.requests = idx
        .into_iter()
        .map(|i| ConnRequest {
            from: rec.id,
            to: pool[i].endpoint,
            kind: RequestKind::Phase,
            token: Some(pool[i].token_id),
        })
        .collect();
    plan
}

/// An acceptor's answer to one request.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub request: ConnRequest,
    pub outcome: LinkOutcome,
    pub basis: Basis,
}

/// Decides every request addressed to `acceptor` this boundary and applies
/// the accepted ones to `overlay`.
///
/// For an honest acceptor, in order:
/// 1. all requests from a peer that sent at least `6d` of them are
///    rejected as flooding;
/// 2. a request is eligible if `has_record(requester, token)` holds, or if
///    the requester is still new and the acceptor has spare incoming
///    capacity; otherwise it is rejected as unverified;
/// 3. a uniformly random subset of the eligible requests, as large as the
///    spare capacity allows, is accepted and the rest rejected as full.
///
/// A Byzantine acceptor takes every request that can be linked. Decisions
/// are returned in input order.
pub fn accept_policy<R: Rng + ?Sized, F: Fn(NodeId, u64) -> bool>(
    acceptor: NodeId,
    requests: &[ConnRequest],
    overlay: &mut Overlay,
    has_record: F,
    params: &ConstructParams,
    rng: &mut R,
) -> Vec<Decision> {
    let mut out: Vec<Decision> = requests
        .iter()
        .map(|&request| Decision {
            request,
            outcome: LinkOutcome::RejectedUnverified,
            basis: Basis::None,
        })
        .collect();
    let Some(acc) = overlay.get(acceptor) else {
        for dec in &mut out {
            dec.outcome = LinkOutcome::Unreachable;
        }
        return out;
    };
    if acc.is_byzantine {
        for dec in &mut out {
            dec.outcome = overlay.add_link(dec.request.from, acceptor);
            if dec.outcome == LinkOutcome::Established {
                dec.basis = Basis::Byzantine;
            }
        }
        return out;
    }

    let spare = params.max_in().saturating_sub(acc.in_links.len());
    let mut per_peer: BTreeMap<NodeId, usize> = BTreeMap::new();
    for r in requests {
        *per_peer.entry(r.from).or_default() += 1;
    }
    let mut eligible = Vec::new();
    for (i, dec) in out.iter_mut().enumerate() {
        let r = dec.request;
        debug_assert_eq!(r.to, acceptor);
        if per_peer[&r.from] >= params.max_in() {
            dec.outcome = LinkOutcome::RejectedFlooded;
            continue;
        }
        let Some(req_rec) = overlay.get(r.from) else {
            dec.outcome = LinkOutcome::Unreachable;
            continue;
        };
        if r.from == acceptor || req_rec.is_linked(acceptor) {
            dec.outcome = LinkOutcome::Duplicate;
            continue;
        }
        if r.token.is_some_and(|t| has_record(r.from, t)) {
            dec.basis = Basis::Verified;
        } else if req_rec.is_new && spare > 0 {
            dec.basis = Basis::NewNode;
        } else {
            continue;
        }
        eligible.push(i);
    }

    let take = eligible.len().min(spare);
    let mut chosen: Vec<usize> = sample(rng, eligible.len(), take)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    chosen.sort_unstable();
    for &i in &eligible {
        let dec = &mut out[i];
        if chosen.binary_search(&i).is_ok() {
            dec.outcome = overlay.add_link(dec.request.from, acceptor);
        } else {
            dec.outcome = LinkOutcome::RejectedFull;
        }
        if dec.outcome != LinkOutcome::Established {
            dec.basis = Basis::None;
        }
    }
    out
}

/// Logs a batch of decisions.
pub fn log_decisions(log: &mut EventLog, round: u64, decisions: &[Decision]) {
    for dec in decisions {
        log_request(log, round, &dec.request, dec.outcome, dec.basis);
    }
}
