use std::collections::BTreeMap;

use crate::adversary::{absorb_inbox, Adversary, AdversaryView};
use crate::churn::{build_schedule, EventKind, Schedule};
use crate::construct::{accept_policy, join, log_decisions, plan_maintenance, ConnRequest};
use crate::engine::{RunConfig, RunResult, RunStats};
use crate::entry::EntryState;
use crate::error::{Error, Result};
use crate::events::{DropReason, Event, EventLog, JoinStatus};
use crate::metrics::{
    conductance_estimate_with, conductance_exact_with_limit, core_extract, endpoint_uniformity,
    honest_component_fraction, EstimateMethod, Graph, PhaseReport,
};
use crate::overlay::{Caps, Envelope, LinkOutcome, NodeRecord, Overlay, OverlaySnapshot, RoundMailbox};
use crate::params::Resolved;
use crate::rng::{derive_rng, Stream};
use crate::walk::{TokenArena, TokenFate, WalkBatch, WalkState, WalkStats};
use crate::NodeId;

/// Per-window tallies, reset at every boundary.
#[derive(Clone, Debug, Default)]
struct Counters {
    joins: u64,
    leaves: u64,
    join_failures: u64,
    links_established: u64,
    links_dropped: u64,
    requests_rejected: u64,
    blacklist_events: u64,
    max_honest_out: usize,
    max_honest_in: usize,
}

struct Window {
    t_start: u64,
    start: OverlaySnapshot,
}

/// A run in progress. [`Simulation::step`] executes one round.
pub struct Simulation {
    cfg: RunConfig,
    res: Resolved,
    seed: u64,
    warmup: u64,
    schedule: Schedule,
    overlay: Overlay,
    entry: EntryState,
    walks: Vec<WalkState>,
    arena: TokenArena,
    mailbox: RoundMailbox<WalkBatch>,
    adversary: Adversary,
    log: EventLog,
    round: u64,
    window: Option<Window>,
    counters: Counters,
    adversary_mark: u64,
    reports: Vec<PhaseReport>,
    walk_stats: Vec<WalkStats>,
    stats: RunStats,
}

impl Simulation {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let res = cfg.resolved()?;
        let schedule = build_schedule(&cfg.churn_config())?;
        Ok(Self {
            res,
            seed: cfg.seed,
            warmup: cfg.warmup()?,
            overlay: Overlay::new(Caps::for_degree(res.construct.d)),
            entry: EntryState::new(cfg.churn.n_stable as usize),
            walks: Vec::new(),
            arena: TokenArena::new(),
            mailbox: RoundMailbox::new(),
            adversary: Adversary::new(cfg.adversary.clone()),
            log: EventLog::new(cfg.metrics.log_verifications),
            round: 0,
            window: None,
            counters: Counters::default(),
            adversary_mark: 0,
            reports: Vec::new(),
            walk_stats: Vec::new(),
            stats: RunStats::default(),
            schedule,
            cfg,
        })
    }

    pub fn overlay(&self) -> &Overlay {
        &self.overlay
    }

    pub fn arena(&self) -> &TokenArena {
        &self.arena
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn resolved(&self) -> &Resolved {
        &self.res
    }

    pub fn events(&self) -> &EventLog {
        &self.log
    }

    pub fn reports(&self) -> &[PhaseReport] {
        &self.reports
    }

    /// The next round to execute.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.round > self.cfg.churn.horizon
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> RunResult {
        self.stats.rounds = self.round;
        self.stats.events = self.log.len();
        RunResult {
            final_snapshot: self.overlay.snapshot(self.round.saturating_sub(1)),
            reports: self.reports,
            walk_stats: self.walk_stats,
            events: self.log,
            event_log_path: None,
            stats: self.stats,
        }
    }

    fn walk_state(&mut self, u: NodeId) -> &mut WalkState {
        let i = u.index();
        if i >= self.walks.len() {
            self.walks.resize_with(i + 1, WalkState::new);
        }
        &mut self.walks[i]
    }

    /// Executes one round.
    pub fn step(&mut self) -> Result<()> {
        let t = self.round;
        self.apply_leaves(t);
        self.apply_joins(t);
        let mut delivery = self.mailbox.deliver(&self.overlay);
        self.settle_discarded(&delivery.discarded);
        self.honest_round(t, &mut delivery.inboxes);
        self.byzantine_round(t, &mut delivery.inboxes);
        if t > 0 && t.is_multiple_of(self.res.phase_len()) {
            self.boundary(t);
        }
        self.end_of_round(t)?;
        self.round += 1;
        Ok(())
    }

    fn depart(&mut self, t: u64, u: NodeId, forced: bool) {
        for (a, b) in self.overlay.remove_node(u) {
            self.log.push(Event::Drop {
                round: t,
                from: a,
                to: b,
                reason: DropReason::Departure,
            });
            self.counters.links_dropped += 1;
        }
        self.log.push(Event::Leave {
            round: t,
            node: u,
            forced,
        });
        let lost = self.walk_state(u).drain_all();
        for tok in lost {
            self.arena.settle(tok, TokenFate::LostChurn);
        }
        self.adversary.forget(u);
        self.counters.leaves += 1;
        self.stats.leaves += 1;
        if forced {
            self.stats.forced_leaves += 1;
        }
    }

    fn apply_leaves(&mut self, t: u64) {
        let leaving: Vec<NodeId> = self
            .schedule
            .events_at(t)
            .iter()
            .filter(|e| e.kind == EventKind::Leave)
            .map(|e| e.node)
            .collect();
        let policy = self.cfg.adversary.lifetime_override;
        for u in leaving {
            let Some(rec) = self.overlay.get(u) else { continue };
            if policy.honors_leave(rec.is_byzantine) {
                self.depart(t, u, false);
            }
        }
        // Strategy-timed exits, then rotation under budget pressure.
        let byz: Vec<NodeId> = self
            .overlay
            .records()
            .filter(|r| r.is_byzantine)
            .map(|r| r.id)
            .collect();
        let wanting: Vec<NodeId> = {
            let view = AdversaryView::new(
                t,
                &self.overlay,
                &self.mailbox,
                &self.arena,
                self.res.construct.d,
                self.seed,
            );
            byz.iter()
                .copied()
                .filter(|&b| self.adversary.wants_departure(&view, b))
                .collect()
        };
        for b in wanting {
            self.depart(t, b, true);
        }
        self.rotate(t);
    }

    /// Forces the oldest corrupted nodes out while the budget is exceeded.
    /// The budget is not monotone in `|V|` for tiny networks, so this runs
    /// after joins too.
    fn rotate(&mut self, t: u64) {
        while self.overlay.byzantine_count() > self.cfg.adversary.budget(self.overlay.alive_count()) {
            let oldest = self
                .overlay
                .records()
                .filter(|r| r.is_byzantine)
                .min_by_key(|r| (r.joined_at, r.id))
                .map(|r| r.id)
                .expect("byzantine count is positive");
            self.depart(t, oldest, true);
        }
    }

    fn apply_joins(&mut self, t: u64) {
        let joining: Vec<NodeId> = self
            .schedule
            .events_at(t)
            .iter()
            .filter(|e| e.kind == EventKind::Join)
            .map(|e| e.node)
            .filter(|&u| self.schedule.span(u).is_none_or(|s| s.leave != Some(t)))
            .collect();
        let want = self.res.construct.max_out();
        for u in joining {
            let mut erng = derive_rng(self.seed, Stream::Entry, u.0 as u64, t);
            self.entry.register(u, &mut erng);
            let mut jrng = derive_rng(self.seed, Stream::Join, u.0 as u64, t);
            let first = self.entry.query(u, want, &mut jrng);
            let corrupt = {
                let view = AdversaryView::new(
                    t,
                    &self.overlay,
                    &self.mailbox,
                    &self.arena,
                    self.res.construct.d,
                    self.seed,
                );
                self.adversary.decide_corruption(&view, u, &first)
            };
            self.overlay.insert_node(NodeRecord::new(u, t, corrupt));
            self.walk_state(u);
            self.log.push(Event::Join {
                round: t,
                node: u,
                byzantine: corrupt,
            });
            let before = self.log.len();
            let outcome = join(
                u,
                first,
                &mut self.overlay,
                &self.entry,
                &self.res.construct,
                &mut jrng,
                t,
                &mut self.log,
            );
            self.tally_requests(before);
            self.counters.joins += 1;
            self.stats.joins += 1;
            if outcome.status == JoinStatus::Failed {
                self.counters.join_failures += 1;
                self.stats.join_failures += 1;
            }
        }
        self.rotate(t);
    }

    /// Counts link outcomes among the request events logged since `from`.
    fn tally_requests(&mut self, from: usize) {
        for ev in &self.log.events[from..] {
            if let Event::Request { outcome, .. } = ev {
                match outcome {
                    LinkOutcome::Established => self.counters.links_established += 1,
                    LinkOutcome::RejectedFull | LinkOutcome::RejectedUnverified | LinkOutcome::RejectedFlooded => {
                        self.counters.requests_rejected += 1
                    }
                    _ => {}
                }
            }
        }
    }

    fn settle_discarded(&mut self, discarded: &[Envelope<WalkBatch>]) {
        let phase = self.arena.phase();
        let n = self.arena.len();
        for env in discarded {
            if env.msg.phase != phase {
                continue;
            }
            for &tok in &env.msg.forward {
                if (tok as usize) < n {
                    self.arena.settle(tok, TokenFate::LostChurn);
                }
            }
            for r in &env.msg.returns {
                if (r.token as usize) < n {
                    self.arena.settle(r.token, TokenFate::LostChurn);
                }
            }
        }
    }

    fn honest_round(&mut self, t: u64, inboxes: &mut BTreeMap<NodeId, Vec<Envelope<WalkBatch>>>) {
        let honest: Vec<NodeId> = self.overlay.records().filter(|r| r.is_honest()).map(|r| r.id).collect();
        let empty = Vec::new();
        for u in honest {
            let inbox = inboxes.remove(&u);
            let inbox = inbox.as_ref().unwrap_or(&empty);
            let ws = &self.walks[u.index()];
            if inbox.is_empty() && ws.queued_forward() == 0 && ws.queued_returns() == 0 {
                continue;
            }
            let rec = self.overlay.get_mut(u).expect("honest node is alive");
            let mut blacklist = std::mem::take(&mut rec.blacklist);
            let neighbors = rec.neighbors();
            let mut rng = derive_rng(self.seed, Stream::Walk, u.0 as u64, t);
            let report = self.walks[u.index()].step(
                u,
                inbox,
                &mut blacklist,
                &neighbors,
                &self.overlay,
                &mut self.mailbox,
                &self.res.walk,
                &mut self.arena,
                &mut rng,
            );
            self.overlay.get_mut(u).expect("honest node is alive").blacklist = blacklist;
            if self.log.log_verifications {
                for v in &report.verified {
                    self.log.push(Event::Verify {
                        round: t,
                        endpoint: v.endpoint,
                        source: v.source,
                        token: v.token_id,
                    });
                }
            }
            for offender in report.newly_blacklisted {
                self.log.push(Event::Blacklist {
                    round: t,
                    node: u,
                    offender,
                });
                self.counters.blacklist_events += 1;
            }
        }
    }

    fn byzantine_round(&mut self, _t: u64, inboxes: &mut BTreeMap<NodeId, Vec<Envelope<WalkBatch>>>) {
        let byz: Vec<NodeId> = self
            .overlay
            .records()
            .filter(|r| r.is_byzantine)
            .map(|r| r.id)
            .collect();
        for b in byz {
            let inbox = inboxes.remove(&b).unwrap_or_default();
            absorb_inbox(&inbox, &mut self.arena);
            self.adversary.round_actions(
                b,
                &inbox,
                &self.overlay,
                &mut self.arena,
                &self.res.walk,
                &mut self.mailbox,
            );
        }
    }

    fn boundary(&mut self, t: u64) {
        let phase_index = t / self.res.phase_len();
        if let Some(w) = self.window.take() {
            let reportable = w.t_start >= self.warmup && phase_index.is_multiple_of(self.cfg.metrics.every);
            if reportable {
                let r = self.phase_report(t, &w);
                self.reports.push(r);
            }
            self.walk_stats
                .push(WalkStats::from_arena(&self.arena, self.counters.blacklist_events));
        }
        self.maintain(t);

        // Nodes that joined during the phase take part from now on.
        for r in self.overlay.records_mut() {
            r.is_new = false;
        }
        for ws in &mut self.walks {
            ws.phase_reset();
        }
        self.adversary.phase_reset();
        self.arena.reset(phase_index);
        self.log.push(Event::Phase {
            round: t,
            index: phase_index,
        });
        self.stats.phases += 1;
        let honest: Vec<(NodeId, Vec<NodeId>)> = self
            .overlay
            .records()
            .filter(|r| r.is_honest())
            .map(|r| (r.id, r.neighbors()))
            .collect();
        for (u, neighbors) in honest {
            let mut rng = derive_rng(self.seed, Stream::Initiate, u.0 as u64, t);
            self.walks[u.index()].initiate_phase_tokens(u, &neighbors, &self.res.walk, &mut self.arena, &mut rng);
        }
        self.window = Some(Window {
            t_start: t,
            start: self.overlay.snapshot(t),
        });
        self.counters = Counters::default();
        self.adversary_mark = self.adversary.actions.total();
    }

    fn maintain(&mut self, t: u64) {
        let params = self.res.construct;
        let mut plans = Vec::new();
        for r in self.overlay.records().filter(|r| r.is_honest() && !r.is_new) {
            let mut rng = derive_rng(self.seed, Stream::Maintain, r.id.0 as u64, t);
            let plan = plan_maintenance(r, self.walks[r.id.index()].verified_list(), &params, &mut rng);
            plans.push((r.id, plan));
        }
        for (u, plan) in &plans {
            for &v in &plan.drops {
                if let Some((a, b)) = self.overlay.drop_link(*u, v) {
                    self.log.push(Event::Drop {
                        round: t,
                        from: a,
                        to: b,
                        reason: DropReason::Maintain,
                    });
                    self.counters.links_dropped += 1;
                }
            }
        }
        let mut by_acceptor: BTreeMap<NodeId, Vec<ConnRequest>> = BTreeMap::new();
        for (_, plan) in plans {
            for r in plan.requests {
                by_acceptor.entry(r.to).or_default().push(r);
            }
        }
        let byz: Vec<NodeId> = self
            .overlay
            .records()
            .filter(|r| r.is_byzantine)
            .map(|r| r.id)
            .collect();
        for b in byz {
            for r in self.adversary.boundary_requests(b, &self.overlay, params.d) {
                by_acceptor.entry(r.to).or_default().push(r);
            }
        }
        let before = self.log.len();
        for (acceptor, mut reqs) in by_acceptor {
            reqs.sort();
            let mut rng = derive_rng(self.seed, Stream::Accept, acceptor.0 as u64, t);
            let record = self.walks.get(acceptor.index());
            let decisions = accept_policy(
                acceptor,
                &reqs,
                &mut self.overlay,
                |s, tok| record.is_some_and(|w| w.has_record(s, tok)),
                &params,
                &mut rng,
            );
            log_decisions(&mut self.log, t, &decisions);
        }
        self.tally_requests(before);
    }

    fn phase_report(&self, t: u64, w: &Window) -> PhaseReport {
        let start = &w.start;
        let core = core_extract(start, |id| self.overlay.contains(id));
        let mut in_core = vec![
            false;
            self.overlay
                .id_bound()
                .max(start.nodes.last().map_or(0, |n| n.id.index() + 1))
        ];
        for id in &core.core {
            in_core[id.index()] = true;
        }
        let is_core = |id: NodeId| in_core.get(id.index()).copied().unwrap_or(false);
        let core_ids: Vec<NodeId> = core.core.iter().copied().collect();
        let graph = Graph::induced(core_ids, &start.edges);

        let mut r = PhaseReport {
            phase: self.arena.phase(),
            t_start: w.t_start,
            t_end: t,
            n_alive: self.overlay.alive_count(),
            n_byzantine: self.overlay.byzantine_count(),
            honest_alive: self.overlay.records().filter(|r| r.is_honest() && r.joined).count(),
            churned: (self.counters.joins + self.counters.leaves) as usize,
            core_candidates: core.candidates.len(),
            core_size: core.core.len(),
            max_honest_out: self.counters.max_honest_out,
            max_honest_in: self.counters.max_honest_in,
            blacklist_events: self.counters.blacklist_events,
            join_failures: self.counters.join_failures,
            links_established: self.counters.links_established,
            links_dropped: self.counters.links_dropped,
            requests_rejected: self.counters.requests_rejected,
            adversary_actions: self.adversary.actions.total() - self.adversary_mark,
            ..Default::default()
        };
        if !core.core.is_empty() {
            let b = start.byzantine().len() as f64;
            r.kappa = Some((b + r.churned as f64) * self.res.log_n as f64 / core.core.len() as f64);
        }
        if let Ok(est) = conductance_estimate_with(&graph, self.cfg.metrics.spectral()) {
            r.phi_estimate = Some(est.phi);
            r.phi_lower = Some(est.lower);
            r.phi_upper = Some(est.upper);
            r.spectral_iterations = est.iterations;
            r.spectral_converged = est.method != EstimateMethod::SweepUnconverged;
        }
        if graph.len() <= self.cfg.metrics.exact_threshold {
            r.phi_exact = conductance_exact_with_limit(&graph, self.cfg.metrics.exact_threshold).ok();
        }
        r.honest_component_fraction = honest_component_fraction(&self.overlay.snapshot(t)).ok();

        let ws = WalkStats::from_arena(&self.arena, self.counters.blacklist_events);
        r.tokens_initiated = ws.initiated;
        r.tokens_verified = ws.verified;
        r.tokens_returned = ws.returned;
        r.tokens_lost_churn = ws.lost_churn;
        r.tokens_absorbed_byz = ws.absorbed_byz;
        r.tokens_dropped_blacklist = ws.dropped_blacklist;
        r.tokens_in_transit = ws.in_transit;

        let mut endpoints: BTreeMap<NodeId, u64> = BTreeMap::new();
        for (_, tok, fate) in self.arena.iter() {
            if !tok.honest || !is_core(tok.source) {
                continue;
            }
            r.core_tokens += 1;
            if tok.path.iter().any(|&p| !is_core(p)) {
                r.core_tokens_leaked += 1;
                continue;
            }
            if tok.verified {
                r.core_walks_verified += 1;
                if fate == TokenFate::Returned {
                    r.core_walks_returned += 1;
                }
                if let Some(e) = tok.endpoint {
                    *endpoints.entry(e).or_default() += 1;
                }
            }
        }
        r.endpoint_tv = endpoint_uniformity(&endpoints, &graph).ok();
        r
    }

    fn end_of_round(&mut self, t: u64) -> Result<()> {
        for r in self.overlay.records().filter(|r| r.is_honest()) {
            self.counters.max_honest_out = self.counters.max_honest_out.max(r.out_links.len());
            self.counters.max_honest_in = self.counters.max_honest_in.max(r.in_links.len());
        }
        let caps = self.overlay.caps();
        if self.counters.max_honest_out > caps.max_out || self.counters.max_honest_in > caps.max_in {
            return Err(Error::Invariant {
                round: t,
                detail: format!(
                    "honest degree {} out / {} in exceeds caps {} / {}",
                    self.counters.max_honest_out, self.counters.max_honest_in, caps.max_out, caps.max_in
                ),
            });
        }
        let budget = self.cfg.adversary.budget(self.overlay.alive_count());
        let byz = self.overlay.byzantine_count();
        if byz > budget {
            return Err(Error::Invariant {
                round: t,
                detail: format!("{byz} Byzantine nodes exceed budget {budget}"),
            });
        }
        self.stats.max_byzantine = self.stats.max_byzantine.max(byz);
        if self.cfg.metrics.check_invariants {
            self.overlay
                .check_invariants()
                .map_err(|detail| Error::Invariant { round: t, detail })?;
        }
        Ok(())
    }
}
