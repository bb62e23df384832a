//! Runs the walk protocol alone on a fixed overlay with honest nodes only.
//! Used to measure mixing and return behavior without churn or topology
//! maintenance in the way.

use crate::overlay::{Overlay, RoundMailbox};
use crate::rng::{derive_rng, Stream};
use crate::NodeId;

use super::{RoundReport, TokenArena, TokenFate, WalkBatch, WalkParams, WalkState, WalkStats};

pub struct StaticHarness {
    pub overlay: Overlay,
    pub params: WalkParams,
    pub arena: TokenArena,
    pub states: Vec<WalkState>,
    mailbox: RoundMailbox<WalkBatch>,
    seed: u64,
    round: u64,
}

/// What one phase on a static overlay produced.
#[derive(Clone, Debug, Default)]
pub struct PhaseOutcome {
    /// Endpoint of every verified token.
    pub endpoints: Vec<NodeId>,
    /// Rounds from phase start until each token was verified.
    pub verify_rounds: Vec<u64>,
    /// Rounds from verification until the source received the token back.
    pub return_rounds: Vec<u64>,
    pub rounds_run: u64,
    pub stats: WalkStats,
}

impl StaticHarness {
    pub fn new(overlay: Overlay, params: WalkParams, seed: u64) -> Self {
        let states = (0..overlay.id_bound()).map(|_| WalkState::new()).collect();
        Self {
            overlay,
            params,
            arena: TokenArena::new(),
            states,
            mailbox: RoundMailbox::new(),
            seed,
            round: 0,
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// Resets all nodes and lets each start `numtokens` tokens.
    pub fn start_phase(&mut self, phase: u64) -> usize {
        self.arena.reset(phase);
        let mut started = 0;
        for id in self.overlay.ids() {
            let st = &mut self.states[id.index()];
            st.phase_reset();
            let nbrs = self.overlay.get(id).unwrap().neighbors();
            let mut rng = derive_rng(self.seed, Stream::Initiate, id.0 as u64, self.round);
            started += st.initiate_phase_tokens(id, &nbrs, &self.params, &mut self.arena, &mut rng);
        }
        started
    }

    /// One synchronous round over every node.
    pub fn step(&mut self) -> Vec<(NodeId, RoundReport)> {
        self.round += 1;
        let delivery = self.mailbox.deliver(&self.overlay);
        for env in &delivery.discarded {
            for &t in &env.msg.forward {
                self.arena.settle(t, TokenFate::LostChurn);
            }
        }
        let mut reports = Vec::new();
        let empty = Vec::new();
        for id in self.overlay.ids() {
            let inbox = delivery.inboxes.get(&id).unwrap_or(&empty);
            let rec = self.overlay.get(id).unwrap();
            let nbrs = rec.neighbors();
            let mut blacklist = rec.blacklist.clone();
            let mut rng = derive_rng(self.seed, Stream::Walk, id.0 as u64, self.round);
            let report = self.states[id.index()].step(
                id,
                inbox,
                &mut blacklist,
                &nbrs,
                &self.overlay,
                &mut self.mailbox,
                &self.params,
                &mut self.arena,
                &mut rng,
            );
            self.overlay.get_mut(id).unwrap().blacklist = blacklist;
            reports.push((id, report));
        }
        reports
    }

    /// Starts a phase and runs until nothing is in flight or queued, or
    /// `max_rounds` elapse.
    pub fn run_phase(&mut self, phase: u64, max_rounds: u64) -> PhaseOutcome {
        self.start_phase(phase);
        let start = self.round;
        let mut verified_at = vec![u64::MAX; 0];
        let mut out = PhaseOutcome::default();
        for _ in 0..max_rounds {
            let reports = self.step();
            let now = self.round - start;
            if verified_at.len() < self.arena.len() {
                verified_at.resize(self.arena.len(), u64::MAX);
            }
            for (_, r) in &reports {
                for v in &r.verified {
                    out.endpoints.push(v.endpoint);
                    out.verify_rounds.push(now);
                    let idx = self.token_index(v.token_id);
                    verified_at[idx] = now;
                }
            }
            for (id, r) in &reports {
                if r.returns_completed > 0 {
                    // Returns completing this round at `id`: match them by the
                    // tail of its verified list.
                    let list = self.states[id.index()].verified_list();
                    for e in &list[list.len() - r.returns_completed..] {
                        let idx = self.token_index(e.token_id);
                        out.return_rounds.push(now - verified_at[idx]);
                    }
                }
            }
            let queued: usize = self
                .states
                .iter()
                .map(|s| s.queued_forward() + s.queued_returns())
                .sum();
            if self.mailbox.pending() == 0 && queued == 0 {
                break;
            }
        }
        out.rounds_run = self.round - start;
        out.stats = WalkStats::from_arena(&self.arena, 0);
        out
    }

    fn token_index(&self, token_id: u64) -> usize {
        let first = self.arena.get(0).map_or(0, |t| t.token_id);
        (token_id - first) as usize
    }
}
