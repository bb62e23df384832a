//! Entry manager: a size-capped list of prior joiners with uniform random
//! eviction, queried once per join attempt for `3d` candidates.
//!
//! The manager never learns whether listed nodes are alive or honest, and it
//! has no API through which joined nodes could contact it again.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::NodeId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryState {
    nodes_list: Vec<NodeId>,
    capacity: usize,
    #[serde(skip)]
    members: HashSet<NodeId>,
}

impl EntryState {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "entry manager capacity must be positive");
        Self {
            nodes_list: Vec::with_capacity(capacity),
            capacity,
            members: HashSet::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes_list.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes_list
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.members.contains(&u)
    }

    /// Adds `u`, evicting a uniformly random resident first when the list is
    /// full. Returns the evicted identifier. Registering a resident again is
    /// a no-op.
    pub fn register<R: Rng + ?Sized>(&mut self, u: NodeId, rng: &mut R) -> Option<NodeId> {
        if self.members.contains(&u) {
            return None;
        }
        let evicted = if self.nodes_list.len() >= self.capacity {
            let pos = rng.random_range(0..self.nodes_list.len());
            let gone = self.nodes_list.swap_remove(pos);
            self.members.remove(&gone);
            Some(gone)
        } else {
            None
        };
        self.nodes_list.push(u);
        self.members.insert(u);
        evicted
    }

    /// Samples `min(k, |list \ {u}|)` distinct identifiers uniformly without
    /// replacement, never returning the querying node itself.
    pub fn query<R: Rng + ?Sized>(&self, u: NodeId, k: usize, rng: &mut R) -> Vec<NodeId> {
        let pool: Vec<NodeId> = if self.members.contains(&u) {
            self.nodes_list.iter().copied().filter(|&x| x != u).collect()
        } else {
            self.nodes_list.clone()
        };
        let take = k.min(pool.len());
        sample(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("entry state serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn filled(n: usize, cap: usize) -> (EntryState, SimRng) {
        let mut rng = SimRng::seed_from_u64(5);
        let mut e = EntryState::new(cap);
        for i in 0..n {
            e.register(NodeId(i as u32), &mut rng);
        }
        (e, rng)
    }

    #[test]
    fn below_capacity_no_eviction() {
        let (mut e, mut rng) = filled(9, 10);
        assert_eq!(e.register(NodeId(100), &mut rng), None);
        assert_eq!(e.len(), 10);
    }

    #[test]
    fn at_capacity_evicts_exactly_one() {
        let (mut e, mut rng) = filled(10, 10);
        let gone = e.register(NodeId(100), &mut rng);
        assert!(gone.is_some());
        assert_eq!(e.len(), 10);
        assert!(!e.contains(gone.unwrap()));
        assert!(e.contains(NodeId(100)));
    }

    #[test]
    fn duplicate_registration_is_noop() {
        let (mut e, mut rng) = filled(3, 10);
        assert_eq!(e.register(NodeId(1), &mut rng), None);
        assert_eq!(e.len(), 3);
    }

    #[test]
    fn empty_list_gives_empty_candidates() {
        let e = EntryState::new(10);
        let mut rng = SimRng::seed_from_u64(1);
        assert!(e.query(NodeId(0), 12, &mut rng).is_empty());
    }

    #[test]
    fn undersized_list_returns_everything() {
        let (e, mut rng) = filled(2, 10);
        let mut got = e.query(NodeId(50), 12, &mut rng);
        got.sort();
        assert_eq!(got, vec![NodeId(0), NodeId(1)]);
    }

    #[test]
    fn query_excludes_self_and_is_distinct() {
        let (e, mut rng) = filled(20, 20);
        for _ in 0..50 {
            let got = e.query(NodeId(3), 12, &mut rng);
            assert_eq!(got.len(), 12);
            assert!(!got.contains(&NodeId(3)));
            let set: HashSet<_> = got.iter().collect();
            assert_eq!(set.len(), 12);
        }
    }

    #[test]
    fn marked_resident_survives_about_one_over_e() {
        // Each insertion at capacity n evicts a given resident w.p. 1/n, so a
        // marked node survives n insertions w.p. (1 - 1/n)^n.
        let n = 50usize;
        let trials = 4000;
        let mut rng = SimRng::seed_from_u64(99);
        let mut survived = 0;
        for _ in 0..trials {
            let mut e = EntryState::new(n);
            for i in 0..n {
                e.register(NodeId(i as u32), &mut rng);
            }
            for j in 0..n {
                e.register(NodeId((n + j) as u32), &mut rng);
            }
            if e.contains(NodeId(0)) {
                survived += 1;
            }
        }
        let p = survived as f64 / trials as f64;
        let expect = (1.0 - 1.0 / n as f64).powi(n as i32);
        let se = (expect * (1.0 - expect) / trials as f64).sqrt();
        assert!((p - expect).abs() < 4.0 * se, "p={p} expected {expect}");
    }
}
