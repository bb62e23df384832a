use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::overlay::{NodeRecord, OverlaySnapshot};
use crate::NodeId;

/// Simple undirected graph over a dense vertex range, remembering which
/// node each vertex stands for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    ids: Vec<NodeId>,
    adj: Vec<Vec<usize>>,
    index: HashMap<NodeId, usize>,
}

impl Graph {
    /// Vertices `0..n` labelled with `NodeId(i)`. Self-loops and repeated
    /// edges are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let ids = (0..n as u32).map(NodeId).collect();
        Self::from_labelled(ids, edges.iter().copied())
    }

    fn from_labelled(ids: Vec<NodeId>, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let n = ids.len();
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (a, b) in edges {
            if a != b {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        let index = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        Self {
            ids,
            adj: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            index,
        }
    }

    /// Graph induced by the snapshot nodes accepted by `keep`.
    pub fn from_snapshot(s: &OverlaySnapshot, keep: impl Fn(&NodeRecord) -> bool) -> Self {
        let ids: Vec<NodeId> = s.nodes.iter().filter(|n| keep(n)).map(|n| n.id).collect();
        Self::induced(ids, &s.edges)
    }

    /// Graph on `ids` keeping only edges with both endpoints in `ids`.
    pub fn induced(ids: Vec<NodeId>, edges: &[(NodeId, NodeId)]) -> Self {
        let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let es: Vec<(usize, usize)> = edges
            .iter()
            .filter_map(|(a, b)| Some((*index.get(a)?, *index.get(b)?)))
            .collect();
        Self::from_labelled(ids, es)
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn id(&self, v: usize) -> NodeId {
        self.ids[v]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn edge_count(&self) -> usize {
        self.total_volume() / 2
    }

    pub fn total_volume(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (a, ns) in self.adj.iter().enumerate() {
            out.extend(ns.iter().filter(|&&b| a < b).map(|&b| (a, b)));
        }
        out
    }

    /// Connected components as vertex lists, each sorted, ordered by their
    /// smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            stack.push(s);
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &self.adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.len() <= 1 || self.components().len() == 1
    }

    /// Subgraph induced by the given vertex positions.
    pub fn subgraph(&self, vertices: &[usize]) -> Graph {
        let ids: Vec<NodeId> = vertices.iter().map(|&v| self.ids[v]).collect();
        let pos: HashMap<usize, usize> = vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut es = Vec::new();
        for &v in vertices {
            for &w in &self.adj[v] {
                if v < w {
                    if let Some(&j) = pos.get(&w) {
                        es.push((pos[&v], j));
                    }
                }
            }
        }
        Self::from_labelled(ids, es)
    }
}

/// Uniform-ish random simple connected `k`-regular graph on `n` vertices by
/// the pairing model with rejection.
pub fn random_regular_graph<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Graph {
    assert!(
        (n * k).is_multiple_of(2) && k < n,
        "no {k}-regular graph on {n} vertices"
    );
    loop {
        let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, k)).collect();
        points.shuffle(rng);
        let mut seen = BTreeSet::new();
        let mut ok = true;
        for pair in points.chunks(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !seen.insert((a, b)) {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let edges: Vec<(usize, usize)> = seen.into_iter().collect();
        let g = Graph::from_edges(n, &edges);
        if g.is_connected() {
            return g;
        }
    }
}
