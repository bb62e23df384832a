use std::collections::BTreeSet;

use crate::overlay::OverlaySnapshot;
use crate::NodeId;

/// Result of core extraction for one phase window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoreExtraction {
    /// Honest nodes present and joined at the window start and still alive
    /// at its end.
    pub candidates: BTreeSet<NodeId>,
    /// Survivors of peeling.
    pub core: BTreeSet<NodeId>,
    pub peel_rounds: usize,
}

impl CoreExtraction {
    pub fn peeled(&self) -> usize {
        self.candidates.len() - self.core.len()
    }
}

/// Constructive core for the window starting at `start`.
///
/// Candidates are honest nodes of the start snapshot that are still alive at
/// the window end. Peeling then repeatedly removes any candidate with no
/// links or with more than half of its start-snapshot links into Byzantine,
/// departed, or already peeled nodes, until nothing changes.
pub fn core_extract(start: &OverlaySnapshot, alive_at_end: impl Fn(NodeId) -> bool) -> CoreExtraction {
    let candidates: BTreeSet<NodeId> = start
        .nodes
        .iter()
        .filter(|n| n.is_honest() && n.joined && alive_at_end(n.id))
        .map(|n| n.id)
        .collect();
    let mut core = candidates.clone();
    let mut peel_rounds = 0;
    loop {
        let drop: Vec<NodeId> = core
            .iter()
            .copied()
            .filter(|&id| {
                let rec = start.node(id).expect("candidate is in the start snapshot");
                let deg = rec.degree();
                let bad = rec
                    .out_links
                    .iter()
                    .chain(rec.in_links.iter())
                    .filter(|v| !core.contains(v))
                    .count();
                deg == 0 || 2 * bad > deg
            })
            .collect();
        if drop.is_empty() {
            break;
        }
        peel_rounds += 1;
        for id in drop {
            core.remove(&id);
        }
    }
    CoreExtraction {
        candidates,
        core,
        peel_rounds,
    }
}
