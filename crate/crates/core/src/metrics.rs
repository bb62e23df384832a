//! Analysis-side measurements over immutable snapshots: conductance (exact
//! enumeration for small graphs, spectral sweep at scale), core extraction,
//! honest-component statistics, token-endpoint uniformity, and the per-phase
//! report row.

mod conductance;
mod core_set;
mod graph;
mod report;

pub use conductance::{
    conductance_estimate, conductance_estimate_with, conductance_exact, conductance_exact_with_limit, EstimateMethod,
    SpectralEstimate, SpectralOptions,
};
pub use core_set::{core_extract, CoreExtraction};
pub use graph::{random_regular_graph, Graph};
pub use report::{write_csv, PhaseReport};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::overlay::OverlaySnapshot;
use crate::NodeId;

/// Default vertex limit for exhaustive conductance.
pub const EXACT_THRESHOLD: usize = 16;

/// Minimum number of endpoints for a uniformity measurement.
pub const MIN_ENDPOINT_SAMPLE: u64 = 1000;

/// A measurement that has no value for the given input.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Undefined {
    #[error("graph has {0} vertices; at least 2 are needed")]
    TooFewVertices(usize),
    #[error("graph has {n} vertices, above the exact limit of {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("only {0} samples")]
    SampleTooSmall(u64),
    #[error("graph has no edges")]
    NoEdges,
    #[error("no honest nodes")]
    NoHonestNodes,
}

/// Total-variation distance between the empirical endpoint distribution
/// `counts` (keyed by node, entries outside `graph` ignored) and the
/// degree-stationary distribution `deg(u) / 2m` of `graph`.
pub fn endpoint_uniformity(counts: &BTreeMap<NodeId, u64>, graph: &Graph) -> Result<f64, Undefined> {
    let mut hist = vec![0u64; graph.len()];
    for (id, c) in counts {
        if let Some(i) = graph.index_of(*id) {
            hist[i] += c;
        }
    }
    tv_from_histogram(&hist, graph)
}

/// [`endpoint_uniformity`] with the histogram indexed by vertex position.
pub fn tv_from_histogram(hist: &[u64], graph: &Graph) -> Result<f64, Undefined> {
    assert_eq!(hist.len(), graph.len());
    let total: u64 = hist.iter().sum();
    if total < MIN_ENDPOINT_SAMPLE {
        return Err(Undefined::SampleTooSmall(total));
    }
    let vol = graph.total_volume();
    if vol == 0 {
        return Err(Undefined::NoEdges);
    }
    let tv = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| (c as f64 / total as f64 - graph.degree(i) as f64 / vol as f64).abs())
        .sum::<f64>()
        / 2.0;
    Ok(tv)
}

/// Fraction of honest, joined, alive nodes inside the largest connected
/// component of the honest-induced subgraph.
pub fn honest_component_fraction(snapshot: &OverlaySnapshot) -> Result<f64, Undefined> {
    let g = Graph::from_snapshot(snapshot, |n| n.is_honest() && n.joined);
    if g.is_empty() {
        return Err(Undefined::NoHonestNodes);
    }
    let largest = g.components().iter().map(Vec::len).max().unwrap_or(0);
    Ok(largest as f64 / g.len() as f64)
}
