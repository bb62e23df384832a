//! Fixtures shared by the criterion suites.

use dynex_core::engine::RunConfig;
use dynex_core::metrics::{random_regular_graph, Graph};
use dynex_core::overlay::{Caps, NodeRecord, Overlay};
use dynex_core::rng::{derive_rng, Stream};
use dynex_core::NodeId;

/// Random connected `k`-regular graph, fixed by `seed`.
pub fn regular_graph(n: usize, k: usize, seed: u64) -> Graph {
    random_regular_graph(n, k, &mut derive_rng(seed, Stream::Walk, 0, 0))
}

/// Honest overlay whose links are the edges of `g`.
pub fn overlay_of(g: &Graph) -> Overlay {
    let k = (0..g.len()).map(|v| g.degree(v)).max().unwrap_or(0);
    let mut o = Overlay::new(Caps { max_out: k, max_in: k });
    for v in 0..g.len() {
        o.insert_node(NodeRecord::new(NodeId(v as u32), 0, false));
    }
    for (a, b) in g.edges() {
        o.add_link(NodeId(a as u32), NodeId(b as u32));
    }
    o
}

/// Churned network of stable size `n` with one absorbing Byzantine node.
pub fn absorb_config(n: u64, horizon: u64, seed: u64) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        "seed = {seed}\n[churn]\nlambda = 1.0\nn_stable = {n}\nhorizon = {horizon}\n\
         [adversary]\nbeta = 0.02\ncorruption = {{ kind = \"random_on_join\", p = 1.0 }}\n\
         strategy = {{ kind = \"absorb\" }}\n[metrics]\ncheck_invariants = false\n"
    ))
    .expect("bench config is valid")
}
