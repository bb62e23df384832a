use std::fmt::Write as _;

use serde::Serialize;

/// One analysis row per completed phase window `[t_start, t_end]`.
///
/// Optional measurements are written as empty CSV cells when undefined.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PhaseReport {
    pub phase: u64,
    pub t_start: u64,
    pub t_end: u64,
    pub n_alive: usize,
    pub n_byzantine: usize,
    /// Honest, joined, alive nodes at `t_end`.
    pub honest_alive: usize,
    /// Nodes that joined or left during the window.
    pub churned: usize,
    pub core_candidates: usize,
    pub core_size: usize,
    /// `(|B| + |D|) log2 n / |C|`.
    pub kappa: Option<f64>,
    /// Tokens initiated by core members at the window start.
    pub core_tokens: u64,
    pub phi_estimate: Option<f64>,
    pub phi_lower: Option<f64>,
    pub phi_upper: Option<f64>,
    pub phi_exact: Option<f64>,
    pub spectral_iterations: usize,
    pub spectral_converged: bool,
    pub max_honest_out: usize,
    pub max_honest_in: usize,
    pub honest_component_fraction: Option<f64>,
    pub endpoint_tv: Option<f64>,
    pub tokens_initiated: u64,
    pub tokens_verified: u64,
    pub tokens_returned: u64,
    pub tokens_lost_churn: u64,
    pub tokens_absorbed_byz: u64,
    pub tokens_dropped_blacklist: u64,
    pub tokens_in_transit: u64,
    /// Verified walks whose source, path and endpoint all lie in the core.
    pub core_walks_verified: u64,
    pub core_walks_returned: u64,
    /// Honest tokens from core sources that touched a node outside the core.
    pub core_tokens_leaked: u64,
    pub blacklist_events: u64,
    pub join_failures: u64,
    pub links_established: u64,
    pub links_dropped: u64,
    pub requests_rejected: u64,
    pub adversary_actions: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl PhaseReport {
    pub const CSV_HEADER: &'static str = "phase,t_start,t_end,n_alive,n_byzantine,honest_alive,churned,\
core_candidates,core_size,kappa,core_tokens,phi_estimate,phi_lower,phi_upper,phi_exact,\
spectral_iterations,spectral_converged,max_honest_out,max_honest_in,honest_component_fraction,\
endpoint_tv,tokens_initiated,tokens_verified,tokens_returned,tokens_lost_churn,tokens_absorbed_byz,\
tokens_dropped_blacklist,tokens_in_transit,core_walks_verified,core_walks_returned,core_tokens_leaked,\
blacklist_events,join_failures,links_established,links_dropped,requests_rejected,adversary_actions";

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},",
            self.phase,
            self.t_start,
            self.t_end,
            self.n_alive,
            self.n_byzantine,
            self.honest_alive,
            self.churned,
            self.core_candidates,
            self.core_size,
            opt(self.kappa),
            self.core_tokens,
            opt(self.phi_estimate),
            opt(self.phi_lower),
            opt(self.phi_upper),
            opt(self.phi_exact),
            self.spectral_iterations,
            self.spectral_converged,
            self.max_honest_out,
            self.max_honest_in,
            opt(self.honest_component_fraction),
            opt(self.endpoint_tv),
        );
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.tokens_initiated,
            self.tokens_verified,
            self.tokens_returned,
            self.tokens_lost_churn,
            self.tokens_absorbed_byz,
            self.tokens_dropped_blacklist,
            self.tokens_in_transit,
            self.core_walks_verified,
            self.core_walks_returned,
            self.core_tokens_leaked,
            self.blacklist_events,
            self.join_failures,
            self.links_established,
            self.links_dropped,
            self.requests_rejected,
            self.adversary_actions,
        );
        s
    }

    /// Fraction of in-core verified walks whose token made it back.
    pub fn core_return_fraction(&self) -> Option<f64> {
        (self.core_walks_verified > 0).then(|| self.core_walks_returned as f64 / self.core_walks_verified as f64)
    }

    /// Numeric columns by name, for aggregation. Undefined values are `None`.
    pub fn numeric_columns(&self) -> Vec<(&'static str, Option<f64>)> {
        let header: Vec<&'static str> = Self::CSV_HEADER.split(',').collect();
        let row = self.csv_row();
        header
            .into_iter()
            .zip(row.split(','))
            .map(|(h, v)| {
                let val = match v {
                    "true" => Some(1.0),
                    "false" => Some(0.0),
                    "" => None,
                    x => x.parse().ok(),
                };
                (h, val)
            })
            .collect()
    }
}

pub fn write_csv(reports: &[PhaseReport]) -> String {
    let mut out = String::from(PhaseReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
