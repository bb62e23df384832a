//! Protocol constants. [`ProtocolParams`] is what a config file carries;
//! [`ProtocolParams::resolve`] turns it into concrete walk and construction
//! parameters for a given stable network size.

use serde::{Deserialize, Serialize};

use crate::construct::ConstructParams;
use crate::error::{config_err, Result};
use crate::walk::WalkParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    /// Base degree constant. Honest nodes hold at most `3d` outgoing and
    /// `6d` incoming links.
    pub d: usize,
    /// Phase length multiplier. `None` picks the smallest value with
    /// `eta * log_n >= 2 * rw_length + 2`.
    pub eta: Option<u64>,
    /// Token budget multiplier: `numtokens = max(1, round(walk_scale * log_n^3))`.
    pub walk_scale: f64,
    /// Per-edge cap multiplier: `cap = a * numtokens`.
    pub a: usize,
    /// Walk length multiplier: `rw_length = c * log_n`.
    pub c: usize,
    /// Join retry cap. `None` means `2 * log_n`.
    pub max_join_retries: Option<u32>,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            d: 4,
            eta: None,
            walk_scale: 0.125,
            a: 4,
            c: 4,
            max_join_retries: None,
        }
    }
}

/// `⌈log₂ n⌉`, never below 1.
pub fn ceil_log2(n: u64) -> u64 {
    if n <= 2 {
        1
    } else {
        64 - u64::from((n - 1).leading_zeros())
    }
}

/// Fully resolved constants for one network size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolved {
    pub log_n: u64,
    pub walk: WalkParams,
    pub construct: ConstructParams,
}

impl Resolved {
    pub fn phase_len(&self) -> u64 {
        self.construct.eta * self.log_n
    }
}

impl ProtocolParams {
    pub fn resolve(&self, n_stable: u64) -> Result<Resolved> {
        if self.d == 0 {
            return Err(config_err("d must be at least 1"));
        }
        if self.a == 0 || self.c == 0 {
            return Err(config_err("a and c must be at least 1"));
        }
        if !(self.walk_scale > 0.0 && self.walk_scale <= 1.0) {
            return Err(config_err(format!(
                "walk_scale must lie in (0, 1], got {}",
                self.walk_scale
            )));
        }
        let log_n = ceil_log2(n_stable);
        let numtokens = ((self.walk_scale * (log_n as f64).powi(3)).round() as usize).max(1);
        let rw_length = self.c * log_n as usize;
        let walk = WalkParams {
            numtokens,
            cap: self.a * numtokens,
            rw_length,
            scale: self.walk_scale,
        };
        let min_phase = 2 * rw_length as u64 + 2;
        let eta = match self.eta {
            Some(e) => e,
            None => min_phase.div_ceil(log_n),
        };
        if eta * log_n < 2 * rw_length as u64 {
            return Err(config_err(format!(
                "phase length {} is shorter than twice the walk length {}",
                eta * log_n,
                rw_length
            )));
        }
        let construct = ConstructParams {
            d: self.d,
            eta,
            max_join_retries: self.max_join_retries.unwrap_or(2 * log_n as u32).max(1),
        };
        walk.validate()?;
        Ok(Resolved { log_n, walk, construct })
    }
}
