//! Collaborative-set estimation by thresholded majority vote.
//!
//! Client `k` votes for pair `{j, k}` being "clean" when the orthogonal
//! block norm is at most `tau`. Clients whose clean fraction reaches `alpha`
//! form the collaborative set.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::contrast::{block_norms, pair_index, StackedPairMatrix};
use crate::error::{ClairError, Result};

pub const DEFAULT_EPS_ABS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    Fixed(f64),
    LargestGap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub alpha: f64,
    pub tau: TauMode,
    pub eps_abs: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tau: TauMode::LargestGap,
            eps_abs: DEFAULT_EPS_ABS,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.alpha) {
            return Err(ClairError::Config(format!("alpha must lie in [0.5, 1), got {}", self.alpha)));
        }
        if let TauMode::Fixed(t) = self.tau {
            if !(t >= 0.0) {
                return Err(ClairError::Config(format!("fixed tau must be nonnegative, got {t}")));
            }
        }
        if !(self.eps_abs >= 0.0) {
            return Err(ClairError::Config(format!("eps_abs must be nonnegative, got {}", self.eps_abs)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub collaborative_set: BTreeSet<usize>,
    pub tau_used: f64,
    pub vote_fractions: Vec<f64>,
    pub block_norms: Vec<f64>,
}

/// Midpoint of the widest gap between consecutive sorted norms.
///
/// When every norm is below `eps_abs` the threshold is `max + eps_abs`, which
/// marks every block as clean. A single norm has no gap and is treated the
/// same way. Equal gaps resolve to the lowest one.
pub fn largest_gap_threshold(norms: &[f64], eps_abs: f64) -> Result<f64> {
    if norms.is_empty() {
        return Err(ClairError::Config("largest-gap threshold needs at least one norm".into()));
    }
    if norms.iter().any(|n| !n.is_finite()) {
        return Err(ClairError::Numeric("non-finite block norm".into()));
    }
    let mut sorted = norms.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = *sorted.last().unwrap();
    if max < eps_abs || sorted.len() == 1 {
        return Ok(max + eps_abs);
    }
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for i in 0..sorted.len() - 1 {
        let gap = sorted[i + 1] - sorted[i];
        if gap > best_gap {
            best_gap = gap;
            best = i;
        }
    }
    Ok(0.5 * (sorted[best] + sorted[best + 1]))
}

/// Majority vote over precomputed block norms.
pub fn vote_from_norms(norms: Vec<f64>, clients: usize, cfg: &DetectionConfig) -> Result<DetectionResult> {
    cfg.validate()?;
    if clients < 2 {
        return Err(ClairError::InsufficientClients(clients));
    }
    let expected = crate::contrast::pair_count(clients);
    if norms.len() != expected {
        return Err(ClairError::Dimension {
            expected: format!("{expected} block norms"),
            found: format!("{} block norms", norms.len()),
        });
    }
    let tau = match cfg.tau {
        TauMode::Fixed(t) => t,
        TauMode::LargestGap => largest_gap_threshold(&norms, cfg.eps_abs)?,
    };
    let mut vote_fractions = Vec::with_capacity(clients);
    let mut collaborative_set = BTreeSet::new();
    for k in 0..clients {
        let mut clean = 0usize;
        for j in (0..clients).filter(|&j| j != k) {
            if norms[pair_index(j, k, clients)?.g] <= tau {
                clean += 1;
            }
        }
        let fraction = clean as f64 / (clients - 1) as f64;
        if fraction >= cfg.alpha {
            collaborative_set.insert(k);
        }
        vote_fractions.push(fraction);
    }
    Ok(DetectionResult {
        collaborative_set,
        tau_used: tau,
        vote_fractions,
        block_norms: norms,
    })
}

/// Estimate the collaborative set from the orthogonal-complement contrasts.
pub fn vote_set(orthogonal: &StackedPairMatrix, cfg: &DetectionConfig) -> Result<DetectionResult> {
    vote_from_norms(block_norms(orthogonal), orthogonal.clients(), cfg)
}
