//! Error and detection metrics shared by the simulation and the reporter.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::contrast::WeightMatrix;
use crate::error::{ClairError, Result};

/// Squared Frobenius distance.
pub fn frob_sq_error(estimate: &WeightMatrix, truth: &WeightMatrix) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(ClairError::dims(truth.shape(), estimate.shape()));
    }
    Ok((estimate - truth).norm_squared())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    /// `(TP + TN) / K`.
    pub accuracy: f64,
    /// `TN / |contaminated|`; 1 when nobody is contaminated.
    pub recall: f64,
    /// True when `recall` was set by the empty-contamination convention.
    pub recall_by_convention: bool,
}

/// TP counts retained benign clients, TN counts excluded contaminated clients.
pub fn set_metrics(estimated: &BTreeSet<usize>, truth: &BTreeSet<usize>, clients: usize) -> SetMetrics {
    let tp = estimated.intersection(truth).count();
    let contaminated: Vec<usize> = (0..clients).filter(|k| !truth.contains(k)).collect();
    let tn = contaminated.iter().filter(|k| !estimated.contains(k)).count();
    let accuracy = (tp + tn) as f64 / clients as f64;
    if contaminated.is_empty() {
        SetMetrics {
            accuracy,
            recall: 1.0,
            recall_by_convention: true,
        }
    } else {
        SetMetrics {
            accuracy,
            recall: tn as f64 / contaminated.len() as f64,
            recall_by_convention: false,
        }
    }
}

/// Ideal MSE ratio of refined to local error for a collaborative set of
/// `set_size` clients with isotropic noise: `1 - ((C-1)/C) ((p-r)/p)`.
pub fn oracle_gain_factor(set_size: usize, p: usize, r: usize) -> f64 {
    let c = set_size as f64;
    let p = p as f64;
    let r = r as f64;
    1.0 - ((c - 1.0) / c) * ((p - r) / p)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub count: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
                sd: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            median: median(values),
            sd: var.sqrt(),
            count: n,
        }
    }

    pub fn standard_error(&self) -> f64 {
        self.sd / (self.count as f64).sqrt()
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-method error summary. `all_clients` pools every client's error;
/// `benign_clients` pools only the truly benign ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub all_clients: Stats,
    pub benign_clients: Stats,
    pub replicates: usize,
}
