use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::updates::SweepStats;

/// Sampler health summary of one fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub country_slice_updates: u64,
    pub country_slice_stalls: u64,
    pub world_mean_acceptance: f64,
    pub hierarchy_slice_stalls: u64,
    pub omega_slice_stalls: u64,
    /// Potential scale reduction factor per scalar parameter; empty for one chain.
    pub rhat: BTreeMap<String, f64>,
}

impl Diagnostics {
    pub(crate) fn from_stats(stats: &SweepStats, rhat: BTreeMap<String, f64>) -> Self {
        Diagnostics {
            country_slice_updates: stats.country_updates,
            country_slice_stalls: stats.country_stalls,
            world_mean_acceptance: if stats.mean_proposals == 0 {
                0.0
            } else {
                stats.mean_accepts as f64 / stats.mean_proposals as f64
            },
            hierarchy_slice_stalls: stats.hyper_stalls,
            omega_slice_stalls: stats.omega_stalls,
            rhat,
        }
    }

    /// Largest finite R-hat over all parameters.
    pub fn max_rhat(&self) -> Option<f64> {
        self.rhat.values().copied().filter(|v| v.is_finite()).reduce(f64::max)
    }
}

/// Gelman-Rubin potential scale reduction for equal-length chains.
///
/// Returns 1 for a parameter that is constant across all draws and NaN with
/// fewer than two chains or two draws per chain.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    if m < 2 {
        return f64::NAN;
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| c[..n].iter().sum::<f64>() / n as f64).collect();
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = n as f64 / (m - 1) as f64 * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c[..n].iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / m as f64;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1) as f64 / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}
