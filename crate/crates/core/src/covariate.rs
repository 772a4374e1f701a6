//! The HnA covariate: HIV prevalence times the share of infected people not
//! on ART, and its period-to-period changes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{CountrySeries, Period};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HnaSeries {
    pub epidemic: bool,
    pub values: BTreeMap<Period, f64>,
    /// `values[t] - values[t-1]`, keyed by `t`.
    pub diffs: BTreeMap<Period, f64>,
}

/// Which HnA change is paired with the gain from `t` to `t+1`.
///
/// `Lag1` uses `HnA[t] - HnA[t-1]`; `Lag0` uses `HnA[t+1] - HnA[t]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateLag {
    Lag0,
    #[default]
    Lag1,
}

impl CovariateLag {
    pub fn from_int(v: u8) -> Result<Self> {
        match v {
            0 => Ok(CovariateLag::Lag0),
            1 => Ok(CovariateLag::Lag1),
            _ => Err(Error::validation(format!("covariate lag must be 0 or 1, got {v}"))),
        }
    }

    pub fn as_int(self) -> u8 {
        match self {
            CovariateLag::Lag0 => 0,
            CovariateLag::Lag1 => 1,
        }
    }

    /// Key into `diffs` for the gain starting at `t`.
    pub fn diff_key(self, t: Period) -> Period {
        match self {
            CovariateLag::Lag0 => t.next(),
            CovariateLag::Lag1 => t,
        }
    }
}

/// What to do with an epidemic-country observation whose regressor is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingCovariate {
    /// Keep the observation with regressor 0.
    #[default]
    Zero,
    /// Drop the observation from the likelihood.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regressor {
    Value(f64),
    Missing,
}

#[inline]
pub fn hna(prevalence: f64, coverage: f64) -> f64 {
    prevalence * (100.0 - coverage)
}

pub fn build_hna(cs: &CountrySeries) -> Result<HnaSeries> {
    let mut values = BTreeMap::new();
    if cs.epidemic {
        for (&p, &prev) in &cs.hiv_prev {
            // No ART row means no treatment available in that period.
            let art = cs.art_cov.get(&p).copied().unwrap_or(0.0);
            for (what, v) in [("HIV prevalence", prev), ("ART coverage", art)] {
                if !(0.0..=100.0).contains(&v) {
                    return Err(Error::validation(format!(
                        "{} {p}: {what} {v} outside [0, 100]",
                        cs.code
                    )));
                }
            }
            values.insert(p, hna(prev, art));
        }
    } else {
        values.extend(cs.e0.keys().map(|&p| (p, 0.0)));
    }
    let diffs = differences(&values);
    Ok(HnaSeries {
        epidemic: cs.epidemic,
        values,
        diffs,
    })
}

/// First differences `v[t] - v[t-1]` keyed by `t`, where both exist.
pub fn differences(values: &BTreeMap<Period, f64>) -> BTreeMap<Period, f64> {
    values
        .iter()
        .filter_map(|(&t, &v)| values.get(&t.prev()).map(|&u| (t, v - u)))
        .collect()
}

/// Regressor paired with the gain from `t` to `t+1`.
pub fn covariate_for_observation(h: &HnaSeries, t: Period, lag: CovariateLag) -> Regressor {
    if !h.epidemic {
        return Regressor::Value(0.0);
    }
    match h.diffs.get(&lag.diff_key(t)) {
        Some(&d) => Regressor::Value(d),
        None => Regressor::Missing,
    }
}
