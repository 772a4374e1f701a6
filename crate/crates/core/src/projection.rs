//! Forward simulation of life expectancy from posterior draws.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariate::{build_hna, CovariateLag};
use crate::data::{write_text, CountrySeries, Period};
use crate::double_logistic::gain;
use crate::error::{Error, Result};
use crate::mcmc::PosteriorSet;
use crate::rng;
use crate::trajectories::{sample_trajectory, CovariateTrajectorySet};
use crate::variance::VarianceFunction;

pub const DEFAULT_QUANTILES: [f64; 5] = [0.025, 0.1, 0.5, 0.9, 0.975];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Last projected period.
    pub horizon: Period,
    pub draws_per_sample: usize,
    pub seed: u64,
    pub quantiles: Vec<f64>,
    pub floor: f64,
    pub cap: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            horizon: Period::containing(2095),
            draws_per_sample: 1,
            seed: 1,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            floor: 20.0,
            cap: 120.0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws_per_sample == 0 {
            return Err(Error::validation("draws per posterior sample must be at least 1"));
        }
        if self.quantiles.is_empty() {
            return Err(Error::validation("at least one quantile is required"));
        }
        let ok = self.quantiles.iter().all(|q| *q > 0.0 && *q < 1.0)
            && self.quantiles.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::validation("quantiles must be strictly increasing within (0, 1)"));
        }
        if !(self.floor < self.cap) {
            return Err(Error::validation("life expectancy floor must be below the cap"));
        }
        Ok(())
    }
}

/// Per-period quantiles of simulated trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFan {
    pub probs: Vec<f64>,
    /// One value per probability, in `probs` order.
    pub rows: BTreeMap<Period, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub country: String,
    /// Last observed period the simulation starts from.
    pub start: Period,
    pub start_e0: f64,
    /// Projected periods, `start + 1 ..= horizon`.
    pub periods: Vec<Period>,
    /// Simulation x period.
    pub trajectories: Vec<Vec<f64>>,
    pub fan: QuantileFan,
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile_fan(trajectories: &[Vec<f64>], periods: &[Period], probs: &[f64]) -> Result<QuantileFan> {
    if trajectories.len() < 2 {
        return Err(Error::validation("a quantile fan needs at least two trajectories"));
    }
    let mut rows = BTreeMap::new();
    let mut col = vec![0.0; trajectories.len()];
    for (j, &p) in periods.iter().enumerate() {
        for (c, t) in col.iter_mut().zip(trajectories) {
            *c = t[j];
        }
        col.sort_by(f64::total_cmp);
        let mut q: Vec<f64> = probs.iter().map(|&pr| quantile_sorted(&col, pr)).collect();
        // Interpolation can break ties by one ulp; keep the fan monotone.
        for i in 1..q.len() {
            q[i] = q[i].max(q[i - 1]);
        }
        rows.insert(p, q);
    }
    Ok(QuantileFan {
        probs: probs.to_vec(),
        rows,
    })
}

/// Simulates `posterior.len() * cfg.draws_per_sample` trajectories for one country.
///
/// Each simulation draws one covariate path uniformly from `cts` and keeps
/// it for the whole horizon. Under the one-period lag the first step uses
/// the last observed HnA change, later steps the sampled path.
pub fn project_country(
    cs: &CountrySeries,
    posterior: &PosteriorSet,
    cts: &CovariateTrajectorySet,
    vf: &VarianceFunction,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult> {
    cfg.validate()?;
    if posterior.is_empty() {
        return Err(Error::validation("posterior has no draws"));
    }
    if cts.is_empty() {
        return Err(Error::validation(format!("{}: no covariate trajectories", cs.code)));
    }
    let c = posterior
        .country_index(&cs.code)
        .ok_or_else(|| Error::validation(format!("country {} is not in the posterior", cs.code)))?;
    let start = cs
        .last_usable_period()
        .ok_or_else(|| Error::validation(format!("{}: no usable life expectancy", cs.code)))?;
    let start_e0 = cs.e0[&start];
    if cfg.horizon <= start {
        return Err(Error::validation(format!(
            "{}: horizon {} is not after the last observed period {start}",
            cs.code, cfg.horizon
        )));
    }
    let periods: Vec<Period> = start.next().range_to(cfg.horizon).collect();
    let lag = posterior.meta.lag;
    let consts = posterior.meta.consts;

    // Regressor for each step `t -> t+1`, as a lookup into the sampled path.
    let observed_first = match lag {
        CovariateLag::Lag1 => build_hna(cs)?.diffs.get(&start).copied().unwrap_or(0.0),
        CovariateLag::Lag0 => 0.0,
    };
    let steps: Vec<Period> = start.range_to(cfg.horizon.prev()).collect();
    let keys: Vec<Option<Period>> = steps
        .iter()
        .map(|&t| match lag {
            CovariateLag::Lag1 if t == start => None,
            _ => Some(lag.diff_key(t)),
        })
        .collect();
    for traj in &cts.dhna {
        if let Some(p) = keys.iter().flatten().find(|p| !traj.contains_key(p)) {
            return Err(Error::validation(format!("{}: covariate trajectory lacks {p}", cs.code)));
        }
    }

    let reps = cfg.draws_per_sample;
    let n_sims = posterior.len() * reps;
    let label = format!("projection/{}", cs.code);
    let trajectories: Vec<Vec<f64>> = (0..n_sims)
        .into_par_iter()
        .map(|s| {
            let state = &posterior.draws[s / reps].state;
            let theta = &state.countries[c];
            let (beta, omega) = (state.world.beta, state.world.omega);
            let mut rng = rng::stream(cfg.seed, &label, s as u64);
            let path = &cts.dhna[sample_trajectory(cts, &mut rng)];
            let mut ell = start_e0;
            let mut out = Vec::with_capacity(periods.len());
            for key in &keys {
                let x = match key {
                    None => observed_first,
                    Some(p) => path[p],
                };
                let z: f64 = StandardNormal.sample(&mut rng);
                let eps = omega * vf.eval(ell, cs.epidemic) * z;
                ell = (ell + gain(ell, theta, &consts) + beta * x + eps).clamp(cfg.floor, cfg.cap);
                out.push(ell);
            }
            out
        })
        .collect();
    if let Some((s, _)) = trajectories
        .iter()
        .enumerate()
        .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Numerical(format!(
            "{}: simulation {s} produced a non-finite life expectancy",
            cs.code
        )));
    }
    let fan = quantile_fan(&trajectories, &periods, &cfg.quantiles)?;
    Ok(ProjectionResult {
        country: cs.code.clone(),
        start,
        start_e0,
        periods,
        trajectories,
        fan,
    })
}

/// Column label for quantile `p`, e.g. `q0.025`.
pub fn quantile_label(p: f64) -> String {
    format!("q{p}")
}

pub fn fan_csv(fan: &QuantileFan) -> String {
    let mut s = String::from("period");
    for p in &fan.probs {
        s.push(',');
        s.push_str(&quantile_label(*p));
    }
    s.push('\n');
    for (period, q) in &fan.rows {
        s.push_str(&period.to_string());
        for v in q {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Writes `projection_<country>.csv` and, if asked, `trajectories_<country>.csv`.
pub fn write_projection(dir: &Path, result: &ProjectionResult, with_trajectories: bool) -> Result<()> {
    write_text(&dir.join(format!("projection_{}.csv", result.country)), &fan_csv(&result.fan))?;
    if with_trajectories {
        let mut s = String::from("sim,period,e0\n");
        for (i, t) in result.trajectories.iter().enumerate() {
            for (p, v) in result.periods.iter().zip(t) {
                s.push_str(&format!("{},{p},{v}\n", i + 1));
            }
        }
        write_text(&dir.join(format!("trajectories_{}.csv", result.country)), &s)?;
    }
    Ok(())
}
