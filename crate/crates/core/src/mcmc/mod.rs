//! Posterior simulation for the hierarchical model.
//!
//! Country curve parameters and hierarchy scales are slice-sampled, the
//! hierarchy means get a conjugate Normal proposal with a Metropolis
//! correction for truncation, the covariate coefficient is an exact Gibbs
//! draw, and the noise multiplier is slice-sampled.

mod diagnostics;
mod model;
mod sampler;
mod updates;

use serde::{Deserialize, Serialize};

use crate::covariate::{CovariateLag, MissingCovariate};
use crate::double_logistic::{CountryParams, LogisticConstants};
use crate::error::{Error, Result};

pub use diagnostics::{gelman_rubin, Diagnostics};
pub use model::{log_likelihood, CountryModel, Model, Observation};
pub use sampler::{fit, fit_from, initial_state};
pub use updates::{
    beta_conditional, beta_gibbs_update, country_params_update, omega_log_conditional, omega_update,
    world_params_update, SweepStats,
};

/// Hierarchy locations and scales, the covariate coefficient and the noise multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub delta_mean: [f64; 4],
    pub delta_sd: [f64; 4],
    pub k_mean: f64,
    pub k_sd: f64,
    pub z_mean: f64,
    pub z_sd: f64,
    pub omega: f64,
    pub beta: f64,
}

impl WorldParams {
    pub const NAMES: [&'static str; 14] = [
        "delta1_mean",
        "delta2_mean",
        "delta3_mean",
        "delta4_mean",
        "k_mean",
        "z_mean",
        "delta1_sd",
        "delta2_sd",
        "delta3_sd",
        "delta4_sd",
        "k_sd",
        "z_sd",
        "omega",
        "beta",
    ];

    /// Location of the hierarchy distribution of country component `i`.
    pub fn mean(&self, i: usize) -> f64 {
        match i {
            0..=3 => self.delta_mean[i],
            4 => self.k_mean,
            5 => self.z_mean,
            _ => panic!("component {i} out of range"),
        }
    }

    pub fn sd(&self, i: usize) -> f64 {
        match i {
            0..=3 => self.delta_sd[i],
            4 => self.k_sd,
            5 => self.z_sd,
            _ => panic!("component {i} out of range"),
        }
    }

    pub fn set_mean(&mut self, i: usize, v: f64) {
        match i {
            0..=3 => self.delta_mean[i] = v,
            4 => self.k_mean = v,
            5 => self.z_mean = v,
            _ => panic!("component {i} out of range"),
        }
    }

    pub fn set_sd(&mut self, i: usize, v: f64) {
        match i {
            0..=3 => self.delta_sd[i] = v,
            4 => self.k_sd = v,
            5 => self.z_sd = v,
            _ => panic!("component {i} out of range"),
        }
    }

    /// Values in `NAMES` order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = (0..6).map(|i| self.mean(i)).collect();
        v.extend((0..6).map(|i| self.sd(i)));
        v.push(self.omega);
        v.push(self.beta);
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::NAMES.len());
        let mut w = WorldParams {
            delta_mean: [0.0; 4],
            delta_sd: [0.0; 4],
            k_mean: 0.0,
            k_sd: 0.0,
            z_mean: 0.0,
            z_sd: 0.0,
            omega: v[12],
            beta: v[13],
        };
        for i in 0..6 {
            w.set_mean(i, v[i]);
            w.set_sd(i, v[6 + i]);
        }
        w
    }
}

/// Third-level priors. Means are uniform on the country support, scales
/// uniform on `(0, sd_max)`, the noise multiplier uniform on `(0, omega_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub sd_max: [f64; 6],
    pub omega_max: f64,
    /// Overrides the data-driven prior variance of the covariate coefficient.
    pub beta_prior_var: Option<f64>,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        let mut sd_max = [0.0; 6];
        for (i, s) in sd_max.iter_mut().enumerate() {
            let (lo, hi) = CountryParams::bounds(i);
            *s = 0.5 * (hi - lo);
        }
        Hyperpriors {
            sd_max,
            omega_max: 10.0,
            beta_prior_var: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Gains depend on the double logistic only.
    NoCovariates,
    /// Adds `beta * dHnA` to the expected gain.
    #[default]
    Hna,
}

impl ModelVariant {
    pub fn label(self) -> &'static str {
        match self {
            ModelVariant::NoCovariates => "No Covariates",
            ModelVariant::Hna => "dHnA",
        }
    }
}

/// Which blocks the sweep updates; frozen blocks keep their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateMask {
    pub countries: bool,
    pub world_means: bool,
    pub world_sds: bool,
    pub beta: bool,
    pub omega: bool,
}

impl Default for UpdateMask {
    fn default() -> Self {
        UpdateMask {
            countries: true,
            world_means: true,
            world_sds: true,
            beta: true,
            omega: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub consts: LogisticConstants,
    pub lag: CovariateLag,
    pub missing_covariate: MissingCovariate,
    pub variant: ModelVariant,
    pub priors: Hyperpriors,
    pub updates: UpdateMask,
}

impl Default for FitConfig {
    /// 4 chains x 60,000 iterations, 10,000 burn-in, thin 50: 4,000 draws.
    fn default() -> Self {
        FitConfig {
            iterations: 60_000,
            burnin: 10_000,
            thin: 50,
            chains: 4,
            seed: 1,
            consts: LogisticConstants::default(),
            lag: CovariateLag::default(),
            missing_covariate: MissingCovariate::default(),
            variant: ModelVariant::default(),
            priors: Hyperpriors::default(),
            updates: UpdateMask::default(),
        }
    }
}

impl FitConfig {
    /// Short run for datasets of a few hundred countries on a laptop:
    /// 2 chains x 3,000 iterations, 1,000 burn-in, thin 4: 1,000 draws.
    pub fn desk() -> Self {
        FitConfig {
            iterations: 3_000,
            burnin: 1_000,
            thin: 4,
            chains: 2,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burnin {
            return Err(Error::validation(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burnin
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::validation("thin and chains must be at least 1"));
        }
        if !(self.consts.a1 > 0.0 && self.consts.a2 > 0.0 && self.consts.a2 < 1.0) {
            return Err(Error::validation("logistic constants need a1 > 0 and 0 < a2 < 1"));
        }
        Ok(())
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burnin) / self.thin
    }
}

/// One joint state of all parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub world: WorldParams,
    pub countries: Vec<CountryParams>,
}

impl State {
    /// Every truncation and prior-support bound holds.
    pub fn in_bounds(&self, priors: &Hyperpriors) -> bool {
        let w = &self.world;
        self.countries.iter().all(|c| c.in_bounds())
            && (0..6).all(|i| {
                let (lo, hi) = CountryParams::bounds(i);
                let (m, s) = (w.mean(i), w.sd(i));
                m >= lo && m <= hi && s > 0.0 && s <= priors.sd_max[i]
            })
            && w.omega > 0.0
            && w.omega <= priors.omega_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    pub state: State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMeta {
    pub chains: usize,
    pub iterations: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub variant: ModelVariant,
    pub lag: CovariateLag,
    pub consts: LogisticConstants,
}

impl PosteriorMeta {
    pub fn for_config(cfg: &FitConfig) -> Self {
        PosteriorMeta {
            chains: cfg.chains,
            iterations: cfg.iterations,
            burnin: cfg.burnin,
            thin: cfg.thin,
            seed: cfg.seed,
            variant: cfg.variant,
            lag: cfg.lag,
            consts: cfg.consts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSet {
    pub country_codes: Vec<String>,
    pub draws: Vec<Draw>,
    pub meta: PosteriorMeta,
    pub diagnostics: Diagnostics,
}

impl PosteriorSet {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.country_codes.iter().position(|c| c == code)
    }

    /// Posterior mean of each country's curve parameters.
    pub fn mean_country_params(&self) -> Vec<CountryParams> {
        let n = self.draws.len() as f64;
        (0..self.country_codes.len())
            .map(|c| {
                let mut m = CountryParams::new([0.0; 4], 0.0, 0.0);
                for i in 0..CountryParams::LEN {
                    let s: f64 = self.draws.iter().map(|d| d.state.countries[c].get(i)).sum();
                    m.set(i, s / n);
                }
                m
            })
            .collect()
    }

    pub fn mean_beta(&self) -> f64 {
        self.draws.iter().map(|d| d.state.world.beta).sum::<f64>() / self.draws.len() as f64
    }

    pub fn betas(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.state.world.beta).collect()
    }
}
