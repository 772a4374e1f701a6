use crate::covariate::{build_hna, covariate_for_observation, MissingCovariate, Regressor};
use crate::data::{delta_e0, Dataset, Period};
use crate::double_logistic::{gain, CountryParams, LogisticConstants};
use crate::error::{Error, Result};
use crate::variance::VarianceFunction;

use super::{FitConfig, ModelVariant, State};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// One observed five-year gain with everything the likelihood needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub period: Period,
    /// Life expectancy at the start of the gain.
    pub ell: f64,
    /// Observed gain.
    pub gain: f64,
    /// Covariate regressor; 0 for non-epidemic countries and missing values.
    pub x: f64,
    /// Noise scale `f(ell, epidemic)` before the `omega` multiplier.
    pub f: f64,
}

#[derive(Debug, Clone)]
pub struct CountryModel {
    pub code: String,
    pub epidemic: bool,
    pub obs: Vec<Observation>,
}

/// The dataset reduced to likelihood terms, with the noise scales and the
/// covariate coefficient's prior fixed.
#[derive(Debug, Clone)]
pub struct Model {
    pub countries: Vec<CountryModel>,
    pub consts: LogisticConstants,
    pub beta_prior_var: f64,
    pub use_covariate: bool,
}

impl Model {
    pub fn new(ds: &Dataset, vf: &VarianceFunction, cfg: &FitConfig) -> Result<Model> {
        let use_covariate = cfg.variant == ModelVariant::Hna;
        let mut countries = Vec::with_capacity(ds.countries.len());
        for cs in &ds.countries {
            let hna = build_hna(cs)?;
            let mut obs = Vec::new();
            for (t, dl) in delta_e0(cs) {
                let ell = cs.e0[&t];
                let x = if !use_covariate {
                    0.0
                } else {
                    match covariate_for_observation(&hna, t, cfg.lag) {
                        Regressor::Value(v) => v,
                        Regressor::Missing => match cfg.missing_covariate {
                            MissingCovariate::Zero => 0.0,
                            MissingCovariate::Exclude => continue,
                        },
                    }
                };
                obs.push(Observation {
                    period: t,
                    ell,
                    gain: dl,
                    x,
                    f: vf.eval(ell, cs.epidemic),
                });
            }
            countries.push(CountryModel {
                code: cs.code.clone(),
                epidemic: cs.epidemic,
                obs,
            });
        }
        let beta_prior_var = match cfg.priors.beta_prior_var {
            Some(v) if v > 0.0 => v,
            Some(v) => return Err(Error::validation(format!("beta prior variance {v} must be positive"))),
            None => default_beta_prior_var(&countries),
        };
        Ok(Model {
            countries,
            consts: cfg.consts,
            beta_prior_var,
            use_covariate,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.countries.iter().map(|c| c.obs.len()).sum()
    }

    /// Gaussian log-likelihood of every observed gain.
    pub fn log_likelihood(&self, state: &State) -> f64 {
        let w = &state.world;
        self.countries
            .iter()
            .zip(&state.countries)
            .map(|(cm, theta)| {
                cm.obs
                    .iter()
                    .map(|o| {
                        let sd = w.omega * o.f;
                        let r = (o.gain - gain(o.ell, theta, &self.consts) - w.beta * o.x) / sd;
                        -0.5 * r * r - sd.ln() - LN_SQRT_2PI
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Country `c`'s log-likelihood up to terms constant in `theta`.
    #[inline]
    pub(crate) fn country_kernel(&self, c: usize, theta: &CountryParams, omega: f64, beta: f64) -> f64 {
        let inv_w2 = 1.0 / (omega * omega);
        let mut s = 0.0;
        for o in &self.countries[c].obs {
            let r = o.gain - gain(o.ell, theta, &self.consts) - beta * o.x;
            s += r * r / (o.f * o.f);
        }
        -0.5 * s * inv_w2
    }
}

/// `0.25 * Var(gain) / Var(regressor)` over all likelihood terms. With no
/// regressor variation the denominator is taken as 1.
fn default_beta_prior_var(countries: &[CountryModel]) -> f64 {
    let gains: Vec<f64> = countries.iter().flat_map(|c| c.obs.iter().map(|o| o.gain)).collect();
    let xs: Vec<f64> = countries.iter().flat_map(|c| c.obs.iter().map(|o| o.x)).collect();
    let vy = sample_var(&gains);
    let vx = sample_var(&xs);
    let vy = if vy > 0.0 { vy } else { 1.0 };
    let vx = if vx > 0.0 { vx } else { 1.0 };
    0.25 * vy / vx
}

pub(crate) fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Log-likelihood of `state` for dataset `ds` under noise scales `vf`.
pub fn log_likelihood(ds: &Dataset, state: &State, vf: &VarianceFunction, cfg: &FitConfig) -> Result<f64> {
    Ok(Model::new(ds, vf, cfg)?.log_likelihood(state))
}
