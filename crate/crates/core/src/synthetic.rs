//! Synthetic datasets drawn from the model itself, with known parameters.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{CountrySeries, Dataset, Period};
use crate::double_logistic::{gain, CountryParams, LogisticConstants};
use crate::error::{Error, Result};
use crate::mcmc::WorldParams;
use crate::rng;
use crate::truncnorm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub countries: usize,
    /// Number of observed five-year periods per country.
    pub periods: usize,
    pub start_year: i32,
    pub epidemic_fraction: f64,
    pub seed: u64,
    pub world: WorldParams,
    /// Range of life expectancy in the first period.
    pub start_e0: (f64, f64),
    /// Range of peak HIV prevalence in percent for epidemic countries.
    pub peak_prevalence: (f64, f64),
    /// Range of eventual ART coverage in percent.
    pub art_plateau: (f64, f64),
    pub consts: LogisticConstants,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            countries: 200,
            periods: 12,
            start_year: 1950,
            epidemic_fraction: 0.2,
            seed: 1,
            world: WorldParams {
                delta_mean: [10.0, 15.0, 17.0, 16.0],
                delta_sd: [3.0, 4.0, 4.0, 3.0],
                k_mean: 3.0,
                k_sd: 0.8,
                z_mean: 0.4,
                z_sd: 0.1,
                omega: 0.6,
                beta: -0.01,
            },
            start_e0: (30.0, 70.0),
            peak_prevalence: (2.0, 15.0),
            art_plateau: (40.0, 90.0),
            consts: LogisticConstants::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.countries == 0 || self.periods < 3 {
            return Err(Error::validation("need at least one country and three periods"));
        }
        if !(0.0..=1.0).contains(&self.epidemic_fraction) {
            return Err(Error::validation("epidemic fraction must lie in [0, 1]"));
        }
        if self.start_year.rem_euclid(Period::LENGTH) != 0 {
            return Err(Error::validation(format!("start year {} is not a multiple of 5", self.start_year)));
        }
        let w = &self.world;
        for i in 0..CountryParams::LEN {
            let (lo, hi) = CountryParams::bounds(i);
            if !(w.mean(i) >= lo && w.mean(i) <= hi && w.sd(i) > 0.0) {
                return Err(Error::validation(format!(
                    "hierarchy for {} needs a location in [{lo}, {hi}] and a positive scale",
                    CountryParams::NAMES[i]
                )));
            }
        }
        if !(w.omega >= 0.0 && w.beta.is_finite()) {
            return Err(Error::validation("omega must be non-negative and beta finite"));
        }
        let ranges = [self.start_e0, self.peak_prevalence, self.art_plateau];
        if ranges.iter().any(|(a, b)| !(a <= b)) || self.start_e0.0 <= 0.0 || self.peak_prevalence.1 > 100.0 || self.art_plateau.1 > 100.0
        {
            return Err(Error::validation("invalid generator range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueCountry {
    pub code: String,
    pub epidemic: bool,
    pub params: CountryParams,
}

/// Every parameter used to generate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub config: SyntheticConfig,
    pub countries: Vec<TrueCountry>,
}

fn draw(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates life expectancy, HIV prevalence and ART coverage for
/// `cfg.countries` countries. Noise has constant scale `omega`; the covariate
/// enters with the one-period lag.
pub fn simulate(cfg: &SyntheticConfig) -> Result<(Dataset, SyntheticTruth)> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, "synthetic", 0);
    let n_epi = (cfg.epidemic_fraction * cfg.countries as f64).round() as usize;
    let w = &cfg.world;
    let periods: Vec<Period> = (0..cfg.periods)
        .map(|i| Period::new(cfg.start_year + Period::LENGTH * i as i32))
        .collect::<Result<_>>()?;
    let width = cfg.countries.to_string().len().max(3);

    let mut series = Vec::with_capacity(cfg.countries);
    let mut truth = Vec::with_capacity(cfg.countries);
    for c in 0..cfg.countries {
        let code = format!("S{c:0width$}");
        let epidemic = c < n_epi;
        let mut params = CountryParams::new([0.0; 4], 0.0, 0.0);
        for i in 0..CountryParams::LEN {
            let (lo, hi) = CountryParams::bounds(i);
            params.set(i, truncnorm::sample(&mut rng, w.mean(i), w.sd(i), lo, hi));
        }

        let mut hiv = BTreeMap::new();
        let mut art = BTreeMap::new();
        let peak = draw(&mut rng, cfg.peak_prevalence);
        let onset = rng.random_range(1978.0..1990.0);
        let plateau = draw(&mut rng, cfg.art_plateau);
        for &p in &periods {
            let y = p.start_year() as f64 + 2.5;
            let (prev, cov) = if epidemic {
                let prev = peak * logistic((y - onset) / 2.5) * (1.0 - 0.3 * logistic((y - 2010.0) / 5.0));
                (prev, plateau * ((y - 2000.0) / 15.0).clamp(0.0, 1.0))
            } else {
                (0.0, 0.0)
            };
            hiv.insert(p, prev);
            if epidemic {
                art.insert(p, cov);
            }
        }

        let hna: Vec<f64> = periods.iter().map(|p| hiv[p] * (100.0 - art.get(p).copied().unwrap_or(0.0))).collect();
        let mut e0 = BTreeMap::new();
        let mut ell = draw(&mut rng, cfg.start_e0);
        for (t, &p) in periods.iter().enumerate() {
            e0.insert(p, ell);
            let x = if t == 0 { 0.0 } else { hna[t] - hna[t - 1] };
            let eps: f64 = StandardNormal.sample(&mut rng);
            ell += gain(ell, &params, &cfg.consts) + w.beta * x + w.omega * eps;
            ell = ell.clamp(1.0, 119.0);
        }

        series.push(CountrySeries {
            code: code.clone(),
            name: format!("Synthetic {c}"),
            epidemic,
            e0,
            hiv_prev: hiv,
            art_cov: art,
            masked: BTreeSet::new(),
        });
        truth.push(TrueCountry { code, epidemic, params });
    }
    let ds = Dataset::new(series)?;
    Ok((ds, SyntheticTruth { config: *cfg, countries: truth }))
}
