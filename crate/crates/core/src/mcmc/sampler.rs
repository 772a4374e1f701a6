use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::double_logistic::CountryParams;
use crate::error::{Error, Result};
use crate::rng;
use crate::truncnorm;
use crate::variance::VarianceFunction;

use super::diagnostics::{gelman_rubin, Diagnostics};
use super::model::Model;
use super::updates::{
    beta_gibbs_update, country_params_update, omega_update, world_params_update, SweepStats,
};
use super::{Draw, FitConfig, ModelVariant, PosteriorMeta, PosteriorSet, State, WorldParams};

/// Dispersed starting point for chain `chain`.
pub fn initial_state(n_countries: usize, cfg: &FitConfig, chain: usize) -> State {
    let mut rng = rng::stream(cfg.seed, "mcmc-init", chain as u64);
    let mut world = WorldParams {
        delta_mean: [0.0; 4],
        delta_sd: [0.0; 4],
        k_mean: rng.random_range(1.0..6.0),
        k_sd: 0.0,
        z_mean: rng.random_range(0.1..0.5),
        z_sd: 0.0,
        omega: rng.random_range(0.5..2.0),
        beta: 0.0,
    };
    for d in &mut world.delta_mean {
        *d = rng.random_range(5.0..30.0);
    }
    for i in 0..6 {
        let s = cfg.priors.sd_max[i] * rng.random_range(0.1..0.3);
        world.set_sd(i, s);
    }
    world.omega = world.omega.min(cfg.priors.omega_max);
    let countries = (0..n_countries)
        .map(|_| {
            let mut th = CountryParams::new([0.0; 4], 0.0, 0.0);
            for i in 0..CountryParams::LEN {
                let (lo, hi) = CountryParams::bounds(i);
                th.set(i, truncnorm::sample(&mut rng, world.mean(i), world.sd(i), lo, hi));
            }
            th
        })
        .collect();
    State { world, countries }
}

/// Runs the sampler from dispersed starting points.
pub fn fit(ds: &Dataset, vf: &VarianceFunction, cfg: &FitConfig) -> Result<PosteriorSet> {
    let inits: Vec<State> = (0..cfg.chains).map(|c| initial_state(ds.countries.len(), cfg, c)).collect();
    fit_from(ds, vf, cfg, &inits)
}

/// Runs the sampler with one given starting state per chain.
pub fn fit_from(ds: &Dataset, vf: &VarianceFunction, cfg: &FitConfig, inits: &[State]) -> Result<PosteriorSet> {
    cfg.validate()?;
    if inits.len() != cfg.chains {
        return Err(Error::validation(format!(
            "{} starting states for {} chains",
            inits.len(),
            cfg.chains
        )));
    }
    for s in inits {
        if s.countries.len() != ds.countries.len() || !s.in_bounds(&cfg.priors) {
            return Err(Error::validation("starting state does not match the dataset or violates bounds"));
        }
    }
    let model = Model::new(ds, vf, cfg)?;

    let runs: Vec<Result<(Vec<Draw>, SweepStats)>> = inits
        .par_iter()
        .enumerate()
        .map(|(chain, init)| run_chain(&model, cfg, chain, init.clone()))
        .collect();
    let mut draws = Vec::with_capacity(cfg.chains * cfg.kept_per_chain());
    let mut stats = SweepStats::default();
    for r in runs {
        let (d, s) = r?;
        draws.extend(d);
        stats.merge(&s);
    }
    let rhat = rhat_table(&draws, ds, cfg.chains);
    Ok(PosteriorSet {
        country_codes: ds.countries.iter().map(|c| c.code.clone()).collect(),
        draws,
        meta: PosteriorMeta::for_config(cfg),
        diagnostics: Diagnostics::from_stats(&stats, rhat),
    })
}

fn run_chain(model: &Model, cfg: &FitConfig, chain: usize, mut state: State) -> Result<(Vec<Draw>, SweepStats)> {
    let mut rng = rng::stream(cfg.seed, "mcmc-chain", chain as u64);
    // Kept apart so the other updates see the same random numbers whether
    // or not the covariate coefficient is sampled.
    let mut beta_rng = rng::stream(cfg.seed, "mcmc-beta", chain as u64);
    let mut stats = SweepStats::default();
    let mut draws = Vec::with_capacity(cfg.kept_per_chain());
    let use_beta = cfg.variant == ModelVariant::Hna && cfg.updates.beta;
    if cfg.variant == ModelVariant::NoCovariates {
        state.world.beta = 0.0;
    }
    for it in 0..cfg.iterations {
        if cfg.updates.countries {
            let world = state.world;
            for (c, th) in state.countries.iter_mut().enumerate() {
                country_params_update(model, c, &world, th, &mut rng, &mut stats);
            }
        }
        world_params_update(
            &mut state,
            &cfg.priors,
            cfg.updates.world_means,
            cfg.updates.world_sds,
            &mut rng,
            &mut stats,
        );
        if use_beta {
            state.world.beta = beta_gibbs_update(model, &state, &mut beta_rng);
        }
        if cfg.updates.omega {
            state.world.omega = omega_update(model, &state, &cfg.priors, &mut rng, &mut stats);
        }

        if it >= cfg.burnin && (it - cfg.burnin + 1) % cfg.thin == 0 {
            let ll = model.log_likelihood(&state);
            if !ll.is_finite() || !state.world.beta.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite log density in chain {chain} at iteration {it}; state: {}",
                    serde_json::to_string(&state).unwrap_or_default()
                )));
            }
            if !state.in_bounds(&cfg.priors) {
                return Err(Error::Numerical(format!(
                    "draw outside truncation bounds in chain {chain} at iteration {it}; state: {}",
                    serde_json::to_string(&state).unwrap_or_default()
                )));
            }
            draws.push(Draw {
                chain,
                iteration: it,
                state: state.clone(),
            });
        }
    }
    Ok((draws, stats))
}

fn rhat_table(draws: &[Draw], ds: &Dataset, chains: usize) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if chains < 2 {
        return out;
    }
    let split = |get: &dyn Fn(&State) -> f64| -> Vec<Vec<f64>> {
        let mut v = vec![Vec::new(); chains];
        for d in draws {
            v[d.chain].push(get(&d.state));
        }
        v
    };
    for (j, name) in WorldParams::NAMES.iter().enumerate() {
        out.insert(name.to_string(), gelman_rubin(&split(&|s| s.world.to_vec()[j])));
    }
    for (c, cs) in ds.countries.iter().enumerate() {
        for (i, name) in CountryParams::NAMES.iter().enumerate() {
            out.insert(
                format!("{name}[{}]", cs.code),
                gelman_rubin(&split(&|s| s.countries[c].get(i))),
            );
        }
    }
    out
}
