//! Two-pass estimation: fit with a provisional noise scale, rebuild the
//! noise scale from mean-model residuals, then optionally fit again.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mcmc::{fit, FitConfig, PosteriorSet};
use crate::variance::{
    build_pooled_variance_function, build_variance_function, mean_model_residuals, VarianceConfig, VarianceFunction,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub fit: FitConfig,
    /// Constant noise scale for the first pass.
    pub bootstrap_f: f64,
    pub variance: VarianceConfig,
    /// Fit again under the rebuilt noise scale.
    pub refit: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fit: FitConfig::default(),
            bootstrap_f: 1.0,
            variance: VarianceConfig::default(),
            refit: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub posterior: PosteriorSet,
    /// Noise scale the returned posterior was sampled under.
    pub variance: VarianceFunction,
    /// Noise scale rebuilt from first-pass residuals.
    pub rebuilt_variance: VarianceFunction,
    /// Set when a stratum was too sparse and one pooled curve was used.
    pub pooled: bool,
}

pub fn fit_two_pass(ds: &Dataset, cfg: &PipelineConfig) -> Result<FitOutput> {
    if !(cfg.bootstrap_f > 0.0 && cfg.bootstrap_f.is_finite()) {
        return Err(Error::validation(format!("bootstrap noise scale {} must be positive", cfg.bootstrap_f)));
    }
    let bootstrap = VarianceFunction::constant(cfg.bootstrap_f);
    let first = fit(ds, &bootstrap, &cfg.fit)?;
    let residuals = mean_model_residuals(
        ds,
        &first.mean_country_params(),
        first.mean_beta(),
        &cfg.fit.consts,
        cfg.fit.lag,
    )?;
    let (rebuilt, pooled) = match build_variance_function(&residuals, &cfg.variance) {
        Ok(vf) => (vf, false),
        Err(Error::Fit(_)) => (build_pooled_variance_function(&residuals, &cfg.variance)?, true),
        Err(e) => return Err(e),
    };
    if !cfg.refit {
        return Ok(FitOutput {
            posterior: first,
            variance: bootstrap,
            rebuilt_variance: rebuilt,
            pooled,
        });
    }
    let posterior = fit(ds, &rebuilt, &cfg.fit)?;
    Ok(FitOutput {
        posterior,
        variance: rebuilt.clone(),
        rebuilt_variance: rebuilt,
        pooled,
    })
}
