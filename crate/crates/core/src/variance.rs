//! Heteroskedastic noise scale `f(ell, epidemic)`.
//!
//! Absolute residuals of a noise-free mean-model run are smoothed with loess,
//! separately for epidemic and non-epidemic countries. The epidemic curve is
//! the pointwise maximum of the two up to the splice level, and the
//! non-epidemic curve plus a constant offset above it.

use serde::{Deserialize, Serialize};

use crate::covariate::{build_hna, covariate_for_observation, CovariateLag, Regressor};
use crate::data::Dataset;
use crate::double_logistic::{gain, CountryParams, LogisticConstants};
use crate::error::{Error, Result};
use crate::loess::{fit_loess, LoessConfig, LoessCurve};

/// Highest life expectancy observed so far in an epidemic country.
pub const DEFAULT_SPLICE_ELL: f64 = 78.1;
pub const DEFAULT_F_MIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceConfig {
    pub loess: LoessConfig,
    pub splice_ell: f64,
    pub f_min: f64,
    /// Spacing of the tabulation grid used to store the fitted curves.
    pub grid_step: f64,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        VarianceConfig {
            loess: LoessConfig::default(),
            splice_ell: DEFAULT_SPLICE_ELL,
            f_min: DEFAULT_F_MIN,
            grid_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub epidemic: bool,
    /// Mean-model life expectancy at which the residual occurred.
    pub ell: f64,
    pub abs_residual: f64,
}

/// Absolute deviations of a deterministic mean-model path from the observations.
///
/// Each country starts at its first unmasked observation and is iterated
/// forward with `gain + beta * regressor`; regressors that are undefined
/// count as 0. `params[i]` belongs to `ds.countries[i]`.
pub fn mean_model_residuals(
    ds: &Dataset,
    params: &[CountryParams],
    beta: f64,
    consts: &LogisticConstants,
    lag: CovariateLag,
) -> Result<Vec<Residual>> {
    if params.len() != ds.countries.len() {
        return Err(Error::validation(format!(
            "{} parameter sets for {} countries",
            params.len(),
            ds.countries.len()
        )));
    }
    let mut out = Vec::new();
    for (cs, theta) in ds.countries.iter().zip(params) {
        let h = build_hna(cs)?;
        let Some(start) = cs.e0.keys().copied().find(|p| !cs.is_masked(*p)) else {
            continue;
        };
        let last = cs.last_period().expect("non-empty series");
        let mut ell = cs.e0[&start];
        let mut t = start;
        while t < last {
            let x = match covariate_for_observation(&h, t, lag) {
                Regressor::Value(v) => v,
                Regressor::Missing => 0.0,
            };
            ell += gain(ell, theta, consts) + beta * x;
            t = t.next();
            if let Some(obs) = cs.usable_e0(t) {
                out.push(Residual {
                    epidemic: cs.epidemic,
                    ell,
                    abs_residual: (ell - obs).abs(),
                });
            }
        }
    }
    Ok(out)
}

/// A curve stored on a regular grid, linearly interpolated inside and
/// linearly extended outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCurve {
    pub x0: f64,
    pub step: f64,
    pub values: Vec<f64>,
    pub left_slope: f64,
    pub right_slope: f64,
}

impl GridCurve {
    pub fn from_loess(curve: &LoessCurve, step: f64) -> Self {
        let (lo, hi) = (curve.x_min(), curve.x_max());
        let n = ((hi - lo) / step).ceil().max(1.0) as usize;
        let step = (hi - lo) / n as f64;
        let values = (0..=n).map(|i| curve.eval(lo + i as f64 * step)).collect();
        GridCurve {
            x0: lo,
            step,
            values,
            left_slope: curve.value_and_slope(lo).1,
            right_slope: curve.value_and_slope(hi).1,
        }
    }

    pub fn x_max(&self) -> f64 {
        self.x0 + self.step * (self.values.len() - 1) as f64
    }

    pub fn eval(&self, x: f64) -> f64 {
        let last = self.values.len() - 1;
        if x <= self.x0 {
            return self.values[0] + self.left_slope * (x - self.x0);
        }
        let xe = self.x_max();
        if x >= xe {
            return self.values[last] + self.right_slope * (x - xe);
        }
        let u = (x - self.x0) / self.step;
        let i = (u.floor() as usize).min(last - 1);
        let frac = u - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Curve {
    Constant { value: f64 },
    Grid(GridCurve),
}

impl Curve {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Curve::Constant { value } => *value,
            Curve::Grid(g) => g.eval(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceFunction {
    /// Fit to non-epidemic residuals.
    pub non_epidemic: Curve,
    /// Fit to epidemic residuals, before splicing.
    pub epidemic_raw: Curve,
    pub splice_ell: f64,
    pub splice_offset: f64,
    pub f_min: f64,
}

impl VarianceFunction {
    /// The same constant `value` for every level and stratum.
    pub fn constant(value: f64) -> Self {
        VarianceFunction {
            non_epidemic: Curve::Constant { value },
            epidemic_raw: Curve::Constant { value },
            splice_ell: DEFAULT_SPLICE_ELL,
            splice_offset: 0.0,
            f_min: DEFAULT_F_MIN,
        }
    }

    pub fn from_curves(non_epidemic: Curve, epidemic_raw: Curve, splice_ell: f64, f_min: f64) -> Self {
        let splice_offset = epidemic_raw.eval(splice_ell) - non_epidemic.eval(splice_ell);
        VarianceFunction {
            non_epidemic,
            epidemic_raw,
            splice_ell,
            splice_offset,
            f_min,
        }
    }

    /// Spliced epidemic curve before the floor.
    pub fn epidemic_curve(&self, ell: f64) -> f64 {
        let blue = self.non_epidemic.eval(ell);
        if ell <= self.splice_ell {
            blue.max(self.epidemic_raw.eval(ell))
        } else {
            blue + self.splice_offset
        }
    }

    /// Noise scale at `ell`, floored at `f_min`.
    #[inline]
    pub fn eval(&self, ell: f64, epidemic: bool) -> f64 {
        let v = if epidemic {
            self.epidemic_curve(ell)
        } else {
            self.non_epidemic.eval(ell)
        };
        v.max(self.f_min)
    }

    /// `ell,f_nonepidemic,f_epidemic` rows on a 0.5-year grid.
    pub fn table(&self, ell_min: f64, ell_max: f64) -> String {
        let mut s = String::from("ell,f_nonepidemic,f_epidemic\n");
        let n = ((ell_max - ell_min) / 0.5).round() as usize;
        for i in 0..=n {
            let ell = ell_min + 0.5 * i as f64;
            s.push_str(&format!("{ell},{},{}\n", self.eval(ell, false), self.eval(ell, true)));
        }
        s
    }
}

const MIN_STRATUM: usize = 10;

/// Fits both strata and splices them.
pub fn build_variance_function(residuals: &[Residual], cfg: &VarianceConfig) -> Result<VarianceFunction> {
    let stratum = |epi: bool| -> Vec<(f64, f64)> {
        residuals
            .iter()
            .filter(|r| r.epidemic == epi)
            .map(|r| (r.ell, r.abs_residual))
            .collect()
    };
    let blue_pts = stratum(false);
    let red_pts = stratum(true);
    for (name, pts) in [("non-epidemic", &blue_pts), ("epidemic", &red_pts)] {
        if pts.len() < MIN_STRATUM {
            return Err(Error::Fit(format!(
                "{name} stratum has {} residuals (need {MIN_STRATUM}); use a pooled variance function",
                pts.len()
            )));
        }
    }
    let blue = Curve::Grid(GridCurve::from_loess(&fit_loess(&blue_pts, cfg.loess)?, cfg.grid_step));
    let red = Curve::Grid(GridCurve::from_loess(&fit_loess(&red_pts, cfg.loess)?, cfg.grid_step));
    Ok(VarianceFunction::from_curves(blue, red, cfg.splice_ell, cfg.f_min))
}

/// One curve fit to all residuals, used for both strata.
pub fn build_pooled_variance_function(residuals: &[Residual], cfg: &VarianceConfig) -> Result<VarianceFunction> {
    let pts: Vec<(f64, f64)> = residuals.iter().map(|r| (r.ell, r.abs_residual)).collect();
    let curve = Curve::Grid(GridCurve::from_loess(&fit_loess(&pts, cfg.loess)?, cfg.grid_step));
    Ok(VarianceFunction::from_curves(curve.clone(), curve, cfg.splice_ell, cfg.f_min))
}
