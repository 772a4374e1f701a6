//! Future covariate paths: yearly HIV prevalence simulations rescaled around
//! a reference path, averaged to five-year periods and turned into HnA changes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariate::{build_hna, hna};
use crate::data::{read_rows, write_text, CountrySeries, Period};
use crate::error::{Error, Result};

/// Yearly prevalence paths (percent) for one country.
#[derive(Debug, Clone, PartialEq)]
pub struct YearlyTrajectorySet {
    pub country: String,
    pub years: Vec<i32>,
    pub reference: BTreeMap<i32, f64>,
    pub sims: Vec<BTreeMap<i32, f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    /// Multiplicative unless a yearly median falls below the threshold.
    #[default]
    Auto,
    Multiplicative,
    Additive,
}

/// Default "nearly zero" median prevalence (percent) for the automatic switch.
pub const DEFAULT_ADDITIVE_THRESHOLD: f64 = 0.05;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl YearlyTrajectorySet {
    /// Median over simulations at each year.
    pub fn medians(&self) -> Result<BTreeMap<i32, f64>> {
        if self.sims.is_empty() {
            return Err(Error::validation(format!("{}: no simulated trajectories", self.country)));
        }
        let mut out = BTreeMap::new();
        for &y in &self.years {
            let mut v: Vec<f64> = self
                .sims
                .iter()
                .map(|s| {
                    s.get(&y).copied().ok_or_else(|| {
                        Error::validation(format!("{}: simulated trajectory lacks year {y}", self.country))
                    })
                })
                .collect::<Result<_>>()?;
            out.insert(y, median(&mut v));
        }
        Ok(out)
    }

    fn reference_at(&self, y: i32) -> Result<f64> {
        self.reference
            .get(&y)
            .copied()
            .ok_or_else(|| Error::validation(format!("{}: reference trajectory lacks year {y}", self.country)))
    }
}

/// `reference * sim / median`, clamped to [0, 100].
pub fn scale_multiplicative(ts: &YearlyTrajectorySet) -> Result<Vec<BTreeMap<i32, f64>>> {
    let med = ts.medians()?;
    if let Some((y, _)) = med.iter().find(|(_, m)| !(**m > 0.0)) {
        return Err(Error::validation(format!(
            "{}: median simulated prevalence is 0 in {y}; use additive scaling",
            ts.country
        )));
    }
    ts.sims
        .iter()
        .map(|s| {
            ts.years
                .iter()
                .map(|&y| Ok((y, (ts.reference_at(y)? * (s[&y] / med[&y])).clamp(0.0, 100.0))))
                .collect()
        })
        .collect()
}

/// `reference + (sim - median)`, clamped to [0, 100].
pub fn scale_additive(ts: &YearlyTrajectorySet) -> Result<Vec<BTreeMap<i32, f64>>> {
    let med = ts.medians()?;
    ts.sims
        .iter()
        .map(|s| {
            ts.years
                .iter()
                .map(|&y| Ok((y, (ts.reference_at(y)? + (s[&y] - med[&y])).clamp(0.0, 100.0))))
                .collect()
        })
        .collect()
}

/// Scales with `mode`, returning the mode actually used.
pub fn scale(ts: &YearlyTrajectorySet, mode: ScaleMode, threshold: f64) -> Result<(Vec<BTreeMap<i32, f64>>, ScaleMode)> {
    let mode = match mode {
        ScaleMode::Auto => {
            if ts.medians()?.values().any(|m| *m < threshold) {
                ScaleMode::Additive
            } else {
                ScaleMode::Multiplicative
            }
        }
        m => m,
    };
    let out = match mode {
        ScaleMode::Additive => scale_additive(ts)?,
        _ => scale_multiplicative(ts)?,
    };
    Ok((out, mode))
}

/// Averages yearly values over each period's available calendar years.
pub fn to_five_year(yearly: &BTreeMap<i32, f64>) -> BTreeMap<Period, f64> {
    let mut acc: BTreeMap<Period, (f64, usize)> = BTreeMap::new();
    for (&y, &v) in yearly {
        let e = acc.entry(Period::containing(y)).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(p, (s, n))| (p, s / n as f64)).collect()
}

/// Equally weighted HnA-change paths for one country, keyed by period `t`
/// as `HnA[t] - HnA[t-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTrajectorySet {
    pub country: String,
    pub periods: Vec<Period>,
    pub dhna: Vec<BTreeMap<Period, f64>>,
}

impl CovariateTrajectorySet {
    /// `k` all-zero paths, used for countries without an epidemic.
    pub fn zeros(country: &str, periods: &[Period], k: usize) -> Self {
        let zero: BTreeMap<Period, f64> = periods.iter().map(|&p| (p, 0.0)).collect();
        CovariateTrajectorySet {
            country: country.to_string(),
            periods: periods.to_vec(),
            dhna: vec![zero; k.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.dhna.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dhna.is_empty()
    }
}

/// HnA changes over `periods` for each prevalence path, chained from
/// `last_observed_hna` at the period before `periods[0]`.
pub fn build_covariate_trajectories(
    country: &str,
    prevalence: &[BTreeMap<Period, f64>],
    art: &BTreeMap<Period, f64>,
    last_observed_hna: f64,
    periods: &[Period],
) -> Result<CovariateTrajectorySet> {
    for &p in periods {
        match art.get(&p) {
            None => return Err(Error::validation(format!("{country}: no ART coverage for {p}"))),
            Some(v) if !(0.0..=100.0).contains(v) => {
                return Err(Error::validation(format!("{country} {p}: ART coverage {v} outside [0, 100]")))
            }
            _ => {}
        }
    }
    let dhna = prevalence
        .iter()
        .enumerate()
        .map(|(k, prev)| {
            let mut last = last_observed_hna;
            let mut out = BTreeMap::new();
            for &p in periods {
                let v = prev.get(&p).copied().ok_or_else(|| {
                    Error::validation(format!("{country}: prevalence trajectory {} lacks {p}", k + 1))
                })?;
                let h = hna(v, art[&p]);
                out.insert(p, h - last);
                last = h;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    if dhna.is_empty() {
        return Err(Error::validation(format!("{country}: no prevalence trajectories")));
    }
    Ok(CovariateTrajectorySet {
        country: country.to_string(),
        periods: periods.to_vec(),
        dhna,
    })
}

/// Uniformly chosen trajectory index.
pub fn sample_trajectory<R: Rng + ?Sized>(cts: &CovariateTrajectorySet, rng: &mut R) -> usize {
    rng.random_range(0..cts.dhna.len())
}

/// Loaded trajectory inputs plus the scaling choice.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryInputs {
    pub yearly: BTreeMap<String, YearlyTrajectorySet>,
    /// Yearly ART coverage projections in percent.
    pub art: BTreeMap<String, BTreeMap<i32, f64>>,
    pub mode: ScaleMode,
    /// Countries always scaled additively.
    pub additive_countries: BTreeSet<String>,
    pub threshold: f64,
}

fn last_observed_hna(cs: &CountrySeries, start: Period) -> Result<f64> {
    build_hna(cs)?
        .values
        .get(&start)
        .copied()
        .ok_or_else(|| Error::validation(format!("{}: no HIV prevalence for {start}", cs.code)))
}

/// Covariate paths for projecting `cs` from `start` to `horizon`.
/// Returns `Ok(None)` for an epidemic country without trajectory input.
pub fn covariates_from_inputs(
    cs: &CountrySeries,
    start: Period,
    horizon: Period,
    inputs: &TrajectoryInputs,
) -> Result<Option<(CovariateTrajectorySet, ScaleMode)>> {
    let periods: Vec<Period> = start.next().range_to(horizon).collect();
    if !cs.epidemic {
        return Ok(Some((CovariateTrajectorySet::zeros(&cs.code, &periods, 1), ScaleMode::Auto)));
    }
    let (Some(ts), Some(art_yearly)) = (inputs.yearly.get(&cs.code), inputs.art.get(&cs.code)) else {
        return Ok(None);
    };
    let mode = if inputs.additive_countries.contains(&cs.code) {
        ScaleMode::Additive
    } else {
        inputs.mode
    };
    let (scaled, used) = scale(ts, mode, inputs.threshold)?;
    let prevalence: Vec<BTreeMap<Period, f64>> = scaled.iter().map(to_five_year).collect();
    let art = to_five_year(art_yearly);
    let cts = build_covariate_trajectories(&cs.code, &prevalence, &art, last_observed_hna(cs, start)?, &periods)?;
    Ok(Some((cts, used)))
}

/// A single path built from the country's own recorded HIV and ART series
/// after `start`. Missing prevalence carries the last recorded value forward;
/// missing ART counts as 0%.
pub fn covariates_from_observed(cs: &CountrySeries, start: Period, horizon: Period) -> CovariateTrajectorySet {
    let periods: Vec<Period> = start.next().range_to(horizon).collect();
    if !cs.epidemic {
        return CovariateTrajectorySet::zeros(&cs.code, &periods, 1);
    }
    let prev_at = |p: Period| cs.hiv_prev.range(..=p).next_back().map(|(_, v)| *v).unwrap_or(0.0);
    let hna_at = |p: Period| hna(prev_at(p), cs.art_cov.get(&p).copied().unwrap_or(0.0));
    let mut last = hna_at(start);
    let mut out = BTreeMap::new();
    for &p in &periods {
        let h = hna_at(p);
        out.insert(p, h - last);
        last = h;
    }
    CovariateTrajectorySet {
        country: cs.code.clone(),
        periods,
        dhna: vec![out],
    }
}

#[derive(Debug, Deserialize)]
struct TrajectoryRow {
    country: String,
    sim: usize,
    year: i32,
    prevalence: f64,
}

#[derive(Debug, Deserialize)]
struct ArtProjectionRow {
    country: String,
    year: i32,
    coverage: f64,
}

/// Reads `country,sim,year,prevalence`; `sim` 0 is the reference path and
/// simulations are numbered from 1.
pub fn load_yearly_trajectories(path: &Path) -> Result<BTreeMap<String, YearlyTrajectorySet>> {
    let mut raw: BTreeMap<String, BTreeMap<usize, BTreeMap<i32, f64>>> = BTreeMap::new();
    for (line, row) in read_rows::<TrajectoryRow>(path)? {
        if !(row.prevalence.is_finite() && (0.0..=100.0).contains(&row.prevalence)) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                message: format!("prevalence {} outside [0, 100]", row.prevalence),
            });
        }
        let slot = raw.entry(row.country.clone()).or_default().entry(row.sim).or_default();
        if slot.insert(row.year, row.prevalence).is_some() {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                message: format!("duplicate row for ({}, sim {}, {})", row.country, row.sim, row.year),
            });
        }
    }
    let mut out = BTreeMap::new();
    for (country, mut by_sim) in raw {
        let reference = by_sim
            .remove(&0)
            .ok_or_else(|| Error::validation(format!("{country}: trajectory file has no reference path (sim 0)")))?;
        if by_sim.is_empty() {
            return Err(Error::validation(format!("{country}: trajectory file has no simulations")));
        }
        let years: Vec<i32> = reference.keys().copied().collect();
        let sims: Vec<BTreeMap<i32, f64>> = by_sim.into_values().collect();
        out.insert(
            country.clone(),
            YearlyTrajectorySet {
                country,
                years,
                reference,
                sims,
            },
        );
    }
    Ok(out)
}

/// Reads `country,year,coverage` yearly ART projections.
pub fn load_art_projection(path: &Path) -> Result<BTreeMap<String, BTreeMap<i32, f64>>> {
    let mut out: BTreeMap<String, BTreeMap<i32, f64>> = BTreeMap::new();
    for (line, row) in read_rows::<ArtProjectionRow>(path)? {
        if !(row.coverage.is_finite() && (0.0..=100.0).contains(&row.coverage)) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                message: format!("ART coverage {} outside [0, 100]", row.coverage),
            });
        }
        out.entry(row.country).or_default().insert(row.year, row.coverage);
    }
    Ok(out)
}

/// Writes `country,sim,period,dhna` with simulations numbered from 1.
pub fn write_dhna(path: &Path, sets: &[&CovariateTrajectorySet]) -> Result<()> {
    let mut s = String::from("country,sim,period,dhna\n");
    for cts in sets {
        for (k, traj) in cts.dhna.iter().enumerate() {
            for (p, v) in traj {
                s.push_str(&format!("{},{},{p},{v}\n", cts.country, k + 1));
            }
        }
    }
    write_text(path, &s)
}
