//! Out-of-sample checks: fit on a training window, project the held-out
//! periods and score the projections.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_rows, write_text, Dataset, Period};
use crate::error::{Error, Result};
use crate::mcmc::ModelVariant;
use crate::pipeline::{fit_two_pass, PipelineConfig};
use crate::projection::{project_country, ProjectionConfig, DEFAULT_QUANTILES};
use crate::trajectories::{covariates_from_inputs, covariates_from_observed, TrajectoryInputs};

/// Mean absolute error of `(predicted, observed)` pairs.
pub fn mae(cells: &[(f64, f64)]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::validation("no cells to score"));
    }
    Ok(cells.iter().map(|(p, o)| (p - o).abs()).sum::<f64>() / cells.len() as f64)
}

/// Share of `(lo, hi, observed)` intervals containing the observation, endpoints included.
pub fn coverage(cells: &[(f64, f64, f64)]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::validation("no cells to score"));
    }
    if let Some((lo, hi, _)) = cells.iter().find(|(lo, hi, _)| !(lo <= hi)) {
        return Err(Error::validation(format!("interval [{lo}, {hi}] is reversed")));
    }
    let hits = cells.iter().filter(|(lo, hi, o)| lo <= o && o <= hi).count();
    Ok(hits as f64 / cells.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    /// Countries with a generalized HIV epidemic.
    Epidemic,
    All,
}

impl Stratum {
    pub fn label(self) -> &'static str {
        match self {
            Stratum::Epidemic => "epidemic",
            Stratum::All => "all",
        }
    }

    fn contains(self, epidemic: bool) -> bool {
        match self {
            Stratum::Epidemic => epidemic,
            Stratum::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSpec {
    /// Last period used for fitting.
    pub train_end: Period,
    pub test_periods: Vec<Period>,
    pub strata: Vec<Stratum>,
    /// Country-period cells left out of scoring.
    pub excluded: BTreeSet<(String, Period)>,
}

impl ValidationSpec {
    pub fn new(train_end: Period, test_periods: Vec<Period>) -> Self {
        ValidationSpec {
            train_end,
            test_periods,
            strata: vec![Stratum::Epidemic, Stratum::All],
            excluded: BTreeSet::new(),
        }
    }

    /// `2005-2015` for test periods starting 2005 and 2010.
    pub fn test_label(&self) -> String {
        match (self.test_periods.first(), self.test_periods.last()) {
            (Some(a), Some(b)) => format!("{}-{}", a.start_year(), b.end_year()),
            _ => String::new(),
        }
    }
}

/// One scored country-period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: ModelVariant,
    pub country: String,
    pub period: Period,
    pub epidemic: bool,
    pub observed: f64,
    pub median: f64,
    pub lo80: f64,
    pub hi80: f64,
    pub lo95: f64,
    pub hi95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub stratum: Stratum,
    /// Calendar year the training window ends.
    pub train_end: i32,
    pub test_periods: String,
    pub variant: ModelVariant,
    pub n: usize,
    /// `None` when the stratum has no cells.
    pub mae: Option<f64>,
    pub cov80: Option<f64>,
    pub cov95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ReportRow>,
    pub cells: Vec<Cell>,
}

impl ValidationReport {
    /// Cells counted in `row`.
    pub fn cells_for(&self, row: &ReportRow) -> Vec<&Cell> {
        self.cells
            .iter()
            .filter(|c| c.variant == row.variant && row.stratum.contains(c.epidemic))
            .collect()
    }

    pub fn row(&self, stratum: Stratum, variant: ModelVariant) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.stratum == stratum && r.variant == variant)
    }
}

fn score(stratum: Stratum, variant: ModelVariant, spec: &ValidationSpec, cells: &[Cell]) -> ReportRow {
    let sel: Vec<&Cell> = cells
        .iter()
        .filter(|c| c.variant == variant && stratum.contains(c.epidemic))
        .collect();
    let pairs: Vec<(f64, f64)> = sel.iter().map(|c| (c.median, c.observed)).collect();
    let i80: Vec<(f64, f64, f64)> = sel.iter().map(|c| (c.lo80, c.hi80, c.observed)).collect();
    let i95: Vec<(f64, f64, f64)> = sel.iter().map(|c| (c.lo95, c.hi95, c.observed)).collect();
    ReportRow {
        stratum,
        train_end: spec.train_end.end_year(),
        test_periods: spec.test_label(),
        variant,
        n: sel.len(),
        mae: mae(&pairs).ok(),
        cov80: coverage(&i80).ok(),
        cov95: coverage(&i95).ok(),
    }
}

/// Fits both model variants on data up to `spec.train_end` and scores their
/// projections of the test periods.
///
/// Future covariates come from `inputs` when given, otherwise from each
/// country's recorded HIV and ART series.
pub fn run_validation(
    ds: &Dataset,
    spec: &ValidationSpec,
    pipeline: &PipelineConfig,
    projection: &ProjectionConfig,
    inputs: Option<&TrajectoryInputs>,
) -> Result<ValidationReport> {
    if spec.test_periods.is_empty() {
        return Err(Error::validation("no test periods"));
    }
    if let Some(p) = spec.test_periods.iter().find(|p| **p <= spec.train_end) {
        return Err(Error::validation(format!(
            "test period {p} is not after the training window ending {}",
            spec.train_end.end_year()
        )));
    }
    let has_test_data = ds
        .countries
        .iter()
        .any(|cs| spec.test_periods.iter().any(|p| cs.usable_e0(*p).is_some()));
    if !has_test_data {
        return Err(Error::validation("no observations in the test periods"));
    }
    let train = ds.truncated(spec.train_end)?;
    if train.periods.len() < 3 {
        return Err(Error::validation(format!(
            "training window ending {} has {} periods; need at least 3",
            spec.train_end.end_year(),
            train.periods.len()
        )));
    }
    let horizon = *spec.test_periods.iter().max().expect("non-empty");
    let proj_cfg = ProjectionConfig {
        horizon,
        quantiles: DEFAULT_QUANTILES.to_vec(),
        ..projection.clone()
    };

    let mut cells = Vec::new();
    for variant in [ModelVariant::NoCovariates, ModelVariant::Hna] {
        let mut cfg = *pipeline;
        cfg.fit.variant = variant;
        let fitted = fit_two_pass(&train, &cfg)
            .map_err(|e| with_context(e, &format!("fitting {} on data to {}", variant.label(), spec.train_end.end_year())))?;
        for (full, cs) in ds.countries.iter().zip(&train.countries) {
            let Some(start) = cs.last_usable_period() else { continue };
            let wanted: Vec<Period> = spec
                .test_periods
                .iter()
                .copied()
                .filter(|p| *p > start && full.usable_e0(*p).is_some() && !spec.excluded.contains(&(cs.code.clone(), *p)))
                .collect();
            if wanted.is_empty() {
                continue;
            }
            let cts = match inputs {
                Some(inp) => match covariates_from_inputs(full, start, horizon, inp)? {
                    Some((cts, _)) => cts,
                    None => {
                        return Err(Error::validation(format!(
                            "{}: epidemic country has no covariate trajectories",
                            cs.code
                        )))
                    }
                },
                None => covariates_from_observed(full, start, horizon),
            };
            let result = project_country(cs, &fitted.posterior, &cts, &fitted.variance, &proj_cfg)?;
            for p in wanted {
                let q = &result.fan.rows[&p];
                cells.push(Cell {
                    variant,
                    country: cs.code.clone(),
                    period: p,
                    epidemic: cs.epidemic,
                    observed: full.e0[&p],
                    median: q[2],
                    lo80: q[1],
                    hi80: q[3],
                    lo95: q[0],
                    hi95: q[4],
                });
            }
        }
    }
    let mut rows = Vec::new();
    for &stratum in &spec.strata {
        for variant in [ModelVariant::NoCovariates, ModelVariant::Hna] {
            rows.push(score(stratum, variant, spec, &cells));
        }
    }
    Ok(ValidationReport { rows, cells })
}

fn with_context(e: Error, what: &str) -> Error {
    match e {
        Error::Validation(m) => Error::Validation(format!("{what}: {m}")),
        Error::Fit(m) => Error::Fit(format!("{what}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{what}: {m}")),
        other => other,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `stratum,train_end,test_periods,variant,n,mae,cov80,cov95`.
pub fn report_csv(report: &ValidationReport) -> String {
    let mut s = String::from("stratum,train_end,test_periods,variant,n,mae,cov80,cov95\n");
    for r in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.stratum.label(),
            r.train_end,
            r.test_periods,
            r.variant.label(),
            r.n,
            opt(r.mae),
            opt(r.cov80),
            opt(r.cov95)
        ));
    }
    s
}

/// One row per scored cell and variant.
pub fn cells_csv(report: &ValidationReport) -> String {
    let mut s = String::from("variant,country,period,epidemic,observed,median,lo80,hi80,lo95,hi95\n");
    for c in &report.cells {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            c.variant.label(),
            c.country,
            c.period,
            c.epidemic as u8,
            c.observed,
            c.median,
            c.lo80,
            c.hi80,
            c.lo95,
            c.hi95
        ));
    }
    s
}

pub fn write_report(path: &Path, report: &ValidationReport) -> Result<()> {
    write_text(path, &report_csv(report))
}

pub fn write_cells(path: &Path, report: &ValidationReport) -> Result<()> {
    write_text(path, &cells_csv(report))
}

#[derive(Debug, Deserialize)]
struct ExclusionRow {
    country: String,
    year: i32,
}

/// Reads `country,year` cells to leave out; `year` is the period start year.
pub fn load_exclusions(path: &Path) -> Result<BTreeSet<(String, Period)>> {
    read_rows::<ExclusionRow>(path)?
        .into_iter()
        .map(|(line, r)| {
            Period::new(r.year)
                .map(|p| (r.country, p))
                .map_err(|e| Error::Parse {
                    file: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::FitConfig;
    use crate::synthetic::{simulate, SyntheticConfig};

    fn p(y: i32) -> Period {
        Period::new(y).unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[(1.0, 0.0), (0.0, 2.0), (3.0, 0.0)]).unwrap(), 2.0);
        assert_eq!(mae(&[(5.0, 5.0), (7.5, 7.5)]).unwrap(), 0.0);
        assert!(mae(&[]).is_err());
    }

    #[test]
    fn coverage_examples() {
        let cells = [(0.0, 1.0, 0.5), (0.0, 1.0, 2.0), (0.0, 1.0, 1.0), (0.0, 1.0, -0.1)];
        assert_eq!(coverage(&cells).unwrap(), 0.5);
        assert_eq!(coverage(&[(3.0, 3.0, 3.0)]).unwrap(), 1.0);
        assert!(coverage(&[]).is_err());
        assert!(coverage(&[(2.0, 1.0, 1.5)]).is_err());
    }

    fn quick_pipeline() -> PipelineConfig {
        PipelineConfig {
            fit: FitConfig {
                iterations: 400,
                burnin: 200,
                thin: 4,
                chains: 1,
                ..FitConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn report_shape_and_exclusions() {
        let (ds, _) = simulate(&SyntheticConfig { countries: 30, periods: 13, epidemic_fraction: 0.4, ..Default::default() }).unwrap();
        let mut spec = ValidationSpec::new(p(1995), vec![p(2000), p(2005), p(2010)]);
        let proj = ProjectionConfig::default();
        let full = run_validation(&ds, &spec, &quick_pipeline(), &proj, None).unwrap();
        assert_eq!(full.rows.len(), 4);
        let all = full.row(Stratum::All, ModelVariant::Hna).unwrap();
        assert_eq!(all.n, 90);
        assert_eq!(full.row(Stratum::Epidemic, ModelVariant::Hna).unwrap().n, 36);
        assert_eq!(all.test_periods, "2000-2015");
        assert_eq!(all.train_end, 2000);
        for r in &full.rows {
            assert_eq!(r.n, full.cells_for(r).len());
        }

        for cs in ds.countries.iter().take(12) {
            spec.excluded.insert((cs.code.clone(), p(2010)));
        }
        let fewer = run_validation(&ds, &spec, &quick_pipeline(), &proj, None).unwrap();
        assert_eq!(fewer.row(Stratum::All, ModelVariant::Hna).unwrap().n, 78);
        assert!(fewer.cells.iter().all(|c| !spec.excluded.contains(&(c.country.clone(), c.period))));
        let text = report_csv(&fewer);
        assert!(text.starts_with("stratum,train_end,test_periods,variant,n,mae,cov80,cov95\n"));
        assert!(text.contains("\nall,2000,2000-2015,dHnA,78,"));
        assert!(text.contains("\nepidemic,2000,2000-2015,No Covariates,"));
    }

    #[test]
    fn zero_covariates_give_identical_variants() {
        let (ds, _) = simulate(&SyntheticConfig { countries: 25, epidemic_fraction: 0.0, ..Default::default() }).unwrap();
        let spec = ValidationSpec::new(p(1995), vec![p(2000), p(2005)]);
        let r = run_validation(&ds, &spec, &quick_pipeline(), &ProjectionConfig::default(), None).unwrap();
        let a = r.row(Stratum::All, ModelVariant::Hna).unwrap();
        let b = r.row(Stratum::All, ModelVariant::NoCovariates).unwrap();
        assert_eq!((a.n, a.mae, a.cov80, a.cov95), (b.n, b.mae, b.cov80, b.cov95));
        assert_eq!(r.row(Stratum::Epidemic, ModelVariant::Hna).unwrap().n, 0);
        assert!(report_csv(&r).contains("epidemic,2000,2000-2010,dHnA,0,NA,NA,NA"));
    }

    #[test]
    fn rejects_bad_windows() {
        let (ds, _) = simulate(&SyntheticConfig { countries: 5, ..Default::default() }).unwrap();
        let proj = ProjectionConfig::default();
        let late = ValidationSpec::new(p(2020), vec![p(2025)]);
        assert!(run_validation(&ds, &late, &quick_pipeline(), &proj, None).is_err());
        let overlap = ValidationSpec::new(p(1990), vec![p(1990)]);
        assert!(run_validation(&ds, &overlap, &quick_pipeline(), &proj, None).is_err());
        let short = ValidationSpec::new(p(1955), vec![p(1960)]);
        assert!(run_validation(&ds, &short, &quick_pipeline(), &proj, None).is_err());
    }

    #[test]
    fn exclusion_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ex.csv");
        write_text(&path, "country,year\nAAA,2010\nBBB,2010\n").unwrap();
        let ex = load_exclusions(&path).unwrap();
        assert!(ex.contains(&("AAA".to_string(), p(2010))));
        assert_eq!(ex.len(), 2);
        write_text(&path, "country,year\nAAA,2011\n").unwrap();
        assert!(load_exclusions(&path).is_err());
    }
}
