//! Observation data: five-year periods, per-country series and the CSV
//! loaders/writers for them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A five-year period keyed by its start year; `Period(1950)` covers 1950-1955.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period(i32);

impl Period {
    pub const LENGTH: i32 = 5;

    pub fn new(start_year: i32) -> Result<Self> {
        if start_year.rem_euclid(Self::LENGTH) != 0 {
            return Err(Error::validation(format!(
                "period start year {start_year} is not a multiple of 5"
            )));
        }
        Ok(Period(start_year))
    }

    /// The period containing calendar year `year`.
    pub fn containing(year: i32) -> Self {
        Period(year.div_euclid(Self::LENGTH) * Self::LENGTH)
    }

    pub fn start_year(self) -> i32 {
        self.0
    }

    pub fn end_year(self) -> i32 {
        self.0 + Self::LENGTH
    }

    pub fn next(self) -> Self {
        Period(self.0 + Self::LENGTH)
    }

    pub fn prev(self) -> Self {
        Period(self.0 - Self::LENGTH)
    }

    /// Periods from `self` through `last` inclusive.
    pub fn range_to(self, last: Period) -> impl Iterator<Item = Period> {
        (self.0..=last.0).step_by(Self::LENGTH as usize).map(Period)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountrySeries {
    pub code: String,
    pub name: String,
    pub epidemic: bool,
    pub e0: BTreeMap<Period, f64>,
    /// HIV prevalence in percent; empty for countries absent from the HIV file.
    pub hiv_prev: BTreeMap<Period, f64>,
    /// ART coverage in percent.
    pub art_cov: BTreeMap<Period, f64>,
    pub masked: BTreeSet<Period>,
}

impl CountrySeries {
    pub fn is_masked(&self, p: Period) -> bool {
        self.masked.contains(&p)
    }

    /// Unmasked life expectancy at `p`.
    pub fn usable_e0(&self, p: Period) -> Option<f64> {
        if self.is_masked(p) {
            None
        } else {
            self.e0.get(&p).copied()
        }
    }

    pub fn first_period(&self) -> Option<Period> {
        self.e0.keys().next().copied()
    }

    pub fn last_period(&self) -> Option<Period> {
        self.e0.keys().next_back().copied()
    }

    /// Last unmasked observed period.
    pub fn last_usable_period(&self) -> Option<Period> {
        self.e0.keys().rev().find(|p| !self.is_masked(**p)).copied()
    }

    /// Prevalence at `p`, zero-coded for non-epidemic countries.
    pub fn prevalence(&self, p: Period) -> Option<f64> {
        if !self.epidemic {
            return Some(0.0);
        }
        self.hiv_prev.get(&p).copied()
    }

    /// A copy with life expectancy restricted to periods `<= last`.
    /// Covariate series are kept whole.
    pub fn truncated(&self, last: Period) -> CountrySeries {
        let mut out = self.clone();
        out.e0.retain(|p, _| *p <= last);
        out.masked.retain(|p| *p <= last);
        out
    }
}

/// Five-year gains `e0[t+1] - e0[t]` keyed by `t`, over unmasked consecutive pairs.
pub fn delta_e0(cs: &CountrySeries) -> BTreeMap<Period, f64> {
    cs.e0
        .keys()
        .filter_map(|&t| {
            let now = cs.usable_e0(t)?;
            let next = cs.usable_e0(t.next())?;
            Some((t, next - now))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub countries: Vec<CountrySeries>,
    pub periods: Vec<Period>,
}

impl Dataset {
    /// Validates invariants and fills in the period grid.
    pub fn new(countries: Vec<CountrySeries>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for cs in &countries {
            if !seen.insert(cs.code.as_str()) {
                return Err(Error::validation(format!("duplicate country code {}", cs.code)));
            }
            validate_series(cs)?;
        }
        let first = countries.iter().filter_map(|c| c.first_period()).min();
        let last = countries.iter().filter_map(|c| c.last_period()).max();
        let periods = match (first, last) {
            (Some(a), Some(b)) => a.range_to(b).collect(),
            _ => Vec::new(),
        };
        Ok(Dataset { countries, periods })
    }

    pub fn country(&self, code: &str) -> Option<&CountrySeries> {
        self.countries.iter().find(|c| c.code == code)
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c.code == code)
    }

    /// Every country truncated to life expectancy observations `<= last`.
    pub fn truncated(&self, last: Period) -> Result<Dataset> {
        Dataset::new(self.countries.iter().map(|c| c.truncated(last)).collect())
    }
}

fn validate_series(cs: &CountrySeries) -> Result<()> {
    for (p, v) in &cs.e0 {
        if !(v.is_finite() && *v > 0.0 && *v < 120.0) {
            return Err(Error::validation(format!(
                "{} {p}: life expectancy {v} outside (0, 120)",
                cs.code
            )));
        }
    }
    for (what, series) in [("HIV prevalence", &cs.hiv_prev), ("ART coverage", &cs.art_cov)] {
        for (p, v) in series {
            if !(v.is_finite() && (0.0..=100.0).contains(v)) {
                return Err(Error::validation(format!(
                    "{} {p}: {what} {v} outside [0, 100]",
                    cs.code
                )));
            }
        }
    }
    if !cs.epidemic && cs.hiv_prev.values().any(|v| *v != 0.0) {
        return Err(Error::validation(format!(
            "{}: non-epidemic country with nonzero HIV prevalence",
            cs.code
        )));
    }
    if let (Some(a), Some(b)) = (cs.first_period(), cs.last_period()) {
        for p in a.range_to(b) {
            if !cs.e0.contains_key(&p) && !cs.masked.contains(&p) {
                return Err(Error::validation(format!(
                    "{} {p}: interior gap in life expectancy series (mask it explicitly)",
                    cs.code
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct E0Row {
    country: String,
    name: String,
    year: i32,
    e0: f64,
}

#[derive(Debug, Deserialize)]
struct HivRow {
    country: String,
    year: i32,
    prevalence: f64,
}

#[derive(Debug, Deserialize)]
struct ArtRow {
    country: String,
    year: i32,
    coverage: f64,
}

#[derive(Debug, Deserialize)]
struct MaskRow {
    country: String,
    year: i32,
}

/// Reads a CSV file into typed rows, tagging each with its 1-based line number.
pub(crate) fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!();
    }
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn row_period(path: &Path, line: u64, year: i32) -> Result<Period> {
    Period::new(year).map_err(|_| Error::Parse {
        file: path.to_path_buf(),
        line,
        message: format!("year {year} is not a five-year period start"),
    })
}

/// Loads and validates a dataset.
///
/// Countries absent from the HIV file (or listed with all-zero prevalence)
/// are non-epidemic. Epidemic countries with no ART row for a period are
/// treated as having 0% coverage there by the covariate builder.
pub fn load_dataset(
    e0_path: &Path,
    hiv_path: Option<&Path>,
    art_path: Option<&Path>,
    mask_path: Option<&Path>,
) -> Result<Dataset> {
    let mut order: Vec<String> = Vec::new();
    let mut by_code: HashMap<String, CountrySeries> = HashMap::new();
    for (line, row) in read_rows::<E0Row>(e0_path)? {
        let p = row_period(e0_path, line, row.year)?;
        let cs = by_code.entry(row.country.clone()).or_insert_with(|| {
            order.push(row.country.clone());
            CountrySeries {
                code: row.country.clone(),
                name: row.name.clone(),
                epidemic: false,
                e0: BTreeMap::new(),
                hiv_prev: BTreeMap::new(),
                art_cov: BTreeMap::new(),
                masked: BTreeSet::new(),
            }
        });
        if !(row.e0.is_finite() && row.e0 > 0.0 && row.e0 < 120.0) {
            return Err(Error::validation(format!(
                "{} {p}: life expectancy {} outside (0, 120) ({}:{line})",
                row.country,
                row.e0,
                e0_path.display()
            )));
        }
        if cs.e0.insert(p, row.e0).is_some() {
            return Err(Error::validation(format!(
                "duplicate life expectancy row for ({}, {p}) ({}:{line})",
                row.country,
                e0_path.display()
            )));
        }
    }

    if let Some(path) = hiv_path {
        for (line, row) in read_rows::<HivRow>(path)? {
            let p = row_period(path, line, row.year)?;
            let cs = get_country(&mut by_code, &row.country, path, line)?;
            check_percent(&row.country, p, "HIV prevalence", row.prevalence, path, line)?;
            if cs.hiv_prev.insert(p, row.prevalence).is_some() {
                return Err(Error::validation(format!(
                    "duplicate HIV row for ({}, {p}) ({}:{line})",
                    row.country,
                    path.display()
                )));
            }
        }
    }
    if let Some(path) = art_path {
        for (line, row) in read_rows::<ArtRow>(path)? {
            let p = row_period(path, line, row.year)?;
            let cs = get_country(&mut by_code, &row.country, path, line)?;
            check_percent(&row.country, p, "ART coverage", row.coverage, path, line)?;
            if cs.art_cov.insert(p, row.coverage).is_some() {
                return Err(Error::validation(format!(
                    "duplicate ART row for ({}, {p}) ({}:{line})",
                    row.country,
                    path.display()
                )));
            }
        }
    }
    if let Some(path) = mask_path {
        for (line, row) in read_rows::<MaskRow>(path)? {
            let p = row_period(path, line, row.year)?;
            let cs = get_country(&mut by_code, &row.country, path, line)?;
            cs.masked.insert(p);
        }
    }
    for cs in by_code.values_mut() {
        cs.epidemic = cs.hiv_prev.values().any(|v| *v > 0.0);
    }
    let countries = order
        .into_iter()
        .map(|code| by_code.remove(&code).expect("country registered"))
        .collect();
    Dataset::new(countries)
}

fn get_country<'a>(
    by_code: &'a mut HashMap<String, CountrySeries>,
    code: &str,
    path: &Path,
    line: u64,
) -> Result<&'a mut CountrySeries> {
    by_code.get_mut(code).ok_or_else(|| {
        Error::validation(format!(
            "country {code} has no life expectancy rows ({}:{line})",
            path.display()
        ))
    })
}

fn check_percent(code: &str, p: Period, what: &str, v: f64, path: &Path, line: u64) -> Result<()> {
    if v.is_finite() && (0.0..=100.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{code} {p}: {what} {v} outside [0, 100] ({}:{line})",
            path.display()
        )))
    }
}

/// File names used by [`write_dataset`].
pub struct DatasetFiles {
    pub e0: PathBuf,
    pub hiv: PathBuf,
    pub art: PathBuf,
    pub mask: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetFiles {
            e0: dir.join("e0.csv"),
            hiv: dir.join("hiv.csv"),
            art: dir.join("art.csv"),
            mask: dir.join("mask.csv"),
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes the four CSV files of `ds` in the loader's schema.
pub fn write_dataset(ds: &Dataset, files: &DatasetFiles) -> Result<()> {
    let mut e0 = String::from("country,name,year,e0\n");
    let mut hiv = String::from("country,year,prevalence\n");
    let mut art = String::from("country,year,coverage\n");
    let mut mask = String::from("country,year\n");
    for cs in &ds.countries {
        for (p, v) in &cs.e0 {
            e0.push_str(&format!("{},{},{p},{v}\n", cs.code, quote(&cs.name)));
        }
        for (p, v) in &cs.hiv_prev {
            hiv.push_str(&format!("{},{p},{v}\n", cs.code));
        }
        for (p, v) in &cs.art_cov {
            art.push_str(&format!("{},{p},{v}\n", cs.code));
        }
        for p in &cs.masked {
            mask.push_str(&format!("{},{p}\n", cs.code));
        }
    }
    write_text(&files.e0, &e0)?;
    write_text(&files.hiv, &hiv)?;
    write_text(&files.art, &art)?;
    write_text(&files.mask, &mask)
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
