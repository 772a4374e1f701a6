//! On-disk run outputs: posterior draws, noise-scale curves and manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{read_rows, write_text};
use crate::double_logistic::CountryParams;
use crate::error::{Error, Result};
use crate::mcmc::{Diagnostics, Draw, PosteriorMeta, PosteriorSet, State, WorldParams};
use crate::variance::VarianceFunction;

pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const VARIANCE_FILE: &str = "variance.json";
pub const FCURVES_FILE: &str = "fcurves.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

fn country_param_name(param: &str, code: &str) -> String {
    format!("{param}[{code}]")
}

/// Long format: one row per draw and parameter,
/// `draw,chain,iteration,parameter,value`.
pub fn posterior_csv(post: &PosteriorSet) -> String {
    let per_draw = WorldParams::NAMES.len() + post.country_codes.len() * CountryParams::LEN;
    let mut s = String::with_capacity(40 * per_draw * post.len() + 64);
    s.push_str("draw,chain,iteration,parameter,value\n");
    let names: Vec<Vec<String>> = post
        .country_codes
        .iter()
        .map(|c| CountryParams::NAMES.iter().map(|n| country_param_name(n, c)).collect())
        .collect();
    for (i, d) in post.draws.iter().enumerate() {
        let prefix = format!("{},{},{}", i + 1, d.chain, d.iteration);
        for (name, v) in WorldParams::NAMES.iter().zip(d.state.world.to_vec()) {
            s.push_str(&format!("{prefix},{name},{v}\n"));
        }
        for (th, cn) in d.state.countries.iter().zip(&names) {
            for (j, name) in cn.iter().enumerate() {
                s.push_str(&format!("{prefix},{name},{}\n", th.get(j)));
            }
        }
    }
    s
}

pub fn write_posterior(path: &Path, post: &PosteriorSet) -> Result<()> {
    write_text(path, &posterior_csv(post))
}

#[derive(Debug, Deserialize)]
struct PosteriorRow {
    draw: usize,
    chain: usize,
    iteration: usize,
    parameter: String,
    value: f64,
}

/// Reads a long-format posterior file. Diagnostics are not stored there and
/// come back empty.
pub fn read_posterior(path: &Path, meta: PosteriorMeta) -> Result<PosteriorSet> {
    let bad = |line: u64, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        message,
    };
    let mut codes: Vec<String> = Vec::new();
    let mut code_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut draws: Vec<(usize, usize, Vec<f64>, Vec<[f64; 6]>)> = Vec::new();
    for (line, row) in read_rows::<PosteriorRow>(path)? {
        if row.draw == 0 || row.draw > draws.len() + 1 {
            return Err(bad(line, format!("draw {} out of sequence", row.draw)));
        }
        if row.draw == draws.len() + 1 {
            draws.push((row.chain, row.iteration, vec![f64::NAN; WorldParams::NAMES.len()], Vec::new()));
        }
        let d = &mut draws[row.draw - 1];
        if let Some(j) = WorldParams::NAMES.iter().position(|n| *n == row.parameter) {
            d.2[j] = row.value;
            continue;
        }
        let (param, code) = row
            .parameter
            .strip_suffix(']')
            .and_then(|s| s.split_once('['))
            .ok_or_else(|| bad(line, format!("unknown parameter {}", row.parameter)))?;
        let j = CountryParams::NAMES
            .iter()
            .position(|n| *n == param)
            .ok_or_else(|| bad(line, format!("unknown parameter {}", row.parameter)))?;
        let c = *code_index.entry(code.to_string()).or_insert_with(|| {
            codes.push(code.to_string());
            codes.len() - 1
        });
        if d.3.len() <= c {
            d.3.resize(c + 1, [f64::NAN; 6]);
        }
        d.3[c][j] = row.value;
    }
    let mut out = Vec::with_capacity(draws.len());
    for (i, (chain, iteration, world, countries)) in draws.into_iter().enumerate() {
        if world.iter().any(|v| v.is_nan())
            || countries.len() != codes.len()
            || countries.iter().flatten().any(|v| v.is_nan())
        {
            return Err(Error::validation(format!(
                "{}: draw {} is missing parameters",
                path.display(),
                i + 1
            )));
        }
        out.push(Draw {
            chain,
            iteration,
            state: State {
                world: WorldParams::from_slice(&world),
                countries: countries
                    .iter()
                    .map(|v| CountryParams::new([v[0], v[1], v[2], v[3]], v[4], v[5]))
                    .collect(),
            },
        });
    }
    Ok(PosteriorSet {
        country_codes: codes,
        draws: out,
        meta,
        diagnostics: Diagnostics::default(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::validation(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

pub fn write_variance(path: &Path, vf: &VarianceFunction) -> Result<()> {
    write_json(path, vf)
}

pub fn read_variance(path: &Path) -> Result<VarianceFunction> {
    read_json(path)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(role: &str, path: &Path) -> Result<Self> {
        Ok(FileHash {
            role: role.to_string(),
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

/// Record of one command run. Output paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub software: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` when set.
    pub created_unix: u64,
    pub notes: Vec<String>,
}

/// `SOURCE_DATE_EPOCH` if set, otherwise the current time.
pub fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            software: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config).map_err(|e| Error::validation(e.to_string()))?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            created_unix: timestamp(),
            notes: Vec::new(),
        })
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(FileHash::of(role, path)?);
        Ok(())
    }

    /// Hashes `dir/name` and records it under `name`.
    pub fn add_output(&mut self, dir: &Path, name: &str) -> Result<()> {
        let mut h = FileHash::of("output", &dir.join(name))?;
        h.path = PathBuf::from(name);
        self.outputs.push(h);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }
}

/// Checks every recorded hash; returns the files that do not match.
/// Relative input paths are resolved against `base`, outputs against the
/// manifest's directory.
pub fn verify_manifest(manifest_path: &Path, base: &Path) -> Result<Vec<PathBuf>> {
    let m: RunManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut bad = Vec::new();
    let check = |p: PathBuf, want: &str, bad: &mut Vec<PathBuf>| match sha256_file(&p) {
        Ok(h) if h == want => {}
        _ => bad.push(p),
    };
    for f in &m.inputs {
        let p = if f.path.is_absolute() { f.path.clone() } else { base.join(&f.path) };
        check(p, &f.sha256, &mut bad);
    }
    for f in &m.outputs {
        check(dir.join(&f.path), &f.sha256, &mut bad);
    }
    Ok(bad)
}
