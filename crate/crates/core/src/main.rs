use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lexproj::artifacts::{
    read_json, read_posterior, read_variance, write_json, write_posterior, write_variance, RunManifest,
    DIAGNOSTICS_FILE, FCURVES_FILE, MANIFEST_FILE, POSTERIOR_FILE, VARIANCE_FILE,
};
use lexproj::covariate::{CovariateLag, MissingCovariate};
use lexproj::data::{load_dataset, write_dataset, write_text, Dataset, DatasetFiles, Period};
use lexproj::mcmc::{FitConfig, ModelVariant, PosteriorMeta};
use lexproj::pipeline::{fit_two_pass, PipelineConfig};
use lexproj::projection::{project_country, write_projection, ProjectionConfig, DEFAULT_QUANTILES};
use lexproj::synthetic::{simulate, SyntheticConfig};
use lexproj::trajectories::{
    covariates_from_inputs, load_art_projection, load_yearly_trajectories, write_dhna, ScaleMode, TrajectoryInputs,
    DEFAULT_ADDITIVE_THRESHOLD,
};
use lexproj::validation::{load_exclusions, run_validation, write_cells, write_report, ValidationSpec};

const EXIT_USAGE: u8 = 64;

/// Bad command-line or config-file input, reported with exit code 64.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

#[derive(Parser)]
#[command(name = "lexproj", version, about = "Probabilistic life expectancy projection with an HIV/ART covariate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the model and write posterior draws.
    Fit(FitArgs),
    /// Project life expectancy from a fitted run.
    Project(ProjectArgs),
    /// Fit on a training window and score projections of held-out periods.
    Validate(ValidateArgs),
    /// Write a dataset simulated from known parameters.
    SimulateSynthetic(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// Key-value TOML file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Life expectancy CSV (`country,name,year,e0`).
    #[arg(long)]
    e0: PathBuf,
    /// HIV prevalence CSV (`country,year,prevalence`).
    #[arg(long)]
    hiv: Option<PathBuf>,
    /// ART coverage CSV (`country,year,coverage`).
    #[arg(long)]
    art: Option<PathBuf>,
    /// Periods to leave out of fitting (`country,year`).
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Preset {
    /// 2 chains x 3,000 iterations.
    Desk,
    /// 4 chains x 60,000 iterations.
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    Hna,
    NoCovariates,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum MissingArg {
    Zero,
    Exclude,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ScaleArg {
    Auto,
    Multiplicative,
    Additive,
}

#[derive(Args)]
struct FitOptions {
    /// Run size (default: full); explicit iteration flags override it.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// 1: gain from t uses HnA[t] - HnA[t-1]; 0: uses HnA[t+1] - HnA[t].
    #[arg(long)]
    lag: Option<u8>,
    #[arg(long, value_enum)]
    missing_covariate: Option<MissingArg>,
    /// Constant noise scale for the first pass.
    #[arg(long)]
    bootstrap_f: Option<f64>,
    /// Keep the first-pass posterior instead of refitting under the rebuilt noise scale.
    #[arg(long)]
    no_refit: bool,
    #[arg(long)]
    beta_prior_var: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitOptions,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrajectoryArgs {
    /// Yearly prevalence trajectories (`country,sim,year,prevalence`, sim 0 = reference).
    #[arg(long)]
    trajectories: Option<PathBuf>,
    /// Yearly ART coverage projection (`country,year,coverage`).
    #[arg(long)]
    art_projection: Option<PathBuf>,
    #[arg(long, value_enum)]
    scale_mode: Option<ScaleArg>,
    /// Countries always scaled additively, comma separated.
    #[arg(long, value_delimiter = ',')]
    additive_countries: Vec<String>,
    /// Median prevalence (percent) below which auto mode switches to additive.
    #[arg(long)]
    additive_threshold: Option<f64>,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory of a `fit` run.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    traj: TrajectoryArgs,
    /// Start year of the last projected period.
    #[arg(long)]
    horizon: Option<i32>,
    /// Countries to project, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    countries: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    quantiles: Vec<f64>,
    #[arg(long)]
    draws_per_sample: Option<usize>,
    /// Also write every simulated trajectory.
    #[arg(long)]
    write_trajectories: bool,
    /// Also write the covariate paths used.
    #[arg(long)]
    write_dhna: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    fit: FitOptions,
    #[command(flatten)]
    traj: TrajectoryArgs,
    /// Calendar year the training window ends (e.g. 2005 keeps periods up to 2000-2005).
    #[arg(long)]
    train_end: i32,
    /// Start years of the test periods, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    test: Vec<i32>,
    /// Country-period cells to leave out of scoring (`country,year`).
    #[arg(long)]
    exclude: Option<PathBuf>,
    #[arg(long)]
    draws_per_sample: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    countries: Option<usize>,
    #[arg(long)]
    periods: Option<usize>,
    #[arg(long)]
    start_year: Option<i32>,
    #[arg(long)]
    epidemic_fraction: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    preset: Option<Preset>,
    iterations: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
    chains: Option<usize>,
    lag: Option<u8>,
    missing_covariate: Option<MissingArg>,
    bootstrap_f: Option<f64>,
    refit: Option<bool>,
    beta_prior_var: Option<f64>,
    variant: Option<VariantArg>,
    horizon: Option<i32>,
    quantiles: Option<Vec<f64>>,
    draws_per_sample: Option<usize>,
    scale_mode: Option<ScaleArg>,
    additive_countries: Option<Vec<String>>,
    additive_threshold: Option<f64>,
    countries: Option<usize>,
    periods: Option<usize>,
    start_year: Option<i32>,
    epidemic_fraction: Option<f64>,
    beta: Option<f64>,
    omega: Option<f64>,
}

fn load_config(common: &Common) -> anyhow::Result<FileConfig> {
    let Some(path) = &common.config else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match toml::from_str(&text) {
        Ok(c) => Ok(c),
        Err(e) => usage(format!("{}: {e}", path.display())),
    }
}

fn setup_threads(common: &Common, file: &FileConfig) -> anyhow::Result<()> {
    if let Some(n) = common.threads.or(file.threads) {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn pipeline_config(opts: &FitOptions, file: &FileConfig, seed: u64, variant: ModelVariant) -> anyhow::Result<PipelineConfig> {
    let base = match opts.preset.or(file.preset).unwrap_or(Preset::Full) {
        Preset::Desk => FitConfig::desk(),
        Preset::Full => FitConfig::default(),
    };
    let lag = match opts.lag.or(file.lag) {
        Some(v) => match CovariateLag::from_int(v) {
            Ok(l) => l,
            Err(e) => return usage(e.to_string()),
        },
        None => CovariateLag::default(),
    };
    let mut fit = FitConfig {
        iterations: opts.iterations.or(file.iterations).unwrap_or(base.iterations),
        burnin: opts.burnin.or(file.burnin).unwrap_or(base.burnin),
        thin: opts.thin.or(file.thin).unwrap_or(base.thin),
        chains: opts.chains.or(file.chains).unwrap_or(base.chains),
        seed,
        lag,
        missing_covariate: match opts.missing_covariate.or(file.missing_covariate) {
            Some(MissingArg::Exclude) => MissingCovariate::Exclude,
            _ => MissingCovariate::Zero,
        },
        variant,
        ..base
    };
    fit.priors.beta_prior_var = opts.beta_prior_var.or(file.beta_prior_var);
    if let Err(e) = fit.validate() {
        return usage(e.to_string());
    }
    Ok(PipelineConfig {
        fit,
        bootstrap_f: opts.bootstrap_f.or(file.bootstrap_f).unwrap_or(1.0),
        refit: if opts.no_refit { false } else { file.refit.unwrap_or(true) },
        ..PipelineConfig::default()
    })
}

fn variant_of(v: Option<VariantArg>) -> ModelVariant {
    match v {
        Some(VariantArg::NoCovariates) => ModelVariant::NoCovariates,
        _ => ModelVariant::Hna,
    }
}

fn load_data(d: &DataArgs) -> anyhow::Result<Dataset> {
    Ok(load_dataset(&d.e0, d.hiv.as_deref(), d.art.as_deref(), d.mask.as_deref())?)
}

fn record_data_inputs(m: &mut RunManifest, d: &DataArgs) -> anyhow::Result<()> {
    m.add_input("e0", &d.e0)?;
    for (role, p) in [("hiv", &d.hiv), ("art", &d.art), ("mask", &d.mask)] {
        if let Some(p) = p {
            m.add_input(role, p)?;
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Serialize, Deserialize)]
struct FitRecord {
    pipeline: PipelineConfig,
    posterior: PosteriorMeta,
}

fn cmd_fit(args: FitArgs) -> anyhow::Result<()> {
    let file = load_config(&args.common)?;
    setup_threads(&args.common, &file)?;
    let seed = args.common.seed.or(file.seed).unwrap_or(1);
    let variant = variant_of(args.variant.or(file.variant));
    let cfg = pipeline_config(&args.fit, &file, seed, variant)?;
    let ds = load_data(&args.data)?;
    let out = fit_two_pass(&ds, &cfg)?;

    create_dir(&args.out)?;
    write_posterior(&args.out.join(POSTERIOR_FILE), &out.posterior)?;
    write_variance(&args.out.join(VARIANCE_FILE), &out.variance)?;
    write_text(&args.out.join(FCURVES_FILE), &out.rebuilt_variance.table(20.0, 90.0))?;
    write_json(&args.out.join(DIAGNOSTICS_FILE), &out.posterior.diagnostics)?;

    let record = FitRecord {
        pipeline: cfg,
        posterior: out.posterior.meta.clone(),
    };
    let mut m = RunManifest::new("fit", seed, &record)?;
    record_data_inputs(&mut m, &args.data)?;
    for f in [POSTERIOR_FILE, VARIANCE_FILE, FCURVES_FILE, DIAGNOSTICS_FILE] {
        m.add_output(&args.out, f)?;
    }
    if out.pooled {
        m.notes.push("a stratum had too few residuals; one pooled noise curve serves both".into());
    }
    if let Some(r) = out.posterior.diagnostics.max_rhat() {
        m.notes.push(format!("largest R-hat {r:.3}"));
    }
    m.write(&args.out)?;
    eprintln!(
        "fit: {} draws for {} countries written to {}",
        out.posterior.len(),
        out.posterior.country_codes.len(),
        args.out.display()
    );
    Ok(())
}

fn trajectory_inputs(t: &TrajectoryArgs, file: &FileConfig) -> anyhow::Result<Option<TrajectoryInputs>> {
    let (yearly, art) = match (&t.trajectories, &t.art_projection) {
        (None, None) => return Ok(None),
        (Some(y), Some(a)) => (load_yearly_trajectories(y)?, load_art_projection(a)?),
        _ => return usage("--trajectories and --art-projection go together"),
    };
    let mode = match t.scale_mode.or(file.scale_mode) {
        Some(ScaleArg::Multiplicative) => ScaleMode::Multiplicative,
        Some(ScaleArg::Additive) => ScaleMode::Additive,
        _ => ScaleMode::Auto,
    };
    let additive: BTreeSet<String> = if t.additive_countries.is_empty() {
        file.additive_countries.clone().unwrap_or_default().into_iter().collect()
    } else {
        t.additive_countries.iter().cloned().collect()
    };
    Ok(Some(TrajectoryInputs {
        yearly,
        art,
        mode,
        additive_countries: additive,
        threshold: t.additive_threshold.or(file.additive_threshold).unwrap_or(DEFAULT_ADDITIVE_THRESHOLD),
    }))
}

fn record_trajectory_inputs(m: &mut RunManifest, t: &TrajectoryArgs) -> anyhow::Result<()> {
    if let Some(p) = &t.trajectories {
        m.add_input("trajectories", p)?;
    }
    if let Some(p) = &t.art_projection {
        m.add_input("art_projection", p)?;
    }
    Ok(())
}

fn period_arg(year: i32, what: &str) -> anyhow::Result<Period> {
    match Period::new(year) {
        Ok(p) => Ok(p),
        Err(_) => usage(format!("{what} {year} is not a multiple of 5")),
    }
}

fn projection_config(
    common_seed: u64,
    horizon: Option<i32>,
    quantiles: &[f64],
    draws: Option<usize>,
    file: &FileConfig,
) -> anyhow::Result<ProjectionConfig> {
    let horizon = horizon.or(file.horizon).unwrap_or(2095);
    let quantiles = if !quantiles.is_empty() {
        quantiles.to_vec()
    } else {
        file.quantiles.clone().unwrap_or_else(|| DEFAULT_QUANTILES.to_vec())
    };
    let cfg = ProjectionConfig {
        horizon: period_arg(horizon, "horizon")?,
        draws_per_sample: draws.or(file.draws_per_sample).unwrap_or(1),
        seed: common_seed,
        quantiles,
        ..ProjectionConfig::default()
    };
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    Ok(cfg)
}

fn cmd_project(args: ProjectArgs) -> anyhow::Result<()> {
    let file = load_config(&args.common)?;
    setup_threads(&args.common, &file)?;
    let seed = args.common.seed.or(file.seed).unwrap_or(1);
    let cfg = projection_config(seed, args.horizon, &args.quantiles, args.draws_per_sample, &file)?;

    let fit_manifest: RunManifest = read_json(&args.run.join(MANIFEST_FILE))?;
    let record: FitRecord = serde_json::from_value(fit_manifest.config)
        .with_context(|| format!("{} is not a fit manifest", args.run.join(MANIFEST_FILE).display()))?;
    let posterior = read_posterior(&args.run.join(POSTERIOR_FILE), record.posterior)?;
    let vf = read_variance(&args.run.join(VARIANCE_FILE))?;
    let ds = load_data(&args.data)?;
    let inputs = trajectory_inputs(&args.traj, &file)?.unwrap_or_else(|| TrajectoryInputs {
        threshold: DEFAULT_ADDITIVE_THRESHOLD,
        ..Default::default()
    });

    let codes: Vec<String> = if args.countries.is_empty() {
        posterior.country_codes.clone()
    } else {
        args.countries.clone()
    };
    let mut jobs = Vec::new();
    let mut lacking = Vec::new();
    for code in &codes {
        let cs = ds
            .country(code)
            .with_context(|| format!("country {code} is not in the data"))?;
        if posterior.country_index(code).is_none() {
            bail!(lexproj::Error::Validation(format!("country {code} is not in the posterior")));
        }
        let start = cs
            .last_usable_period()
            .with_context(|| format!("{code}: no usable life expectancy"))?;
        match covariates_from_inputs(cs, start, cfg.horizon, &inputs)? {
            Some((cts, _)) => jobs.push((cs, cts)),
            None => lacking.push(code.clone()),
        }
    }
    if !lacking.is_empty() {
        bail!(lexproj::Error::Validation(format!(
            "epidemic countries without covariate trajectories: {}",
            lacking.join(",")
        )));
    }

    create_dir(&args.out)?;
    let mut m = RunManifest::new("project", seed, &cfg)?;
    record_data_inputs(&mut m, &args.data)?;
    record_trajectory_inputs(&mut m, &args.traj)?;
    for f in [MANIFEST_FILE, POSTERIOR_FILE, VARIANCE_FILE] {
        m.add_input("fit", &args.run.join(f))?;
    }
    for (cs, cts) in &jobs {
        let r = project_country(cs, &posterior, cts, &vf, &cfg)?;
        write_projection(&args.out, &r, args.write_trajectories)?;
        m.add_output(&args.out, &format!("projection_{}.csv", cs.code))?;
        if args.write_trajectories {
            m.add_output(&args.out, &format!("trajectories_{}.csv", cs.code))?;
        }
    }
    if args.write_dhna {
        let sets: Vec<_> = jobs.iter().map(|(_, c)| c).collect();
        write_dhna(&args.out.join("dhna.csv"), &sets)?;
        m.add_output(&args.out, "dhna.csv")?;
    }
    m.write(&args.out)?;
    eprintln!("project: {} countries to {} written to {}", jobs.len(), cfg.horizon, args.out.display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> anyhow::Result<()> {
    let file = load_config(&args.common)?;
    setup_threads(&args.common, &file)?;
    let seed = args.common.seed.or(file.seed).unwrap_or(1);
    let pipeline = pipeline_config(&args.fit, &file, seed, ModelVariant::Hna)?;
    let proj = projection_config(seed, None, &[], args.draws_per_sample, &file)?;
    let train_end = period_arg(args.train_end - Period::LENGTH, "training end year")?;
    let tests = args
        .test
        .iter()
        .map(|y| period_arg(*y, "test period"))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut spec = ValidationSpec::new(train_end, tests);
    if let Some(p) = &args.exclude {
        spec.excluded = load_exclusions(p)?;
    }
    let ds = load_data(&args.data)?;
    let inputs = trajectory_inputs(&args.traj, &file)?;
    let report = run_validation(&ds, &spec, &pipeline, &proj, inputs.as_ref())?;

    create_dir(&args.out)?;
    write_report(&args.out.join("validation_report.csv"), &report)?;
    write_cells(&args.out.join("validation_cells.csv"), &report)?;
    #[derive(Serialize)]
    struct ValidateRecord<'a> {
        pipeline: &'a PipelineConfig,
        projection: &'a ProjectionConfig,
        train_end: i32,
        test: &'a [i32],
    }
    let record = ValidateRecord {
        pipeline: &pipeline,
        projection: &proj,
        train_end: args.train_end,
        test: &args.test,
    };
    let mut m = RunManifest::new("validate", seed, &record)?;
    record_data_inputs(&mut m, &args.data)?;
    record_trajectory_inputs(&mut m, &args.traj)?;
    if let Some(p) = &args.exclude {
        m.add_input("exclude", p)?;
    }
    m.add_output(&args.out, "validation_report.csv")?;
    m.add_output(&args.out, "validation_cells.csv")?;
    m.write(&args.out)?;
    eprintln!("validate: report written to {}", args.out.join("validation_report.csv").display());
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let file = load_config(&args.common)?;
    let d = SyntheticConfig::default();
    let mut cfg = SyntheticConfig {
        countries: args.countries.or(file.countries).unwrap_or(d.countries),
        periods: args.periods.or(file.periods).unwrap_or(d.periods),
        start_year: args.start_year.or(file.start_year).unwrap_or(d.start_year),
        epidemic_fraction: args.epidemic_fraction.or(file.epidemic_fraction).unwrap_or(d.epidemic_fraction),
        seed: args.common.seed.or(file.seed).unwrap_or(d.seed),
        ..d
    };
    cfg.world.beta = args.beta.or(file.beta).unwrap_or(d.world.beta);
    cfg.world.omega = args.omega.or(file.omega).unwrap_or(d.world.omega);
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    let (ds, truth) = simulate(&cfg)?;
    create_dir(&args.out)?;
    write_dataset(&ds, &DatasetFiles::in_dir(&args.out))?;
    write_json(&args.out.join("truth.json"), &truth)?;
    let mut m = RunManifest::new("simulate-synthetic", cfg.seed, &cfg)?;
    for f in ["e0.csv", "hiv.csv", "art.csv", "mask.csv", "truth.json"] {
        m.add_output(&args.out, f)?;
    }
    m.write(&args.out)?;
    eprintln!("simulate-synthetic: {} countries written to {}", ds.countries.len(), args.out.display());
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<lexproj::Error>() {
        Some(err) => err.exit_code() as u8,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Project(a) => cmd_project(a),
        Command::Validate(a) => cmd_validate(a),
        Command::SimulateSynthetic(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
