//! Acceptance suite. Each test prints one PASS/FAIL line (written straight to
//! stdout so it shows without `--nocapture`) and then asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use lexproj::artifacts::{verify_manifest, MANIFEST_FILE};
use lexproj::covariate::CovariateLag;
use lexproj::data::{CountrySeries, Dataset, Period};
use lexproj::double_logistic::{first_term, gain, CountryParams, LogisticConstants};
use lexproj::loess::{fit_loess, tricube, LoessConfig};
use lexproj::mcmc::{
    country_params_update, fit_from, initial_state, omega_update, CountryModel, Diagnostics, Draw, FitConfig, Hyperpriors,
    Model, ModelVariant, Observation, PosteriorMeta, PosteriorSet, State, SweepStats, UpdateMask, WorldParams,
};
use lexproj::pipeline::{fit_two_pass, PipelineConfig};
use lexproj::projection::{project_country, quantile_sorted, ProjectionConfig};
use lexproj::synthetic::{simulate, SyntheticConfig};
use lexproj::trajectories::{
    build_covariate_trajectories, sample_trajectory, scale_additive, scale_multiplicative, CovariateTrajectorySet,
    YearlyTrajectorySet,
};
use lexproj::validation::{coverage, mae, report_csv, run_validation, Stratum, ValidationSpec};
use lexproj::variance::{build_variance_function, Residual, VarianceConfig, VarianceFunction};

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n:>2} {status}  {name}: {detail}");
    let _ = out.flush();
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn p(y: i32) -> Period {
    Period::new(y).unwrap()
}

/// Double logistic written out directly from its definition.
fn oracle_gain(ell: f64, th: &CountryParams) -> f64 {
    let a1 = 2.0 * 9f64.ln();
    let a2 = 0.5;
    let d = th.delta;
    let t1 = th.k / (1.0 + (-a1 / d[1] * (ell - d[0] - a2 * d[1])).exp());
    let t2 = (th.z - th.k) / (1.0 + (-a1 / d[3] * (ell - d[0] - d[1] - d[2] - a2 * d[3])).exp());
    t1 + t2
}

fn truth_world() -> WorldParams {
    SyntheticConfig::default().world
}

#[test]
fn criterion_01_synthetic_beta_recovery() {
    let beta_true = -0.01;
    let mut covered = 0;
    let mut lines = Vec::new();
    for r in 0..20u64 {
        let (ds, truth) = simulate(&SyntheticConfig { seed: 100 + r, ..Default::default() }).unwrap();
        assert_eq!(truth.config.world.beta, beta_true);
        assert_eq!(ds.countries.len(), 200);
        assert_eq!(ds.countries.iter().filter(|c| c.epidemic).count(), 40);
        let cfg = PipelineConfig {
            fit: FitConfig { seed: r + 1, ..FitConfig::desk() },
            ..PipelineConfig::default()
        };
        let out = fit_two_pass(&ds, &cfg).unwrap();
        let mut b = out.posterior.betas();
        b.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&b, 0.025), quantile_sorted(&b, 0.975));
        let hit = lo <= beta_true && beta_true <= hi;
        covered += hit as usize;
        lines.push(format!("[{lo:.5}, {hi:.5}]{}", if hit { "" } else { " miss" }));
    }
    eprintln!("beta intervals: {}", lines.join(" "));
    report(
        1,
        "synthetic beta recovery",
        covered >= 18,
        &format!("{covered}/20 95% intervals contain beta = {beta_true} (need 18)"),
    );
}

#[test]
fn criterion_02_beta_gibbs_matches_conjugate_normal() {
    let (ds, truth) = simulate(&SyntheticConfig {
        countries: 5,
        epidemic_fraction: 0.6,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let vf = VarianceFunction::constant(0.8);
    let n_draws = 100_000;
    let cfg = FitConfig {
        iterations: n_draws,
        burnin: 0,
        thin: 1,
        chains: 1,
        seed: 5,
        updates: UpdateMask {
            countries: false,
            world_means: false,
            world_sds: false,
            beta: true,
            omega: false,
        },
        ..FitConfig::desk()
    };
    let mut init = initial_state(5, &cfg, 0);
    init.world = truth_world();
    init.world.omega = 0.7;
    init.countries = truth.countries.iter().map(|c| c.params).collect();
    let post = fit_from(&ds, &vf, &cfg, std::slice::from_ref(&init)).unwrap();
    assert_eq!(post.len(), n_draws);
    assert!(post.draws.iter().all(|d| d.state.countries == init.countries && d.state.world.omega == 0.7));

    // Conjugate update computed from the raw observations.
    let model = Model::new(&ds, &vf, &cfg).unwrap();
    let w2 = init.world.omega * init.world.omega;
    let mut prec = 1.0 / model.beta_prior_var;
    let mut num = 0.0;
    let mut n_x = 0;
    for (cm, th) in model.countries.iter().zip(&init.countries) {
        for o in &cm.obs {
            let v = w2 * o.f * o.f;
            let r = o.gain - oracle_gain(o.ell, th);
            prec += o.x * o.x / v;
            num += o.x * r / v;
            n_x += (o.x != 0.0) as usize;
        }
    }
    assert!(n_x > 0);
    let (want_mean, want_sd) = (num / prec, prec.recip().sqrt());

    let b = post.betas();
    let n = b.len() as f64;
    let mean = b.iter().sum::<f64>() / n;
    let sd = (b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se_mean = want_sd / n.sqrt();
    let se_sd = want_sd / (2.0 * n).sqrt();
    let z_mean = (mean - want_mean) / se_mean;
    let z_sd = (sd - want_sd) / se_sd;
    report(
        2,
        "beta Gibbs vs conjugate Normal",
        z_mean.abs() < 3.0 && z_sd.abs() < 3.0,
        &format!("mean {mean:.6e} vs {want_mean:.6e} ({z_mean:+.2} SE), sd {sd:.6e} vs {want_sd:.6e} ({z_sd:+.2} SE)"),
    );
}

fn rigged_model(n: usize, theta: &CountryParams, resid: f64) -> Model {
    let obs = (0..n)
        .map(|i| {
            let ell = 35.0 + 2.0 * i as f64;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            Observation {
                period: p(1950 + 5 * i as i32),
                ell,
                gain: oracle_gain(ell, theta) + sign * resid,
                x: 0.0,
                f: 1.0,
            }
        })
        .collect();
    Model {
        countries: vec![CountryModel {
            code: "R".into(),
            epidemic: false,
            obs,
        }],
        consts: LogisticConstants::default(),
        beta_prior_var: 1.0,
        use_covariate: false,
    }
}

#[test]
fn criterion_03_slice_sampler_correctness() {
    let theta = CountryParams::new([10.0, 15.0, 17.0, 16.0], 3.0, 0.4);
    let (n, resid) = (20usize, 0.5);
    let model = rigged_model(n, &theta, resid);
    let priors = Hyperpriors::default();
    let mut state = State {
        world: WorldParams { omega: 2.0, beta: 0.0, ..truth_world() },
        countries: vec![theta],
    };

    // Oracle: p(w) proportional to w^-n exp(-S / 2w^2) on (0, 10], normalized on a grid.
    let s = n as f64 * resid * resid;
    let log_dens = |w: f64| -(n as f64) * w.ln() - s / (2.0 * w * w);
    let (bin_w, n_bins) = (0.01, 1000usize);
    let sub = 100;
    let mut oracle = vec![0.0; n_bins];
    for (b, o) in oracle.iter_mut().enumerate() {
        for j in 0..sub {
            let w = (b as f64 + (j as f64 + 0.5) / sub as f64) * bin_w;
            *o += log_dens(w).exp();
        }
    }
    let total: f64 = oracle.iter().sum();
    oracle.iter_mut().for_each(|o| *o /= total);

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut stats = SweepStats::default();
    for _ in 0..1000 {
        state.world.omega = omega_update(&model, &state, &priors, &mut rng, &mut stats);
    }
    let draws = 100_000;
    let mut hist = vec![0.0; n_bins];
    for _ in 0..draws {
        let w = omega_update(&model, &state, &priors, &mut rng, &mut stats);
        assert!(w > 0.0 && w <= priors.omega_max);
        state.world.omega = w;
        hist[((w / bin_w) as usize).min(n_bins - 1)] += 1.0 / draws as f64;
    }
    let tv = 0.5 * hist.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum::<f64>();

    // Truncation bounds under a hierarchy pressing on them.
    let world = WorldParams {
        delta_mean: [1.0, 99.0, 50.0, 2.0],
        delta_sd: [20.0, 20.0, 50.0, 30.0],
        k_mean: 9.8,
        k_sd: 3.0,
        z_mean: 0.64,
        z_sd: 0.3,
        omega: 1.5,
        beta: 0.0,
    };
    let limits = [(0.0, 100.0), (0.0, 100.0), (0.0, 100.0), (0.0, 100.0), (0.0, 10.0), (0.0, 0.653)];
    let mut th = theta;
    let mut violations = 0;
    let updates = 100_000;
    for _ in 0..updates {
        country_params_update(&model, 0, &world, &mut th, &mut rng, &mut stats);
        let ok = (0..6).all(|i| th.get(i) >= limits[i].0 && th.get(i) <= limits[i].1);
        violations += !ok as usize;
    }
    report(
        3,
        "slice sampler correctness",
        tv < 0.05 && violations == 0,
        &format!("omega TV distance {tv:.4} over {draws} draws; {violations} bound violations in {updates} theta updates"),
    );
}

fn theta_strategy() -> impl Strategy<Value = CountryParams> {
    (
        0.0..100.0f64,
        1e-3..100.0f64,
        0.0..100.0f64,
        1e-3..100.0f64,
        0.0..10.0f64,
        0.0..0.653f64,
    )
        .prop_map(|(d1, d2, d3, d4, k, z)| CountryParams::new([d1, d2, d3, d4], k, z))
}

#[test]
fn criterion_04_double_logistic_identities() {
    let consts = LogisticConstants::default();
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let result = runner.run(&(theta_strategy(), 0.0..120.0f64), |(th, ell)| {
        let lo = gain(-1e6, &th, &consts);
        let hi = gain(1e6, &th, &consts);
        prop_assert!(lo.is_finite() && hi.is_finite());
        prop_assert!(lo.abs() <= 1e-12, "lower limit {lo}");
        prop_assert!((hi - th.z).abs() <= 1e-12, "upper limit {hi} vs {}", th.z);
        let mid = th.delta[0] + consts.a2 * th.delta[1];
        prop_assert_eq!(first_term(mid, &th, &consts), th.k / 2.0);
        let g = gain(ell, &th, &consts);
        let want = oracle_gain(ell, &th);
        prop_assert!(g.is_finite());
        prop_assert!((g - want).abs() <= 1e-12 * (1.0 + want.abs()), "{g} vs {want}");
        Ok(())
    });
    let detail = match &result {
        Ok(()) => "1000 random parameter sets: limits 0 and z within 1e-12, midpoint k/2 exact, finite at +-1e6".to_string(),
        Err(e) => e.to_string(),
    };
    report(4, "double logistic identities", result.is_ok(), &detail);
}

/// Direct local weighted least squares at `x0`: tricube weights over the
/// `q` nearest points times `robust`, polynomial of `degree` in `x - x0`.
fn oracle_loess(pts: &[(f64, f64)], robust: &[f64], span: f64, degree: usize, x0: f64) -> f64 {
    let n = pts.len();
    let q = ((span * n as f64 + 1e-5).floor() as usize).clamp(degree + 1, n);
    let mut d: Vec<f64> = pts.iter().map(|(x, _)| (x - x0).abs()).collect();
    d.sort_by(f64::total_cmp);
    let h = d[q - 1];
    let m = degree + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for ((x, y), r) in pts.iter().zip(robust) {
        let w = tricube((x - x0).abs() / h) * r;
        let u = (x - x0) / h;
        let basis: Vec<f64> = (0..m).map(|j| u.powi(j as i32)).collect();
        for i in 0..m {
            for j in 0..m {
                a[i][j] += w * basis[i] * basis[j];
            }
            a[i][m] += w * basis[i] * y;
        }
    }
    // Gauss-Jordan with partial pivoting.
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    a[0][m] / a[0][0]
}

/// Probe points sorted and matched against input rows so robustness weights line up.
fn sorted_points(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts
}

#[test]
fn criterion_05_loess_oracle() {
    let probes = [41.0, 50.5, 62.25, 70.0, 83.9];
    let mut worst: f64 = 0.0;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let pts = sorted_points(
            (0..150 + 50 * seed as usize)
                .map(|_| {
                    let x: f64 = rng.random_range(40.0..85.0);
                    (x, 1.0 + 0.02 * x + 0.3 * (x / 7.0).sin() + noise.sample(&mut rng))
                })
                .collect(),
        );
        for cfg in [
            LoessConfig { robustness_iterations: 0, ..LoessConfig::default() },
            LoessConfig::default(),
            LoessConfig { span: 0.4, degree: 2, robustness_iterations: 2 },
        ] {
            let curve = fit_loess(&pts, cfg).unwrap();
            let robust = curve.robustness_weights().to_vec();
            if cfg.robustness_iterations == 0 {
                assert!(robust.iter().all(|w| *w == 1.0));
            }
            for &x0 in &probes {
                let want = oracle_loess(&pts, &robust, cfg.span, cfg.degree, x0);
                worst = worst.max((curve.eval(x0) - want).abs());
            }
        }
    }
    let linear: Vec<(f64, f64)> = (0..40).map(|i| (30.0 + 1.37 * i as f64, 2.0 + 0.5 * (30.0 + 1.37 * i as f64))).collect();
    let mut lin_err: f64 = 0.0;
    for cfg in [LoessConfig::default(), LoessConfig { degree: 2, ..LoessConfig::default() }] {
        let curve = fit_loess(&linear, cfg).unwrap();
        for x in [20.0, 30.0, 47.3, 60.0, 83.43, 95.0] {
            lin_err = lin_err.max((curve.eval(x) - (2.0 + 0.5 * x)).abs());
        }
    }
    report(
        5,
        "loess oracle",
        worst <= 1e-8 && lin_err <= 1e-9,
        &format!("max deviation from direct weighted least squares {worst:.2e}; linear data error {lin_err:.2e}"),
    );
}

#[test]
fn criterion_06_variance_splice() {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let scale = (std::f64::consts::PI / 2.0).sqrt();
    let mut residuals = Vec::new();
    // Same noise in both strata, the epidemic one shifted up by 0.8.
    for (epidemic, shift) in [(false, 0.0), (true, 0.8)] {
        for _ in 0..1500 {
            let z: f64 = StandardNormal.sample(&mut rng);
            residuals.push(Residual {
                epidemic,
                ell: rng.random_range(40.0..85.0),
                abs_residual: (z * 0.6 * scale).abs() + shift,
            });
        }
    }
    let vf = build_variance_function(&residuals, &VarianceConfig::default()).unwrap();
    let offset_ok = (vf.splice_offset - 0.8).abs() <= 0.1;
    let mut above_exact = true;
    let mut max_rule = true;
    let mut floor_ok = true;
    let mut checked = 0;
    for i in 0..=100_000 {
        let ell = 20.0 + i as f64 * 0.0009;
        let blue = vf.non_epidemic.eval(ell);
        let red = vf.epidemic_raw.eval(ell);
        let epi = vf.epidemic_curve(ell);
        if ell > 78.1 {
            above_exact &= epi == blue + vf.splice_offset;
        } else {
            max_rule &= epi == blue.max(red);
        }
        floor_ok &= vf.eval(ell, true) == epi.max(vf.f_min) && vf.eval(ell, false) == blue.max(vf.f_min);
        checked += 1;
    }
    report(
        6,
        "variance function splice",
        offset_ok && above_exact && max_rule && floor_ok,
        &format!(
            "offset {:.4} (target 0.8 +- 0.1); above-splice identity {above_exact}, max rule {max_rule}, floor {floor_ok} on {checked} grid points",
            vf.splice_offset
        ),
    );
}

fn oracle_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn yearly_set_strategy() -> impl Strategy<Value = YearlyTrajectorySet> {
    let years: Vec<i32> = (2015..2031).collect();
    let n_years = years.len();
    (
        proptest::collection::vec(0.5..20.0f64, n_years),
        prop::sample::select(vec![3usize, 5, 7, 9]),
        proptest::collection::vec(0.5..1.5f64, 9 * n_years),
    )
        .prop_map(move |(reference, k, factors)| {
            let sims = (0..k)
                .map(|s| {
                    years
                        .iter()
                        .enumerate()
                        .map(|(j, &y)| (y, reference[j] * factors[s * n_years + j]))
                        .collect()
                })
                .collect();
            YearlyTrajectorySet {
                country: "T".into(),
                years: years.clone(),
                reference: years.iter().copied().zip(reference.iter().copied()).collect(),
                sims,
            }
        })
}

#[test]
fn criterion_07_trajectory_invariants() {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 300,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let medians = runner.run(&yearly_set_strategy(), |ts| {
        let mult = scale_multiplicative(&ts).unwrap();
        let add = scale_additive(&ts).unwrap();
        for &y in &ts.years {
            let r = ts.reference[&y];
            prop_assert_eq!(oracle_median(mult.iter().map(|s| s[&y]).collect()), r);
            // Reference <= 20 and factors in [0.5, 1.5] keep additive values inside [0, 100].
            prop_assert_eq!(oracle_median(add.iter().map(|s| s[&y]).collect()), r);
        }
        Ok(())
    });

    let periods: Vec<Period> = (0..10).map(|i| p(2015 + 5 * i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let prevalence: Vec<BTreeMap<Period, f64>> = (0..6)
        .map(|_| periods.iter().map(|&q| (q, rng.random_range(0.0..25.0))).collect())
        .collect();
    let art: BTreeMap<Period, f64> = periods.iter().map(|&q| (q, rng.random_range(0.0..100.0))).collect();
    let last = 812.5;
    let cts = build_covariate_trajectories("T", &prevalence, &art, last, &periods).unwrap();
    let mut telescope_err: f64 = 0.0;
    for (k, path) in cts.dhna.iter().enumerate() {
        let mut h = last;
        for &q in &periods {
            h += path[&q];
            let want = prevalence[k][&q] * (100.0 - art[&q]);
            telescope_err = telescope_err.max((h - want).abs());
        }
    }

    let four = CovariateTrajectorySet::zeros("T", &periods, 4);
    let mut counts = [0usize; 4];
    let n = 100_000;
    for _ in 0..n {
        counts[sample_trajectory(&four, &mut rng)] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|c| *c as f64 / n as f64).collect();
    let freq_ok = freq.iter().all(|f| (f - 0.25).abs() <= 0.01);

    let detail = format!(
        "scaled medians {}; telescoping error {telescope_err:.1e}; K=4 frequencies {:?}",
        match &medians {
            Ok(()) => "exact in 300 cases".to_string(),
            Err(e) => e.to_string(),
        },
        freq.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>()
    );
    report(
        7,
        "trajectory invariants",
        medians.is_ok() && telescope_err <= 1e-10 && freq_ok,
        &detail,
    );
}

fn epidemic_country(code: &str) -> CountrySeries {
    let years = (0..7).map(|i| p(1980 + 5 * i));
    let e0 = years.clone().enumerate().map(|(i, q)| (q, 50.0 + 1.5 * i as f64)).collect();
    let hiv = years.clone().zip([0.5, 3.0, 8.0, 12.0, 11.0, 9.0, 7.5]).collect();
    let art = years.zip([0.0, 0.0, 0.0, 5.0, 20.0, 40.0, 55.0]).collect();
    CountrySeries {
        code: code.into(),
        name: code.into(),
        epidemic: true,
        e0,
        hiv_prev: hiv,
        art_cov: art,
        masked: BTreeSet::new(),
    }
}

fn point_posterior(code: &str, state: State, n: usize, variant: ModelVariant) -> PosteriorSet {
    PosteriorSet {
        country_codes: vec![code.into()],
        draws: (0..n).map(|i| Draw { chain: 0, iteration: i, state: state.clone() }).collect(),
        meta: PosteriorMeta {
            chains: 1,
            iterations: n,
            burnin: 0,
            thin: 1,
            seed: 1,
            variant,
            lag: CovariateLag::Lag1,
            consts: LogisticConstants::default(),
        },
        diagnostics: Diagnostics::default(),
    }
}

#[test]
fn criterion_08_projection_calibration() {
    let cs = epidemic_country("E");
    let start = p(2010);
    let horizon = p(2050);
    let theta = CountryParams::new([12.0, 14.0, 18.0, 15.0], 3.5, 0.45);
    let world = WorldParams { omega: 0.9, beta: -0.004, ..truth_world() };
    let vf = VarianceFunction::constant(1.1);
    let post = point_posterior("E", State { world, countries: vec![theta] }, 2000, ModelVariant::Hna);

    let future: Vec<Period> = start.next().range_to(horizon).collect();
    let path: BTreeMap<Period, f64> = future.iter().enumerate().map(|(i, &q)| (q, -60.0 + 5.0 * i as f64)).collect();
    let cts = CovariateTrajectorySet {
        country: "E".into(),
        periods: future.clone(),
        dhna: vec![path.clone()],
    };
    let probs: Vec<f64> = [0.01, 0.025, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.975, 0.99].to_vec();
    let cfg = ProjectionConfig {
        horizon,
        draws_per_sample: 10,
        seed: 8,
        quantiles: probs.clone(),
        ..ProjectionConfig::default()
    };
    let res = project_country(&cs, &post, &cts, &vf, &cfg).unwrap();
    assert_eq!(res.trajectories.len(), 20_000);
    assert_eq!(res.periods, future);
    let monotone = res.fan.rows.values().all(|q| q.windows(2).all(|w| w[0] <= w[1]));
    let (i_lo, i_hi) = (1, probs.len() - 2);

    // Independent futures from the same parameters.
    let hna = |q: Period| cs.hiv_prev[&q] * (100.0 - cs.art_cov[&q]);
    let first_x = hna(start) - hna(start.prev());
    let reps = 10_000;
    let mut hits = vec![0usize; future.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for _ in 0..reps {
        let mut ell = cs.e0[&start];
        for (j, &q) in future.iter().enumerate() {
            let x = if j == 0 { first_x } else { path[&future[j - 1]] };
            let z: f64 = StandardNormal.sample(&mut rng);
            ell = (ell + oracle_gain(ell, &theta) + world.beta * x + world.omega * 1.1 * z).clamp(20.0, 120.0);
            let row = &res.fan.rows[&q];
            hits[j] += (row[i_lo] <= ell && ell <= row[i_hi]) as usize;
        }
    }
    let cov: Vec<f64> = hits.iter().map(|h| *h as f64 / reps as f64).collect();
    let cov_ok = cov.iter().all(|c| (c - 0.95).abs() <= 0.02);
    report(
        8,
        "projection calibration",
        cov_ok && monotone,
        &format!(
            "95% fan coverage per period {:?} over {reps} futures; fans monotone {monotone}",
            cov.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn criterion_09_non_epidemic_neutrality() {
    let (ds, _) = simulate(&SyntheticConfig { countries: 30, epidemic_fraction: 0.0, seed: 9, ..Default::default() }).unwrap();
    let fit_cfg = |variant| PipelineConfig {
        fit: FitConfig { iterations: 600, burnin: 200, thin: 4, chains: 2, seed: 4, variant, ..FitConfig::default() },
        ..PipelineConfig::default()
    };
    let with = fit_two_pass(&ds, &fit_cfg(ModelVariant::Hna)).unwrap();
    let without = fit_two_pass(&ds, &fit_cfg(ModelVariant::NoCovariates)).unwrap();
    assert!(with.posterior.betas().iter().any(|b| *b != 0.0));
    assert!(without.posterior.betas().iter().all(|b| *b == 0.0));

    let cfg = ProjectionConfig { horizon: p(2060), draws_per_sample: 2, seed: 12, ..ProjectionConfig::default() };
    let mut identical = 0;
    let codes = ["S000", "S013", "S029"];
    for code in codes {
        let cs = ds.country(code).unwrap();
        let start = cs.last_usable_period().unwrap();
        let future: Vec<Period> = start.next().range_to(cfg.horizon).collect();
        let cts = CovariateTrajectorySet::zeros(code, &future, 3);
        let a = project_country(cs, &with.posterior, &cts, &with.variance, &cfg).unwrap();
        let b = project_country(cs, &without.posterior, &cts, &without.variance, &cfg).unwrap();
        let bits = |r: &lexproj::projection::ProjectionResult| -> Vec<u64> {
            r.trajectories.iter().flatten().map(|v| v.to_bits()).collect()
        };
        let fan_bits = |r: &lexproj::projection::ProjectionResult| -> Vec<u64> {
            r.fan.rows.values().flatten().map(|v| v.to_bits()).collect()
        };
        identical += (bits(&a) == bits(&b) && fan_bits(&a) == fan_bits(&b)) as usize;
    }
    report(
        9,
        "non-epidemic neutrality",
        identical == codes.len(),
        &format!("{identical}/{} zero-covariate countries project bitwise identically under both models", codes.len()),
    );
}

fn lexproj(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lexproj"))
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "lexproj {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// Prevalence trajectories and a flat ART projection for every epidemic country.
fn write_trajectory_inputs(dir: &Path, ds: &Dataset) {
    let mut traj = String::from("country,sim,year,prevalence\n");
    let mut art = String::from("country,year,coverage\n");
    for cs in ds.countries.iter().filter(|c| c.epidemic) {
        let last = *cs.hiv_prev.values().last().unwrap();
        for sim in 0..5 {
            for y in 2005..=2060 {
                let v = last * (1.0 + 0.05 * sim as f64) * (1.0 - (y - 2005) as f64 / 120.0);
                traj.push_str(&format!("{},{sim},{y},{v}\n", cs.code));
            }
        }
        for y in 2005..=2060 {
            art.push_str(&format!("{},{y},{}\n", cs.code, 60.0 + 0.5 * (y - 2005) as f64));
        }
    }
    std::fs::write(dir.join("traj.csv"), traj).unwrap();
    std::fs::write(dir.join("artp.csv"), art).unwrap();
}

fn pipeline_run(dir: &Path) {
    lexproj(dir, &["simulate-synthetic", "--countries", "25", "--epidemic-fraction", "0.2", "--seed", "3", "--out", "data"]);
    let data = ["--e0", "data/e0.csv", "--hiv", "data/hiv.csv", "--art", "data/art.csv", "--mask", "data/mask.csv"];
    let short = ["--iterations", "500", "--burnin", "100", "--thin", "4", "--chains", "2", "--seed", "21"];
    let mut fit_args = vec!["fit", "--out", "run"];
    fit_args.extend(data);
    fit_args.extend(short);
    lexproj(dir, &fit_args);

    let (ds, _) = simulate(&SyntheticConfig { countries: 25, epidemic_fraction: 0.2, seed: 3, ..Default::default() }).unwrap();
    write_trajectory_inputs(dir, &ds);
    let mut proj_args = vec![
        "project", "--run", "run", "--out", "proj", "--horizon", "2050", "--seed", "5", "--trajectories", "traj.csv",
        "--art-projection", "artp.csv", "--write-trajectories", "--write-dhna",
    ];
    proj_args.extend(data);
    lexproj(dir, &proj_args);

    let mut val_args = vec!["validate", "--out", "val", "--train-end", "2000", "--test", "2000,2005"];
    val_args.extend(data);
    val_args.extend(short);
    lexproj(dir, &val_args);
}

fn collect_files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline_run(a.path());
    pipeline_run(b.path());
    let fa = collect_files(a.path());
    let fb = collect_files(b.path());
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let same_set = fa.keys().eq(fb.keys());

    let mut bad = Vec::new();
    let mut manifests = 0;
    for sub in ["data", "run", "proj", "val"] {
        let m = a.path().join(sub).join(MANIFEST_FILE);
        bad.extend(verify_manifest(&m, a.path()).unwrap());
        manifests += 1;
    }
    let projections = fa.keys().filter(|k| k.starts_with("proj") && k.contains("projection_")).count();
    report(
        10,
        "end-to-end determinism",
        same_set && differing.is_empty() && bad.is_empty() && projections == 25,
        &format!(
            "{} files byte-identical across two runs ({} differ); {manifests} manifests verified, {} hash mismatches",
            fa.len(),
            differing.len(),
            bad.len()
        ),
    );
}

#[test]
fn criterion_11_validation_metrics() {
    let mae_cases: [(&[(f64, f64)], f64); 3] = [
        (&[(1.0, 0.0), (0.0, 2.0), (3.0, 0.0)], 2.0),
        (&[(70.25, 70.0), (60.0, 61.5)], 0.875),
        (&[(5.0, 5.0)], 0.0),
    ];
    let cov_cases: [(&[(f64, f64, f64)], f64); 3] = [
        (&[(0.0, 1.0, 0.5), (0.0, 1.0, 2.0), (0.0, 1.0, 1.0), (0.0, 1.0, -0.1)], 0.5),
        (&[(60.0, 70.0, 60.0), (60.0, 70.0, 70.0), (60.0, 70.0, 59.999), (60.0, 70.0, 65.0)], 0.75),
        (&[(1.0, 1.0, 1.0)], 1.0),
    ];
    let metrics_exact = mae_cases.iter().all(|(c, want)| mae(c).unwrap() == *want)
        && cov_cases.iter().all(|(c, want)| coverage(c).unwrap() == *want)
        && mae(&[]).is_err()
        && coverage(&[(2.0, 1.0, 1.5)]).is_err();

    let (ds, _) = simulate(&SyntheticConfig { countries: 30, periods: 13, epidemic_fraction: 0.4, seed: 12, ..Default::default() }).unwrap();
    let pipeline = PipelineConfig {
        fit: FitConfig { iterations: 400, burnin: 100, thin: 4, chains: 1, seed: 2, ..FitConfig::default() },
        ..PipelineConfig::default()
    };
    let proj = ProjectionConfig { draws_per_sample: 2, ..ProjectionConfig::default() };
    let tests = vec![p(2000), p(2005), p(2010)];
    let full = run_validation(&ds, &ValidationSpec::new(p(1995), tests.clone()), &pipeline, &proj, None).unwrap();

    let mut spec = ValidationSpec::new(p(1995), tests);
    let epi_codes: Vec<&str> = ds.countries.iter().filter(|c| c.epidemic).map(|c| c.code.as_str()).take(4).collect();
    let other_codes: Vec<&str> = ds.countries.iter().filter(|c| !c.epidemic).map(|c| c.code.as_str()).take(4).collect();
    for code in epi_codes.iter().take(3) {
        spec.excluded.insert((code.to_string(), p(2005)));
    }
    for code in &other_codes {
        spec.excluded.insert((code.to_string(), p(2000)));
        spec.excluded.insert((code.to_string(), p(2010)));
    }
    // A cell outside the test window changes nothing.
    spec.excluded.insert((epi_codes[3].to_string(), p(1990)));
    let cut = run_validation(&ds, &spec, &pipeline, &proj, None).unwrap();

    let n = |r: &lexproj::validation::ValidationReport, s| r.row(s, ModelVariant::Hna).unwrap().n;
    let n_epi = ds.countries.iter().filter(|c| c.epidemic).count();
    let counts_ok = n(&full, Stratum::All) == 90
        && n(&full, Stratum::Epidemic) == 3 * n_epi
        && n(&cut, Stratum::All) == 90 - 11
        && n(&cut, Stratum::Epidemic) == 3 * n_epi - 3;

    // Report metrics recomputed from the scored cells.
    let mut rows_ok = true;
    for row in &cut.rows {
        let cells = cut.cells_for(row);
        let m = cells.iter().map(|c| (c.median - c.observed).abs()).sum::<f64>() / cells.len() as f64;
        let c95 = cells.iter().filter(|c| c.lo95 <= c.observed && c.observed <= c.hi95).count() as f64 / cells.len() as f64;
        rows_ok &= (row.mae.unwrap() - m).abs() <= 1e-12 * m.max(1.0) && row.cov95.unwrap() == c95 && row.n == cells.len();
    }
    let header_ok = report_csv(&cut).lines().next() == Some("stratum,train_end,test_periods,variant,n,mae,cov80,cov95");
    report(
        11,
        "validation metrics oracle",
        metrics_exact && counts_ok && rows_ok && header_ok,
        &format!(
            "fixtures exact {metrics_exact}; n all {} -> {}, epidemic {} -> {} after 12 exclusions (1 outside the window); rows recomputed {rows_ok}; header {header_ok}",
            n(&full, Stratum::All),
            n(&cut, Stratum::All),
            n(&full, Stratum::Epidemic),
            n(&cut, Stratum::Epidemic)
        ),
    );
}
