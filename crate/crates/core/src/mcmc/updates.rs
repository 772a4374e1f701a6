use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::double_logistic::{gain, CountryParams};
use crate::slice::{slice_sample, SliceTuning};
use crate::truncnorm;

use super::model::Model;
use super::{Hyperpriors, State, WorldParams};

/// Counters accumulated over sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub country_updates: u64,
    pub country_stalls: u64,
    pub mean_proposals: u64,
    pub mean_accepts: u64,
    pub hyper_updates: u64,
    pub hyper_stalls: u64,
    pub omega_updates: u64,
    pub omega_stalls: u64,
}

impl SweepStats {
    pub fn merge(&mut self, o: &SweepStats) {
        self.country_updates += o.country_updates;
        self.country_stalls += o.country_stalls;
        self.mean_proposals += o.mean_proposals;
        self.mean_accepts += o.mean_accepts;
        self.hyper_updates += o.hyper_updates;
        self.hyper_stalls += o.hyper_stalls;
        self.omega_updates += o.omega_updates;
        self.omega_stalls += o.omega_stalls;
    }
}

/// Slice-samples each of the six curve parameters of country `c` in turn.
pub fn country_params_update<R: Rng + ?Sized>(
    model: &Model,
    c: usize,
    world: &WorldParams,
    theta: &mut CountryParams,
    rng: &mut R,
    stats: &mut SweepStats,
) {
    for i in 0..CountryParams::LEN {
        let (lo, hi) = CountryParams::bounds(i);
        let (mu, sd) = (world.mean(i), world.sd(i));
        let mut work = *theta;
        let mut log_f = |v: f64| {
            work.set(i, v);
            let z = (v - mu) / sd;
            model.country_kernel(c, &work, world.omega, world.beta) - 0.5 * z * z
        };
        let x0 = theta.get(i);
        let f0 = log_f(x0);
        let out = slice_sample(rng, x0, f0, &mut log_f, lo, hi, &SliceTuning::for_support(lo, hi));
        theta.set(i, out.value);
        stats.country_updates += 1;
        stats.country_stalls += out.stalled as u64;
    }
}

/// Log full conditional of a hierarchy scale, up to a constant.
fn sd_log_conditional(values: &[f64], mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if !(sd > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = values.len() as f64;
    let ss: f64 = values.iter().map(|x| (x - mu).powi(2)).sum();
    -0.5 * ss / (sd * sd) - n * sd.ln() - n * truncnorm::ln_normalizer(mu, sd, lo, hi)
}

/// Log full conditional of a hierarchy location under its uniform prior.
fn mean_log_conditional(values: &[f64], mu: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if !(mu >= lo && mu <= hi) {
        return f64::NEG_INFINITY;
    }
    let n = values.len() as f64;
    let ss: f64 = values.iter().map(|x| (x - mu).powi(2)).sum();
    -0.5 * ss / (sd * sd) - n * truncnorm::ln_normalizer(mu, sd, lo, hi)
}

/// Updates the six hierarchy locations and scales given the country draws.
///
/// A location is proposed from the untruncated conjugate Normal `N(mean, sd^2/n)`
/// and accepted with probability `(Z(old)/Z(new))^n`, where `Z` is the
/// truncation mass; this corrects the proposal to the truncated likelihood
/// under a uniform prior. Each location then also gets a slice step on its
/// exact conditional. Scales are slice-sampled.
pub fn world_params_update<R: Rng + ?Sized>(
    state: &mut State,
    priors: &Hyperpriors,
    update_means: bool,
    update_sds: bool,
    rng: &mut R,
    stats: &mut SweepStats,
) {
    let n = state.countries.len();
    let mut values = vec![0.0; n];
    for i in 0..CountryParams::LEN {
        let (lo, hi) = CountryParams::bounds(i);
        for (v, th) in values.iter_mut().zip(&state.countries) {
            *v = th.get(i);
        }
        let w = &mut state.world;
        if update_means {
            stats.mean_proposals += 1;
            let sd = w.sd(i);
            if n == 0 {
                w.set_mean(i, rng.random_range(lo..=hi));
                stats.mean_accepts += 1;
            } else {
                let xbar = values.iter().sum::<f64>() / n as f64;
                let z: f64 = StandardNormal.sample(rng);
                let prop = xbar + z * sd / (n as f64).sqrt();
                if prop >= lo && prop <= hi {
                    let old = w.mean(i);
                    let ln_r = n as f64
                        * (truncnorm::ln_normalizer(old, sd, lo, hi) - truncnorm::ln_normalizer(prop, sd, lo, hi));
                    if ln_r >= 0.0 || rng.random::<f64>().ln() < ln_r {
                        w.set_mean(i, prop);
                        stats.mean_accepts += 1;
                    }
                }
                // The proposal ignores truncation, so it is rarely accepted
                // when the truncation mass changes quickly with the location.
                // A slice step on the exact conditional keeps such states moving.
                let log_f = |m: f64| mean_log_conditional(&values, m, sd, lo, hi);
                let x0 = w.mean(i);
                let out = slice_sample(rng, x0, log_f(x0), log_f, lo, hi, &SliceTuning::for_support(lo, hi));
                w.set_mean(i, out.value);
                stats.hyper_updates += 1;
                stats.hyper_stalls += out.stalled as u64;
            }
        }
        if update_sds {
            let mu = w.mean(i);
            let smax = priors.sd_max[i];
            let log_f = |s: f64| sd_log_conditional(&values, mu, s, lo, hi);
            let x0 = w.sd(i);
            let out = slice_sample(rng, x0, log_f(x0), log_f, 0.0, smax, &SliceTuning::for_support(0.0, smax));
            w.set_sd(i, out.value);
            stats.hyper_updates += 1;
            stats.hyper_stalls += out.stalled as u64;
        }
    }
}

/// Mean and variance of the Normal full conditional of the covariate coefficient.
pub fn beta_conditional(model: &Model, state: &State) -> (f64, f64) {
    let w2 = state.world.omega * state.world.omega;
    let mut precision = 1.0 / model.beta_prior_var;
    let mut num = 0.0;
    for (cm, th) in model.countries.iter().zip(&state.countries) {
        for o in &cm.obs {
            if o.x == 0.0 {
                continue;
            }
            let v = w2 * o.f * o.f;
            let r = o.gain - gain(o.ell, th, &model.consts);
            precision += o.x * o.x / v;
            num += o.x * r / v;
        }
    }
    (num / precision, 1.0 / precision)
}

/// Exact Gibbs draw of the covariate coefficient.
pub fn beta_gibbs_update<R: Rng + ?Sized>(model: &Model, state: &State, rng: &mut R) -> f64 {
    let (m, v) = beta_conditional(model, state);
    let z: f64 = StandardNormal.sample(rng);
    m + z * v.sqrt()
}

/// Sufficient statistics for the noise multiplier: observation count and
/// the sum of squared scaled residuals.
fn omega_stats(model: &Model, state: &State) -> (f64, f64) {
    let beta = state.world.beta;
    let mut n = 0.0;
    let mut s = 0.0;
    for (cm, th) in model.countries.iter().zip(&state.countries) {
        for o in &cm.obs {
            let r = (o.gain - gain(o.ell, th, &model.consts) - beta * o.x) / o.f;
            s += r * r;
            n += 1.0;
        }
    }
    (n, s)
}

/// Log full conditional of the noise multiplier, up to a constant, given
/// `n` observations with sum of squared scaled residuals `s`.
pub fn omega_log_conditional(omega: f64, n: f64, s: f64) -> f64 {
    if !(omega > 0.0) {
        return f64::NEG_INFINITY;
    }
    -n * omega.ln() - s / (2.0 * omega * omega)
}

/// Slice-samples the noise multiplier on `(0, omega_max]`.
pub fn omega_update<R: Rng + ?Sized>(
    model: &Model,
    state: &State,
    priors: &Hyperpriors,
    rng: &mut R,
    stats: &mut SweepStats,
) -> f64 {
    let (n, s) = omega_stats(model, state);
    let log_f = |w: f64| omega_log_conditional(w, n, s);
    let x0 = state.world.omega;
    let hi = priors.omega_max;
    let out = slice_sample(rng, x0, log_f(x0), log_f, 0.0, hi, &SliceTuning::for_support(0.0, hi));
    stats.omega_updates += 1;
    stats.omega_stalls += out.stalled as u64;
    out.value
}
