//! Normal distribution truncated to a finite interval `[lo, hi]`.

use rand::Rng;
use statrs::function::erf::{erf, erfc, erfc_inv};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Upper tail `P(N > x)` of the standard normal, on the log scale.
fn ln_upper_tail(x: f64) -> f64 {
    if x < 30.0 {
        (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic expansion; erfc underflows here.
        let x2 = x * x;
        -0.5 * x2 - x.ln() - LN_SQRT_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
fn ln_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        a
    } else {
        a + (-(b - a).exp()).ln_1p()
    }
}

/// `ln(Phi(beta) - Phi(alpha))` for standardized bounds `alpha < beta`.
pub fn ln_mass(alpha: f64, beta: f64) -> f64 {
    if alpha >= 0.0 {
        ln_diff_exp(ln_upper_tail(alpha), ln_upper_tail(beta))
    } else if beta <= 0.0 {
        ln_diff_exp(ln_upper_tail(-beta), ln_upper_tail(-alpha))
    } else {
        let r = std::f64::consts::SQRT_2;
        (0.5 * (erf(beta / r) - erf(alpha / r))).ln()
    }
}

/// Log of the normalizing mass of `N(mu, sigma^2)` on `[lo, hi]`.
pub fn ln_normalizer(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    ln_mass((lo - mu) / sigma, (hi - mu) / sigma)
}

/// Log density of the truncated normal; `-inf` outside the support.
pub fn ln_pdf(x: f64, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if !(x >= lo && x <= hi) || !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    ln_pdf_unnormalized(x, mu, sigma) - ln_normalizer(mu, sigma, lo, hi)
}

/// Normal log density including `-ln sigma`, without the truncation mass.
#[inline]
pub fn ln_pdf_unnormalized(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_inv_cdf(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Inverse-CDF draw from the truncated normal.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let alpha = (lo - mu) / sigma;
    let beta = (hi - mu) / sigma;
    // Work in the lower tail for precision.
    let (a, b, flip) = if alpha > 0.0 { (-beta, -alpha, true) } else { (alpha, beta, false) };
    let pa = std_normal_cdf(a);
    let pb = std_normal_cdf(b);
    let u: f64 = rng.random();
    let z = std_normal_inv_cdf(pa + u * (pb - pa)).clamp(a, b);
    let z = if flip { -z } else { z };
    (mu + sigma * z).clamp(lo, hi)
}
