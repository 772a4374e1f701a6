//! Expected five-year gain in life expectancy as a double logistic function
//! of the current level.

use serde::{Deserialize, Serialize};

/// Upper truncation bound for each phase parameter.
pub const DELTA_MAX: f64 = 100.0;
/// Upper truncation bound for the peak-gain parameter.
pub const K_MAX: f64 = 10.0;
/// Upper truncation bound for the asymptotic gain.
pub const Z_MAX: f64 = 0.653;

/// The six country-level curve parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountryParams {
    pub delta: [f64; 4],
    pub k: f64,
    pub z: f64,
}

impl CountryParams {
    pub const LEN: usize = 6;
    pub const NAMES: [&'static str; 6] = ["delta1", "delta2", "delta3", "delta4", "k", "z"];

    pub fn new(delta: [f64; 4], k: f64, z: f64) -> Self {
        CountryParams { delta, k, z }
    }

    pub fn get(&self, i: usize) -> f64 {
        match i {
            0..=3 => self.delta[i],
            4 => self.k,
            5 => self.z,
            _ => panic!("parameter index {i} out of range"),
        }
    }

    pub fn set(&mut self, i: usize, v: f64) {
        match i {
            0..=3 => self.delta[i] = v,
            4 => self.k = v,
            5 => self.z = v,
            _ => panic!("parameter index {i} out of range"),
        }
    }

    /// Truncation support `[lo, hi]` of component `i`.
    pub fn bounds(i: usize) -> (f64, f64) {
        match i {
            0..=3 => (0.0, DELTA_MAX),
            4 => (0.0, K_MAX),
            5 => (0.0, Z_MAX),
            _ => panic!("parameter index {i} out of range"),
        }
    }

    pub fn in_bounds(&self) -> bool {
        (0..Self::LEN).all(|i| {
            let (lo, hi) = Self::bounds(i);
            let v = self.get(i);
            v >= lo && v <= hi
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConstants {
    pub a1: f64,
    pub a2: f64,
}

impl Default for LogisticConstants {
    /// Each logistic goes from 10% to 90% of its height across its width.
    fn default() -> Self {
        LogisticConstants {
            a1: 2.0 * 9f64.ln(),
            a2: 0.5,
        }
    }
}

/// `1 / (1 + exp(-x))` without overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic of height 1 centered at `mid` with width `width`.
/// A zero width is the step limit, with value 1/2 at the midpoint.
#[inline]
fn logistic(ell: f64, mid: f64, width: f64, a1: f64) -> f64 {
    let u = ell - mid;
    if u == 0.0 {
        0.5
    } else if width == 0.0 {
        if u > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        sigmoid(a1 / width * u)
    }
}

/// First (rising) logistic term: tends to `k` as `ell` grows.
#[inline]
pub fn first_term(ell: f64, theta: &CountryParams, consts: &LogisticConstants) -> f64 {
    let d = &theta.delta;
    let mid = d[0] + consts.a2 * d[1];
    theta.k * logistic(ell, mid, d[1], consts.a1)
}

/// Expected five-year gain at life expectancy `ell`.
#[inline]
pub fn gain(ell: f64, theta: &CountryParams, consts: &LogisticConstants) -> f64 {
    let d = &theta.delta;
    let mid2 = d[0] + d[1] + d[2] + consts.a2 * d[3];
    first_term(ell, theta, consts) + (theta.z - theta.k) * logistic(ell, mid2, d[3], consts.a1)
}

/// Tabulates `gain` from `ell_min` up to `ell_max` in steps of `step`.
pub fn gain_grid(
    theta: &CountryParams,
    consts: &LogisticConstants,
    ell_min: f64,
    ell_max: f64,
    step: f64,
) -> Vec<(f64, f64)> {
    assert!(ell_min <= ell_max && step > 0.0, "invalid grid");
    let n = ((ell_max - ell_min) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| {
            let ell = ell_min + i as f64 * step;
            (ell, gain(ell, theta, consts))
        })
        .collect()
}
