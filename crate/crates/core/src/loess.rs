//! Local polynomial regression with tricube distance weights and optional
//! bisquare robustness iterations.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoessConfig {
    /// Fraction of points in each local neighborhood, in (0, 1].
    pub span: f64,
    pub degree: usize,
    pub robustness_iterations: usize,
}

impl Default for LoessConfig {
    fn default() -> Self {
        LoessConfig {
            span: 0.75,
            degree: 1,
            robustness_iterations: 3,
        }
    }
}

#[inline]
pub fn tricube(u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

#[inline]
fn bisquare(u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        t * t
    }
}

/// A fitted loess curve, evaluated by a fresh local fit at each query point.
#[derive(Debug, Clone)]
pub struct LoessCurve {
    x: Vec<f64>,
    y: Vec<f64>,
    robustness: Vec<f64>,
    cfg: LoessConfig,
    q: usize,
}

pub fn fit_loess(points: &[(f64, f64)], cfg: LoessConfig) -> Result<LoessCurve> {
    let n = points.len();
    let min_points = (cfg.degree + 2).max(10);
    if n < min_points {
        return Err(Error::Fit(format!(
            "loess needs at least {min_points} points, got {n}"
        )));
    }
    if !(cfg.span > 0.0 && cfg.span <= 1.0) {
        return Err(Error::Fit(format!("loess span {} outside (0, 1]", cfg.span)));
    }
    if cfg.degree > 2 {
        return Err(Error::Fit(format!("loess degree {} not supported", cfg.degree)));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("loess input contains non-finite values".into()));
    }
    let mut sorted = points.to_vec();
    // Total order so the fit is independent of input order.
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if sorted[0].0 == sorted[n - 1].0 {
        return Err(Error::Fit("loess input has a single distinct x value".into()));
    }
    let q = ((cfg.span * n as f64 + 1e-5).floor() as usize).clamp(cfg.degree + 1, n);
    let mut curve = LoessCurve {
        x: sorted.iter().map(|p| p.0).collect(),
        y: sorted.iter().map(|p| p.1).collect(),
        robustness: vec![1.0; n],
        cfg,
        q,
    };
    let scale = curve.y.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    for _ in 0..cfg.robustness_iterations {
        let mut abs_res: Vec<f64> = (0..n)
            .map(|i| (curve.y[i] - curve.local_fit(curve.x[i]).0).abs())
            .collect();
        let res = abs_res.clone();
        let s = median(&mut abs_res);
        if s <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for (w, r) in curve.robustness.iter_mut().zip(&res) {
            *w = bisquare(r / (6.0 * s));
        }
    }
    Ok(curve)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl LoessCurve {
    pub fn x_min(&self) -> f64 {
        self.x[0]
    }

    pub fn x_max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    pub fn config(&self) -> LoessConfig {
        self.cfg
    }

    pub fn robustness_weights(&self) -> &[f64] {
        &self.robustness
    }

    /// Curve value; linear extension from the boundary fit outside the data range.
    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = (self.x_min(), self.x_max());
        if x < lo {
            let (v, s) = self.local_fit(lo);
            v + s * (x - lo)
        } else if x > hi {
            let (v, s) = self.local_fit(hi);
            v + s * (x - hi)
        } else {
            self.local_fit(x).0
        }
    }

    /// Value and slope at `x` from the local fit there.
    pub fn value_and_slope(&self, x: f64) -> (f64, f64) {
        self.local_fit(x)
    }

    fn local_fit(&self, x0: f64) -> (f64, f64) {
        let n = self.x.len();
        let mut dist: Vec<f64> = self.x.iter().map(|x| (x - x0).abs()).collect();
        let h = {
            let mut d = dist.clone();
            let (_, nth, _) = d.select_nth_unstable_by(self.q - 1, |a, b| a.total_cmp(b));
            *nth
        };
        if h == 0.0 {
            // Neighborhood collapses onto x0: weighted mean of the tied points.
            let (mut sw, mut swy) = (0.0, 0.0);
            for i in 0..n {
                if dist[i] == 0.0 {
                    sw += self.robustness[i];
                    swy += self.robustness[i] * self.y[i];
                }
            }
            let v = if sw > 0.0 { swy / sw } else { self.y[self.nearest(x0)] };
            return (v, 0.0);
        }
        for d in dist.iter_mut() {
            *d = tricube(*d / h);
        }
        let w = dist;
        let mut degree = self.cfg.degree;
        loop {
            if let Some((b0, b1)) = self.solve(x0, h, &w, degree) {
                return (b0, b1);
            }
            if degree == 0 {
                return (self.y[self.nearest(x0)], 0.0);
            }
            degree -= 1;
        }
    }

    /// Weighted least squares in the scaled coordinate `(x - x0) / h`.
    fn solve(&self, x0: f64, h: f64, w: &[f64], degree: usize) -> Option<(f64, f64)> {
        let p = degree + 1;
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwy = DVector::<f64>::zeros(p);
        let mut basis = [1.0; 3];
        let mut active = 0usize;
        for i in 0..self.x.len() {
            let wi = w[i] * self.robustness[i];
            if wi <= 0.0 {
                continue;
            }
            active += 1;
            let u = (self.x[i] - x0) / h;
            basis[1] = u;
            basis[2] = u * u;
            for r in 0..p {
                xtwy[r] += wi * basis[r] * self.y[i];
                for c in 0..p {
                    xtwx[(r, c)] += wi * basis[r] * basis[c];
                }
            }
        }
        if active < p {
            return None;
        }
        let trace = (0..p).map(|i| xtwx[(i, i)]).sum::<f64>();
        let lu = xtwx.clone().lu();
        let det = lu.determinant().abs();
        if !(det > 1e-12 * trace.powi(p as i32)) {
            return None;
        }
        let beta = lu.solve(&xtwy)?;
        let slope = if degree >= 1 { beta[1] / h } else { 0.0 };
        Some((beta[0], slope))
    }

    fn nearest(&self, x0: f64) -> usize {
        (0..self.x.len())
            .min_by(|&a, &b| (self.x[a] - x0).abs().total_cmp(&(self.x[b] - x0).abs()))
            .unwrap_or(0)
    }
}
