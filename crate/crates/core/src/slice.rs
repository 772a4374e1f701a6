//! Univariate slice sampling with stepping out and shrinkage, restricted to
//! a closed support interval.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceTuning {
    pub width: f64,
    pub max_step_out: u32,
    pub max_shrink: u32,
}

impl SliceTuning {
    /// Initial width one tenth of the support, 100 step/shrink limit.
    pub fn for_support(lo: f64, hi: f64) -> Self {
        SliceTuning {
            width: (hi - lo) / 10.0,
            max_step_out: 100,
            max_shrink: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceOutcome {
    pub value: f64,
    /// Log density at `value`.
    pub log_density: f64,
    /// Shrinkage ran out of steps; `value` is the starting point.
    pub stalled: bool,
}

/// One slice-sampling update of `x0` targeting `exp(log_f)` on `[lo, hi]`.
///
/// `log_f0` must equal `log_f(x0)`.
pub fn slice_sample<R, F>(
    rng: &mut R,
    x0: f64,
    log_f0: f64,
    mut log_f: F,
    lo: f64,
    hi: f64,
    tuning: &SliceTuning,
) -> SliceOutcome
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let w = tuning.width;
    let level = log_f0 + rng.random::<f64>().ln();

    let mut left = x0 - w * rng.random::<f64>();
    let mut right = left + w;
    let mut j = (tuning.max_step_out as f64 * rng.random::<f64>()).floor() as u32;
    let mut k = tuning.max_step_out.saturating_sub(1).saturating_sub(j);
    while j > 0 && left > lo && log_f(left) > level {
        left -= w;
        j -= 1;
    }
    while k > 0 && right < hi && log_f(right) > level {
        right += w;
        k -= 1;
    }
    left = left.max(lo);
    right = right.min(hi);

    for _ in 0..tuning.max_shrink {
        let x1 = left + rng.random::<f64>() * (right - left);
        let f1 = log_f(x1);
        if f1 > level {
            return SliceOutcome {
                value: x1,
                log_density: f1,
                stalled: false,
            };
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    SliceOutcome {
        value: x0,
        log_density: log_f0,
        stalled: true,
    }
}
