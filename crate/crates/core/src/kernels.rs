//! Kernel primitives shared by every estimator.

use crate::error::{Error, Result};

/// Half-hours per day.
pub const S1: usize = 48;
/// Half-hours per week.
pub const S2: usize = 336;

/// Kernel values beyond this many bandwidths are treated as zero.
pub const KERNEL_CUTOFF: f64 = 8.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel `φ(u/h)/h`, truncated to zero beyond `|u/h| > 8`.
#[inline]
pub fn gaussian_kernel(u: f64, h: f64) -> f64 {
    debug_assert!(h > 0.0, "bandwidth must be positive");
    let z = u / h;
    if z.abs() > KERNEL_CUTOFF {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * z * z).exp() / h
}

/// Default y-bandwidth plus the floor used near the edges of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthPolicy {
    pub h1: f64,
    pub epsilon: f64,
}

impl BandwidthPolicy {
    pub const DEFAULT_EPSILON: f64 = 0.001;

    pub fn new(h1: f64) -> Result<Self> {
        Self::with_epsilon(h1, Self::DEFAULT_EPSILON)
    }

    pub fn with_epsilon(h1: f64, epsilon: f64) -> Result<Self> {
        if !(h1 > 0.0 && h1.is_finite()) {
            return Err(Error::InvalidParameter(format!("h1 must be positive, got {h1}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self { h1, epsilon })
    }
}

/// Bandwidth at grid point `y`, shrunk towards the nearer boundary of `[0, 1]`.
#[inline]
pub fn boundary_bandwidth(y: f64, policy: &BandwidthPolicy) -> f64 {
    let BandwidthPolicy { h1, epsilon } = *policy;
    if y < h1 {
        y.max(epsilon)
    } else if y > 1.0 - h1 {
        (1.0 - y).max(epsilon)
    } else {
        h1
    }
}

/// Distance between 1-based periods `j` and `k` on a cycle of length `s`.
pub fn circular_distance(j: usize, k: usize, s: usize) -> Result<usize> {
    for index in [j, k] {
        if index == 0 || index > s {
            return Err(Error::PeriodOutOfRange { index, cycle: s });
        }
    }
    Ok(cyclic_gap(j, k, s))
}

#[inline]
pub(crate) fn cyclic_gap(j: usize, k: usize, s: usize) -> usize {
    let d = j.abs_diff(k);
    d.min(s - d)
}

/// Week-stepped decay `λ^⌊(n−t)/s2⌋` for observation `t` seen from origin `n`.
pub fn decay_weight(n: usize, t: usize, lambda: f64, s2: usize) -> Result<f64> {
    if t > n {
        return Err(Error::FutureObservation { t, n });
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidParameter(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    Ok(week_decay(n - t, lambda, s2))
}

#[inline]
pub(crate) fn week_decay(age: usize, lambda: f64, s2: usize) -> f64 {
    if lambda == 1.0 {
        1.0
    } else {
        lambda.powi((age / s2) as i32)
    }
}
