//! Double seasonal Holt-Winters exponential smoothing benchmark.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataio::ConsumptionSeries;
use crate::density::{DensityForecast, DensityGrid};
use crate::error::{Error, Result};
use crate::kernels::{S1, S2};
use crate::optim::nelder_mead;

/// Weeks of data used to initialize the state.
pub const INIT_WEEKS: usize = 2;
/// Weeks at the start of the fitting range excluded from the error sum.
pub const WARMUP_WEEKS: usize = 8;
/// Upper clamp applied to simulated values before gridding.
pub const SIMULATION_CAP: f64 = 1.5;

const PHI_BOUND: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HwtParams {
    /// Level smoothing.
    pub alpha: f64,
    /// Intraday seasonal smoothing.
    pub delta: f64,
    /// Intraweek seasonal smoothing.
    pub omega: f64,
    /// Residual autocorrelation adjustment.
    pub phi: f64,
    /// One-step residual standard deviation.
    pub sigma: f64,
}

impl HwtParams {
    pub fn new(alpha: f64, delta: f64, omega: f64, phi: f64, sigma: f64) -> Result<Self> {
        let p = Self { alpha, delta, omega, phi, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("delta", self.delta), ("omega", self.omega)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.phi.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!("phi must satisfy |phi| < 1, got {}", self.phi)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Names in the order used by parameter files.
    pub const NAMES: [&'static str; 5] = ["alpha", "delta", "omega", "phi", "sigma"];

    pub fn values(&self) -> [f64; 5] {
        [self.alpha, self.delta, self.omega, self.phi, self.sigma]
    }

    pub fn from_values(v: [f64; 5]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HwtState {
    pub level: f64,
    pub intraday: Vec<f64>,
    pub intraweek: Vec<f64>,
    pub last_error: f64,
    /// Zero-based period of the week of the next observation.
    pub phase: usize,
}

impl HwtState {
    /// Initial state from the first two weeks of `values`, whose first element
    /// falls at zero-based week period `phase`.
    pub fn initialize(values: &[f64], phase: usize) -> Result<Self> {
        let span = INIT_WEEKS * S2;
        if values.len() < span {
            return Err(Error::InsufficientHistory { needed: span, available: values.len() });
        }
        if phase >= S2 {
            return Err(Error::PeriodOutOfRange { index: phase + 1, cycle: S2 });
        }
        let window = &values[..span];
        let level = window.iter().sum::<f64>() / span as f64;
        let mut intraday = vec![0.0; S1];
        for (i, y) in window.iter().enumerate() {
            intraday[(phase + i) % S1] += y - level;
        }
        let per_day_slot = (span / S1) as f64;
        intraday.iter_mut().for_each(|d| *d /= per_day_slot);
        let mut intraweek = vec![0.0; S2];
        for (i, y) in window.iter().enumerate() {
            let p = (phase + i) % S2;
            intraweek[p] += y - level - intraday[p % S1];
        }
        intraweek.iter_mut().for_each(|w| *w /= INIT_WEEKS as f64);
        Ok(Self { level, intraday, intraweek, last_error: 0.0, phase })
    }

    pub fn predict_next(&self, params: &HwtParams) -> f64 {
        self.level + self.intraday[self.phase % S1] + self.intraweek[self.phase] + params.phi * self.last_error
    }

    /// Absorbs one observation and returns its one-step error.
    pub fn update(&mut self, params: &HwtParams, observation: f64) -> f64 {
        let e = observation - self.predict_next(params);
        self.level += params.alpha * e;
        self.intraday[self.phase % S1] += params.delta * e;
        self.intraweek[self.phase] += params.omega * e;
        self.last_error = e;
        self.phase = (self.phase + 1) % S2;
        e
    }

    /// Point forecast `k ≥ 1` steps past the last absorbed observation.
    pub fn point_forecast(&self, params: &HwtParams, k: usize) -> f64 {
        let p = (self.phase + k - 1) % S2;
        self.level + self.intraday[p % S1] + self.intraweek[p] + params.phi.powi(k as i32) * self.last_error
    }
}

/// Functional form of [`HwtState::update`].
pub fn hwt_update(state: &HwtState, params: &HwtParams, observation: f64) -> (HwtState, f64) {
    let mut next = state.clone();
    let e = next.update(params, observation);
    (next, e)
}

/// Runs the recursion over `values` from a fresh initialization and returns
/// the final state and the error sum of squares past the warm-up.
pub fn filter(values: &[f64], phase: usize, params: &HwtParams) -> Result<(HwtState, f64, usize)> {
    let mut state = HwtState::initialize(values, phase)?;
    let warmup = WARMUP_WEEKS * S2;
    let mut sse = 0.0;
    let mut count = 0;
    for (t, y) in values.iter().enumerate() {
        let e = state.update(params, *y);
        if t >= warmup {
            sse += e * e;
            count += 1;
        }
    }
    Ok((state, sse, count))
}

#[derive(Debug, Clone)]
pub struct HwtFit {
    pub params: HwtParams,
    pub state: HwtState,
    pub sse: f64,
}

/// Least-squares fit of the smoothing parameters, best of eight bounded
/// simplex searches; sigma is the RMSE of the post-warm-up one-step errors.
pub fn hwt_fit(values: &[f64], phase: usize) -> Result<HwtFit> {
    let needed = WARMUP_WEEKS * S2 + S2;
    if values.len() < needed {
        return Err(Error::InsufficientHistory { needed, available: values.len() });
    }
    HwtState::initialize(values, phase)?;
    let objective = |x: &[f64]| {
        let p = HwtParams { alpha: x[0], delta: x[1], omega: x[2], phi: x[3], sigma: 0.0 };
        filter(values, phase, &p).map_or(f64::INFINITY, |(_, sse, _)| sse)
    };
    let bounds = [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (-PHI_BOUND, PHI_BOUND)];
    let starts: [[f64; 4]; 8] = [
        [0.01, 0.01, 0.1, 0.4],
        [0.0, 0.0, 0.0, 0.0],
        [0.05, 0.05, 0.05, 0.8],
        [0.2, 0.1, 0.2, -0.3],
        [0.5, 0.3, 0.3, 0.5],
        [0.02, 0.2, 0.02, 0.2],
        [0.1, 0.02, 0.4, 0.6],
        [0.8, 0.5, 0.5, 0.0],
    ];
    let best = starts
        .par_iter()
        .map(|s| nelder_mead(objective, s, &[0.05, 0.05, 0.05, 0.2], &bounds, 400, 1e-10))
        .collect::<Vec<_>>()
        .into_iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("eight starts");
    let x = &best.point;
    let mut params = HwtParams { alpha: x[0], delta: x[1], omega: x[2], phi: x[3], sigma: 0.0 };
    let (state, sse, count) = filter(values, phase, &params)?;
    params.sigma = (sse / count as f64).sqrt();
    Ok(HwtFit { params, state, sse })
}

/// Simulated values per horizon: `result[k-1][i]` is path `i` at horizon `k`.
/// Path `i` draws its innovations from random stream `i` of `seed`.
pub fn hwt_simulate(state: &HwtState, params: &HwtParams, horizons: usize, iterations: usize, seed: u64) -> Vec<Vec<f64>> {
    let paths: Vec<Vec<f64>> = (0..iterations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut s = state.clone();
            (0..horizons)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let y = s.predict_next(params) + params.sigma * z;
                    s.update(params, y);
                    y
                })
                .collect()
        })
        .collect();
    (0..horizons).map(|k| paths.iter().map(|p| p[k]).collect()).collect()
}

#[derive(Debug, Clone)]
pub struct HwtDensities {
    pub forecasts: Vec<DensityForecast>,
    /// Simulated values below zero that were clamped.
    pub clamped_negative: usize,
}

/// Monte Carlo density forecasts for horizons `1..=horizons` from `origin`.
pub fn hwt_density(
    state: &HwtState,
    params: &HwtParams,
    grid: &Arc<DensityGrid>,
    origin: usize,
    horizons: usize,
    iterations: usize,
    seed: u64,
) -> Result<HwtDensities> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    params.validate()?;
    let mut clamped_negative = 0;
    let mut forecasts = Vec::with_capacity(horizons);
    for (k, mut values) in hwt_simulate(state, params, horizons, iterations, seed).into_iter().enumerate() {
        clamped_negative += values.iter().filter(|v| **v < 0.0).count();
        for v in values.iter_mut() {
            *v = v.clamp(0.0, SIMULATION_CAP);
        }
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mut cdf: Vec<f64> = grid
            .points()
            .iter()
            .map(|y| values.partition_point(|v| v <= y) as f64 / n)
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        forecasts.push(DensityForecast::from_cdf(grid, cdf, origin, k + 1)?);
    }
    Ok(HwtDensities { forecasts, clamped_negative })
}

/// Filters `series` through `origin` and simulates the following week.
pub fn hwt_forecast_week(
    series: &ConsumptionSeries,
    params: &HwtParams,
    grid: &Arc<DensityGrid>,
    origin: usize,
    iterations: usize,
    seed: u64,
) -> Result<HwtDensities> {
    if origin >= series.len() {
        return Err(Error::InvalidRange { start: origin, end: origin + 1, len: series.len() });
    }
    let mut state = HwtState::initialize(series.values(), series.period_of_week(0) - 1)?;
    for y in &series.values()[..=origin] {
        state.update(params, *y);
    }
    hwt_density(&state, params, grid, origin, S2, iterations, seed)
}
