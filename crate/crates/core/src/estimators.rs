//! Kernel and conditional kernel density forecasters.
//!
//! Each method assigns a nonnegative weight to every observation in a moving
//! window that ends at the forecast origin; the weights then feed one weighted
//! kernel density estimate on the meter's grid. Only observations at or before
//! the origin are ever read.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataio::{ConsumptionSeries, DayType, Segment};
use crate::density::{finalize_density, DensityForecast, DensityGrid, GRID_SIZE};
use crate::error::{Error, Result};
use crate::kernels::{boundary_bandwidth, cyclic_gap, gaussian_kernel, week_decay, BandwidthPolicy, KERNEL_CUTOFF, S1, S2};

/// Normalized weights below this are dropped.
pub const WEIGHT_FLOOR: f64 = 1e-12;
pub const DEFAULT_WINDOW_WEEKS: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    KdU,
    KdW,
    CkdW,
    CkdWd,
    KdIc,
    CkdIc,
    CkdLag,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::KdU,
        Method::KdW,
        Method::CkdW,
        Method::CkdWd,
        Method::KdIc,
        Method::CkdIc,
        Method::CkdLag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::KdU => "KD-U",
            Method::KdW => "KD-W",
            Method::CkdW => "CKD-W",
            Method::CkdWd => "CKD-WD",
            Method::KdIc => "KD-IC",
            Method::CkdIc => "CKD-IC",
            Method::CkdLag => "CKD-Lag",
        }
    }

    /// Every tunable parameter of the method, y-bandwidth first.
    pub fn parameters(self) -> &'static [Param] {
        use Param::*;
        match self {
            Method::KdU => &[HY],
            Method::KdW | Method::KdIc => &[HY, Lambda],
            Method::CkdW => &[HY, Lambda, HxWeek],
            Method::CkdWd => &[HY, Lambda, HxWeek, HxDay],
            Method::CkdIc => &[HY, Lambda, HxWeekday, HxWeekend],
            Method::CkdLag => &[HY, Lambda, HxLag],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    HY,
    Lambda,
    HxWeek,
    HxDay,
    HxWeekday,
    HxWeekend,
    HxLag,
}

impl Param {
    pub const ALL: [Param; 7] = [
        Param::HY,
        Param::Lambda,
        Param::HxWeek,
        Param::HxDay,
        Param::HxWeekday,
        Param::HxWeekend,
        Param::HxLag,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::HY => "h_y",
            Param::Lambda => "lambda",
            Param::HxWeek => "h_x_week",
            Param::HxDay => "h_x_day",
            Param::HxWeekday => "h_x_weekday",
            Param::HxWeekend => "h_x_weekend",
            Param::HxLag => "h_x_lag",
        }
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Param::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter {s:?}")))
    }
}

/// Bandwidths and decay for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodParams {
    pub method: Method,
    pub h_y: f64,
    pub lambda: f64,
    pub h_x_week: Option<f64>,
    pub h_x_day: Option<f64>,
    pub h_x_weekday: Option<f64>,
    pub h_x_weekend: Option<f64>,
    pub h_x_lag: Option<f64>,
    pub window_weeks: usize,
}

impl MethodParams {
    /// Parameters with only `h_y` and `lambda` set; x-bandwidths must be added
    /// with [`MethodParams::with`] for the conditional methods.
    pub fn new(method: Method, h_y: f64, lambda: f64) -> Self {
        Self {
            method,
            h_y,
            lambda: if method == Method::KdU { 1.0 } else { lambda },
            h_x_week: None,
            h_x_day: None,
            h_x_weekday: None,
            h_x_weekend: None,
            h_x_lag: None,
            window_weeks: DEFAULT_WINDOW_WEEKS,
        }
    }

    pub fn with(mut self, param: Param, value: f64) -> Self {
        self.set(param, value);
        self
    }

    pub fn get(&self, param: Param) -> Option<f64> {
        match param {
            Param::HY => Some(self.h_y),
            Param::Lambda => Some(self.lambda),
            Param::HxWeek => self.h_x_week,
            Param::HxDay => self.h_x_day,
            Param::HxWeekday => self.h_x_weekday,
            Param::HxWeekend => self.h_x_weekend,
            Param::HxLag => self.h_x_lag,
        }
    }

    pub fn set(&mut self, param: Param, value: f64) {
        match param {
            Param::HY => self.h_y = value,
            Param::Lambda => self.lambda = value,
            Param::HxWeek => self.h_x_week = Some(value),
            Param::HxDay => self.h_x_day = Some(value),
            Param::HxWeekday => self.h_x_weekday = Some(value),
            Param::HxWeekend => self.h_x_weekend = Some(value),
            Param::HxLag => self.h_x_lag = Some(value),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let required = self.method.parameters();
        for param in Param::ALL {
            match (required.contains(&param), self.get(param)) {
                (true, None) => {
                    return Err(Error::InvalidParameter(format!("{} needs {}", self.method, param.name())))
                }
                (false, Some(_)) if !matches!(param, Param::HY | Param::Lambda) => {
                    return Err(Error::InvalidParameter(format!(
                        "{} does not use {}",
                        self.method,
                        param.name()
                    )))
                }
                _ => {}
            }
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        for param in required.iter().filter(|p| **p != Param::Lambda) {
            let v = self.get(*param).unwrap_or(0.0);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{} must be positive, got {v}", param.name())));
            }
        }
        if self.window_weeks == 0 {
            return Err(Error::InvalidParameter("window must span at least one week".into()));
        }
        Ok(())
    }

    /// Category-averaged values reported for the CER trial meters.
    pub fn published(method: Method, segment: Segment) -> Self {
        use Param::*;
        let residential = segment == Segment::Residential;
        let pick = |r: f64, s: f64| if residential { r } else { s };
        let base = |h_y, lambda| MethodParams::new(method, h_y, lambda);
        match method {
            Method::KdU => base(pick(0.014, 0.061), 1.0),
            Method::KdW => base(pick(0.012, 0.038), pick(0.942, 0.926)),
            Method::CkdW => base(pick(0.014, 0.044), pick(0.944, 0.917)).with(HxWeek, pick(0.909, 0.488)),
            Method::CkdWd => base(pick(0.013, 0.045), pick(0.994, 0.925))
                .with(HxDay, pick(0.651, 0.354))
                .with(HxWeek, pick(0.553, 0.354)),
            Method::KdIc => base(pick(0.014, 0.039), pick(0.998, 0.917)),
            Method::CkdIc => base(pick(0.015, 0.045), pick(0.977, 0.938))
                .with(HxWeekday, pick(0.704, 0.354))
                .with(HxWeekend, pick(0.825, 1.042)),
            Method::CkdLag => base(pick(0.017, 0.045), pick(0.958, 0.929)).with(HxLag, pick(0.017, 0.045)),
        }
    }
}

/// Calendar features of the period being forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Target {
    week: usize,
    day: usize,
    day_type: DayType,
}

impl Target {
    fn of(series: &ConsumptionSeries, index: usize) -> Self {
        Self {
            week: series.period_of_week(index),
            day: series.period_of_day(index),
            day_type: series.day_type(index),
        }
    }
}

fn window_start(origin: usize, params: &MethodParams) -> Result<usize> {
    let available = origin + 1;
    if available < S2 {
        return Err(Error::InsufficientHistory { needed: S2, available });
    }
    Ok(available - available.min(S2 * params.window_weeks))
}

fn check_origin(series: &ConsumptionSeries, params: &MethodParams, origin: usize, horizon: usize) -> Result<()> {
    params.validate()?;
    if origin >= series.len() {
        return Err(Error::InvalidParameter(format!(
            "origin {origin} is beyond the series (length {})",
            series.len()
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    if params.method == Method::CkdLag && horizon > S2 {
        return Err(Error::UnsupportedHorizon(horizon));
    }
    Ok(())
}

/// Unnormalized per-observation weights `(index, weight)` for the forecast of
/// `origin + horizon`. Zero weights are omitted.
pub fn observation_weights(
    series: &ConsumptionSeries,
    params: &MethodParams,
    origin: usize,
    horizon: usize,
) -> Result<Vec<(usize, f64)>> {
    check_origin(series, params, origin, horizon)?;
    let start = window_start(origin, params)?;
    let target = Target::of(series, origin + horizon);
    let history = &series.values()[..=origin];
    Ok(weights_for(series, history, params, origin, start, target, horizon))
}

fn weights_for(
    series: &ConsumptionSeries,
    history: &[f64],
    params: &MethodParams,
    origin: usize,
    start: usize,
    target: Target,
    horizon: usize,
) -> Vec<(usize, f64)> {
    let decay = |t: usize| week_decay(origin - t, params.lambda, S2);
    let bw = |p: Option<f64>| p.expect("validated");
    let mut out = Vec::with_capacity(origin + 1 - start);
    match params.method {
        Method::KdU => out.extend((start..=origin).map(|t| (t, 1.0))),
        Method::KdW => {
            for t in start..=origin {
                if series.period_of_week(t) == target.week {
                    out.push((t, decay(t)));
                }
            }
        }
        Method::CkdW => {
            let h = bw(params.h_x_week);
            for t in start..=origin {
                let k = gaussian_kernel(cyclic_gap(series.period_of_week(t), target.week, S2) as f64, h);
                out.push((t, decay(t) * k));
            }
        }
        Method::CkdWd => {
            let (hw, hd) = (bw(params.h_x_week), bw(params.h_x_day));
            for t in start..=origin {
                let kw = gaussian_kernel(cyclic_gap(series.period_of_week(t), target.week, S2) as f64, hw);
                let kd = gaussian_kernel(cyclic_gap(series.period_of_day(t), target.day, S1) as f64, hd);
                out.push((t, decay(t) * kw * kd));
            }
        }
        Method::KdIc => {
            for t in start..=origin {
                if series.period_of_day(t) == target.day && series.day_type(t) == target.day_type {
                    out.push((t, decay(t)));
                }
            }
        }
        Method::CkdIc => {
            let h = match target.day_type {
                DayType::Weekday => bw(params.h_x_weekday),
                DayType::Weekend => bw(params.h_x_weekend),
            };
            for t in start..=origin {
                if series.day_type(t) == target.day_type {
                    let k = gaussian_kernel(cyclic_gap(series.period_of_day(t), target.day, S1) as f64, h);
                    out.push((t, decay(t) * k));
                }
            }
        }
        Method::CkdLag => {
            let h = bw(params.h_x_lag);
            let conditioner = history[origin + horizon - S2];
            for t in start.max(S2)..=origin {
                let k = gaussian_kernel(history[t - S2] - conditioner, h);
                out.push((t, decay(t) * k));
            }
        }
    }
    out.retain(|(_, w)| *w > 0.0);
    out
}

/// Weighted kernel density estimate with boundary-corrected y-bandwidth.
///
/// `f(y) = Σ wₜ K_{h(y)}(Yₜ − y) / Σ wₜ` at every grid point, where `h(y)`
/// shrinks near 0 and 1.
pub fn weighted_kd(
    values: &[f64],
    weights: &[f64],
    grid: &Arc<DensityGrid>,
    h_y: f64,
    policy_epsilon: f64,
    origin: usize,
    horizon: usize,
) -> Result<DensityForecast> {
    if values.len() != weights.len() {
        return Err(Error::InvalidParameter("values and weights differ in length".into()));
    }
    let policy = BandwidthPolicy::with_epsilon(h_y, policy_epsilon)?;
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::DegenerateDensity);
    }
    let mut points: Vec<(f64, f64)> = values
        .iter()
        .zip(weights)
        .map(|(v, w)| (*v, w / total))
        .filter(|(_, w)| *w >= WEIGHT_FLOOR)
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let raw: Vec<f64> = grid
        .points()
        .iter()
        .map(|&y| {
            let h = boundary_bandwidth(y, &policy);
            let lo = points.partition_point(|p| p.0 < y - KERNEL_CUTOFF * h);
            let hi = points.partition_point(|p| p.0 <= y + KERNEL_CUTOFF * h);
            points[lo..hi].iter().map(|(v, w)| w * gaussian_kernel(v - y, h)).sum()
        })
        .collect();
    debug_assert_eq!(raw.len(), GRID_SIZE);
    finalize_density(grid, raw, origin, horizon)
}

fn density_from_weights(
    series: &ConsumptionSeries,
    grid: &Arc<DensityGrid>,
    params: &MethodParams,
    weights: &[(usize, f64)],
    origin: usize,
    horizon: usize,
) -> Result<DensityForecast> {
    if weights.is_empty() {
        return Err(Error::NoMatchingObservations);
    }
    let values: Vec<f64> = weights.iter().map(|(t, _)| series.values()[*t]).collect();
    let w: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();
    weighted_kd(&values, &w, grid, params.h_y, BandwidthPolicy::DEFAULT_EPSILON, origin, horizon)
}

/// Density forecast of period `origin + horizon` by the method in `params`.
pub fn forecast(
    series: &ConsumptionSeries,
    grid: &Arc<DensityGrid>,
    params: &MethodParams,
    origin: usize,
    horizon: usize,
) -> Result<DensityForecast> {
    let weights = observation_weights(series, params, origin, horizon)?;
    density_from_weights(series, grid, params, &weights, origin, horizon)
}

fn forecast_as(
    method: Method,
    series: &ConsumptionSeries,
    grid: &Arc<DensityGrid>,
    params: &MethodParams,
    origin: usize,
    horizon: usize,
) -> Result<DensityForecast> {
    if params.method != method {
        return Err(Error::InvalidParameter(format!("expected {method} parameters, got {}", params.method)));
    }
    forecast(series, grid, params, origin, horizon)
}

/// Unconditional KD over the moving window; the same density for every horizon.
pub fn kd_u(s: &ConsumptionSeries, g: &Arc<DensityGrid>, p: &MethodParams, origin: usize, horizon: usize) -> Result<DensityForecast> {
    forecast_as(Method::KdU, s, g, p, origin, horizon)
}

/// Decay-weighted KD over past observations in the same period of the week.
pub fn kd_w(s: &ConsumptionSeries, g: &Arc<DensityGrid>, p: &MethodParams, origin: usize, horizon: usize) -> Result<DensityForecast> {
    forecast_as(Method::KdW, s, g, p, origin, horizon)
}

/// Conditional KD, kernel-weighted on circular period-of-week distance.
pub fn ckd_w(s: &ConsumptionSeries, g: &Arc<DensityGrid>, p: &MethodParams, origin: usize, horizon: usize) -> Result<DensityForecast> {
    forecast_as(Method::CkdW, s, g, p, origin, horizon)
}

/// Conditional KD on both period of week and period of day.
pub fn ckd_wd(s: &ConsumptionSeries, g: &Arc<DensityGrid>, p: &MethodParams, origin: usize, horizon: usize) -> Result<DensityForecast> {
    forecast_as(Method::CkdWd, s, g, p, origin, horizon)
}

/// KD over the same half-hour on past days of the same day type.
pub fn kd_ic(s: &ConsumptionSeries, g: &Arc<DensityGrid>, p: &MethodParams, origin: usize, horizon: usize) -> Result<DensityForecast> {
    forecast_as(Method::KdIc, s, g, p, origin, horizon)
}

/// Conditional KD on period of day within the target's day type, with separate
/// weekday and weekend bandwidths.
pub fn ckd_ic(s: &ConsumptionSeries, g: &Arc<DensityGrid>, p: &MethodParams, origin: usize, horizon: usize) -> Result<DensityForecast> {
    forecast_as(Method::CkdIc, s, g, p, origin, horizon)
}

/// Conditional KD on the value observed one week before the target.
pub fn ckd_lag(s: &ConsumptionSeries, g: &Arc<DensityGrid>, p: &MethodParams, origin: usize, horizon: usize) -> Result<DensityForecast> {
    forecast_as(Method::CkdLag, s, g, p, origin, horizon)
}

/// Forecasts for horizons 1..=336 from one origin.
///
/// Horizons sharing a target period reuse one density, except for CKD-Lag
/// whose conditioner changes with every horizon.
pub fn forecast_week(
    series: &ConsumptionSeries,
    grid: &Arc<DensityGrid>,
    params: &MethodParams,
    origin: usize,
) -> Result<Vec<DensityForecast>> {
    check_origin(series, params, origin, S2)?;
    let horizons: Vec<usize> = (1..=S2).collect();
    if params.method == Method::CkdLag {
        return horizons.par_iter().map(|h| forecast(series, grid, params, origin, *h)).collect();
    }
    let key = |h: usize| -> Option<Target> {
        (params.method != Method::KdU).then(|| Target::of(series, origin + h))
    };
    let mut first_horizon: HashMap<Option<Target>, usize> = HashMap::new();
    for h in &horizons {
        first_horizon.entry(key(*h)).or_insert(*h);
    }
    let mut unique: Vec<(Option<Target>, usize)> = first_horizon.into_iter().collect();
    unique.sort_by_key(|(_, h)| *h);
    let computed: Vec<(Option<Target>, DensityForecast)> = unique
        .par_iter()
        .map(|(k, h)| forecast(series, grid, params, origin, *h).map(|f| (*k, f)))
        .collect::<Result<_>>()?;
    let by_key: HashMap<Option<Target>, DensityForecast> = computed.into_iter().collect();
    Ok(horizons.iter().map(|h| by_key[&key(*h)].with_horizon(*h)).collect())
}
