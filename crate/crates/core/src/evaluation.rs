//! Scoring rules and the rolling-origin post-sample harness.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{NaiveDateTime, Timelike};
use rayon::prelude::*;

use crate::dataio::ConsumptionSeries;
use crate::density::{DensityForecast, DensityGrid, Predictive};
use crate::error::{Error, Result};
use crate::estimators::{forecast_week, Method, MethodParams};
use crate::hwt::{hwt_density, HwtParams, HwtState};
use crate::kernels::S2;

/// Quantile levels at which coverage is reported.
pub const COVERAGE_LEVELS: [f64; 11] = [0.05, 0.15, 0.25, 0.35, 0.45, 0.50, 0.55, 0.65, 0.75, 0.85, 0.95];

const REFINEMENT: usize = 4;

/// Continuous ranked probability score `∫ (F(z) − 1{z ≥ y})² dz`.
///
/// The integral runs over `[0, max(1, y)]`. Between consecutive breakpoints
/// each cell is split four ways and integrated with Simpson's rule, which is
/// exact for piecewise-linear CDFs; the observation is always a node, so the
/// indicator is constant on every cell.
pub fn crps<P: Predictive + ?Sized>(forecast: &P, observation: f64) -> f64 {
    let upper = observation.max(1.0);
    let mut nodes = forecast.breakpoints();
    nodes.extend([0.0, upper, observation]);
    nodes.retain(|z| (0.0..=upper).contains(z));
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let mut total = 0.0;
    for pair in nodes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let step = (b - a) / REFINEMENT as f64;
        let indicator = if a >= observation { 1.0 } else { 0.0 };
        let sq = |f: f64| (f - indicator) * (f - indicator);
        for j in 0..REFINEMENT {
            let x0 = a + step * j as f64;
            let x1 = if j + 1 == REFINEMENT { b } else { x0 + step };
            let left = sq(forecast.cdf(x0));
            let mid = sq(forecast.cdf(0.5 * (x0 + x1)));
            let right = sq(forecast.cdf_left(x1));
            total += (x1 - x0) / 6.0 * (left + 4.0 * mid + right);
        }
    }
    total.max(0.0)
}

/// Percentage of observations strictly below their quantile forecast.
pub fn coverage(quantiles: &[f64], observations: &[f64]) -> Result<f64> {
    if quantiles.is_empty() {
        return Err(Error::EmptyInput);
    }
    if quantiles.len() != observations.len() {
        return Err(Error::InvalidParameter("quantiles and observations differ in length".into()));
    }
    let below = quantiles.iter().zip(observations).filter(|(q, y)| *y < *q).count();
    Ok(100.0 * below as f64 / quantiles.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointScores {
    /// Mean absolute error of the density medians.
    pub mae: f64,
    /// Root mean squared error of the density means.
    pub rmse: f64,
}

pub fn point_scores<P: Predictive>(forecasts: &[P], observations: &[f64]) -> Result<PointScores> {
    if forecasts.is_empty() {
        return Err(Error::EmptyInput);
    }
    if forecasts.len() != observations.len() {
        return Err(Error::InvalidParameter("forecasts and observations differ in length".into()));
    }
    let n = forecasts.len() as f64;
    let mae = forecasts.iter().zip(observations).map(|(f, y)| (f.median() - y).abs()).sum::<f64>() / n;
    let mse = forecasts.iter().zip(observations).map(|(f, y)| (f.mean() - y).powi(2)).sum::<f64>() / n;
    Ok(PointScores { mae, rmse: mse.sqrt() })
}

/// A forecasting method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    Kernel(Method),
    Hwt,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            ModelId::Kernel(m) => m.name(),
            ModelId::Hwt => "HWT",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("HWT") {
            Ok(ModelId::Hwt)
        } else {
            s.parse().map(ModelId::Kernel)
        }
    }
}

#[derive(Debug, Clone)]
pub enum ModelSpec {
    Kernel(MethodParams),
    Hwt { params: HwtParams, iterations: usize, seed: u64 },
}

impl ModelSpec {
    pub fn id(&self) -> ModelId {
        match self {
            ModelSpec::Kernel(p) => ModelId::Kernel(p.method),
            ModelSpec::Hwt { .. } => ModelId::Hwt,
        }
    }
}

/// One meter ready for post-sample evaluation.
#[derive(Debug, Clone)]
pub struct EvalMeter {
    pub series: ConsumptionSeries,
    pub grid: Arc<DensityGrid>,
    pub models: Vec<ModelSpec>,
}

/// Accumulated scores of one (method, horizon) cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellStats {
    pub count: u64,
    pub crps_sum: f64,
    pub abs_error_sum: f64,
    pub sq_error_sum: f64,
    pub below: [u64; COVERAGE_LEVELS.len()],
}

impl CellStats {
    pub fn add(&mut self, forecast: &DensityForecast, observation: f64) {
        self.count += 1;
        self.crps_sum += crps(forecast, observation);
        self.abs_error_sum += (forecast.median() - observation).abs();
        self.sq_error_sum += (forecast.mean() - observation).powi(2);
        for (count, theta) in self.below.iter_mut().zip(COVERAGE_LEVELS) {
            if observation < forecast.inverse_cdf(theta) {
                *count += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CellStats) {
        self.count += other.count;
        self.crps_sum += other.crps_sum;
        self.abs_error_sum += other.abs_error_sum;
        self.sq_error_sum += other.sq_error_sum;
        for (a, b) in self.below.iter_mut().zip(other.below) {
            *a += b;
        }
    }

    pub fn crps(&self) -> f64 {
        self.crps_sum / self.count as f64
    }

    pub fn mae(&self) -> f64 {
        self.abs_error_sum / self.count as f64
    }

    pub fn rmse(&self) -> f64 {
        (self.sq_error_sum / self.count as f64).sqrt()
    }

    pub fn coverage_pct(&self) -> [f64; COVERAGE_LEVELS.len()] {
        self.below.map(|b| 100.0 * b as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvaluationReport {
    pub cells: BTreeMap<(ModelId, usize), CellStats>,
    pub meters: Vec<String>,
    /// Meters excluded after a failure, with the error message.
    pub failures: Vec<(String, String)>,
    /// Forecast origins (the half-hour ending at midnight) per meter.
    pub origins: BTreeMap<String, Vec<NaiveDateTime>>,
}

impl EvaluationReport {
    /// Pools every horizon of one method.
    pub fn overall(&self, model: ModelId) -> Option<CellStats> {
        let mut total = CellStats::default();
        for ((m, _), cell) in &self.cells {
            if *m == model {
                total.merge(cell);
            }
        }
        (total.count > 0).then_some(total)
    }

    pub fn write_scores<W: Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["method", "horizon", "crps", "mae", "rmse"])?;
        for ((model, horizon), cell) in &self.cells {
            writer.write_record([
                model.to_string(),
                horizon.to_string(),
                cell.crps().to_string(),
                cell.mae().to_string(),
                cell.rmse().to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn write_coverage<W: Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["method", "horizon", "theta", "coverage_pct"])?;
        for ((model, horizon), cell) in &self.cells {
            for (theta, pct) in COVERAGE_LEVELS.iter().zip(cell.coverage_pct()) {
                writer.write_record([model.to_string(), horizon.to_string(), theta.to_string(), pct.to_string()])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Origins are the last half-hour before each midnight, so horizon 1 is the
/// 00:00–00:30 period. Only targets inside `post` are scored.
fn midnight_origins(series: &ConsumptionSeries, post: &Range<usize>) -> Vec<usize> {
    post.clone()
        .filter(|t| *t > 0)
        .filter(|t| {
            let ts = series.timestamp(*t);
            ts.hour() == 0 && ts.minute() == 0
        })
        .map(|t| t - 1)
        .collect()
}

type MeterCells = BTreeMap<(ModelId, usize), CellStats>;

fn evaluate_meter(meter: &EvalMeter, models: &[ModelId], post: Range<usize>) -> Result<(MeterCells, Vec<usize>)> {
    let series = &meter.series;
    let origins = midnight_origins(series, &post);
    if origins.is_empty() {
        return Err(Error::InvalidParameter("no midnight origin in the post-sample range".into()));
    }
    let mut cells: MeterCells = BTreeMap::new();
    for model in models {
        let spec = meter
            .models
            .iter()
            .find(|s| s.id() == *model)
            .ok_or_else(|| Error::InvalidParameter(format!("no parameters for {model}")))?;
        let mut score = |origin: usize, forecasts: Vec<DensityForecast>| {
            for f in forecasts {
                let target = origin + f.horizon();
                if target >= post.end {
                    break;
                }
                cells.entry((*model, f.horizon())).or_default().add(&f, series.values()[target]);
            }
        };
        match spec {
            ModelSpec::Kernel(params) => {
                for origin in &origins {
                    score(*origin, forecast_week(series, &meter.grid, params, *origin)?);
                }
            }
            ModelSpec::Hwt { params, iterations, seed } => {
                let phase = series.period_of_week(0) - 1;
                let mut state = HwtState::initialize(series.values(), phase)?;
                let mut absorbed = 0;
                let base = meter_seed(*seed, series.meter_id());
                for origin in &origins {
                    for y in &series.values()[absorbed..=*origin] {
                        state.update(params, *y);
                    }
                    absorbed = origin + 1;
                    let s = base.wrapping_add(*origin as u64);
                    score(*origin, hwt_density(&state, params, &meter.grid, *origin, S2, *iterations, s)?.forecasts);
                }
            }
        }
    }
    Ok((cells, origins))
}

/// Simulation seed of one meter's HWT paths; the origin index is added per forecast.
pub fn meter_seed(seed: u64, meter_id: &str) -> u64 {
    let hash = meter_id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    seed ^ hash
}

/// Rolling-origin evaluation: every midnight in `post_sample` is an origin,
/// every model forecasts horizons 1..=336, and scores are pooled per horizon.
/// A meter that fails for any model is dropped entirely and listed in
/// [`EvaluationReport::failures`], so all models share the same cells.
pub fn rolling_evaluate(
    meters: &[EvalMeter],
    models: &[ModelId],
    post_sample: Range<NaiveDateTime>,
) -> Result<EvaluationReport> {
    if meters.is_empty() || models.is_empty() {
        return Err(Error::EmptyInput);
    }
    let results: Vec<Result<(MeterCells, Vec<usize>)>> = meters
        .par_iter()
        .map(|meter| {
            let s = &meter.series;
            let start = s.index_of(post_sample.start).ok_or_else(|| {
                Error::InvalidParameter(format!("post-sample start {} is outside the series", post_sample.start))
            })?;
            let end = s.index_of(post_sample.end).unwrap_or(s.len());
            if start >= end {
                return Err(Error::InvalidRange { start, end, len: s.len() });
            }
            evaluate_meter(meter, models, start..end)
        })
        .collect();
    let mut report = EvaluationReport::default();
    for (meter, result) in meters.iter().zip(results) {
        let id = meter.series.meter_id().to_string();
        match result {
            Ok((cells, origins)) => {
                for (key, cell) in cells {
                    report.cells.entry(key).or_default().merge(&cell);
                }
                report
                    .origins
                    .insert(id.clone(), origins.iter().map(|o| meter.series.timestamp(*o)).collect());
                report.meters.push(id);
            }
            Err(e) => {
                log::warn!("meter {id} excluded from evaluation: {e}");
                report.failures.push((id, e.to_string()));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{finalize_density, sample, PointMass, GRID_SIZE};

    fn uniform() -> DensityForecast {
        let grid = Arc::new(DensityGrid::uniform());
        DensityForecast::from_cdf(&grid, grid.points().to_vec(), 0, 1).unwrap()
    }

    #[test]
    fn perfect_point_forecast_scores_zero() {
        assert!(crps(&PointMass(0.37), 0.37) < 1e-12);
        // Unit step at 0.5 against 0.3: the integrand is 1 on [0.3, 0.5).
        assert!((crps(&PointMass(0.5), 0.3) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn uniform_scores() {
        assert!((crps(&uniform(), 0.0) - 1.0 / 3.0).abs() < 1e-9);
        // ∫₀^½ z² + ∫_½^1 (1 − z)² = 1/12.
        assert!((crps(&uniform(), 0.5) - 1.0 / 12.0).abs() < 1e-9);
        // Observation above 1 adds the gap where F ≡ 1 and the indicator is 0.
        assert!((crps(&uniform(), 1.5) - (1.0 / 3.0 + 0.5)).abs() < 1e-9);
    }

    #[test]
    fn coverage_cases() {
        assert_eq!(coverage(&[0.5, 0.6], &[0.1, 0.2]).unwrap(), 100.0);
        assert_eq!(coverage(&[0.5], &[0.5]).unwrap(), 0.0);
        assert!(coverage(&[], &[]).is_err());
    }

    #[test]
    fn point_scores_cases() {
        let f = vec![PointMass(0.2), PointMass(0.4)];
        assert_eq!(point_scores(&f, &[0.2, 0.4]).unwrap(), PointScores { mae: 0.0, rmse: 0.0 });
        assert!(point_scores::<PointMass>(&[], &[]).is_err());
    }

    #[test]
    fn skewed_mixture_splits_median_and_mean() {
        let grid = Arc::new(DensityGrid::uniform());
        let raw: Vec<f64> = grid
            .points()
            .iter()
            .map(|y| {
                let bump = |c: f64| (-(y - c) * (y - c) / (2.0 * 0.01f64.powi(2))).exp();
                0.9 * bump(0.1) + 0.1 * bump(0.9)
            })
            .collect();
        let f = finalize_density(&grid, raw, 0, 1).unwrap();
        assert!((f.median() - 0.1).abs() < 0.011);
        assert!((f.mean() - 0.18).abs() < 0.005);
        let s = point_scores(&[f], &[0.1]).unwrap();
        assert!(s.mae < 0.011 && (s.rmse - 0.08).abs() < 0.005);
    }

    #[test]
    fn crps_is_proper_on_five_points() {
        // Discrete forecasts as step CDFs on a five-point support.
        struct Discrete(Vec<(f64, f64)>);
        impl Predictive for Discrete {
            fn cdf(&self, z: f64) -> f64 {
                self.0.iter().filter(|(x, _)| *x <= z).map(|(_, p)| p).sum()
            }
            fn cdf_left(&self, z: f64) -> f64 {
                self.0.iter().filter(|(x, _)| *x < z).map(|(_, p)| p).sum()
            }
            fn inverse_cdf(&self, theta: f64) -> f64 {
                let mut acc = 0.0;
                for (x, p) in &self.0 {
                    acc += p;
                    if acc >= theta {
                        return *x;
                    }
                }
                self.0.last().unwrap().0
            }
            fn mean(&self) -> f64 {
                self.0.iter().map(|(x, p)| x * p).sum()
            }
            fn breakpoints(&self) -> Vec<f64> {
                self.0.iter().map(|(x, _)| *x).collect()
            }
        }
        let support = [0.1, 0.3, 0.5, 0.7, 0.9];
        let truth = Discrete(support.iter().zip([0.1, 0.2, 0.4, 0.2, 0.1]).map(|(x, p)| (*x, p)).collect());
        let draws = sample(&truth, 100_000, 3);
        let mean_crps = |f: &Discrete| draws.iter().map(|y| crps(f, *y)).sum::<f64>() / draws.len() as f64;
        let reference = mean_crps(&truth);
        for k in 0..20 {
            let mut probs: Vec<f64> = truth.0.iter().map(|(_, p)| *p).collect();
            let (from, to) = (k % 5, (k * 3 + 1) % 5);
            let shift = 0.02 + 0.004 * k as f64;
            let shift = shift.min(probs[from]);
            probs[from] -= shift;
            probs[to] += shift;
            let other = Discrete(support.iter().zip(probs).map(|(x, p)| (*x, p)).collect());
            assert!(reference <= mean_crps(&other), "perturbation {k}");
        }
    }

    #[test]
    fn report_pooling_matches_concatenation() {
        let grid = Arc::new(DensityGrid::uniform());
        let f = DensityForecast::from_cdf(&grid, grid.points().to_vec(), 0, 1).unwrap();
        let obs = [0.1, 0.5, 0.93, 0.2, 0.77];
        let mut a = CellStats::default();
        let mut b = CellStats::default();
        let mut all = CellStats::default();
        for (i, y) in obs.iter().enumerate() {
            if i < 2 { a.add(&f, *y) } else { b.add(&f, *y) }
            all.add(&f, *y);
        }
        a.merge(&b);
        assert_eq!(a.count, all.count);
        assert!((a.crps() - all.crps()).abs() < 1e-15);
        assert_eq!(a.below, all.below);
        let direct = obs.iter().map(|y| crps(&f, *y)).sum::<f64>() / obs.len() as f64;
        assert!((all.crps() - direct).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn forecast_strategy() -> impl Strategy<Value = DensityForecast> {
            proptest::collection::vec(0.0f64..5.0, GRID_SIZE).prop_filter_map("mass", |mut raw| {
                raw[50] += 0.1;
                finalize_density(&Arc::new(DensityGrid::from_p90(0.8).unwrap()), raw, 0, 1).ok()
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn crps_nonnegative(f in forecast_strategy(), y in 0.0f64..1.4) {
                prop_assert!(crps(&f, y) >= 0.0);
            }

            #[test]
            fn coverage_monotone_in_theta(
                fs in proptest::collection::vec(forecast_strategy(), 1..6),
                ys in proptest::collection::vec(0.0f64..1.0, 6),
            ) {
                let ys = &ys[..fs.len()];
                let mut previous = 0.0;
                for theta in COVERAGE_LEVELS {
                    let q: Vec<f64> = fs.iter().map(|f| f.inverse_cdf(theta)).collect();
                    let c = coverage(&q, ys).unwrap();
                    prop_assert!(c >= previous);
                    previous = c;
                }
            }
        }
    }
}
