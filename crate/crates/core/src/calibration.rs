//! Parameter selection by one-step-ahead CRPS on a cross-validation range, and
//! pooling of per-meter optima into category parameters.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dataio::ConsumptionSeries;
use crate::density::{build_grid, DensityGrid};
use crate::error::{Error, Result};
use crate::estimators::{forecast, Method, MethodParams, Param};
use crate::evaluation::crps;
use crate::hwt::HwtParams;
use crate::optim::nelder_mead;

/// Log-spaced candidate values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl LogGrid {
    pub fn new(min: f64, max: f64, points: usize) -> Result<Self> {
        if !(min > 0.0 && max >= min && points >= 1) {
            return Err(Error::InvalidParameter(format!("bad search grid [{min}, {max}] x {points}")));
        }
        Ok(Self { min, max, points })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![(self.min * self.max).sqrt()];
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        (0..self.points)
            .map(|i| (lo + (hi - lo) * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }

    fn log_step(&self) -> f64 {
        if self.points > 1 {
            (self.max / self.min).ln() / (self.points - 1) as f64
        } else {
            0.5
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub h_y: LogGrid,
    /// Period-of-week and period-of-day bandwidths, in half-hours.
    pub x_circular: LogGrid,
    pub x_lag: LogGrid,
    pub lambdas: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            h_y: LogGrid { min: 0.002, max: 0.2, points: 12 },
            x_circular: LogGrid { min: 0.1, max: 32.0, points: 6 },
            x_lag: LogGrid { min: 0.005, max: 0.5, points: 6 },
            lambdas: vec![0.85, 0.90, 0.925, 0.95, 0.975, 0.99, 1.0],
        }
    }
}

impl SearchSpace {
    fn bandwidth_grid(&self, param: Param) -> Option<&LogGrid> {
        match param {
            Param::HY => Some(&self.h_y),
            Param::HxWeek | Param::HxDay | Param::HxWeekday | Param::HxWeekend => Some(&self.x_circular),
            Param::HxLag => Some(&self.x_lag),
            Param::Lambda => None,
        }
    }

    fn lambda_bounds(&self) -> (f64, f64) {
        let lo = self.lambdas.iter().copied().fold(1.0, f64::min);
        (lo, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPlan {
    pub estimation_range: Range<usize>,
    pub cv_range: Range<usize>,
    pub search: SearchSpace,
    /// Share of meters per category that are calibrated.
    pub sample_fraction: f64,
    /// Score every `cv_stride`-th half-hour of the cross-validation range.
    pub cv_stride: usize,
    /// Objective evaluations spent refining the best grid point.
    pub refine_evaluations: usize,
}

impl CalibrationPlan {
    pub fn new(estimation_range: Range<usize>, cv_range: Range<usize>) -> Self {
        Self {
            estimation_range,
            cv_range,
            search: SearchSpace::default(),
            sample_fraction: 0.10,
            cv_stride: 1,
            refine_evaluations: 40,
        }
    }

    pub fn validate(&self, series_len: usize) -> Result<()> {
        let (e, c) = (&self.estimation_range, &self.cv_range);
        if e.start >= e.end || c.start >= c.end || c.start < e.end || c.end > series_len {
            return Err(Error::InvalidParameter(format!(
                "cross-validation range {c:?} must follow estimation range {e:?} within {series_len} periods"
            )));
        }
        if c.start == 0 {
            return Err(Error::InvalidParameter("cross-validation needs history before it".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!("sample fraction {} outside (0, 1]", self.sample_fraction)));
        }
        if self.cv_stride == 0 {
            return Err(Error::InvalidParameter("cv_stride must be at least 1".into()));
        }
        if self.search.lambdas.iter().any(|l| !(*l > 0.0 && *l <= 1.0)) {
            return Err(Error::InvalidParameter("lambda candidates must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Grid built from the estimation range only, so cross-validation never
    /// sees the values it scores.
    pub fn grid(&self, series: &ConsumptionSeries) -> Result<Arc<DensityGrid>> {
        Ok(Arc::new(build_grid(&series.values()[self.estimation_range.clone()])?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvScore {
    pub mean_crps: f64,
    pub steps: usize,
    pub degenerate_steps: usize,
}

/// Mean one-step-ahead CRPS over the cross-validation range. A step whose
/// density cannot be formed scores the worst case `max(y, 1 − y)`.
pub fn cv_score_detail(
    series: &ConsumptionSeries,
    grid: &Arc<DensityGrid>,
    params: &MethodParams,
    plan: &CalibrationPlan,
) -> Result<CvScore> {
    plan.validate(series.len())?;
    params.validate()?;
    let steps: Vec<usize> = plan.cv_range.clone().step_by(plan.cv_stride).collect();
    let scores: Vec<(f64, bool)> = steps
        .par_iter()
        .map(|t| {
            let y = series.values()[*t];
            match forecast(series, grid, params, t - 1, 1) {
                Ok(f) => Ok((crps(&f, y), false)),
                Err(Error::DegenerateDensity | Error::NoMatchingObservations) => Ok((y.max(1.0 - y), true)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    Ok(CvScore {
        mean_crps: scores.iter().map(|(s, _)| s).sum::<f64>() / scores.len() as f64,
        steps: scores.len(),
        degenerate_steps: scores.iter().filter(|(_, d)| *d).count(),
    })
}

pub fn cv_score(series: &ConsumptionSeries, grid: &Arc<DensityGrid>, params: &MethodParams, plan: &CalibrationPlan) -> Result<f64> {
    cv_score_detail(series, grid, params, plan).map(|s| s.mean_crps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub params: MethodParams,
    pub score: f64,
    /// Best score found by the grid search alone.
    pub grid_score: f64,
}

fn candidates(method: Method, search: &SearchSpace) -> Vec<MethodParams> {
    let mut out = vec![MethodParams::new(method, 1.0, 1.0)];
    for param in method.parameters() {
        let values = match search.bandwidth_grid(*param) {
            Some(g) => g.values(),
            None if method == Method::KdU => vec![1.0],
            None => search.lambdas.clone(),
        };
        out = out
            .into_iter()
            .flat_map(|p| values.iter().map(move |v| p.clone().with(*param, *v)))
            .collect();
    }
    out
}

/// Grid search over every free parameter followed by a bounded simplex
/// refinement from the best grid point. Deterministic for a given plan.
pub fn optimize_params(
    series: &ConsumptionSeries,
    grid: &Arc<DensityGrid>,
    method: Method,
    plan: &CalibrationPlan,
) -> Result<Calibrated> {
    plan.validate(series.len())?;
    let scored: Vec<(MethodParams, CvScore)> = candidates(method, &plan.search)
        .into_par_iter()
        .map(|p| cv_score_detail(series, grid, &p, plan).map(|s| (p, s)))
        .collect::<Result<_>>()?;
    let mut best = &scored[0];
    for candidate in &scored[1..] {
        if candidate.1.mean_crps < best.1.mean_crps {
            best = candidate;
        }
    }
    if best.1.degenerate_steps == best.1.steps {
        return Err(Error::DegenerateDensity);
    }
    let (coarse, grid_score) = (best.0.clone(), best.1.mean_crps);

    // Refinement coordinates: log bandwidths and raw lambda.
    let free: Vec<Param> = method
        .parameters()
        .iter()
        .copied()
        .filter(|p| !(method == Method::KdU && *p == Param::Lambda))
        .collect();
    let mut start = Vec::new();
    let mut step = Vec::new();
    let mut bounds = Vec::new();
    for param in &free {
        let value = coarse.get(*param).expect("candidate sets every parameter");
        match plan.search.bandwidth_grid(*param) {
            Some(g) => {
                start.push(value.ln());
                step.push(g.log_step());
                bounds.push((g.min.ln(), g.max.ln()));
            }
            None => {
                start.push(value);
                step.push(0.025);
                bounds.push(plan.search.lambda_bounds());
            }
        }
    }
    let to_params = |x: &[f64]| {
        let mut p = coarse.clone();
        for (param, v) in free.iter().zip(x) {
            let value = if *param == Param::Lambda { *v } else { v.exp() };
            p.set(*param, value);
        }
        p
    };
    let refined = nelder_mead(
        |x| cv_score(series, grid, &to_params(x), plan).unwrap_or(f64::INFINITY),
        &start,
        &step,
        &bounds,
        plan.refine_evaluations,
        1e-6,
    );
    let (params, score) = if refined.value < grid_score {
        (to_params(&refined.point), refined.value)
    } else {
        (coarse, grid_score)
    };
    Ok(Calibrated { params, score, grid_score })
}

/// First `⌈fraction · N⌉` meter ids in sorted order (at least one).
pub fn sample_meters(ids: &[String], fraction: f64) -> Vec<String> {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let take = ((fraction * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len().max(1));
    sorted.truncate(take);
    sorted
}

fn lower_median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

/// Per-parameter lower median of the meters' optima.
pub fn pool_method(per_meter: &[MethodParams]) -> Result<MethodParams> {
    let first = per_meter.first().ok_or(Error::EmptyInput)?;
    if per_meter.iter().any(|p| p.method != first.method) {
        return Err(Error::InvalidParameter("cannot pool parameters of different methods".into()));
    }
    let mut pooled = first.clone();
    for param in first.method.parameters() {
        pooled.set(*param, lower_median(per_meter.iter().filter_map(|p| p.get(*param)).collect()));
    }
    Ok(pooled)
}

pub fn pool_hwt(per_meter: &[HwtParams]) -> Result<HwtParams> {
    if per_meter.is_empty() {
        return Err(Error::EmptyInput);
    }
    let column = |i: usize| lower_median(per_meter.iter().map(|p| p.values()[i]).collect());
    HwtParams::from_values([column(0), column(1), column(2), column(3), column(4)])
}

/// Pooled parameters of one category, with the per-meter optima kept for audit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryParams {
    pub key: String,
    pub methods: BTreeMap<Method, MethodParams>,
    pub hwt: Option<HwtParams>,
    pub per_meter: BTreeMap<Method, Vec<(String, MethodParams)>>,
    pub hwt_per_meter: Vec<(String, HwtParams)>,
}

/// Pools every method (and HWT, when present) calibrated for a category.
pub fn pool_category(
    key: &str,
    per_meter: BTreeMap<Method, Vec<(String, MethodParams)>>,
    hwt_per_meter: Vec<(String, HwtParams)>,
) -> Result<CategoryParams> {
    if per_meter.values().all(|v| v.is_empty()) && hwt_per_meter.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut methods = BTreeMap::new();
    for (method, optima) in &per_meter {
        if optima.is_empty() {
            continue;
        }
        let params: Vec<MethodParams> = optima.iter().map(|(_, p)| p.clone()).collect();
        methods.insert(*method, pool_method(&params)?);
    }
    let hwt = if hwt_per_meter.is_empty() {
        None
    } else {
        Some(pool_hwt(&hwt_per_meter.iter().map(|(_, p)| *p).collect::<Vec<_>>())?)
    };
    Ok(CategoryParams { key: key.to_string(), methods, hwt, per_meter, hwt_per_meter })
}

/// Writes `category,method,param,value` rows; HWT appears as method `HWT`.
pub fn write_params<W: Write>(sink: W, categories: &BTreeMap<String, CategoryParams>) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["category", "method", "param", "value"])?;
    for (key, category) in categories {
        for (method, params) in &category.methods {
            for param in method.parameters() {
                let value = params.get(*param).expect("pooled parameters are complete");
                writer.write_record([key.as_str(), method.name(), param.name(), &value.to_string()])?;
            }
        }
        if let Some(hwt) = &category.hwt {
            for (name, value) in HwtParams::NAMES.iter().zip(hwt.values()) {
                writer.write_record([key.as_str(), "HWT", name, &value.to_string()])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads pooled parameters written by [`write_params`]. Audit fields are empty.
pub fn read_params<R: Read>(source: R) -> Result<BTreeMap<String, CategoryParams>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut kernel: BTreeMap<(String, Method), MethodParams> = BTreeMap::new();
    let mut hwt: BTreeMap<String, [Option<f64>; 5]> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::MalformedRow { line, message };
        if record.len() != 4 {
            return Err(malformed("expected category,method,param,value".into()));
        }
        let key = record[0].to_string();
        let value: f64 = record[3].parse().map_err(|_| malformed(format!("bad value {:?}", &record[3])))?;
        if record[1].eq_ignore_ascii_case("HWT") {
            let slot = HwtParams::NAMES
                .iter()
                .position(|n| *n == &record[2])
                .ok_or_else(|| malformed(format!("unknown HWT parameter {:?}", &record[2])))?;
            hwt.entry(key).or_default()[slot] = Some(value);
            continue;
        }
        let method: Method = record[1].parse().map_err(|e: Error| malformed(e.to_string()))?;
        let param: Param = record[2].parse().map_err(|e: Error| malformed(e.to_string()))?;
        kernel
            .entry((key, method))
            .or_insert_with(|| MethodParams::new(method, f64::NAN, 1.0))
            .set(param, value);
    }
    let mut out: BTreeMap<String, CategoryParams> = BTreeMap::new();
    for ((key, method), params) in kernel {
        params.validate()?;
        let entry = out.entry(key.clone()).or_insert_with(|| CategoryParams { key, ..Default::default() });
        entry.methods.insert(method, params);
    }
    for (key, slots) in hwt {
        let values = slots.map(|v| v.unwrap_or(f64::NAN));
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter(format!("incomplete HWT parameters for {key}")));
        }
        let entry = out.entry(key.clone()).or_insert_with(|| CategoryParams { key, ..Default::default() });
        entry.hwt = Some(HwtParams::from_values(values)?);
    }
    Ok(out)
}
