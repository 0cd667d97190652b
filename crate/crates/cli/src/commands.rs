use std::collections::BTreeMap;
use std::fs::{self, File};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use log::{info, warn};
use rayon::prelude::*;

use smartkde::calibration::{
    optimize_params, pool_category, read_params, sample_meters, write_params, CalibrationPlan, CategoryParams,
};
use smartkde::dataio::{
    apply_post_sample_holidays, format_timestamp, ingest, read_categories, smooth_special_days, standardize,
    IngestReport, MeterCategory,
};
use smartkde::density::{build_grid, write_forecasts, DensityForecast, DensityGrid, Predictive};
use smartkde::estimators::forecast_week;
use smartkde::evaluation::{meter_seed, rolling_evaluate, EvalMeter, ModelId, ModelSpec, COVERAGE_LEVELS};
use smartkde::hwt::{hwt_fit, hwt_forecast_week, HwtParams};
use smartkde::kernels::S2;
use smartkde::tariff::{
    read_catalog, summarize, switching_simulation, write_switching_report, SwitchingConfig, WeekForecast,
};
use smartkde::{ConsumptionSeries, Criterion, Method, MethodParams, SpecialDayCalendar, TariffSchedule};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub methods: Option<Vec<ModelId>>,
    pub meter: Option<String>,
    pub origin: Option<NaiveDateTime>,
    pub criterion: Option<Criterion>,
}

/// Per-meter rejections found by `validate`.
#[derive(Debug, Default)]
pub struct ValidationReport {
    pub rejected_meters: Vec<(String, String)>,
    pub dropped_rows: Vec<(u64, String)>,
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn data_error(path: &Path) -> impl Fn(smartkde::Error) -> CliError + '_ {
    move |source| CliError::Data { path: path.to_path_buf(), source }
}

/// Writes a fully rendered file, creating its directory first.
fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |source| CliError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, bytes).map_err(io)
}

fn render(write: impl FnOnce(&mut Vec<u8>) -> smartkde::Result<()>) -> CliResult<Vec<u8>> {
    let mut buffer = Vec::new();
    write(&mut buffer)?;
    Ok(buffer)
}

/// Renders a header and rows as CSV.
fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).map_err(smartkde::Error::from)?;
    for row in rows {
        writer.write_record(&row).map_err(smartkde::Error::from)?;
    }
    writer.into_inner().map_err(|e| CliError::Core(smartkde::Error::Io(e.into_error())))
}

fn load_readings(config: &RunConfig) -> CliResult<IngestReport> {
    ingest(open(&config.readings)?).map_err(data_error(&config.readings))
}

fn load_categories(config: &RunConfig) -> CliResult<BTreeMap<String, MeterCategory>> {
    let path = config.categories_path()?;
    read_categories(open(path)?).map_err(data_error(path))
}

fn load_calendar(config: &RunConfig) -> CliResult<SpecialDayCalendar> {
    match &config.holidays {
        Some(path) => SpecialDayCalendar::from_csv(open(path)?).map_err(data_error(path)),
        None => Ok(SpecialDayCalendar::new()),
    }
}

fn load_params(config: &RunConfig) -> CliResult<BTreeMap<String, CategoryParams>> {
    if !config.params.is_file() {
        return Err(CliError::MissingFile { key: "params".into(), path: config.params.clone() });
    }
    read_params(open(&config.params)?).map_err(data_error(&config.params))
}

fn load_catalog(config: &RunConfig) -> CliResult<Vec<TariffSchedule>> {
    match &config.tariffs {
        Some(path) => read_catalog(open(path)?).map_err(data_error(path)),
        None => Ok(TariffSchedule::catalog()),
    }
}

/// A meter after standardization, holiday smoothing and post-sample holiday resolution.
struct Prepared {
    series: ConsumptionSeries,
    calendar: SpecialDayCalendar,
    estimation: Range<usize>,
    cv: Range<usize>,
    post: Range<usize>,
}

impl Prepared {
    /// Grid from every in-sample value, estimation and cross-validation alike.
    fn grid(&self) -> smartkde::Result<Arc<DensityGrid>> {
        Ok(Arc::new(build_grid(&self.series.values()[self.estimation.start..self.cv.end])?))
    }
}

fn index(series: &ConsumptionSeries, key: &str, at: NaiveDateTime) -> smartkde::Result<usize> {
    series.index_of(at).ok_or_else(|| {
        smartkde::Error::InvalidParameter(format!("{key} {} is outside meter {}", format_timestamp(at), series.meter_id()))
    })
}

fn prepare(raw: &ConsumptionSeries, config: &RunConfig, holidays: &SpecialDayCalendar) -> smartkde::Result<Prepared> {
    let estimation_start = match config.estimation_start {
        Some(at) => index(raw, "estimation_start", at)?,
        None => 0,
    };
    let cv_start = index(raw, "cv_start", config.cv_start)?;
    let post_start = index(raw, "post_sample_start", config.post_sample_start)?;
    let post_end = raw.index_of(config.post_sample_end).unwrap_or(raw.len());
    let standardized = standardize(raw, estimation_start..post_start)?;
    // Holidays before the meter's first day cannot be smoothed or used as a reference.
    let mut calendar = SpecialDayCalendar::new();
    for date in holidays.dates().filter(|d| *d >= raw.start().date()) {
        calendar.insert(date, holidays.resolution(date).expect("listed date"));
    }
    let smoothed = smooth_special_days(&standardized, &mut calendar)?;
    let series = apply_post_sample_holidays(&smoothed, &mut calendar)?;
    Ok(Prepared {
        series,
        calendar,
        estimation: estimation_start..cv_start,
        cv: cv_start..post_start,
        post: post_start..post_end,
    })
}

fn selected<'a>(series: &'a [ConsumptionSeries], meter: Option<&str>) -> CliResult<Vec<&'a ConsumptionSeries>> {
    match meter {
        None => Ok(series.iter().collect()),
        Some(id) => series
            .iter()
            .find(|s| s.meter_id() == id)
            .map(|s| vec![s])
            .ok_or_else(|| CliError::Usage(format!("meter {id} not found among valid meters"))),
    }
}

fn kernel_params(category: &CategoryParams, method: Method) -> smartkde::Result<MethodParams> {
    category
        .methods
        .get(&method)
        .cloned()
        .ok_or_else(|| smartkde::Error::InvalidParameter(format!("no {method} parameters for {}", category.key)))
}

fn hwt_params(category: &CategoryParams) -> smartkde::Result<HwtParams> {
    category
        .hwt
        .ok_or_else(|| smartkde::Error::InvalidParameter(format!("no HWT parameters for {}", category.key)))
}

/// Week of density forecasts from `origin` with the category's parameters.
fn forecast_model(
    prepared: &Prepared,
    grid: &Arc<DensityGrid>,
    category: &CategoryParams,
    model: ModelId,
    origin: usize,
    config: &RunConfig,
) -> smartkde::Result<Vec<DensityForecast>> {
    let series = &prepared.series;
    match model {
        ModelId::Kernel(method) => forecast_week(series, grid, &kernel_params(category, method)?, origin),
        ModelId::Hwt => {
            let seed = meter_seed(config.seed, series.meter_id()).wrapping_add(origin as u64);
            Ok(hwt_forecast_week(series, &hwt_params(category)?, grid, origin, config.hwt_iterations, seed)?.forecasts)
        }
    }
}

pub fn cmd_validate(config: &RunConfig) -> CliResult<ValidationReport> {
    let report = load_readings(config)?;
    Ok(ValidationReport {
        rejected_meters: report.rejected_meters.into_iter().map(|(id, e)| (id, e.to_string())).collect(),
        dropped_rows: report.rejected_rows,
    })
}

type MeterOptima = (BTreeMap<Method, MethodParams>, Option<HwtParams>);

fn calibrate_meter(
    raw: &ConsumptionSeries,
    config: &RunConfig,
    methods: &[ModelId],
    holidays: &SpecialDayCalendar,
) -> smartkde::Result<MeterOptima> {
    let prepared = prepare(raw, config, holidays)?;
    let mut plan = CalibrationPlan::new(prepared.estimation.clone(), prepared.cv.clone());
    plan.sample_fraction = config.sample_fraction;
    plan.cv_stride = config.cv_stride;
    plan.refine_evaluations = config.refine_evaluations;
    let grid = plan.grid(&prepared.series)?;
    let mut kernels = BTreeMap::new();
    let mut hwt = None;
    for model in methods {
        match model {
            ModelId::Kernel(method) => {
                let fit = optimize_params(&prepared.series, &grid, *method, &plan)?;
                info!("meter {}: {method} cv crps {:.6}", raw.meter_id(), fit.score);
                kernels.insert(*method, fit.params);
            }
            ModelId::Hwt => {
                let values = &prepared.series.values()[..prepared.cv.end];
                hwt = Some(hwt_fit(values, prepared.series.period_of_week(0) - 1)?.params);
            }
        }
    }
    Ok((kernels, hwt))
}

/// Outcome of `calibrate`: pooled categories and the categories that failed.
#[derive(Debug)]
pub struct CalibrationRun {
    pub categories: BTreeMap<String, CategoryParams>,
    pub failures: Vec<(String, String)>,
}

/// Calibrates a sample of meters per category and pools their optima.
pub fn cmd_calibrate(config: &RunConfig, overrides: &Overrides) -> CliResult<CalibrationRun> {
    let report = load_readings(config)?;
    let categories = load_categories(config)?;
    let holidays = load_calendar(config)?;
    let meters = selected(&report.series, overrides.meter.as_deref())?;
    let methods = overrides.methods.as_deref().unwrap_or(&config.methods);

    let mut by_category: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for series in &meters {
        match categories.get(series.meter_id()) {
            Some(c) => by_category.entry(c.key()).or_default().push(series.meter_id().to_string()),
            None => warn!("meter {} has no category and is not calibrated", series.meter_id()),
        }
    }
    let jobs: Vec<(String, &ConsumptionSeries)> = by_category
        .iter()
        .flat_map(|(key, ids)| {
            let sampled = sample_meters(ids, config.sample_fraction);
            meters
                .iter()
                .filter(move |s| sampled.iter().any(|id| id == s.meter_id()))
                .map(move |s| (key.clone(), *s))
        })
        .collect();
    let optima: Vec<smartkde::Result<MeterOptima>> =
        jobs.par_iter().map(|(_, series)| calibrate_meter(series, config, methods, &holidays)).collect();

    let mut run = CalibrationRun { categories: BTreeMap::new(), failures: Vec::new() };
    for key in by_category.keys() {
        let mut per_meter: BTreeMap<Method, Vec<(String, MethodParams)>> = BTreeMap::new();
        let mut hwt_per_meter = Vec::new();
        for ((_, series), result) in jobs.iter().zip(&optima).filter(|((k, _), _)| k == key) {
            match result {
                Ok((kernels, hwt)) => {
                    for (method, params) in kernels {
                        per_meter.entry(*method).or_default().push((series.meter_id().to_string(), params.clone()));
                    }
                    if let Some(h) = hwt {
                        hwt_per_meter.push((series.meter_id().to_string(), *h));
                    }
                }
                Err(e) => warn!("category {key}: meter {} skipped: {e}", series.meter_id()),
            }
        }
        match pool_category(key, per_meter, hwt_per_meter) {
            Ok(pooled) => {
                run.categories.insert(key.clone(), pooled);
            }
            Err(e) => run.failures.push((key.clone(), e.to_string())),
        }
    }
    if run.categories.is_empty() {
        return Err(CliError::Usage("no category could be calibrated".into()));
    }

    let params = render(|sink| write_params(sink, &run.categories))?;
    let mut rows = Vec::new();
    for (key, category) in &run.categories {
        for (method, optima) in &category.per_meter {
            for (meter, params) in optima {
                for param in method.parameters() {
                    let value = params.get(*param).expect("calibrated parameters are complete");
                    rows.push(vec![key.clone(), meter.clone(), method.name().into(), param.name().into(), value.to_string()]);
                }
            }
        }
        for (meter, params) in &category.hwt_per_meter {
            for (name, value) in HwtParams::NAMES.iter().zip(params.values()) {
                rows.push(vec![key.clone(), meter.clone(), "HWT".into(), name.to_string(), value.to_string()]);
            }
        }
    }
    let audit = table(&["category", "meter_id", "method", "param", "value"], rows)?;
    write_file(&config.params, &params)?;
    write_file(&config.output_dir.join("calibration_per_meter.csv"), &audit)?;
    Ok(run)
}

fn category_of<'a>(
    meter_id: &str,
    categories: &BTreeMap<String, MeterCategory>,
    params: &'a BTreeMap<String, CategoryParams>,
) -> Result<(&'a CategoryParams, MeterCategory), String> {
    let category = categories.get(meter_id).ok_or("no category")?;
    let pooled = params.get(&category.key()).ok_or_else(|| format!("no parameters for category {}", category.key()))?;
    Ok((pooled, category.clone()))
}

/// Paths written by `forecast`, one pair per method.
#[derive(Debug)]
pub struct ForecastFiles {
    pub densities: Vec<std::path::PathBuf>,
    pub fan_charts: Vec<std::path::PathBuf>,
}

fn fan_chart(series: &ConsumptionSeries, forecasts: &[DensityForecast]) -> CliResult<Vec<u8>> {
    let labels: Vec<String> = COVERAGE_LEVELS.iter().map(|q| format!("q{:02}", (q * 100.0).round() as u32)).collect();
    let mut header = vec!["horizon", "timestamp"];
    header.extend(labels.iter().map(String::as_str));
    header.extend(["median", "actual"]);
    let rows = forecasts.iter().map(|f| {
        let target = f.origin() + f.horizon();
        let mut row = vec![f.horizon().to_string(), format_timestamp(series.timestamp(target))];
        row.extend(COVERAGE_LEVELS.iter().map(|q| f.inverse_cdf(*q).to_string()));
        row.push(f.median().to_string());
        row.push(series.values().get(target).map_or(String::new(), f64::to_string));
        row
    });
    table(&header, rows)
}

/// Density export and fan chart for one meter and origin, per requested method.
pub fn cmd_forecast(config: &RunConfig, overrides: &Overrides) -> CliResult<ForecastFiles> {
    let meter = overrides.meter.as_deref().ok_or_else(|| CliError::Usage("forecast needs --meter".into()))?;
    let origin_at = overrides.origin.ok_or_else(|| CliError::Usage("forecast needs --origin".into()))?;
    let methods = overrides.methods.clone().unwrap_or_else(|| config.methods.clone());
    let report = load_readings(config)?;
    let categories = load_categories(config)?;
    let params = load_params(config)?;
    let holidays = load_calendar(config)?;
    let raw = selected(&report.series, Some(meter))?[0];
    let (pooled, _) = category_of(meter, &categories, &params).map_err(|e| CliError::Usage(format!("meter {meter}: {e}")))?;
    let prepared = prepare(raw, config, &holidays)?;
    let origin = index(&prepared.series, "origin", origin_at)?;
    let grid = prepared.grid()?;

    let mut rendered = Vec::new();
    for model in &methods {
        let forecasts = forecast_model(&prepared, &grid, pooled, *model, origin, config)?;
        let stem = format!("{meter}_{}", model.name());
        let densities = render(|sink| write_forecasts(sink, meter, &forecasts))?;
        let fan = fan_chart(&prepared.series, &forecasts)?;
        rendered.push((config.output_dir.join(format!("forecast_{stem}.csv")), densities));
        rendered.push((config.output_dir.join(format!("fan_{stem}.csv")), fan));
    }
    let mut files = ForecastFiles { densities: Vec::new(), fan_charts: Vec::new() };
    for (i, (path, bytes)) in rendered.into_iter().enumerate() {
        write_file(&path, &bytes)?;
        if i % 2 == 0 { files.densities.push(path) } else { files.fan_charts.push(path) }
    }
    Ok(files)
}

/// Outcome of `evaluate` beyond the two written CSVs.
#[derive(Debug)]
pub struct EvaluationRun {
    pub meters: Vec<String>,
    pub failures: Vec<(String, String)>,
    /// Overall CRPS per method, pooled over horizons.
    pub overall: Vec<(ModelId, f64)>,
}

pub fn cmd_evaluate(config: &RunConfig, overrides: &Overrides) -> CliResult<EvaluationRun> {
    let methods = overrides.methods.clone().unwrap_or_else(|| config.methods.clone());
    let report = load_readings(config)?;
    let categories = load_categories(config)?;
    let params = load_params(config)?;
    let holidays = load_calendar(config)?;
    let meters = selected(&report.series, overrides.meter.as_deref())?;

    let mut failures = Vec::new();
    let prepared: Vec<Result<EvalMeter, (String, String)>> = meters
        .par_iter()
        .map(|raw| {
            let id = raw.meter_id().to_string();
            let (pooled, _) = category_of(&id, &categories, &params).map_err(|e| (id.clone(), e))?;
            let prepared = prepare(raw, config, &holidays).map_err(|e| (id.clone(), e.to_string()))?;
            let grid = prepared.grid().map_err(|e| (id.clone(), e.to_string()))?;
            let mut models = Vec::new();
            for model in &methods {
                match model {
                    ModelId::Kernel(method) => {
                        if let Some(p) = pooled.methods.get(method) {
                            models.push(ModelSpec::Kernel(p.clone()));
                        }
                    }
                    ModelId::Hwt => {
                        if let Some(p) = pooled.hwt {
                            models.push(ModelSpec::Hwt { params: p, iterations: config.hwt_iterations, seed: config.seed });
                        }
                    }
                }
            }
            Ok(EvalMeter { series: prepared.series, grid, models })
        })
        .collect();
    let mut ready = Vec::new();
    for result in prepared {
        match result {
            Ok(m) => ready.push(m),
            Err(failure) => failures.push(failure),
        }
    }
    if ready.is_empty() {
        return Err(CliError::Usage("no meter available for evaluation".into()));
    }
    let report = rolling_evaluate(&ready, &methods, config.post_sample_start..config.post_sample_end)?;
    failures.extend(report.failures.iter().cloned());
    if report.meters.is_empty() {
        return Err(CliError::Usage(format!("every meter failed evaluation: {failures:?}")));
    }
    let scores = render(|sink| report.write_scores(sink))?;
    let coverage = render(|sink| report.write_coverage(sink))?;
    write_file(&config.output_dir.join("scores_by_horizon.csv"), &scores)?;
    write_file(&config.output_dir.join("coverage.csv"), &coverage)?;
    let overall = methods.iter().filter_map(|m| report.overall(*m).map(|c| (*m, c.crps()))).collect();
    Ok(EvaluationRun { meters: report.meters, failures, overall })
}

/// Outcome of `tariff`: the aggregate line and the excluded meters.
#[derive(Debug)]
pub struct TariffRun {
    pub criterion: Criterion,
    pub summary: smartkde::tariff::SwitchingSummary,
    pub excluded: Vec<(String, String)>,
}

/// Origins whose following week starts on a Monday and lies inside the post-sample range.
fn weekly_origins(series: &ConsumptionSeries, post: &Range<usize>) -> Vec<usize> {
    post.clone()
        .filter(|t| *t > 0 && t + S2 <= post.end)
        .filter(|t| {
            let ts = series.timestamp(*t);
            ts.weekday() == Weekday::Mon && ts.hour() == 0 && ts.minute() == 0
        })
        .map(|t| t - 1)
        .collect()
}

pub fn cmd_tariff(config: &RunConfig, overrides: &Overrides) -> CliResult<TariffRun> {
    let criterion = overrides.criterion.unwrap_or(config.criterion);
    let model = match overrides.methods.as_deref() {
        None => config.tariff_method,
        Some([single]) => *single,
        Some(_) => return Err(CliError::Usage("tariff takes a single method".into())),
    };
    let report = load_readings(config)?;
    let categories = load_categories(config)?;
    let params = load_params(config)?;
    let holidays = load_calendar(config)?;
    let catalog = load_catalog(config)?;
    let meters = selected(&report.series, overrides.meter.as_deref())?;

    let results: Vec<Result<smartkde::tariff::SwitchingRecord, (String, String)>> = meters
        .par_iter()
        .map(|raw| {
            let id = raw.meter_id().to_string();
            let fail = |e: String| (id.clone(), e);
            let (pooled, category) = category_of(&id, &categories, &params).map_err(fail)?;
            let allocated_name = category.tariff.ok_or_else(|| fail("control group".into()))?;
            let allocated = catalog
                .iter()
                .find(|t| t.name == allocated_name)
                .ok_or_else(|| fail(format!("allocated tariff {allocated_name} not in catalog")))?;
            let prepared = prepare(raw, config, &holidays).map_err(|e| fail(e.to_string()))?;
            let grid = prepared.grid().map_err(|e| fail(e.to_string()))?;
            let weeks = weekly_origins(&prepared.series, &prepared.post)
                .into_iter()
                .map(|origin| {
                    forecast_model(&prepared, &grid, pooled, model, origin, config)
                        .map(|periods| WeekForecast { origin, periods })
                })
                .collect::<smartkde::Result<Vec<_>>>()
                .map_err(|e| fail(e.to_string()))?;
            if weeks.is_empty() {
                return Err(fail("no complete post-sample week".into()));
            }
            let switching = SwitchingConfig {
                candidates: catalog.clone(),
                criterion,
                sample_count: config.cost_samples,
                seed: meter_seed(config.seed, &id),
            };
            switching_simulation(&prepared.series, &weeks, allocated, &prepared.calendar, &switching)
                .map_err(|e| fail(e.to_string()))
        })
        .collect();
    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for result in results {
        match result {
            Ok(r) => records.push(r),
            Err(e) => excluded.push(e),
        }
    }
    if records.is_empty() {
        return Err(CliError::Usage(format!("no meter eligible for the switching study: {excluded:?}")));
    }
    let summary = summarize(&records)?;
    let report_bytes = render(|sink| write_switching_report(sink, &records))?;
    let aggregate = table(
        &["criterion", "meters", "switching_cheaper_pct", "allocated_cheaper_pct", "no_difference_pct", "average_saving"],
        [vec![
            criterion.to_string(),
            summary.meters.to_string(),
            summary.switching_cheaper_pct.to_string(),
            summary.allocated_cheaper_pct.to_string(),
            summary.no_difference_pct.to_string(),
            summary.average_saving.to_string(),
        ]],
    )?;
    let excluded_csv = table(&["meter_id", "reason"], excluded.iter().map(|(id, r)| vec![id.clone(), r.clone()]))?;
    write_file(&config.output_dir.join(format!("switching_{criterion}.csv")), &report_bytes)?;
    write_file(&config.output_dir.join(format!("switching_summary_{criterion}.csv")), &aggregate)?;
    write_file(&config.output_dir.join(format!("switching_excluded_{criterion}.csv")), &excluded_csv)?;
    Ok(TariffRun { criterion, summary, excluded })
}
