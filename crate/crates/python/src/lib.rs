//! Python bindings: series handling, kernel and HWT density forecasts,
//! scoring, calibration and tariff costing.

use std::fs::File;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use smartkde::calibration::{optimize_params, CalibrationPlan};
use smartkde::dataio::{format_timestamp, ingest, parse_timestamp, standardize, Segment};
use smartkde::density::{build_grid, sample};
use smartkde::estimators::{forecast, forecast_week, Param};
use smartkde::evaluation::{coverage, crps};
use smartkde::hwt::{hwt_fit, hwt_forecast_week};
use smartkde::tariff::{select_tariff, weekly_cost_density, CostDensity, TariffName};
use smartkde::{
    ConsumptionSeries, Criterion, DensityForecast, DensityGrid, Method, MethodParams, Predictive,
    SpecialDayCalendar, TariffSchedule,
};

fn value_error(e: smartkde::Error) -> PyErr {
    match e {
        smartkde::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn timestamp(text: &str) -> PyResult<chrono::NaiveDateTime> {
    parse_timestamp(text).ok_or_else(|| PyValueError::new_err(format!("bad timestamp {text:?}, expected YYYY-MM-DDTHH:MM")))
}

fn parse_method(name: &str) -> PyResult<Method> {
    name.parse().map_err(value_error)
}

/// Half-hourly readings of one meter.
#[pyclass(name = "Series", module = "smartkde_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySeries {
    inner: ConsumptionSeries,
}

#[pymethods]
impl PySeries {
    #[new]
    fn new(meter_id: String, start: &str, values: Vec<f64>) -> PyResult<Self> {
        let inner = ConsumptionSeries::new(meter_id, timestamp(start)?, values).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn meter_id(&self) -> String {
        self.inner.meter_id().to_string()
    }

    #[getter]
    fn start(&self) -> String {
        format_timestamp(self.inner.start())
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    /// Scale factor applied by `standardize`, if any.
    #[getter]
    fn max_raw(&self) -> Option<f64> {
        self.inner.max_raw()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn timestamp(&self, index: usize) -> String {
        format_timestamp(self.inner.timestamp(index))
    }

    fn index_of(&self, at: &str) -> PyResult<Option<usize>> {
        Ok(self.inner.index_of(timestamp(at)?))
    }

    /// Period of the week, 1 for Monday 00:00 through 336.
    fn period_of_week(&self, index: usize) -> usize {
        self.inner.period_of_week(index)
    }

    /// Divides by the maximum over `values[start:end]`.
    fn standardize(&self, start: usize, end: usize) -> PyResult<Self> {
        Ok(Self { inner: standardize(&self.inner, start..end).map_err(value_error)? })
    }

    fn __repr__(&self) -> String {
        format!("Series({:?}, start={}, len={})", self.inner.meter_id(), self.start(), self.inner.len())
    }
}

type Rejections = Vec<(String, String)>;

/// Reads `meter_id,timestamp,kwh` rows; returns the valid series and the
/// rejected meters with their reasons.
#[pyfunction]
fn read_readings(path: &str) -> PyResult<(Vec<PySeries>, Rejections)> {
    let file = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    let report = ingest(file).map_err(value_error)?;
    Ok((
        report.series.into_iter().map(|inner| PySeries { inner }).collect(),
        report.rejected_meters.into_iter().map(|(id, e)| (id, e.to_string())).collect(),
    ))
}

/// The 100-point evaluation grid of a meter.
#[pyclass(name = "Grid", module = "smartkde_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid {
    inner: Arc<DensityGrid>,
}

#[pymethods]
impl PyGrid {
    /// Grid from in-sample standardized values.
    #[staticmethod]
    fn from_values(values: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: Arc::new(build_grid(&values).map_err(value_error)?) })
    }

    #[staticmethod]
    fn uniform() -> Self {
        Self { inner: Arc::new(DensityGrid::uniform()) }
    }

    #[getter]
    fn points(&self) -> Vec<f64> {
        self.inner.points().to_vec()
    }

    #[getter]
    fn p90(&self) -> f64 {
        self.inner.p90()
    }
}

/// Bandwidths and decay of one kernel method.
#[pyclass(name = "MethodParams", module = "smartkde_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMethodParams {
    inner: MethodParams,
}

#[pymethods]
impl PyMethodParams {
    /// `method` is one of KD-U, KD-W, CKD-W, CKD-WD, KD-IC, CKD-IC, CKD-Lag;
    /// `x_bandwidths` maps names such as `h_x_week` to values.
    #[new]
    #[pyo3(signature = (method, h_y, decay = 1.0, x_bandwidths = None))]
    fn new(method: &str, h_y: f64, decay: f64, x_bandwidths: Option<Vec<(String, f64)>>) -> PyResult<Self> {
        let mut inner = MethodParams::new(parse_method(method)?, h_y, decay);
        for (name, value) in x_bandwidths.unwrap_or_default() {
            let param: Param = name.parse().map_err(value_error)?;
            inner.set(param, value);
        }
        inner.validate().map_err(value_error)?;
        Ok(Self { inner })
    }

    /// Published category averages; `segment` is `residential` or `sme`.
    #[staticmethod]
    fn published(method: &str, segment: &str) -> PyResult<Self> {
        let segment = match segment {
            "residential" => Segment::Residential,
            "sme" => Segment::Sme,
            other => return Err(PyValueError::new_err(format!("unknown segment {other:?}"))),
        };
        Ok(Self { inner: MethodParams::published(parse_method(method)?, segment) })
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.name()
    }

    /// Free parameters of the method as `(name, value)` pairs.
    fn items(&self) -> Vec<(&'static str, f64)> {
        self.inner
            .method
            .parameters()
            .iter()
            .filter_map(|p| self.inner.get(*p).map(|v| (p.name(), v)))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("MethodParams({}, {:?})", self.inner.method, self.items())
    }
}

/// Density forecast for one horizon from one origin.
#[pyclass(name = "Forecast", module = "smartkde_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyForecast {
    inner: DensityForecast,
}

#[pymethods]
impl PyForecast {
    #[getter]
    fn origin(&self) -> usize {
        self.inner.origin()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn points(&self) -> Vec<f64> {
        self.inner.grid().points().to_vec()
    }

    #[getter]
    fn density(&self) -> Vec<f64> {
        self.inner.density().to_vec()
    }

    #[getter]
    fn cdf_values(&self) -> Vec<f64> {
        self.inner.cdf_values().to_vec()
    }

    fn cdf(&self, z: f64) -> f64 {
        self.inner.cdf(z)
    }

    fn quantile(&self, theta: f64) -> f64 {
        self.inner.inverse_cdf(theta)
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn median(&self) -> f64 {
        self.inner.median()
    }

    fn crps(&self, observation: f64) -> f64 {
        crps(&self.inner, observation)
    }

    fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        sample(&self.inner, count, seed)
    }
}

fn wrap(forecasts: Vec<DensityForecast>) -> Vec<PyForecast> {
    forecasts.into_iter().map(|inner| PyForecast { inner }).collect()
}

/// Kernel density forecast of `values[origin + horizon]`.
#[pyfunction]
#[pyo3(name = "forecast")]
fn forecast_one(series: &PySeries, grid: &PyGrid, params: &PyMethodParams, origin: usize, horizon: usize) -> PyResult<PyForecast> {
    let inner = forecast(&series.inner, &grid.inner, &params.inner, origin, horizon).map_err(value_error)?;
    Ok(PyForecast { inner })
}

/// Kernel density forecasts for horizons 1..=336.
#[pyfunction]
#[pyo3(name = "forecast_week")]
fn forecast_all(series: &PySeries, grid: &PyGrid, params: &PyMethodParams, origin: usize) -> PyResult<Vec<PyForecast>> {
    forecast_week(&series.inner, &grid.inner, &params.inner, origin).map(wrap).map_err(value_error)
}

/// Fitted Holt-Winters parameters.
#[pyclass(name = "HwtParams", module = "smartkde_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHwtParams {
    inner: smartkde::hwt::HwtParams,
}

#[pymethods]
impl PyHwtParams {
    #[new]
    fn new(alpha: f64, delta: f64, omega: f64, phi: f64, sigma: f64) -> PyResult<Self> {
        let inner = smartkde::hwt::HwtParams::new(alpha, delta, omega, phi, sigma).map_err(value_error)?;
        Ok(Self { inner })
    }

    /// `(alpha, delta, omega, phi, sigma)`.
    fn values(&self) -> (f64, f64, f64, f64, f64) {
        let [a, d, o, p, s] = self.inner.values();
        (a, d, o, p, s)
    }

    fn __repr__(&self) -> String {
        let [a, d, o, p, s] = self.inner.values();
        format!("HwtParams(alpha={a}, delta={d}, omega={o}, phi={p}, sigma={s})")
    }
}

/// Least-squares HWT fit on `values[:end]`; returns the parameters and the SSE.
#[pyfunction]
fn fit_hwt(series: &PySeries, end: usize) -> PyResult<(PyHwtParams, f64)> {
    let values = series.inner.values().get(..end).ok_or_else(|| PyValueError::new_err("end beyond series"))?;
    let fit = hwt_fit(values, series.inner.period_of_week(0) - 1).map_err(value_error)?;
    Ok((PyHwtParams { inner: fit.params }, fit.sse))
}

/// Simulated HWT density forecasts for horizons 1..=336.
#[pyfunction]
#[pyo3(signature = (series, params, grid, origin, iterations = 1000, seed = 0))]
fn hwt_forecast(
    series: &PySeries,
    params: &PyHwtParams,
    grid: &PyGrid,
    origin: usize,
    iterations: usize,
    seed: u64,
) -> PyResult<Vec<PyForecast>> {
    let out = hwt_forecast_week(&series.inner, &params.inner, &grid.inner, origin, iterations, seed).map_err(value_error)?;
    Ok(wrap(out.forecasts))
}

/// Percentage of observations strictly below their quantile forecasts.
#[pyfunction]
#[pyo3(name = "coverage")]
fn coverage_pct(quantiles: Vec<f64>, observations: Vec<f64>) -> PyResult<f64> {
    coverage(&quantiles, &observations).map_err(value_error)
}

/// Cross-validated parameters for `method` on a standardized series; returns
/// the parameters and their mean one-step CRPS.
#[pyfunction]
#[pyo3(signature = (series, method, estimation, cv, cv_stride = 1))]
fn calibrate(
    series: &PySeries,
    method: &str,
    estimation: (usize, usize),
    cv: (usize, usize),
    cv_stride: usize,
) -> PyResult<(PyMethodParams, f64)> {
    let mut plan = CalibrationPlan::new(estimation.0..estimation.1, cv.0..cv.1);
    plan.cv_stride = cv_stride;
    let grid = plan.grid(&series.inner).map_err(value_error)?;
    let fit = optimize_params(&series.inner, &grid, parse_method(method)?, &plan).map_err(value_error)?;
    Ok((PyMethodParams { inner: fit.params }, fit.score))
}

/// One tariff's day, peak and night rates in cents per kWh.
#[pyclass(name = "Tariff", module = "smartkde_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTariff {
    inner: TariffSchedule,
}

#[pymethods]
impl PyTariff {
    #[new]
    #[pyo3(signature = (name, day_rate, peak_rate, night_rate, weekend_rule = false))]
    fn new(name: &str, day_rate: f64, peak_rate: f64, night_rate: f64, weekend_rule: bool) -> PyResult<Self> {
        let name: TariffName = name.parse().map_err(value_error)?;
        let inner = TariffSchedule::new(name, day_rate, peak_rate, night_rate, weekend_rule).map_err(value_error)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name.as_str()
    }

    /// Rate charged for the half-hour starting at `at`.
    fn rate_at(&self, at: &str) -> PyResult<f64> {
        Ok(self.inner.rate_at(timestamp(at)?, &SpecialDayCalendar::new()))
    }
}

/// The trial's five time-of-use tariffs and the flat tariff.
#[pyfunction]
fn tariff_catalog() -> Vec<PyTariff> {
    TariffSchedule::catalog().into_iter().map(|inner| PyTariff { inner }).collect()
}

/// Sampled weekly cost of a week of forecasts.
#[pyclass(name = "CostDensity", module = "smartkde_py", frozen, skip_from_py_object)]
struct PyCostDensity {
    inner: CostDensity,
}

#[pymethods]
impl PyCostDensity {
    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn quantile(&self, theta: f64) -> f64 {
        self.inner.quantile(theta)
    }
}

/// Weekly cost density; `first_period` is the timestamp of the first forecast
/// half-hour and `kwh_scale` undoes standardization.
#[pyfunction]
#[pyo3(signature = (forecasts, first_period, tariff, kwh_scale = 1.0, samples = 10_000, seed = 0))]
fn weekly_cost(
    forecasts: Vec<PyRef<'_, PyForecast>>,
    first_period: &str,
    tariff: &PyTariff,
    kwh_scale: f64,
    samples: usize,
    seed: u64,
) -> PyResult<PyCostDensity> {
    let periods: Vec<DensityForecast> = forecasts.iter().map(|f| f.inner.clone()).collect();
    let calendar = SpecialDayCalendar::new();
    let inner = weekly_cost_density(&periods, timestamp(first_period)?, &tariff.inner, &calendar, kwh_scale, samples, seed)
        .map_err(value_error)?;
    Ok(PyCostDensity { inner })
}

/// Cheapest tariff under `criterion` (`mean`, `q75` or `q95`).
#[pyfunction]
#[pyo3(name = "select_tariff")]
fn choose_tariff(costs: Vec<(String, PyRef<'_, PyCostDensity>)>, criterion: &str) -> PyResult<&'static str> {
    let criterion: Criterion = criterion.parse().map_err(value_error)?;
    let candidates = costs
        .iter()
        .map(|(name, cost)| Ok((name.parse::<TariffName>().map_err(value_error)?, cost.inner.clone())))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(select_tariff(&candidates, criterion).map_err(value_error)?.as_str())
}

#[pymodule]
fn smartkde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeries>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyMethodParams>()?;
    m.add_class::<PyForecast>()?;
    m.add_class::<PyHwtParams>()?;
    m.add_class::<PyTariff>()?;
    m.add_class::<PyCostDensity>()?;
    m.add_function(wrap_pyfunction!(read_readings, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_one, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_all, m)?)?;
    m.add_function(wrap_pyfunction!(fit_hwt, m)?)?;
    m.add_function(wrap_pyfunction!(hwt_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_pct, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(tariff_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(weekly_cost, m)?)?;
    m.add_function(wrap_pyfunction!(choose_tariff, m)?)?;
    Ok(())
}
