//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use smartkde::calibration::{cv_score, CalibrationPlan};
use smartkde::dataio::{half_hour, parse_timestamp, standardize, ConsumptionSeries, Segment, SpecialDayCalendar};
use smartkde::density::{build_grid, DensityGrid, PointMass, Predictive};
use smartkde::estimators::{forecast, forecast_week, observation_weights, Method, MethodParams, Param};
use smartkde::evaluation::{coverage, crps, rolling_evaluate, EvalMeter, ModelId, ModelSpec, COVERAGE_LEVELS};
use smartkde::hwt::{filter, hwt_density, hwt_fit, HwtParams, HwtState, WARMUP_WEEKS};
use smartkde::kernels::{decay_weight, S1, S2};
use smartkde::tariff::{
    classify_period, switching_simulation, weekly_cost_density, Criterion, RatePeriod, SwitchingConfig,
    TariffName, TariffSchedule, WeekForecast,
};

type Check = std::result::Result<(), String>;

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Check {
    if condition { Ok(()) } else { Err(message()) }
}

fn within_time(started: Instant, limit: Duration) -> Check {
    let spent = started.elapsed();
    ensure(spent < limit, || format!("took {spent:?}, limit {limit:?}"))
}

const MONDAY: &str = "2010-01-04T00:00";

fn monday() -> NaiveDateTime {
    parse_timestamp(MONDAY).unwrap()
}

fn series(values: Vec<f64>) -> ConsumptionSeries {
    ConsumptionSeries::new("synthetic", monday(), values).unwrap()
}

/// Normal(μ, σ) restricted to [0, 1] and renormalized.
struct TruncatedNormal {
    normal: Normal,
    lo: f64,
    mass: f64,
}

impl TruncatedNormal {
    fn new(mu: f64, sigma: f64) -> Self {
        let normal = Normal::new(mu, sigma).unwrap();
        let lo = normal.cdf(0.0);
        Self { normal, lo, mass: normal.cdf(1.0) - lo }
    }
}

impl Predictive for TruncatedNormal {
    fn cdf(&self, z: f64) -> f64 {
        ((self.normal.cdf(z.clamp(0.0, 1.0)) - self.lo) / self.mass).clamp(0.0, 1.0)
    }
    fn inverse_cdf(&self, theta: f64) -> f64 {
        self.normal.inverse_cdf(self.lo + theta * self.mass)
    }
    fn mean(&self) -> f64 {
        let n = 10_000;
        (0..n).map(|i| 1.0 - self.cdf((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
    }
    fn breakpoints(&self) -> Vec<f64> {
        (0..=2000).map(|i| i as f64 / 2000.0).collect()
    }
}

fn crps_oracle() -> Check {
    let started = Instant::now();
    let f = TruncatedNormal::new(0.5, 0.1);
    let score = crps(&f, 0.5);
    let n = 100_000;
    let brute: f64 = (0..n)
        .map(|i| {
            let z = (i as f64 + 0.5) / n as f64;
            let step = if z >= 0.5 { 1.0 } else { 0.0 };
            (f.cdf(z) - step).powi(2) / n as f64
        })
        .sum();
    let standard = Normal::new(0.0, 1.0).unwrap();
    let closed = 0.1 * (2.0 * standard.pdf(0.0) - 1.0 / std::f64::consts::PI.sqrt());
    ensure((score - brute).abs() < 1e-4, || format!("crps {score} vs brute force {brute}"))?;
    ensure((score - closed).abs() < 2e-3, || format!("crps {score} vs closed form {closed}"))?;
    within_time(started, Duration::from_secs(1))
}

fn uniform_crps() -> Check {
    let grid = Arc::new(DensityGrid::uniform());
    let f = smartkde::DensityForecast::from_cdf(&grid, grid.points().to_vec(), 0, 1).map_err(|e| e.to_string())?;
    let score = crps(&f, 0.0);
    ensure((score - 1.0 / 3.0).abs() < 1e-6, || format!("crps {score}"))
}

fn half_life_anchors() -> Check {
    let twelve = decay_weight(12 * S2, 0, 0.942, S2).map_err(|e| e.to_string())?;
    let thirty = decay_weight(30 * S2, 0, 0.977, S2).map_err(|e| e.to_string())?;
    ensure((0.45..=0.55).contains(&twelve), || format!("0.942^12 = {twelve}"))?;
    ensure((0.45..=0.55).contains(&thirty), || format!("0.977^30 = {thirty}"))
}

/// Weekly profile with a weekend shift and a multiplicative noise term.
fn synthetic_values(weeks: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..weeks * S2)
        .map(|t| {
            let hour = (t % S1) as f64 / 2.0;
            let weekend = (t % S2) / S1 >= 5;
            let morning = (-(hour - 8.0).powi(2) / 2.0).exp();
            let evening = (-(hour - 19.0).powi(2) / 4.0).exp();
            let level = 0.15 + 0.35 * morning + 0.6 * evening + if weekend { 0.15 } else { 0.0 };
            let noise: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            (level * (1.0 + 0.15 * noise)).max(0.0)
        })
        .collect()
}

fn standardized(weeks: usize, in_sample_weeks: usize, seed: u64) -> ConsumptionSeries {
    let raw = series(synthetic_values(weeks, seed));
    standardize(&raw, 0..in_sample_weeks * S2).unwrap()
}

fn limit_equivalences() -> Check {
    let started = Instant::now();
    let s = standardized(26, 26, 7);
    let grid = Arc::new(build_grid(s.values()).map_err(|e| e.to_string())?);
    let origin = s.len() - 1;
    let huge = 1e7;
    let compare = |a: &MethodParams, b: &MethodParams, label: &str| -> Check {
        for h in [1, 17, 200, 336] {
            let fa = forecast(&s, &grid, a, origin, h).map_err(|e| e.to_string())?;
            let fb = forecast(&s, &grid, b, origin, h).map_err(|e| e.to_string())?;
            let worst = fa.density().iter().zip(fb.density()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            ensure(worst < 1e-6, || format!("{label} horizon {h}: max density gap {worst}"))?;
        }
        Ok(())
    };
    let wd = MethodParams::new(Method::CkdWd, 0.02, 0.95).with(Param::HxWeek, 0.8).with(Param::HxDay, huge);
    let w = MethodParams::new(Method::CkdW, 0.02, 0.95).with(Param::HxWeek, 0.8);
    compare(&wd, &w, "CKD-WD -> CKD-W")?;
    let w_flat = MethodParams::new(Method::CkdW, 0.02, 1.0).with(Param::HxWeek, huge);
    let u = MethodParams::new(Method::KdU, 0.02, 1.0);
    compare(&w_flat, &u, "CKD-W -> KD-U")?;
    within_time(started, Duration::from_secs(10))
}

/// Independent weight computation straight from calendar fields.
fn naive_weights(s: &ConsumptionSeries, p: &MethodParams, origin: usize, horizon: usize) -> Vec<(usize, f64)> {
    let phi = |u: f64, h: f64| (-(u / h).powi(2) / 2.0).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
    let kern = |u: f64, h: f64| if (u / h).abs() > 8.0 { 0.0 } else { phi(u, h) };
    let stamp = |t: usize| s.start() + half_hour() * t as i32;
    let week_period = |t: usize| {
        let ts = stamp(t);
        ts.weekday().num_days_from_monday() as usize * 48 + ts.hour() as usize * 2 + ts.minute() as usize / 30 + 1
    };
    let day_period = |t: usize| (week_period(t) - 1) % 48 + 1;
    let weekend = |t: usize| matches!(stamp(t).weekday(), Weekday::Sat | Weekday::Sun);
    let circ = |a: usize, b: usize, n: usize| {
        let d = a.abs_diff(b);
        d.min(n - d) as f64
    };
    let target = origin + horizon;
    let first = (origin + 1).saturating_sub(26 * 336);
    let mut out = Vec::new();
    for t in first..=origin {
        let decay = p.lambda.powi(((origin - t) / 336) as i32);
        let w = match p.method {
            Method::KdU => 1.0,
            Method::KdW => {
                if week_period(t) == week_period(target) { decay } else { 0.0 }
            }
            Method::CkdW => decay * kern(circ(week_period(t), week_period(target), 336), p.h_x_week.unwrap()),
            Method::CkdWd => {
                decay
                    * kern(circ(week_period(t), week_period(target), 336), p.h_x_week.unwrap())
                    * kern(circ(day_period(t), day_period(target), 48), p.h_x_day.unwrap())
            }
            Method::KdIc => {
                if day_period(t) == day_period(target) && weekend(t) == weekend(target) { decay } else { 0.0 }
            }
            Method::CkdIc => {
                if weekend(t) != weekend(target) {
                    0.0
                } else {
                    let h = if weekend(target) { p.h_x_weekend.unwrap() } else { p.h_x_weekday.unwrap() };
                    decay * kern(circ(day_period(t), day_period(target), 48), h)
                }
            }
            Method::CkdLag => {
                if t < 336 {
                    0.0
                } else {
                    decay * kern(s.values()[t - 336] - s.values()[target - 336], p.h_x_lag.unwrap())
                }
            }
        };
        if w > 0.0 {
            out.push((t, w));
        }
    }
    out
}

fn weight_oracle() -> Check {
    let s = standardized(3, 3, 11);
    for method in Method::ALL {
        let mut p = MethodParams::published(method, Segment::Residential);
        // Wide enough that the conditional kernels reach many neighbours.
        for param in [Param::HxWeek, Param::HxDay, Param::HxWeekday, Param::HxWeekend] {
            if p.get(param).is_some() {
                p.set(param, 3.5);
            }
        }
        if p.h_x_lag.is_some() {
            p.h_x_lag = Some(0.1);
        }
        p.lambda = if method == Method::KdU { 1.0 } else { 0.8 };
        for (origin, horizon) in [(400, 1), (700, 48), (900, 100), (1000, 7), (671, 336)] {
            let fast = observation_weights(&s, &p, origin, horizon).map_err(|e| e.to_string())?;
            let slow = naive_weights(&s, &p, origin, horizon);
            ensure(fast.len() == slow.len(), || {
                format!("{method} at ({origin},{horizon}): {} vs {} weights", fast.len(), slow.len())
            })?;
            for ((ta, wa), (tb, wb)) in fast.iter().zip(&slow) {
                ensure(ta == tb && (wa - wb).abs() <= 1e-12, || {
                    format!("{method} at ({origin},{horizon}): t {ta}/{tb} weight {wa} vs {wb}")
                })?;
            }
        }
    }
    Ok(())
}

fn synthetic_meters(count: usize) -> Vec<(ConsumptionSeries, Arc<DensityGrid>)> {
    (0..count)
        .map(|i| {
            let s = standardized(30, 26, 100 + i as u64);
            let grid = Arc::new(build_grid(&s.values()[..26 * S2]).unwrap());
            (s, grid)
        })
        .collect()
}

fn post_sample(s: &ConsumptionSeries) -> std::ops::Range<NaiveDateTime> {
    s.timestamp(26 * S2)..s.timestamp(30 * S2)
}

fn seasonality_benchmark() -> Check {
    let started = Instant::now();
    let methods = [Method::KdU, Method::KdW, Method::CkdW, Method::KdIc];
    let meters: Vec<EvalMeter> = synthetic_meters(20)
        .into_iter()
        .map(|(series, grid)| EvalMeter {
            models: methods
                .iter()
                .map(|m| ModelSpec::Kernel(MethodParams::published(*m, Segment::Residential)))
                .collect(),
            series,
            grid,
        })
        .collect();
    let ids: Vec<ModelId> = methods.iter().map(|m| ModelId::Kernel(*m)).collect();
    let range = post_sample(&meters[0].series);
    let report = rolling_evaluate(&meters, &ids, range).map_err(|e| e.to_string())?;
    ensure(report.failures.is_empty(), || format!("failures: {:?}", report.failures))?;
    let score = |m: Method| report.overall(ModelId::Kernel(m)).map(|c| c.crps()).unwrap_or(f64::NAN);
    let baseline = score(Method::KdU);
    for m in [Method::KdW, Method::CkdW, Method::KdIc] {
        let s = score(m);
        ensure(s <= 0.8 * baseline, || format!("{m} CRPS {s:.5} vs KD-U {baseline:.5}"))?;
    }
    within_time(started, Duration::from_secs(300))
}

fn coverage_self_consistency() -> Check {
    let s = standardized(27, 27, 5);
    let grid = Arc::new(build_grid(s.values()).map_err(|e| e.to_string())?);
    let p = MethodParams::published(Method::KdW, Segment::Residential);
    let forecasts = forecast_week(&s, &grid, &p, s.len() - 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 10_000;
    let picked: Vec<usize> = (0..draws).map(|_| rng.random_range(0..forecasts.len())).collect();
    let observations: Vec<f64> = picked
        .iter()
        .map(|i| forecasts[*i].inverse_cdf(rng.random::<f64>()))
        .collect();
    for theta in COVERAGE_LEVELS {
        let q: Vec<f64> = picked.iter().map(|i| forecasts[*i].inverse_cdf(theta)).collect();
        let c = coverage(&q, &observations).map_err(|e| e.to_string())?;
        ensure((c - 100.0 * theta).abs() <= 2.0, || format!("theta {theta}: coverage {c}"))?;
    }
    Ok(())
}

fn doubly_seasonal(weeks: usize) -> Vec<f64> {
    (0..weeks * S2)
        .map(|t| {
            let day = (std::f64::consts::TAU * (t % S1) as f64 / S1 as f64).sin();
            let weekend = if t % S2 >= 5 * S1 { 0.1 } else { 0.0 };
            0.2 + 0.05 * day + weekend
        })
        .collect()
}

/// Textbook recursion with explicit time-indexed seasonal histories.
fn naive_hwt_forecasts(values: &[f64], p: &HwtParams, horizons: usize) -> Vec<f64> {
    let init = HwtState::initialize(values, 0).unwrap();
    let n = values.len();
    let mut level = init.level;
    let mut d = vec![0.0; n + S2];
    let mut w = vec![0.0; n + S2];
    for k in 0..S2 {
        // Slot S2 + t holds the index for time t; negative times are the initial state.
        let t = k as i64 - S2 as i64;
        d[k] = init.intraday[t.rem_euclid(S1 as i64) as usize];
        w[k] = init.intraweek[t.rem_euclid(S2 as i64) as usize];
    }
    let mut e = 0.0;
    for (t, y) in values.iter().enumerate() {
        let i = t + S2;
        let err = y - (level + d[i - S1] + w[i - S2] + p.phi * e);
        level += p.alpha * err;
        d[i] = d[i - S1] + p.delta * err;
        w[i] = w[i - S2] + p.omega * err;
        e = err;
    }
    let last = n - 1 + S2;
    (1..=horizons)
        .map(|k| level + d[last - S1 + 1 + (k - 1) % S1] + w[last - S2 + k] + p.phi.powi(k as i32) * e)
        .collect()
}

fn hwt_exactness() -> Check {
    let values = doubly_seasonal(12);
    let fit = hwt_fit(&values, 0).map_err(|e| e.to_string())?;
    let mut state = HwtState::initialize(&values, 0).map_err(|e| e.to_string())?;
    for (t, y) in values.iter().enumerate() {
        let e = state.update(&fit.params, *y);
        if t >= WARMUP_WEEKS * S2 {
            ensure(e.abs() < 1e-4, || format!("one-step error {e} at {t}"))?;
        }
    }
    // Perturbed data so the seasonal indices and error term are all live.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy: Vec<f64> = doubly_seasonal(3).iter().map(|v| v + 0.02 * rng.random::<f64>()).collect();
    let p = HwtParams::new(0.05, 0.1, 0.2, 0.6, 0.01).unwrap();
    let (state, _, _) = filter(&noisy, 0, &p).map_err(|e| e.to_string())?;
    let reference = naive_hwt_forecasts(&noisy, &p, S2);
    for (k, expected) in reference.iter().enumerate() {
        let got = state.point_forecast(&p, k + 1);
        ensure((got - expected).abs() <= 1e-12, || format!("horizon {}: {got} vs {expected}", k + 1))?;
    }
    Ok(())
}

fn hwt_determinism_and_collapse() -> Check {
    let values = doubly_seasonal(3);
    let grid = Arc::new(DensityGrid::uniform());
    let noisy = HwtParams::new(0.05, 0.1, 0.2, 0.3, 0.03).unwrap();
    let (state, _, _) = filter(&values, 0, &noisy).map_err(|e| e.to_string())?;
    let a = hwt_density(&state, &noisy, &grid, 0, S2, 500, 42).map_err(|e| e.to_string())?;
    let b = hwt_density(&state, &noisy, &grid, 0, S2, 500, 42).map_err(|e| e.to_string())?;
    ensure(a.forecasts == b.forecasts, || "same seed gave different densities".into())?;
    let quiet = HwtParams { sigma: 0.0, ..noisy };
    let c = hwt_density(&state, &quiet, &grid, 0, S2, 100, 42).map_err(|e| e.to_string())?;
    let step = grid.points()[1] - grid.points()[0];
    for (k, f) in c.forecasts.iter().enumerate() {
        let point = state.point_forecast(&quiet, k + 1);
        ensure((f.median() - point).abs() <= step + 1e-12, || {
            format!("horizon {}: median {} vs point {point}", k + 1, f.median())
        })?;
    }
    Ok(())
}

fn schedule(name: TariffName) -> TariffSchedule {
    TariffSchedule::catalog().into_iter().find(|t| t.name == name).unwrap()
}

fn tariff_arithmetic() -> Check {
    let none = SpecialDayCalendar::new();
    let ones = vec![PointMass(1.0); S2];
    let cost = |t: TariffName| weekly_cost_density(&ones, monday(), &schedule(t), &none, 1.0, 8, 1).map(|c| c.mean());
    let e = cost(TariffName::E).map_err(|e| e.to_string())?;
    ensure(e == 4452.0, || format!("tariff E week costs {e}"))?;
    // Weekdays: 08:00-17:00 and 19:00-23:00 day (26 slots), 17:00-19:00 peak
    // (4), 23:00-08:00 night (18). Weekends: 30 day, 18 night.
    let by_hand = 5.0 * (26.0 * 13.5 + 4.0 * 26.0 + 18.0 * 11.0) + 2.0 * (30.0 * 13.5 + 18.0 * 11.0);
    let b = cost(TariffName::B).map_err(|e| e.to_string())?;
    ensure(b == by_hand, || format!("tariff B week costs {b}, hand count {by_hand}"))?;
    let weekend = schedule(TariffName::Weekend);
    let saturday = parse_timestamp("2010-01-09T00:00").unwrap();
    for k in 0..S1 {
        let ts = saturday + half_hour() * k as i32;
        ensure(classify_period(ts, &none, &weekend) == RatePeriod::Night, || format!("{ts} not night"))?;
        ensure(weekend.rate_at(ts, &none) == 10.0, || format!("{ts} not at night rate"))?;
    }
    Ok(())
}

fn switching_fixture() -> Check {
    let weeks = 3;
    let is_night = |ts: NaiveDateTime| !(8..23).contains(&ts.hour());
    let start = monday();
    let raw: Vec<f64> = (0..weeks * S2)
        .map(|t| if is_night(start + half_hour() * t as i32) { 1.0 } else { 0.0 })
        .collect();
    let s = series(raw);
    let none = SpecialDayCalendar::new();
    let plans: Vec<WeekForecast<PointMass>> = (1..weeks)
        .map(|week| {
            let origin = week * S2 - 1;
            WeekForecast { origin, periods: (1..=S2).map(|h| PointMass(s.values()[origin + h])).collect() }
        })
        .filter(|p| p.origin + S2 < s.len())
        .collect();
    let allocated = schedule(TariffName::E);
    for criterion in Criterion::ALL {
        let config = SwitchingConfig { candidates: TariffSchedule::catalog(), criterion, sample_count: 64, seed: 5 };
        let record = switching_simulation(&s, &plans, &allocated, &none, &config).map_err(|e| e.to_string())?;
        ensure(!record.weeks.is_empty(), || "no priced weeks".into())?;
        for w in &record.weeks {
            ensure(w.chosen == TariffName::D, || format!("{criterion}: week {} chose {}", w.week, w.chosen))?;
        }
        let night_kwh: f64 = record
            .weeks
            .iter()
            .map(|w| (w.origin + 1..=w.origin + S2).map(|t| s.raw_value(t)).sum::<f64>())
            .sum();
        let saving = record.saving();
        ensure(saving == night_kwh * 4.25, || format!("{criterion}: saving {saving}, expected {}", night_kwh * 4.25))?;
    }
    Ok(())
}

fn perturb_after(s: &ConsumptionSeries, from: usize) -> ConsumptionSeries {
    let mut values = s.values().to_vec();
    for v in values[from..].iter_mut() {
        *v = (1.0 - *v).abs() + 0.3;
    }
    s.with_values(values)
}

fn no_look_ahead() -> Check {
    let s = standardized(29, 28, 21);
    let grid = Arc::new(build_grid(&s.values()[..27 * S2]).map_err(|e| e.to_string())?);
    let origin = 27 * S2 + 47;
    let altered = perturb_after(&s, origin + 1);
    for method in Method::ALL {
        let p = MethodParams::published(method, Segment::Residential);
        let a = forecast_week(&s, &grid, &p, origin).map_err(|e| e.to_string())?;
        let b = forecast_week(&altered, &grid, &p, origin).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{method} forecast moved"))?;
    }
    let hwt = HwtParams::new(0.01, 0.02, 0.1, 0.4, 0.05).unwrap();
    let hwt_at = |series: &ConsumptionSeries| {
        let (state, _, _) = filter(&series.values()[..=origin], 0, &hwt).unwrap();
        hwt_density(&state, &hwt, &grid, origin, S2, 200, 1).unwrap().forecasts
    };
    ensure(hwt_at(&s) == hwt_at(&altered), || "HWT forecast moved".into())?;

    let mut plan = CalibrationPlan::new(0..26 * S2, 26 * S2..27 * S2);
    plan.cv_stride = 5;
    let cv_altered = perturb_after(&s, 27 * S2);
    for method in [Method::KdW, Method::CkdLag] {
        let p = MethodParams::published(method, Segment::Residential);
        let a = cv_score(&s, &grid, &p, &plan).map_err(|e| e.to_string())?;
        let b = cv_score(&cv_altered, &grid, &p, &plan).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{method} CV score moved: {a} vs {b}"))?;
    }

    let end = 28 * S2;
    let range = s.timestamp(27 * S2)..s.timestamp(end);
    let report_for = |series: ConsumptionSeries| {
        let meter = EvalMeter {
            models: vec![
                ModelSpec::Kernel(MethodParams::published(Method::KdIc, Segment::Residential)),
                ModelSpec::Kernel(MethodParams::published(Method::CkdLag, Segment::Residential)),
            ],
            series,
            grid: Arc::clone(&grid),
        };
        rolling_evaluate(&[meter], &[ModelId::Kernel(Method::KdIc), ModelId::Kernel(Method::CkdLag)], range.clone())
            .unwrap()
    };
    let a = report_for(s.clone());
    let b = report_for(perturb_after(&s, end));
    ensure(!a.cells.is_empty() && a.cells == b.cells, || "report cells moved".into())
}

fn throughput() -> Check {
    let started = Instant::now();
    let (series, grid) = synthetic_meters(1).pop().unwrap();
    let range = post_sample(&series);
    let meter = EvalMeter {
        models: vec![ModelSpec::Kernel(MethodParams::published(Method::KdIc, Segment::Residential))],
        series,
        grid,
    };
    let report = rolling_evaluate(&[meter], &[ModelId::Kernel(Method::KdIc)], range).map_err(|e| e.to_string())?;
    let cells: u64 = report.cells.values().map(|c| c.count).sum();
    ensure(report.cells.len() == S2 && cells > 0, || format!("{} horizons scored", report.cells.len()))?;
    within_time(started, Duration::from_secs(60))
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 13] = [
        ("CRPS oracle (truncated Gaussian)", crps_oracle),
        ("uniform-CDF CRPS", uniform_crps),
        ("decay half-life anchors", half_life_anchors),
        ("estimator limit equivalences", limit_equivalences),
        ("brute-force weight oracle", weight_oracle),
        ("synthetic seasonality benchmark", seasonality_benchmark),
        ("coverage self-consistency", coverage_self_consistency),
        ("HWT exactness", hwt_exactness),
        ("HWT density determinism and collapse", hwt_determinism_and_collapse),
        ("tariff arithmetic", tariff_arithmetic),
        ("switching fixture", switching_fixture),
        ("no look-ahead", no_look_ahead),
        ("KD-IC throughput", throughput),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(message)
        });
        let spent = started.elapsed();
        match outcome {
            Ok(()) => println!("PASS {:>2}. {name} ({spent:.2?})", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:>2}. {name} ({spent:.2?}): {reason}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
