//! Time-of-use pricing, cost densities and the weekly tariff-switching study.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{format_timestamp, ConsumptionSeries, DayType, SpecialDayCalendar};
use crate::density::{sample_with, Predictive};
use crate::error::{Error, Result};
use crate::kernels::S2;

pub const DEFAULT_COST_SAMPLES: usize = 10_000;

/// Flat rate of the non-TOU comparison tariff (cents per kWh).
pub const FLAT_RATE_E: f64 = 13.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TariffName {
    A,
    B,
    C,
    D,
    Weekend,
    E,
}

impl TariffName {
    pub const ALL: [TariffName; 6] =
        [TariffName::A, TariffName::B, TariffName::C, TariffName::D, TariffName::Weekend, TariffName::E];

    pub fn as_str(self) -> &'static str {
        match self {
            TariffName::A => "A",
            TariffName::B => "B",
            TariffName::C => "C",
            TariffName::D => "D",
            TariffName::Weekend => "weekend",
            TariffName::E => "E",
        }
    }
}

impl fmt::Display for TariffName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TariffName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TariffName::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown tariff {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RatePeriod {
    Day,
    Peak,
    Night,
}

/// Rates in cents per kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct TariffSchedule {
    pub name: TariffName,
    pub day_rate: f64,
    pub peak_rate: f64,
    pub night_rate: f64,
    /// Night rate all day on weekends and bank holidays.
    pub weekend_rule: bool,
}

impl TariffSchedule {
    pub fn new(name: TariffName, day_rate: f64, peak_rate: f64, night_rate: f64, weekend_rule: bool) -> Result<Self> {
        if [day_rate, peak_rate, night_rate].iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter(format!("tariff {name}: rates must be positive")));
        }
        Ok(Self { name, day_rate, peak_rate, night_rate, weekend_rule })
    }

    /// The five trial TOU tariffs plus the flat tariff E.
    pub fn catalog() -> Vec<Self> {
        let t = |name, d, p, n, w| TariffSchedule { name, day_rate: d, peak_rate: p, night_rate: n, weekend_rule: w };
        vec![
            t(TariffName::A, 14.0, 20.0, 12.0, false),
            t(TariffName::B, 13.5, 26.0, 11.0, false),
            t(TariffName::C, 13.0, 32.0, 10.0, false),
            t(TariffName::D, 12.5, 38.0, 9.0, false),
            t(TariffName::Weekend, 14.0, 38.0, 10.0, true),
            t(TariffName::E, FLAT_RATE_E, FLAT_RATE_E, FLAT_RATE_E, false),
        ]
    }

    pub fn rate(&self, period: RatePeriod) -> f64 {
        match period {
            RatePeriod::Day => self.day_rate,
            RatePeriod::Peak => self.peak_rate,
            RatePeriod::Night => self.night_rate,
        }
    }

    pub fn rate_at(&self, ts: NaiveDateTime, holidays: &SpecialDayCalendar) -> f64 {
        self.rate(classify_period(ts, holidays, self))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            day_rate: self.day_rate * factor,
            peak_rate: self.peak_rate * factor,
            night_rate: self.night_rate * factor,
            ..self.clone()
        }
    }
}

/// Reads `name,day_rate,peak_rate,night_rate,weekend_rule` rows.
pub fn read_catalog<R: Read>(source: R) -> Result<Vec<TariffSchedule>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::MalformedRow { line, message };
        if record.len() != 5 {
            return Err(malformed("expected name,day_rate,peak_rate,night_rate,weekend_rule".into()));
        }
        let name: TariffName = record[0].parse().map_err(|_| malformed(format!("bad tariff {:?}", &record[0])))?;
        let rate = |i: usize| -> Result<f64> {
            record[i].parse().map_err(|_| malformed(format!("bad rate {:?}", &record[i])))
        };
        let weekend_rule = match record[4].to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(malformed(format!("bad weekend_rule {other:?}"))),
        };
        out.push(TariffSchedule::new(name, rate(1)?, rate(2)?, rate(3)?, weekend_rule)?);
    }
    Ok(out)
}

pub fn write_catalog<W: Write>(sink: W, catalog: &[TariffSchedule]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["name", "day_rate", "peak_rate", "night_rate", "weekend_rule"])?;
    for t in catalog {
        writer.write_record([
            t.name.to_string(),
            t.day_rate.to_string(),
            t.peak_rate.to_string(),
            t.night_rate.to_string(),
            t.weekend_rule.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Pricing period of the half-hour starting at `ts`.
///
/// Night is 23:00–08:00 every day. Peak is 17:00–19:00 on weekdays that are
/// not bank holidays. Everything else is day, except under the weekend tariff,
/// which charges night rate all day on weekends and bank holidays.
pub fn classify_period(ts: NaiveDateTime, holidays: &SpecialDayCalendar, tariff: &TariffSchedule) -> RatePeriod {
    let holiday = holidays.contains(ts.date());
    let weekend = DayType::of(ts.weekday()) == DayType::Weekend;
    if tariff.weekend_rule && (weekend || holiday) {
        return RatePeriod::Night;
    }
    let hour = ts.hour();
    if !(8..23).contains(&hour) {
        RatePeriod::Night
    } else if (17..19).contains(&hour) && !weekend && !holiday {
        RatePeriod::Peak
    } else {
        RatePeriod::Day
    }
}

/// Sample-based cost distribution in cents.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDensity {
    samples: Vec<f64>,
    mean: f64,
}

impl CostDensity {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples, mean })
    }

    /// Sorted cost samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn quantile(&self, theta: f64) -> f64 {
        if self.samples.len() == 1 {
            return self.samples[0];
        }
        let pos = theta.clamp(0.0, 1.0) * (self.samples.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        self.samples[lo] + (self.samples[hi] - self.samples[lo]) * (pos - lo as f64)
    }

    pub fn summary(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Mean => self.mean,
            Criterion::Q75 => self.quantile(0.75),
            Criterion::Q95 => self.quantile(0.95),
        }
    }
}

fn period_rng(seed: u64, period: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(period);
    rng
}

/// Cost distribution of one half-hour: consumption draws (in standardized
/// units, converted with `kwh_scale`) times `rate`.
pub fn cost_density_period<P: Predictive + ?Sized>(
    consumption: &P,
    rate: f64,
    kwh_scale: f64,
    sample_count: usize,
    seed: u64,
) -> Result<CostDensity> {
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter(format!("rate must be positive, got {rate}")));
    }
    let mut rng = period_rng(seed, 0);
    let draws = sample_with(consumption, sample_count, &mut rng);
    CostDensity::from_samples(draws.into_iter().map(|x| x * kwh_scale * rate).collect())
}

/// Cost distribution of a whole week. Each sample path draws every period
/// independently; period `k` always uses random stream `k`, so tariffs priced
/// with the same seed see the same consumption paths.
pub fn weekly_cost_density<P: Predictive>(
    periods: &[P],
    first_period: NaiveDateTime,
    tariff: &TariffSchedule,
    holidays: &SpecialDayCalendar,
    kwh_scale: f64,
    sample_count: usize,
    seed: u64,
) -> Result<CostDensity> {
    if periods.is_empty() || sample_count == 0 {
        return Err(Error::EmptyInput);
    }
    let mut totals = vec![0.0; sample_count];
    for (k, forecast) in periods.iter().enumerate() {
        let ts = first_period + crate::dataio::half_hour() * k as i32;
        let rate = tariff.rate_at(ts, holidays);
        let mut rng = period_rng(seed, k as u64);
        for (total, x) in totals.iter_mut().zip(sample_with(forecast, sample_count, &mut rng)) {
            *total += x * kwh_scale * rate;
        }
    }
    CostDensity::from_samples(totals)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Criterion {
    Mean,
    Q75,
    Q95,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Mean, Criterion::Q75, Criterion::Q95];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Mean => "mean",
            Criterion::Q75 => "q75",
            Criterion::Q95 => "q95",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown criterion {s:?}")))
    }
}

/// Tariff with the lowest criterion value; ties go to the earlier tariff in
/// the order A, B, C, D, weekend, E.
pub fn select_tariff(candidates: &[(TariffName, CostDensity)], criterion: Criterion) -> Result<TariffName> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut ordered: Vec<&(TariffName, CostDensity)> = candidates.iter().collect();
    ordered.sort_by_key(|(name, _)| *name);
    let mut best = ordered[0];
    for candidate in &ordered[1..] {
        if candidate.1.summary(criterion) < best.1.summary(criterion) {
            best = candidate;
        }
    }
    Ok(best.0)
}

/// Forecasts issued at one Sunday-midnight origin for the coming 336 periods.
#[derive(Debug, Clone)]
pub struct WeekForecast<P> {
    pub origin: usize,
    pub periods: Vec<P>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeekRecord {
    pub week: usize,
    pub origin: usize,
    /// Start of the first priced half-hour.
    pub week_start: NaiveDateTime,
    pub chosen: TariffName,
    pub predicted_cost_mean: f64,
    pub realized_cost: f64,
    pub allocated_realized_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchingOutcome {
    SwitchingCheaper,
    AllocatedCheaper,
    NoDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingRecord {
    pub meter_id: String,
    pub criterion: Criterion,
    pub allocated: TariffName,
    pub weeks: Vec<WeekRecord>,
    pub skipped_weeks: Vec<usize>,
}

impl SwitchingRecord {
    pub fn switching_total(&self) -> f64 {
        self.weeks.iter().map(|w| w.realized_cost).sum()
    }

    pub fn allocated_total(&self) -> f64 {
        self.weeks.iter().map(|w| w.allocated_realized_cost).sum()
    }

    /// Allocated cost minus switching cost; positive when switching paid off.
    pub fn saving(&self) -> f64 {
        self.allocated_total() - self.switching_total()
    }

    pub fn outcome(&self) -> SwitchingOutcome {
        let (switching, allocated) = (self.switching_total(), self.allocated_total());
        if switching < allocated {
            SwitchingOutcome::SwitchingCheaper
        } else if allocated < switching {
            SwitchingOutcome::AllocatedCheaper
        } else {
            SwitchingOutcome::NoDifference
        }
    }
}

/// Settings shared by every meter in a switching run.
#[derive(Debug, Clone)]
pub struct SwitchingConfig {
    pub candidates: Vec<TariffSchedule>,
    pub criterion: Criterion,
    pub sample_count: usize,
    pub seed: u64,
}

fn realized_cost(series: &ConsumptionSeries, origin: usize, tariff: &TariffSchedule, holidays: &SpecialDayCalendar) -> f64 {
    (origin + 1..=origin + S2)
        .map(|t| series.raw_value(t) * tariff.rate_at(series.timestamp(t), holidays))
        .sum()
}

/// Weekly switching study for one meter.
///
/// Each week the tariff with the best predicted weekly cost is chosen; both the
/// chosen and the allocated tariff are then priced on the actual readings.
/// Weeks without a full set of forecasts or actuals are skipped.
pub fn switching_simulation<P: Predictive>(
    series: &ConsumptionSeries,
    weeks: &[WeekForecast<P>],
    allocated: &TariffSchedule,
    holidays: &SpecialDayCalendar,
    config: &SwitchingConfig,
) -> Result<SwitchingRecord> {
    if config.candidates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let kwh_scale = series.max_raw().unwrap_or(1.0);
    let mut record = SwitchingRecord {
        meter_id: series.meter_id().to_string(),
        criterion: config.criterion,
        allocated: allocated.name,
        weeks: Vec::new(),
        skipped_weeks: Vec::new(),
    };
    for (week, plan) in weeks.iter().enumerate() {
        if plan.periods.len() != S2 || plan.origin + S2 >= series.len() {
            record.skipped_weeks.push(week);
            continue;
        }
        let first = series.timestamp(plan.origin + 1);
        let seed = config.seed.wrapping_add(week as u64);
        let costs = config
            .candidates
            .iter()
            .map(|t| {
                weekly_cost_density(&plan.periods, first, t, holidays, kwh_scale, config.sample_count, seed)
                    .map(|c| (t.name, c))
            })
            .collect::<Result<Vec<_>>>()?;
        for (name, cost) in &costs {
            log::debug!(
                "meter {} week {week}: {name} mean {:.2} q75 {:.2} q95 {:.2}",
                series.meter_id(),
                cost.mean(),
                cost.quantile(0.75),
                cost.quantile(0.95)
            );
        }
        let chosen = select_tariff(&costs, config.criterion)?;
        let chosen_schedule = config.candidates.iter().find(|t| t.name == chosen).expect("chosen from candidates");
        let predicted = costs.iter().find(|(n, _)| *n == chosen).expect("chosen has a cost").1.mean();
        record.weeks.push(WeekRecord {
            week,
            origin: plan.origin,
            week_start: first,
            chosen,
            predicted_cost_mean: predicted,
            realized_cost: realized_cost(series, plan.origin, chosen_schedule, holidays),
            allocated_realized_cost: realized_cost(series, plan.origin, allocated, holidays),
        });
    }
    Ok(record)
}

/// Shares of meters per outcome (percent) and the mean saving in cents.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSummary {
    pub meters: usize,
    pub switching_cheaper_pct: f64,
    pub allocated_cheaper_pct: f64,
    pub no_difference_pct: f64,
    pub average_saving: f64,
}

pub fn summarize(records: &[SwitchingRecord]) -> Result<SwitchingSummary> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = records.len() as f64;
    let share = |o: SwitchingOutcome| 100.0 * records.iter().filter(|r| r.outcome() == o).count() as f64 / n;
    Ok(SwitchingSummary {
        meters: records.len(),
        switching_cheaper_pct: share(SwitchingOutcome::SwitchingCheaper),
        allocated_cheaper_pct: share(SwitchingOutcome::AllocatedCheaper),
        no_difference_pct: share(SwitchingOutcome::NoDifference),
        average_saving: records.iter().map(|r| r.saving()).sum::<f64>() / n,
    })
}

/// Writes `meter_id,criterion,week,chosen_tariff,predicted_cost_mean,realized_cost,allocated_realized_cost`.
pub fn write_switching_report<W: Write>(sink: W, records: &[SwitchingRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record([
        "meter_id",
        "criterion",
        "week",
        "chosen_tariff",
        "predicted_cost_mean",
        "realized_cost",
        "allocated_realized_cost",
    ])?;
    for r in records {
        for w in &r.weeks {
            writer.write_record([
                r.meter_id.clone(),
                r.criterion.to_string(),
                format_timestamp(w.week_start),
                w.chosen.to_string(),
                w.predicted_cost_mean.to_string(),
                w.realized_cost.to_string(),
                w.allocated_realized_cost.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}
