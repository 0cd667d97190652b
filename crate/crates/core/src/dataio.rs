//! Meter reading ingestion, standardization and special-day handling.
//!
//! A [`ConsumptionSeries`] is a gap-free run of half-hourly readings for one
//! meter. Calendar labels (period of week, period of day, day type) are derived
//! from the start instant with period 1 being Monday 00:00–00:30.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::ops::Range;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use log::warn;

use crate::error::{Error, Result};
use crate::kernels::{S1, S2};
use crate::tariff::TariffName;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

pub fn half_hour() -> Duration {
    Duration::minutes(30)
}

pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let ts = NaiveDateTime::parse_from_str(text.trim(), TIMESTAMP_FORMAT).ok()?;
    (ts.minute() % 30 == 0).then_some(ts)
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// Weekday/weekend split used by the intraday-cycle methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DayType {
    Weekday,
    Weekend,
}

impl DayType {
    pub fn of(day: Weekday) -> Self {
        match day {
            Weekday::Sat | Weekday::Sun => DayType::Weekend,
            _ => DayType::Weekday,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawReading {
    pub meter_id: String,
    pub timestamp: NaiveDateTime,
    pub kwh: f64,
}

/// Pre-smoothing values of one replaced holiday.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedDay {
    pub date: NaiveDate,
    pub source: NaiveDate,
    pub original: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsumptionSeries {
    meter_id: String,
    start: NaiveDateTime,
    values: Vec<f64>,
    max_raw: Option<f64>,
    estimation_range: Option<Range<usize>>,
    day_overrides: BTreeMap<NaiveDate, Weekday>,
    audit: Vec<SmoothedDay>,
}

impl ConsumptionSeries {
    /// Builds an unstandardized series. `start` must sit on a half-hour boundary.
    pub fn new(meter_id: impl Into<String>, start: NaiveDateTime, values: Vec<f64>) -> Result<Self> {
        if !start.minute().is_multiple_of(30) || start.second() != 0 {
            return Err(Error::InvalidParameter(format!(
                "start {start} is not on a half-hour boundary"
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid reading {v}")));
        }
        Ok(Self {
            meter_id: meter_id.into(),
            start,
            values,
            max_raw: None,
            estimation_range: None,
            day_overrides: BTreeMap::new(),
            audit: Vec::new(),
        })
    }

    pub fn meter_id(&self) -> &str {
        &self.meter_id
    }

    pub fn start(&self) -> NaiveDateTime {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The standardization divisor, once [`standardize`] has run.
    pub fn max_raw(&self) -> Option<f64> {
        self.max_raw
    }

    pub fn estimation_range(&self) -> Option<Range<usize>> {
        self.estimation_range.clone()
    }

    pub fn audit(&self) -> &[SmoothedDay] {
        &self.audit
    }

    /// Reading at `index` in the original units.
    pub fn raw_value(&self, index: usize) -> f64 {
        self.values[index] * self.max_raw.unwrap_or(1.0)
    }

    pub fn timestamp(&self, index: usize) -> NaiveDateTime {
        self.start + half_hour() * index as i32
    }

    /// Position of `ts` in the series grid; may lie past the last observation.
    pub fn index_of(&self, ts: NaiveDateTime) -> Option<usize> {
        let delta = ts - self.start;
        let minutes = delta.num_minutes();
        if minutes < 0 || minutes % 30 != 0 || delta.num_seconds() % 60 != 0 {
            return None;
        }
        Some((minutes / 30) as usize)
    }

    fn start_phase(&self) -> usize {
        let day = self.start.weekday().num_days_from_monday() as usize;
        day * S1 + slot_of_day(self.start)
    }

    fn effective_weekday(&self, index: usize) -> Weekday {
        if !self.day_overrides.is_empty() {
            let date = self.timestamp(index).date();
            if let Some(day) = self.day_overrides.get(&date) {
                return *day;
            }
        }
        let phase = (self.start_phase() + index) % S2;
        Weekday::try_from((phase / S1) as u8).expect("weekday index below 7")
    }

    /// Period of week `W_t ∈ 1..=336` (Monday 00:00 is period 1).
    pub fn period_of_week(&self, index: usize) -> usize {
        if self.day_overrides.is_empty() {
            return (self.start_phase() + index) % S2 + 1;
        }
        let day = self.effective_weekday(index).num_days_from_monday() as usize;
        day * S1 + self.period_of_day(index)
    }

    /// Period of day `D_t ∈ 1..=48`.
    pub fn period_of_day(&self, index: usize) -> usize {
        (self.start_phase() + index) % S1 + 1
    }

    pub fn day_type(&self, index: usize) -> DayType {
        DayType::of(self.effective_weekday(index))
    }

    /// Forecast the given date as if it were `weekday` (post-sample holiday handling).
    pub fn treat_day_as(&mut self, date: NaiveDate, weekday: Weekday) {
        if date.weekday() == weekday {
            self.day_overrides.remove(&date);
        } else {
            self.day_overrides.insert(date, weekday);
        }
    }

    /// Index of 00:00 on `date` when the whole day is inside the series.
    pub fn day_start(&self, date: NaiveDate) -> Option<usize> {
        let i = self.index_of(date.and_hms_opt(0, 0, 0)?)?;
        (i + S1 <= self.values.len()).then_some(i)
    }

    fn day_values(&self, date: NaiveDate) -> Result<&[f64]> {
        let i = self.day_start(date).ok_or(Error::DayNotCovered(date))?;
        Ok(&self.values[i..i + S1])
    }

    /// A copy with `values` replaced, keeping calendar metadata.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }
}

fn slot_of_day(ts: NaiveDateTime) -> usize {
    ts.hour() as usize * 2 + ts.minute() as usize / 30
}

/// Outcome of reading a readings CSV.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub series: Vec<ConsumptionSeries>,
    pub rejected_meters: Vec<(String, Error)>,
    pub rejected_rows: Vec<(u64, String)>,
}

/// Reads `meter_id,timestamp,kwh` rows into one gap-free series per meter.
///
/// Malformed rows abort with their line number. Negative readings drop the row;
/// meters with gaps or duplicate timestamps are rejected without affecting others.
pub fn ingest<R: Read>(source: R) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["meter_id", "timestamp", "kwh"] {
        return Err(Error::MalformedRow {
            line: 1,
            message: format!("expected header meter_id,timestamp,kwh, found {:?}", headers),
        });
    }
    let mut report = IngestReport::default();
    let mut by_meter: BTreeMap<String, Vec<(NaiveDateTime, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::MalformedRow { line, message };
        if record.len() != 3 {
            return Err(malformed(format!("expected 3 fields, found {}", record.len())));
        }
        let meter_id = record[0].to_string();
        if meter_id.is_empty() {
            return Err(malformed("empty meter_id".into()));
        }
        let timestamp = parse_timestamp(&record[1])
            .ok_or_else(|| malformed(format!("bad timestamp {:?}", &record[1])))?;
        let kwh: f64 = record[2]
            .parse()
            .map_err(|_| malformed(format!("bad reading {:?}", &record[2])))?;
        if !kwh.is_finite() {
            return Err(malformed(format!("non-finite reading {kwh}")));
        }
        if kwh < 0.0 {
            report.rejected_rows.push((line, format!("meter {meter_id}: negative reading {kwh}")));
            continue;
        }
        by_meter.entry(meter_id).or_default().push((timestamp, kwh));
    }
    for (meter_id, mut rows) in by_meter {
        rows.sort_by_key(|(ts, _)| *ts);
        match assemble(&meter_id, &rows) {
            Ok(series) => report.series.push(series),
            Err(e) => report.rejected_meters.push((meter_id, e)),
        }
    }
    Ok(report)
}

fn assemble(meter_id: &str, rows: &[(NaiveDateTime, f64)]) -> Result<ConsumptionSeries> {
    for pair in rows.windows(2) {
        let (prev, next) = (pair[0].0, pair[1].0);
        if prev == next {
            return Err(Error::DuplicateTimestamp { meter_id: meter_id.into(), at: next });
        }
        if next - prev != half_hour() {
            return Err(Error::Gap { meter_id: meter_id.into(), at: next, expected: prev + half_hour() });
        }
    }
    let start = rows.first().ok_or(Error::EmptyInput)?.0;
    ConsumptionSeries::new(meter_id, start, rows.iter().map(|r| r.1).collect())
}

/// Writes series back in the ingest format.
pub fn write_readings<W: Write>(sink: W, series: &[ConsumptionSeries]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["meter_id", "timestamp", "kwh"])?;
    for s in series {
        for i in 0..s.len() {
            writer.write_record([
                s.meter_id.clone(),
                format_timestamp(s.timestamp(i)),
                s.raw_value(i).to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Divides every value by the maximum over `estimation_range`.
pub fn standardize(series: &ConsumptionSeries, estimation_range: Range<usize>) -> Result<ConsumptionSeries> {
    if series.max_raw.is_some() {
        return Err(Error::AlreadyStandardized);
    }
    if estimation_range.is_empty() || estimation_range.end > series.len() {
        return Err(Error::InvalidRange {
            start: estimation_range.start,
            end: estimation_range.end,
            len: series.len(),
        });
    }
    let max = series.values[estimation_range.clone()].iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::UnusableMeter { meter_id: series.meter_id.clone() });
    }
    let mut out = series.with_values(series.values.iter().map(|v| v / max).collect());
    out.max_raw = Some(max);
    out.estimation_range = Some(estimation_range);
    for day in &mut out.audit {
        day.original.iter_mut().for_each(|v| *v /= max);
    }
    Ok(out)
}

/// How a special day is (or will be) handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HolidayResolution {
    Unresolved,
    WorkingDay,
    Sunday,
    Smoothed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayResolution {
    WorkingDay,
    Sunday,
}

impl From<DayResolution> for HolidayResolution {
    fn from(r: DayResolution) -> Self {
        match r {
            DayResolution::WorkingDay => HolidayResolution::WorkingDay,
            DayResolution::Sunday => HolidayResolution::Sunday,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpecialDayCalendar {
    days: BTreeMap<NaiveDate, HolidayResolution>,
}

impl SpecialDayCalendar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, date: NaiveDate, resolution: HolidayResolution) {
        self.days.insert(date, resolution);
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.days.contains_key(&date)
    }

    pub fn resolution(&self, date: NaiveDate) -> Option<HolidayResolution> {
        self.days.get(&date).copied()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.keys().copied()
    }

    pub fn holiday_set(&self) -> BTreeSet<NaiveDate> {
        self.days.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Reads `date,resolution` rows; `auto` leaves the day unresolved.
    pub fn from_csv<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut calendar = Self::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let malformed = |message: String| Error::MalformedRow { line, message };
            if record.len() != 2 {
                return Err(malformed("expected date,resolution".into()));
            }
            let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
                .map_err(|_| malformed(format!("bad date {:?}", &record[0])))?;
            let resolution = match &record[1] {
                "auto" => HolidayResolution::Unresolved,
                "working-day" => HolidayResolution::WorkingDay,
                "sunday" => HolidayResolution::Sunday,
                other => return Err(malformed(format!("bad resolution {other:?}"))),
            };
            calendar.insert(date, resolution);
        }
        Ok(calendar)
    }
}

fn in_sample_end(series: &ConsumptionSeries) -> usize {
    series.estimation_range.as_ref().map_or(series.len(), |r| r.end)
}

/// Replaces each in-sample holiday with the most recent prior non-holiday
/// occurrence of the same weekday. Holidays beyond the estimation sample are
/// left alone; smoothed days are marked in `calendar`.
pub fn smooth_special_days(
    series: &ConsumptionSeries,
    calendar: &mut SpecialDayCalendar,
) -> Result<ConsumptionSeries> {
    let limit = in_sample_end(series);
    let mut out = series.clone();
    let holidays: Vec<NaiveDate> = calendar
        .dates()
        .filter(|d| matches!(series.day_start(*d), Some(i) if i + S1 <= limit))
        .collect();
    for date in holidays {
        let source = replacement_day(series, calendar, date)?;
        let at = series.day_start(date).expect("holiday covered");
        let from = series.day_start(source).expect("source covered");
        let original = out.values[at..at + S1].to_vec();
        let replacement = series.values[from..from + S1].to_vec();
        out.values[at..at + S1].copy_from_slice(&replacement);
        out.audit.push(SmoothedDay { date, source, original });
        calendar.insert(date, HolidayResolution::Smoothed);
    }
    Ok(out)
}

fn replacement_day(series: &ConsumptionSeries, calendar: &SpecialDayCalendar, date: NaiveDate) -> Result<NaiveDate> {
    let usable = |d: NaiveDate| !calendar.contains(d) && series.day_start(d).is_some();
    let mut candidate = date - Duration::days(7);
    while series.day_start(candidate).is_some() {
        if usable(candidate) {
            return Ok(candidate);
        }
        candidate -= Duration::days(7);
    }
    let mut candidate = date - Duration::days(1);
    while series.day_start(candidate).is_some() {
        if usable(candidate) && DayType::of(candidate.weekday()) == DayType::Weekday {
            warn!(
                "meter {}: no prior {} for holiday {date}, using {candidate}",
                series.meter_id,
                date.weekday()
            );
            return Ok(candidate);
        }
        candidate -= Duration::days(1);
    }
    Err(Error::NoReplacementDay(date))
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Decides whether a post-sample holiday should be forecast as a working day
/// or as a Sunday, by comparing the last in-sample holiday with the same weekday
/// one week earlier and with the most recent Sunday.
pub fn resolve_post_sample_holiday(
    series: &ConsumptionSeries,
    holiday_date: NaiveDate,
    reference_holiday_date: NaiveDate,
) -> Result<DayResolution> {
    if holiday_date <= reference_holiday_date {
        return Err(Error::InvalidParameter(format!(
            "holiday {holiday_date} must follow reference {reference_holiday_date}"
        )));
    }
    let reference = match series.audit.iter().find(|d| d.date == reference_holiday_date) {
        Some(day) => day.original.as_slice(),
        None => series.day_values(reference_holiday_date)?,
    };
    let previous_week = series.day_values(reference_holiday_date - Duration::days(7))?;
    let back_to_sunday = match reference_holiday_date.weekday() {
        Weekday::Sun => 7,
        other => other.num_days_from_sunday() as i64,
    };
    let sunday = series.day_values(reference_holiday_date - Duration::days(back_to_sunday))?;
    let working = mean_abs_diff(reference, previous_week);
    let weekend = mean_abs_diff(reference, sunday);
    Ok(if working <= weekend { DayResolution::WorkingDay } else { DayResolution::Sunday })
}

/// Resolves every post-sample holiday in `calendar` and relabels the series so
/// that days resolved as Sunday are forecast with Sunday's periods.
pub fn apply_post_sample_holidays(
    series: &ConsumptionSeries,
    calendar: &mut SpecialDayCalendar,
) -> Result<ConsumptionSeries> {
    let reference = calendar
        .days
        .iter()
        .filter(|(_, r)| **r == HolidayResolution::Smoothed)
        .map(|(d, _)| *d)
        .next_back();
    let mut out = series.clone();
    let pending: Vec<(NaiveDate, HolidayResolution)> = calendar
        .days
        .iter()
        .filter(|(_, r)| **r != HolidayResolution::Smoothed)
        .map(|(d, r)| (*d, *r))
        .collect();
    for (date, resolution) in pending {
        let resolution = match resolution {
            HolidayResolution::Unresolved => {
                let reference = reference.ok_or_else(|| {
                    Error::InvalidParameter(format!("no in-sample holiday to resolve {date} against"))
                })?;
                let r = resolve_post_sample_holiday(series, date, reference)?.into();
                calendar.insert(date, r);
                r
            }
            r => r,
        };
        if resolution == HolidayResolution::Sunday {
            out.treat_day_as(date, Weekday::Sun);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Segment {
    Residential,
    Sme,
}

/// Tariff/stimulus grouping a meter belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MeterCategory {
    pub segment: Segment,
    /// `None` for the control group.
    pub tariff: Option<TariffName>,
    pub stimulus: String,
}

impl MeterCategory {
    pub fn key(&self) -> String {
        let segment = match self.segment {
            Segment::Residential => "residential",
            Segment::Sme => "sme",
        };
        let tariff = self.tariff.map_or("control", |t| t.as_str());
        format!("{segment}/{tariff}/{}", self.stimulus)
    }
}

/// Reads `meter_id,segment,tariff,stimulus` rows.
pub fn read_categories<R: Read>(source: R) -> Result<BTreeMap<String, MeterCategory>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| Error::MalformedRow { line, message };
        if record.len() != 4 {
            return Err(malformed("expected meter_id,segment,tariff,stimulus".into()));
        }
        let segment = match &record[1] {
            "residential" => Segment::Residential,
            "sme" => Segment::Sme,
            other => return Err(malformed(format!("bad segment {other:?}"))),
        };
        let tariff = match &record[2] {
            "control" => None,
            other => Some(other.parse().map_err(|_| malformed(format!("bad tariff {other:?}")))?),
        };
        out.insert(
            record[0].to_string(),
            MeterCategory { segment, tariff, stimulus: record[3].to_string() },
        );
    }
    Ok(out)
}
