use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

/// Errors raised by the forecasting library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("meter {meter_id}: gap before {at} (expected {expected})")]
    Gap {
        meter_id: String,
        at: NaiveDateTime,
        expected: NaiveDateTime,
    },

    #[error("meter {meter_id}: duplicate timestamp {at}")]
    DuplicateTimestamp { meter_id: String, at: NaiveDateTime },

    #[error("meter {meter_id}: estimation range has no positive reading")]
    UnusableMeter { meter_id: String },

    #[error("invalid range {start}..{end} for series of length {len}")]
    InvalidRange { start: usize, end: usize, len: usize },

    #[error("series is already standardized")]
    AlreadyStandardized,

    #[error("no replacement day available for holiday {0}")]
    NoReplacementDay(NaiveDate),

    #[error("day {0} is not fully covered by the series")]
    DayNotCovered(NaiveDate),

    #[error("index {index} out of range 1..={cycle}")]
    PeriodOutOfRange { index: usize, cycle: usize },

    #[error("observation index {t} is after origin {n}")]
    FutureObservation { t: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("density has zero total mass")]
    DegenerateDensity,

    #[error("insufficient history: need {needed} observations, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("no observations match the target period")]
    NoMatchingObservations,

    #[error("horizon {0} is outside 1..=336")]
    UnsupportedHorizon(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
