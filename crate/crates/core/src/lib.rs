//! Probabilistic forecasting of half-hourly smart meter consumption with
//! decay-weighted and conditional kernel density estimators, a double
//! seasonal Holt-Winters benchmark, and a tariff-switching study.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod dataio;
pub mod density;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod hwt;
pub mod kernels;
mod optim;
pub mod tariff;

pub use dataio::{ConsumptionSeries, DayType, SpecialDayCalendar};
pub use density::{DensityForecast, DensityGrid, PointMass, Predictive};
pub use error::{Error, Result};
pub use estimators::{Method, MethodParams};
pub use tariff::{Criterion, TariffName, TariffSchedule};
