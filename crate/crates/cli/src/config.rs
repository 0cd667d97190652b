//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use smartkde::dataio::parse_timestamp;
use smartkde::evaluation::ModelId;
use smartkde::tariff::DEFAULT_COST_SAMPLES;
use smartkde::{Criterion, Method};

use crate::error::{CliError, CliResult};

const KEYS: &[&str] = &[
    "readings",
    "categories",
    "holidays",
    "tariffs",
    "params",
    "output_dir",
    "estimation_start",
    "cv_start",
    "post_sample_start",
    "post_sample_end",
    "methods",
    "seed",
    "workers",
    "hwt_iterations",
    "cost_samples",
    "sample_fraction",
    "cv_stride",
    "refine_evaluations",
    "criterion",
    "tariff_method",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub readings: PathBuf,
    pub categories: Option<PathBuf>,
    pub holidays: Option<PathBuf>,
    pub tariffs: Option<PathBuf>,
    /// Calibrated parameters; written by `calibrate`, read by the later commands.
    pub params: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to each meter's first reading.
    pub estimation_start: Option<NaiveDateTime>,
    pub cv_start: NaiveDateTime,
    pub post_sample_start: NaiveDateTime,
    pub post_sample_end: NaiveDateTime,
    pub methods: Vec<ModelId>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub hwt_iterations: usize,
    pub cost_samples: usize,
    pub sample_fraction: f64,
    pub cv_stride: usize,
    pub refine_evaluations: usize,
    pub criterion: Criterion,
    pub tariff_method: ModelId,
}

fn parse_instant(key: &str, text: &str) -> CliResult<NaiveDateTime> {
    parse_timestamp(text)
        .or_else(|| NaiveDate::parse_from_str(text, "%Y-%m-%d").ok().map(|d| d.and_hms_opt(0, 0, 0).expect("midnight")))
        .ok_or_else(|| CliError::Config(format!("{key}: bad timestamp {text:?}")))
}

pub fn parse_methods(text: &str) -> CliResult<Vec<ModelId>> {
    let mut out = Vec::new();
    for name in text.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        let ids = if name.eq_ignore_ascii_case("all") {
            Method::ALL.iter().map(|m| ModelId::Kernel(*m)).chain([ModelId::Hwt]).collect()
        } else {
            vec![name.parse::<ModelId>().map_err(|e| CliError::Config(format!("methods: {e}")))?]
        };
        for id in ids {
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("methods: empty list".into()));
    }
    Ok(out)
}

fn number<T: std::str::FromStr>(key: &str, text: &str) -> CliResult<T> {
    text.parse().map_err(|_| CliError::Config(format!("{key}: bad value {text:?}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths are taken against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut entries: BTreeMap<&str, &str> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if entries.insert(key, value.trim()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        let required = |key: &str| entries.get(key).copied().ok_or_else(|| CliError::Config(format!("missing key {key:?}")));
        let path = |value: &str| base.join(value);
        let existing = |key: &str| -> CliResult<Option<PathBuf>> {
            match entries.get(key) {
                None => Ok(None),
                Some(v) => {
                    let p = path(v);
                    if !p.is_file() {
                        return Err(CliError::MissingFile { key: key.to_string(), path: p });
                    }
                    Ok(Some(p))
                }
            }
        };

        let readings = path(required("readings")?);
        if !readings.is_file() {
            return Err(CliError::MissingFile { key: "readings".into(), path: readings });
        }
        let output_dir = path(required("output_dir")?);
        let config = RunConfig {
            readings,
            categories: existing("categories")?,
            holidays: existing("holidays")?,
            tariffs: existing("tariffs")?,
            params: entries.get("params").map_or_else(|| output_dir.join("params.csv"), |v| path(v)),
            output_dir,
            estimation_start: entries.get("estimation_start").map(|v| parse_instant("estimation_start", v)).transpose()?,
            cv_start: parse_instant("cv_start", required("cv_start")?)?,
            post_sample_start: parse_instant("post_sample_start", required("post_sample_start")?)?,
            post_sample_end: parse_instant("post_sample_end", required("post_sample_end")?)?,
            methods: entries.get("methods").map_or_else(|| parse_methods("all"), |v| parse_methods(v))?,
            seed: entries.get("seed").map_or(Ok(0), |v| number("seed", v))?,
            workers: entries.get("workers").map(|v| number("workers", v)).transpose()?,
            hwt_iterations: entries.get("hwt_iterations").map_or(Ok(1000), |v| number("hwt_iterations", v))?,
            cost_samples: entries.get("cost_samples").map_or(Ok(DEFAULT_COST_SAMPLES), |v| number("cost_samples", v))?,
            sample_fraction: entries.get("sample_fraction").map_or(Ok(0.10), |v| number("sample_fraction", v))?,
            cv_stride: entries.get("cv_stride").map_or(Ok(1), |v| number("cv_stride", v))?,
            refine_evaluations: entries.get("refine_evaluations").map_or(Ok(40), |v| number("refine_evaluations", v))?,
            criterion: entries
                .get("criterion")
                .map_or(Ok(Criterion::Mean), |v| v.parse().map_err(|e| CliError::Config(format!("criterion: {e}"))))?,
            tariff_method: entries
                .get("tariff_method")
                .map_or(Ok(ModelId::Kernel(Method::CkdIc)), |v| {
                    v.parse().map_err(|e| CliError::Config(format!("tariff_method: {e}")))
                })?,
        };
        config.check()?;
        Ok(config)
    }

    fn check(&self) -> CliResult<()> {
        let mut bounds = vec![("cv_start", self.cv_start), ("post_sample_start", self.post_sample_start)];
        if let Some(start) = self.estimation_start {
            bounds.insert(0, ("estimation_start", start));
        }
        bounds.push(("post_sample_end", self.post_sample_end));
        for pair in bounds.windows(2) {
            if pair[0].1 >= pair[1].1 {
                return Err(CliError::Config(format!("{} must precede {}", pair[0].0, pair[1].0)));
            }
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if self.hwt_iterations == 0 || self.cost_samples == 0 || self.cv_stride == 0 {
            return Err(CliError::Config("hwt_iterations, cost_samples and cv_stride must be positive".into()));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(CliError::Config(format!("sample_fraction {} outside (0, 1]", self.sample_fraction)));
        }
        Ok(())
    }

    pub fn categories_path(&self) -> CliResult<&Path> {
        self.categories.as_deref().ok_or_else(|| CliError::Config("missing key \"categories\"".into()))
    }
}
