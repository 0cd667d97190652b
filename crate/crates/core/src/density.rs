//! Gridded forecast densities and the distribution views derived from them.
//!
//! Every density lives on a 100-point grid over `(0, 1]`: ninety equal steps up
//! to the in-sample 90th percentile and ten equal steps above it. The CDF is
//! piecewise linear through the grid (with the segment `[0, y₁]` included), and
//! quantiles, means and samples all come from that one CDF.

use std::io::Write;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 100;
const LOWER_POINTS: usize = 90;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    points: Vec<f64>,
    p90: f64,
}

impl DensityGrid {
    /// Grid with the break at `p90`; needs `0 < p90 < 1`.
    pub fn from_p90(p90: f64) -> Result<Self> {
        if !(p90 > 0.0 && p90 < 1.0) {
            return Err(Error::InvalidParameter(format!("p90 must lie in (0, 1), got {p90}")));
        }
        let upper = GRID_SIZE - LOWER_POINTS;
        let mut points = Vec::with_capacity(GRID_SIZE);
        points.extend((1..=LOWER_POINTS).map(|i| i as f64 * p90 / LOWER_POINTS as f64));
        points.extend((1..=upper).map(|j| p90 + j as f64 * (1.0 - p90) / upper as f64));
        points[GRID_SIZE - 1] = 1.0;
        Ok(Self { points, p90 })
    }

    /// 100 equal steps on `(0, 1]`.
    pub fn uniform() -> Self {
        let points = (1..=GRID_SIZE).map(|i| i as f64 / GRID_SIZE as f64).collect();
        Self { points, p90: 0.9 }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn p90(&self) -> f64 {
        self.p90
    }

    /// Width of the widest grid cell touching `y`.
    pub fn spacing_near(&self, y: f64) -> f64 {
        let i = self.points.partition_point(|p| *p < y).min(GRID_SIZE - 1);
        let left = if i == 0 { self.points[0] } else { self.points[i] - self.points[i - 1] };
        let right = if i + 1 < GRID_SIZE { self.points[i + 1] - self.points[i] } else { left };
        left.max(right)
    }
}

/// Linear-interpolation percentile (the common "type 7" definition).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Builds the grid for a meter from its in-sample (standardized) values.
pub fn build_grid(in_sample_values: &[f64]) -> Result<DensityGrid> {
    if in_sample_values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let p90 = percentile(in_sample_values, 0.9);
    match DensityGrid::from_p90(p90) {
        Ok(grid) => Ok(grid),
        Err(_) => {
            warn!("90th percentile {p90} is degenerate, using a uniform grid");
            Ok(DensityGrid::uniform())
        }
    }
}

/// A predictive distribution on `[0, ∞)`.
pub trait Predictive {
    /// Right-continuous CDF.
    fn cdf(&self, z: f64) -> f64;

    /// Left limit of the CDF at `z`; differs from [`Predictive::cdf`] only at atoms.
    fn cdf_left(&self, z: f64) -> f64 {
        self.cdf(z)
    }

    /// Inverse CDF for `theta ∈ [0, 1]`.
    fn inverse_cdf(&self, theta: f64) -> f64;

    fn mean(&self) -> f64;

    /// Points where the CDF changes shape; used as integration nodes.
    fn breakpoints(&self) -> Vec<f64>;

    fn quantile(&self, theta: f64) -> Result<f64> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidParameter(format!("theta must lie in (0, 1), got {theta}")));
        }
        Ok(self.inverse_cdf(theta))
    }

    fn median(&self) -> f64 {
        self.inverse_cdf(0.5)
    }
}

impl<P: Predictive + ?Sized> Predictive for &P {
    fn cdf(&self, z: f64) -> f64 {
        (**self).cdf(z)
    }
    fn cdf_left(&self, z: f64) -> f64 {
        (**self).cdf_left(z)
    }
    fn inverse_cdf(&self, theta: f64) -> f64 {
        (**self).inverse_cdf(theta)
    }
    fn mean(&self) -> f64 {
        (**self).mean()
    }
    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

/// Inverse-transform samples, reproducible for a given seed.
pub fn sample<P: Predictive + ?Sized>(forecast: &P, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(forecast, count, &mut rng)
}

pub fn sample_with<P: Predictive + ?Sized, R: Rng>(forecast: &P, count: usize, rng: &mut R) -> Vec<f64> {
    (0..count).map(|_| forecast.inverse_cdf(rng.random::<f64>())).collect()
}

/// All probability at a single value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass(pub f64);

impl Predictive for PointMass {
    fn cdf(&self, z: f64) -> f64 {
        if z >= self.0 { 1.0 } else { 0.0 }
    }
    fn cdf_left(&self, z: f64) -> f64 {
        if z > self.0 { 1.0 } else { 0.0 }
    }
    fn inverse_cdf(&self, _theta: f64) -> f64 {
        self.0
    }
    fn mean(&self) -> f64 {
        self.0
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityForecast {
    grid: Arc<DensityGrid>,
    density: Vec<f64>,
    cdf: Vec<f64>,
    origin: usize,
    horizon: usize,
}

/// Turns raw density values on the grid into a proper forecast.
///
/// The CDF is the trapezoidal integral of the density, starting with a segment
/// from 0 where the density equals its value at the first grid point. Density
/// and CDF are then divided by the total mass so the CDF ends at exactly 1.
pub fn finalize_density(
    grid: &Arc<DensityGrid>,
    raw: Vec<f64>,
    origin: usize,
    horizon: usize,
) -> Result<DensityForecast> {
    if raw.len() != GRID_SIZE {
        return Err(Error::InvalidParameter(format!("expected {GRID_SIZE} density values, got {}", raw.len())));
    }
    if raw.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("density values must be finite and nonnegative".into()));
    }
    let points = grid.points();
    let mut cdf = Vec::with_capacity(GRID_SIZE);
    let mut acc = raw[0] * points[0];
    cdf.push(acc);
    for i in 1..GRID_SIZE {
        acc += 0.5 * (raw[i] + raw[i - 1]) * (points[i] - points[i - 1]);
        cdf.push(acc);
    }
    let mass = acc;
    if !(mass > 0.0) {
        return Err(Error::DegenerateDensity);
    }
    let density = raw.into_iter().map(|v| v / mass).collect();
    cdf.iter_mut().for_each(|c| *c /= mass);
    cdf[GRID_SIZE - 1] = 1.0;
    Ok(DensityForecast { grid: Arc::clone(grid), density, cdf, origin, horizon })
}

impl DensityForecast {
    /// Forecast from CDF values at the grid points; the density is the slope of
    /// each cell.
    pub fn from_cdf(grid: &Arc<DensityGrid>, mut cdf: Vec<f64>, origin: usize, horizon: usize) -> Result<Self> {
        if cdf.len() != GRID_SIZE {
            return Err(Error::InvalidParameter(format!("expected {GRID_SIZE} CDF values, got {}", cdf.len())));
        }
        let last = cdf[GRID_SIZE - 1];
        if !(last > 0.0) || cdf.windows(2).any(|w| w[1] < w[0]) || cdf[0] < 0.0 {
            return Err(Error::InvalidParameter("CDF must be nonnegative, non-decreasing and positive at 1".into()));
        }
        cdf.iter_mut().for_each(|c| *c /= last);
        cdf[GRID_SIZE - 1] = 1.0;
        let points = grid.points();
        let density = (0..GRID_SIZE)
            .map(|i| {
                let (x0, c0) = if i == 0 { (0.0, 0.0) } else { (points[i - 1], cdf[i - 1]) };
                (cdf[i] - c0) / (points[i] - x0)
            })
            .collect();
        Ok(Self { grid: Arc::clone(grid), density, cdf, origin, horizon })
    }

    pub fn grid(&self) -> &Arc<DensityGrid> {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self { horizon, ..self.clone() }
    }
}

impl Predictive for DensityForecast {
    fn cdf(&self, z: f64) -> f64 {
        let points = self.grid.points();
        if z <= 0.0 {
            return 0.0;
        }
        if z >= points[GRID_SIZE - 1] {
            return 1.0;
        }
        let i = points.partition_point(|p| *p <= z);
        let (x0, c0) = if i == 0 { (0.0, 0.0) } else { (points[i - 1], self.cdf[i - 1]) };
        c0 + (self.cdf[i] - c0) * (z - x0) / (points[i] - x0)
    }

    fn inverse_cdf(&self, theta: f64) -> f64 {
        if theta <= 0.0 {
            return 0.0;
        }
        let points = self.grid.points();
        let i = self.cdf.partition_point(|c| *c < theta).min(GRID_SIZE - 1);
        let (x0, c0) = if i == 0 { (0.0, 0.0) } else { (points[i - 1], self.cdf[i - 1]) };
        let rise = self.cdf[i] - c0;
        if rise <= 0.0 {
            return points[i];
        }
        (x0 + (theta.min(1.0) - c0) / rise * (points[i] - x0)).min(points[i])
    }

    /// `∫₀¹ (1 − F(z)) dz`, exact for the piecewise-linear CDF.
    fn mean(&self) -> f64 {
        let points = self.grid.points();
        let mut total = 0.5 * points[0] * (2.0 - self.cdf[0]);
        for i in 1..GRID_SIZE {
            total += 0.5 * (points[i] - points[i - 1]) * (2.0 - self.cdf[i] - self.cdf[i - 1]);
        }
        total
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut nodes = Vec::with_capacity(GRID_SIZE + 1);
        nodes.push(0.0);
        nodes.extend_from_slice(self.grid.points());
        nodes
    }
}

/// Writes `meter_id,origin,horizon,grid_point,density,cdf` rows.
pub fn write_forecasts<W: Write>(sink: W, meter_id: &str, forecasts: &[DensityForecast]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["meter_id", "origin", "horizon", "grid_point", "density", "cdf"])?;
    for f in forecasts {
        for ((y, d), c) in f.grid.points().iter().zip(&f.density).zip(&f.cdf) {
            writer.write_record([
                meter_id.to_string(),
                f.origin.to_string(),
                f.horizon.to_string(),
                y.to_string(),
                d.to_string(),
                c.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_forecast() -> DensityForecast {
        let grid = Arc::new(DensityGrid::from_p90(0.9).unwrap());
        finalize_density(&grid, vec![1.0; GRID_SIZE], 0, 1).unwrap()
    }

    #[test]
    fn grid_examples() {
        let g = DensityGrid::from_p90(0.9).unwrap();
        for (i, p) in g.points().iter().enumerate() {
            assert!((p - (i + 1) as f64 * 0.01).abs() < 1e-12);
        }
        let g = DensityGrid::from_p90(0.45).unwrap();
        let p = g.points();
        assert!((p[1] - p[0] - 0.005).abs() < 1e-12);
        assert!((p[89] - 0.45).abs() < 1e-12);
        assert!((p[90] - p[89] - 0.055).abs() < 1e-12);
        let g = DensityGrid::from_p90(0.99).unwrap();
        let p = g.points();
        assert!((p[89] - 0.99).abs() < 1e-12);
        assert_eq!(p[99], 1.0);
        assert!((p[90] - p[89] - 0.001).abs() < 1e-12);
        assert!(p.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn grid_degenerate_falls_back() {
        let g = build_grid(&[0.0; 50]).unwrap();
        assert_eq!(g, DensityGrid::uniform());
        let mut values = vec![1.0; 20];
        values[0] = 0.1;
        assert_eq!(build_grid(&values).unwrap(), DensityGrid::uniform());
        assert!(build_grid(&[]).is_err());
    }

    #[test]
    fn uniform_cdf_and_quantiles() {
        let f = uniform_forecast();
        assert!((f.cdf(0.5) - 0.5).abs() < 1e-12);
        assert!((f.quantile(0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(f.quantile(0.999999).unwrap() > 0.9999);
        assert!(f.quantile(0.0).is_err());
        assert!(f.quantile(1.0).is_err());
        assert!((f.mean() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_atom_limit() {
        let grid = Arc::new(DensityGrid::from_p90(0.9).unwrap());
        let mut raw = vec![0.0; GRID_SIZE];
        raw[0] = 2.0;
        let f = finalize_density(&grid, raw, 0, 1).unwrap();
        assert!((f.cdf_values()[1] - 1.0).abs() < 1e-12);
        assert!(finalize_density(&grid, vec![0.0; GRID_SIZE], 0, 1).is_err());
    }

    #[test]
    fn renormalization_keeps_shape() {
        // Oracle: the normalizing mass computed independently with a
        // 10^5-step midpoint rule on the piecewise-linear interpolant.
        let grid = Arc::new(DensityGrid::from_p90(0.6).unwrap());
        let bump = |y: f64| (-(y - 0.4f64).powi(2) / (2.0 * 0.08f64.powi(2))).exp() * 0.97 / (0.08 * (2.0 * std::f64::consts::PI).sqrt());
        let raw: Vec<f64> = grid.points().iter().map(|y| bump(*y)).collect();
        let f = finalize_density(&grid, raw.clone(), 0, 1).unwrap();
        let pts = grid.points();
        let interp = |y: f64| {
            if y <= pts[0] {
                return raw[0];
            }
            let i = pts.partition_point(|p| *p < y);
            raw[i - 1] + (raw[i] - raw[i - 1]) * (y - pts[i - 1]) / (pts[i] - pts[i - 1])
        };
        let n = 100_000;
        let mass: f64 = (0..n).map(|k| interp((k as f64 + 0.5) / n as f64) / n as f64).sum();
        assert!((mass - 0.97).abs() < 1e-3);
        for (d, r) in f.density().iter().zip(&raw) {
            assert!((d * mass - r).abs() < 1e-6 * r.max(1.0));
        }
        assert_eq!(f.cdf_values()[GRID_SIZE - 1], 1.0);
    }

    #[test]
    fn narrow_bump_quantile_hits_centre() {
        let grid = Arc::new(DensityGrid::from_p90(0.9).unwrap());
        let mut raw = vec![0.0; GRID_SIZE];
        raw[39] = 1.0;
        let f = finalize_density(&grid, raw, 0, 1).unwrap();
        let y = grid.points()[39];
        assert!((f.median() - y).abs() < 1e-12);
        for theta in [0.05, 0.3, 0.7, 0.95] {
            assert!((f.quantile(theta).unwrap() - y).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn sampling_examples() {
        let s = sample(&PointMass(0.37), 100, 3);
        assert!(s.iter().all(|v| *v == 0.37));
        let f = uniform_forecast();
        let draws = sample(&f, 100_000, 11);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        assert_eq!(sample(&f, 50, 5), sample(&f, 50, 5));
        assert_ne!(sample(&f, 50, 5), sample(&f, 50, 6));
    }

    #[test]
    fn from_cdf_round_trips_cdf_values() {
        let grid = Arc::new(DensityGrid::from_p90(0.5).unwrap());
        let cdf: Vec<f64> = grid.points().iter().map(|p| p * p).collect();
        let f = DensityForecast::from_cdf(&grid, cdf.clone(), 3, 4).unwrap();
        for (a, b) in f.cdf_values().iter().zip(&cdf) {
            assert!((a - b).abs() < 1e-15);
        }
        for y in grid.points() {
            assert!((f.cdf(*y) - y * y).abs() < 1e-12);
        }
    }

    #[test]
    fn export_rows() {
        let f = uniform_forecast();
        let mut buf = Vec::new();
        write_forecasts(&mut buf, "m1", &[f.clone(), f.with_horizon(2)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * GRID_SIZE);
        assert!(text.starts_with("meter_id,origin,horizon,grid_point,density,cdf\nm1,0,1,0.01,"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn forecast_strategy() -> impl Strategy<Value = DensityForecast> {
            (0.05f64..0.95, proptest::collection::vec(0.0f64..5.0, GRID_SIZE)).prop_filter_map(
                "positive mass",
                |(p90, raw)| {
                    let grid = Arc::new(DensityGrid::from_p90(p90).ok()?);
                    finalize_density(&grid, raw, 0, 1).ok()
                },
            )
        }

        proptest! {
            #[test]
            fn cdf_is_proper(f in forecast_strategy()) {
                let c = f.cdf_values();
                prop_assert!(c.windows(2).all(|w| w[1] >= w[0] - 1e-12));
                prop_assert!((c[GRID_SIZE - 1] - 1.0).abs() < 1e-9);
                prop_assert!(f.density().iter().all(|d| *d >= 0.0));
            }

            #[test]
            fn quantile_inverts_cdf(p90 in 0.05f64..0.95, raw in proptest::collection::vec(0.01f64..5.0, GRID_SIZE)) {
                let grid = Arc::new(DensityGrid::from_p90(p90).unwrap());
                let f = finalize_density(&grid, raw, 0, 1).unwrap();
                for y in &grid.points()[..GRID_SIZE - 1] {
                    let q = f.quantile(f.cdf(*y)).unwrap();
                    prop_assert!((q - y).abs() <= grid.spacing_near(*y), "q={} y={}", q, y);
                }
            }

            #[test]
            fn quantile_monotone(f in forecast_strategy(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(f.quantile(lo).unwrap() <= f.quantile(hi).unwrap());
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]
            #[test]
            fn sample_ks_distance(f in forecast_strategy(), seed in 0u64..1000) {
                let mut draws = sample(&f, 100_000, seed);
                draws.sort_by(f64::total_cmp);
                let n = draws.len() as f64;
                let mut ks: f64 = 0.0;
                for (i, x) in draws.iter().enumerate() {
                    let c = f.cdf(*x);
                    ks = ks.max((c - i as f64 / n).abs()).max(((i + 1) as f64 / n - c).abs());
                }
                prop_assert!(ks < 0.01, "ks = {}", ks);
            }
        }
    }
}
