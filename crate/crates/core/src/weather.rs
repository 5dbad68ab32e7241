//! Weather disturbance series.
//!
//! Measured data comes in through [`load_csv`] (5-minute logger data in the
//! original experiments) and is brought to the controller period with
//! [`resample`]. [`synthesize`] produces a deterministic diurnal stand-in
//! when no measurements are available, and [`perturb`] applies the
//! per-episode random scaling used while training the agent.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::WeatherRecord;
use crate::simulate::fmt_f64;

const SECONDS_PER_DAY: f64 = 86_400.0;
const SPACING_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum WeatherError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("gap in weather data between t = {before} s and t = {after} s")]
    Gap { before: f64, after: f64 },
    #[error("target period {target} s is not an integer multiple of the source period {source_period} s")]
    IncompatiblePeriod { target: f64, source_period: f64 },
    #[error("invalid weather series: {0}")]
    Invalid(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Evenly spaced, time-ordered weather records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    records: Vec<WeatherRecord>,
    sample_period: f64,
}

impl WeatherSeries {
    /// Build a series, checking spacing and record validity.
    pub fn new(records: Vec<WeatherRecord>, sample_period: f64) -> Result<Self, WeatherError> {
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(WeatherError::Invalid(format!("sample period {sample_period} must be positive")));
        }
        for (i, r) in records.iter().enumerate() {
            if !r.is_valid() {
                return Err(WeatherError::Invalid(format!("record {i} violates disturbance bounds: {r:?}")));
            }
        }
        for (i, pair) in records.windows(2).enumerate() {
            let dt = pair[1].t - pair[0].t;
            if !spacing_matches(dt, sample_period) {
                return Err(WeatherError::Invalid(format!(
                    "records {i} and {} are {dt} s apart, expected {sample_period} s",
                    i + 1
                )));
            }
        }
        Ok(Self { records, sample_period })
    }

    pub fn records(&self) -> &[WeatherRecord] {
        &self.records
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Write in the loader's default column layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), WeatherError> {
        let mut w = csv::Writer::from_writer(writer);
        let cols = ColumnMap::default();
        w.write_record([&cols.t, &cols.radiation, &cols.co2, &cols.temperature, &cols.humidity])?;
        for r in &self.records {
            w.write_record([fmt_f64(r.t), fmt_f64(r.d[0]), fmt_f64(r.d[1]), fmt_f64(r.d[2]), fmt_f64(r.d[3])])?;
        }
        w.flush().map_err(|source| WeatherError::Io { path: "<writer>".into(), source })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), WeatherError> {
        let file = std::fs::File::create(path).map_err(|source| WeatherError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn spacing_matches(dt: f64, period: f64) -> bool {
    (dt - period).abs() <= SPACING_RTOL * period
}

/// Column names for the five fields of a weather file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub t: String,
    pub radiation: String,
    pub co2: String,
    pub temperature: String,
    pub humidity: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            t: "t".into(),
            radiation: "rad_Wm2".into(),
            co2: "co2_kgm3".into(),
            temperature: "temp_C".into(),
            humidity: "hum_kgm3".into(),
        }
    }
}

/// Load a weather file. The sample period is taken from the first two rows;
/// every later spacing must match it.
pub fn load_csv(path: &Path, columns: &ColumnMap) -> Result<WeatherSeries, WeatherError> {
    let file = std::fs::File::open(path).map_err(|source| WeatherError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, columns)
}

pub fn read_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<WeatherSeries, WeatherError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let wanted = [&columns.t, &columns.radiation, &columns.co2, &columns.temperature, &columns.humidity];
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(wanted) {
        *slot = *index.get(name.as_str()).ok_or_else(|| WeatherError::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })?;
    }

    let mut records: Vec<WeatherRecord> = Vec::new();
    let mut period: Option<f64> = None;
    for (i, row) in r.records().enumerate() {
        let line = i + 2;
        let row = row?;
        let mut v = [0.0; 5];
        for (k, &j) in idx.iter().enumerate() {
            let raw = row.get(j).unwrap_or("");
            v[k] = raw.parse::<f64>().map_err(|_| WeatherError::Parse {
                line,
                message: format!("column `{}`: cannot parse `{raw}` as a number", wanted[k]),
            })?;
            if !v[k].is_finite() {
                return Err(WeatherError::Parse { line, message: format!("column `{}` is not finite", wanted[k]) });
            }
        }
        let rec = WeatherRecord::new(v[0], [v[1], v[2], v[3], v[4]]);
        if rec.d[0] < 0.0 || rec.d[1] < 0.0 || rec.d[3] < 0.0 {
            return Err(WeatherError::Parse {
                line,
                message: "radiation, CO₂ and humidity must be nonnegative".into(),
            });
        }
        if let Some(prev) = records.last() {
            let dt = rec.t - prev.t;
            if dt <= 0.0 {
                return Err(WeatherError::Parse {
                    line,
                    message: format!("timestamp {} does not increase past {}", rec.t, prev.t),
                });
            }
            match period {
                None => period = Some(dt),
                Some(p) if spacing_matches(dt, p) => {}
                Some(p) if dt > p => return Err(WeatherError::Gap { before: prev.t, after: rec.t }),
                Some(p) => {
                    return Err(WeatherError::Parse {
                        line,
                        message: format!("spacing {dt} s differs from the sample period {p} s"),
                    })
                }
            }
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(WeatherError::Parse { line: 1, message: "no data rows".into() });
    }
    // A single row carries no spacing information; call it one default period.
    let period = period.unwrap_or(crate::model::DEFAULT_SAMPLE_PERIOD);
    WeatherSeries::new(records, period)
}

/// Downsample by averaging consecutive blocks of `target / source` samples.
/// Each output record carries the timestamp of the first sample in its block;
/// a trailing partial block is dropped.
pub fn resample(series: &WeatherSeries, target_period: f64) -> Result<WeatherSeries, WeatherError> {
    let source = series.sample_period();
    let ratio = target_period / source;
    let block = ratio.round();
    if !(target_period.is_finite() && block >= 1.0 && (ratio - block).abs() <= 1e-9 * ratio) {
        return Err(WeatherError::IncompatiblePeriod { target: target_period, source_period: source });
    }
    let block = block as usize;
    if block == 1 {
        return Ok(series.clone());
    }
    let records = series
        .records()
        .chunks_exact(block)
        .map(|chunk| {
            let mut mean = [0.0; 4];
            for r in chunk {
                for (m, v) in mean.iter_mut().zip(r.d) {
                    *m += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= block as f64;
            }
            WeatherRecord::new(chunk[0].t, mean)
        })
        .collect();
    WeatherSeries::new(records, target_period)
}

/// Parameters of the synthetic diurnal weather generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherProfile {
    /// Generator output spacing in seconds.
    pub sample_period: f64,
    /// Clear-sky midday radiation (W·m⁻²).
    pub peak_radiation: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Standard deviation of the multiplicative cloud factor around 1.
    pub cloud_std: f64,
    /// Correlation time of the cloud factor (s).
    pub cloud_correlation: f64,
    pub co2_mean: f64,
    pub co2_std: f64,
    pub temperature_min: f64,
    pub temperature_max: f64,
    /// Hours by which the temperature peak trails solar noon.
    pub temperature_lag_hours: f64,
    pub humidity_mean: f64,
    pub humidity_std: f64,
    /// Correlation time of the CO₂ and humidity noise (s).
    pub noise_correlation: f64,
}

impl Default for WeatherProfile {
    fn default() -> Self {
        Self {
            sample_period: 300.0,
            peak_radiation: 400.0,
            sunrise_hour: 6.0,
            sunset_hour: 20.0,
            cloud_std: 0.1,
            cloud_correlation: 3.0 * 3600.0,
            co2_mean: 7.2e-4,
            co2_std: 2.0e-5,
            temperature_min: 5.0,
            temperature_max: 15.0,
            temperature_lag_hours: 3.0,
            humidity_mean: 0.006,
            humidity_std: 3.0e-4,
            noise_correlation: 2.0 * 3600.0,
        }
    }
}

impl WeatherProfile {
    /// Clear-sky radiation integral over one day (J·m⁻²).
    pub fn daily_light_integral(&self) -> f64 {
        let day_length = (self.sunset_hour - self.sunrise_hour) * 3600.0;
        self.peak_radiation * day_length * 2.0 / PI
    }

    fn clear_sky(&self, seconds_of_day: f64) -> f64 {
        let hour = seconds_of_day / 3600.0;
        if hour <= self.sunrise_hour || hour >= self.sunset_hour {
            return 0.0;
        }
        let phase = (hour - self.sunrise_hour) / (self.sunset_hour - self.sunrise_hour);
        (self.peak_radiation * (PI * phase).sin()).max(0.0)
    }

    fn outdoor_temperature(&self, seconds_of_day: f64) -> f64 {
        let noon = 0.5 * (self.sunrise_hour + self.sunset_hour);
        let peak = noon + self.temperature_lag_hours;
        let hour = seconds_of_day / 3600.0;
        let mean = 0.5 * (self.temperature_max + self.temperature_min);
        let amplitude = 0.5 * (self.temperature_max - self.temperature_min);
        mean + amplitude * (2.0 * PI * (hour - peak) / 24.0).cos()
    }
}

/// Deterministic synthetic weather starting at midnight, `t = 0`.
///
/// Radiation is a half-sine between sunrise and sunset scaled by a slowly
/// varying cloud factor; outdoor temperature is a sinusoid peaking after
/// solar noon; CO₂ and humidity are mean-reverting noise around their means.
pub fn synthesize(days: usize, seed: u64, profile: &WeatherProfile) -> Result<WeatherSeries, WeatherError> {
    if days == 0 {
        return Err(WeatherError::Invalid("at least one day is required".into()));
    }
    let dt = profile.sample_period;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(WeatherError::Invalid(format!("sample period {dt} must be positive")));
    }
    let per_day = (SECONDS_PER_DAY / dt).round() as usize;
    let n = days * per_day;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut cloud = Ou::new(profile.cloud_correlation, profile.cloud_std, dt);
    let mut co2 = Ou::new(profile.noise_correlation, profile.co2_std, dt);
    let mut hum = Ou::new(profile.noise_correlation, profile.humidity_std, dt);

    let records = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let sod = t % SECONDS_PER_DAY;
            let cloud_factor = (1.0 + cloud.next(&mut rng)).max(0.0);
            let radiation = profile.clear_sky(sod) * cloud_factor;
            WeatherRecord::new(
                t,
                [
                    radiation,
                    (profile.co2_mean + co2.next(&mut rng)).max(0.0),
                    profile.outdoor_temperature(sod),
                    (profile.humidity_mean + hum.next(&mut rng)).max(0.0),
                ],
            )
        })
        .collect();
    WeatherSeries::new(records, dt)
}

// Discrete Ornstein-Uhlenbeck process with stationary standard deviation `std`.
struct Ou {
    decay: f64,
    innovation: f64,
    value: f64,
}

impl Ou {
    fn new(correlation_time: f64, std: f64, dt: f64) -> Self {
        let decay = if correlation_time > 0.0 { (-dt / correlation_time).exp() } else { 0.0 };
        Self {
            decay,
            innovation: std * (1.0 - decay * decay).sqrt(),
            value: 0.0,
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.value = self.decay * self.value + self.innovation * z;
        self.value
    }
}

/// Range of the per-channel training scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbRange {
    pub low: f64,
    pub high: f64,
}

impl Default for PerturbRange {
    fn default() -> Self {
        Self { low: 0.7, high: 1.3 }
    }
}

/// Scale each channel by its own factor drawn once from `U(low, high)`.
/// Returns the series and the four factors.
pub fn perturb_with_factors(series: &WeatherSeries, seed: u64, range: PerturbRange) -> (WeatherSeries, [f64; 4]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = [1.0; 4];
    for f in factors.iter_mut() {
        let u: f64 = rng.random();
        *f = range.low + (range.high - range.low) * u;
    }
    let records = series
        .records()
        .iter()
        .map(|r| {
            let mut d = r.d;
            for (v, f) in d.iter_mut().zip(factors) {
                *v *= f;
            }
            WeatherRecord::new(r.t, d)
        })
        .collect();
    let out = WeatherSeries {
        records,
        sample_period: series.sample_period,
    };
    (out, factors)
}

/// [`perturb_with_factors`] with the default `U(0.7, 1.3)` range.
pub fn perturb(series: &WeatherSeries, seed: u64) -> WeatherSeries {
    perturb_with_factors(series, seed, PerturbRange::default()).0
}
