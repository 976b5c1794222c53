//! Smart-meter data pipeline: CSV ingestion into per-customer daily
//! profiles, chronological splitting, per-customer normalization,
//! condition construction, and a parametric synthetic corpus for
//! desk-scale experiments.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

pub const SLOTS_PER_DAY: usize = 48;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed row: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("line {line}: duplicate reading for ({customer_id}, {timestamp})")]
    DuplicateReading {
        line: u64,
        customer_id: String,
        timestamp: String,
    },
    #[error("split ratios {0:?} do not sum to 1")]
    BadRatios([f64; 3]),
    #[error("customer `{0}` has no training data; supply an external typical load (e.g. a population mean) instead")]
    NoTrainingData(String),
    #[error("no normalization statistics for customer `{0}`")]
    UnknownCustomer(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid corpus parameters: need at least 2 customers and 20 days, got {customers} and {days}")]
    BadCorpusParams { customers: usize, days: usize },
}

/// One customer-day of 48 half-hourly load readings.
#[derive(Clone, Debug, PartialEq)]
pub struct DailyProfile {
    pub customer_id: String,
    pub date: NaiveDate,
    pub values: Vec<f64>,
}

/// Conditioning pair: the customer's typical (normalized mean) load and the
/// calendar date of the profile to synthesize.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub typical_load: Vec<f64>,
    pub date: NaiveDate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
}

impl NormalizationStats {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropRecord {
    pub customer_id: String,
    pub date: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    /// Complete profiles, grouped per customer, chronologically ordered.
    pub profiles: BTreeMap<String, Vec<DailyProfile>>,
    pub dropped: Vec<DropRecord>,
    pub readings_consumed: usize,
}

impl IngestReport {
    pub fn all_profiles(&self) -> Vec<DailyProfile> {
        self.profiles.values().flatten().cloned().collect()
    }
}

/// Parse half-hourly readings (`customer_id,timestamp,kwh`) into daily
/// profiles. Days with any missing slot are dropped and reported.
pub fn ingest_csv(path: &Path) -> Result<IngestReport, DataError> {
    ingest_reader(std::fs::File::open(path)?)
}

pub fn ingest_reader<R: Read>(reader: R) -> Result<IngestReport, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    // (customer, date) -> slot -> value
    let mut days: BTreeMap<(String, NaiveDate), BTreeMap<usize, f64>> = BTreeMap::new();
    let mut readings = 0usize;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(DataError::MalformedRow {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let customer_id = record[0].to_string();
        let ts = NaiveDateTime::parse_from_str(&record[1], "%Y-%m-%dT%H:%M:%S").map_err(|e| {
            DataError::MalformedRow {
                line,
                message: format!("bad timestamp `{}`: {e}", &record[1]),
            }
        })?;
        let kwh: f64 = record[2].parse().map_err(|e| DataError::MalformedRow {
            line,
            message: format!("bad reading `{}`: {e}", &record[2]),
        })?;
        if !kwh.is_finite() || kwh < 0.0 {
            return Err(DataError::MalformedRow {
                line,
                message: format!("reading {kwh} is negative or non-finite"),
            });
        }
        if ts.minute() % 30 != 0 || ts.second() != 0 {
            return Err(DataError::MalformedRow {
                line,
                message: format!("timestamp `{}` is not on a 30-minute boundary", &record[1]),
            });
        }
        let slot = ts.hour() as usize * 2 + ts.minute() as usize / 30;
        let day = days.entry((customer_id.clone(), ts.date())).or_default();
        if day.insert(slot, kwh).is_some() {
            return Err(DataError::DuplicateReading {
                line,
                customer_id,
                timestamp: record[1].to_string(),
            });
        }
        readings += 1;
    }

    let mut report = IngestReport {
        readings_consumed: readings,
        ..Default::default()
    };
    for ((customer_id, date), slots) in days {
        if slots.len() == SLOTS_PER_DAY {
            let values = slots.into_values().collect();
            report
                .profiles
                .entry(customer_id.clone())
                .or_default()
                .push(DailyProfile {
                    customer_id,
                    date,
                    values,
                });
        } else {
            report.dropped.push(DropRecord {
                customer_id,
                date,
                reason: format!("incomplete day: {}/{} readings", slots.len(), SLOTS_PER_DAY),
            });
        }
    }
    Ok(report)
}

/// Write profiles in the ingestion schema (one reading per row).
pub fn write_profiles_csv<W: Write>(writer: W, profiles: &[DailyProfile]) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["customer_id", "timestamp", "kwh"])?;
    for p in profiles {
        for (slot, v) in p.values.iter().enumerate() {
            let ts = p.date.and_hms_opt(slot as u32 / 2, (slot as u32 % 2) * 30, 0).unwrap();
            wtr.write_record([
                p.customer_id.as_str(),
                &ts.format("%Y-%m-%dT%H:%M:%S").to_string(),
                &format!("{:.9}", v),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_drop_report<W: Write>(writer: W, dropped: &[DropRecord]) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["customer_id", "date", "reason"])?;
    for d in dropped {
        wtr.write_record([d.customer_id.as_str(), &d.date.to_string(), &d.reason])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<DailyProfile>,
    pub validation: Vec<DailyProfile>,
    pub test: Vec<DailyProfile>,
    /// Customers with fewer than 5 days, excluded from the split.
    pub excluded: Vec<String>,
}

/// Chronological per-customer split: earliest days go to train.
/// Validation/test sizes are floored; the remainder stays in train.
pub fn split_dataset(
    profiles: &BTreeMap<String, Vec<DailyProfile>>,
    ratios: (f64, f64, f64),
) -> Result<DatasetSplit, DataError> {
    let (r_train, r_val, r_test) = ratios;
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 || r_train <= 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(DataError::BadRatios([r_train, r_val, r_test]));
    }
    let mut split = DatasetSplit::default();
    for (customer, days) in profiles {
        if days.len() < 5 {
            split.excluded.push(customer.clone());
            continue;
        }
        let mut days = days.clone();
        days.sort_by_key(|p| p.date);
        let n = days.len();
        let n_val = (r_val * n as f64).floor() as usize;
        let n_test = (r_test * n as f64).floor() as usize;
        let n_train = n - n_val - n_test;
        split.train.extend_from_slice(&days[..n_train]);
        split.validation.extend_from_slice(&days[n_train..n_train + n_val]);
        split.test.extend_from_slice(&days[n_train + n_val..]);
    }
    Ok(split)
}

/// Per-customer z-score statistics over all readings of the given
/// (training) profiles. Zero-variance customers are floored at 1e-6 and
/// reported back.
pub fn compute_stats(
    train: &[DailyProfile],
) -> (BTreeMap<String, NormalizationStats>, Vec<String>) {
    let mut grouped: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for p in train {
        grouped.entry(&p.customer_id).or_default().extend(&p.values);
    }
    let mut stats = BTreeMap::new();
    let mut floored = Vec::new();
    for (customer, values) in grouped {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let mut std = var.sqrt();
        if std < 1e-6 {
            std = 1e-6;
            floored.push(customer.to_string());
        }
        stats.insert(customer.to_string(), NormalizationStats { mean, std });
    }
    (stats, floored)
}

pub fn normalize_profiles(
    profiles: &[DailyProfile],
    stats: &BTreeMap<String, NormalizationStats>,
) -> Result<Vec<DailyProfile>, DataError> {
    profiles
        .iter()
        .map(|p| {
            let s = stats
                .get(&p.customer_id)
                .ok_or_else(|| DataError::UnknownCustomer(p.customer_id.clone()))?;
            Ok(DailyProfile {
                customer_id: p.customer_id.clone(),
                date: p.date,
                values: p.values.iter().map(|&v| s.normalize(v)).collect(),
            })
        })
        .collect()
}

/// Elementwise mean of each customer's normalized training days.
pub fn typical_loads(normalized_train: &[DailyProfile]) -> BTreeMap<String, Vec<f64>> {
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for p in normalized_train {
        let entry = sums
            .entry(p.customer_id.clone())
            .or_insert_with(|| (vec![0.0; SLOTS_PER_DAY], 0));
        for (s, v) in entry.0.iter_mut().zip(&p.values) {
            *s += v;
        }
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(c, (sum, n))| (c, sum.into_iter().map(|s| s / n as f64).collect()))
        .collect()
}

pub fn build_condition(
    customer: &str,
    date: NaiveDate,
    normalized_train: &[DailyProfile],
) -> Result<Condition, DataError> {
    let loads = typical_loads(normalized_train);
    let typical_load = loads
        .get(customer)
        .cloned()
        .ok_or_else(|| DataError::NoTrainingData(customer.to_string()))?;
    Ok(Condition { typical_load, date })
}

/// Parametric daily shape of one synthetic customer: base load plus two
/// Gaussian peaks, weekday/weekend modulation, and a seasonal sinusoid.
#[derive(Clone, Debug)]
pub struct CustomerShape {
    pub base: f64,
    pub morning_amp: f64,
    pub morning_center: f64,
    pub morning_width: f64,
    pub evening_amp: f64,
    pub evening_center: f64,
    pub evening_width: f64,
    pub weekend_factor: f64,
    pub seasonal_amp: f64,
    pub seasonal_phase: f64,
    pub noise_sigma: f64,
}

impl CustomerShape {
    fn sample(rng: &mut ChaCha12Rng) -> Self {
        Self {
            base: rng.random_range(0.2..0.6),
            morning_amp: rng.random_range(0.5..1.5),
            morning_center: rng.random_range(14.0..18.0),
            morning_width: rng.random_range(2.0..4.0),
            evening_amp: rng.random_range(1.0..2.5),
            evening_center: rng.random_range(36.0..42.0),
            evening_width: rng.random_range(3.0..6.0),
            weekend_factor: rng.random_range(0.7..1.3),
            seasonal_amp: rng.random_range(0.1..0.4),
            seasonal_phase: rng.random_range(0.0..365.0),
            noise_sigma: rng.random_range(0.05..0.15),
        }
    }

    /// Noise-free parametric mean for one (date, slot).
    pub fn mean_value(&self, date: NaiveDate, slot: usize) -> f64 {
        let s = slot as f64;
        let peak = |amp: f64, center: f64, width: f64| {
            amp * (-((s - center) * (s - center)) / (2.0 * width * width)).exp()
        };
        let day_factor = if matches!(
            date.weekday(),
            chrono::Weekday::Sat | chrono::Weekday::Sun
        ) {
            self.weekend_factor
        } else {
            1.0
        };
        let doy = date.ordinal0() as f64;
        let seasonal = 1.0
            + self.seasonal_amp
                * (2.0 * std::f64::consts::PI * (doy - self.seasonal_phase) / 365.0).cos();
        (self.base
            + peak(self.morning_amp, self.morning_center, self.morning_width)
            + peak(self.evening_amp, self.evening_center, self.evening_width))
            * day_factor
            * seasonal
    }
}

pub const CORPUS_START_DATE: &str = "2013-01-01";

pub fn synthetic_shapes(n_customers: usize, master_seed: u64) -> Vec<(String, CustomerShape)> {
    (0..n_customers)
        .map(|c| {
            let id = format!("synth-{c:03}");
            let mut rng = seed::stream_rng(seed::derive(master_seed, &id), "shape");
            (id, CustomerShape::sample(&mut rng))
        })
        .collect()
}

/// Deterministic desk-scale corpus in the ingestion format's units (kW).
/// Multiplicative log-normal noise (unit mean) keeps every value positive.
pub fn generate_synthetic_corpus(
    n_customers: usize,
    n_days: usize,
    master_seed: u64,
) -> Result<Vec<DailyProfile>, DataError> {
    if n_customers < 2 || n_days < 20 {
        return Err(DataError::BadCorpusParams {
            customers: n_customers,
            days: n_days,
        });
    }
    let start = NaiveDate::parse_from_str(CORPUS_START_DATE, "%Y-%m-%d").unwrap();
    let mut profiles = Vec::with_capacity(n_customers * n_days);
    for (id, shape) in synthetic_shapes(n_customers, master_seed) {
        let mut rng = seed::stream_rng(seed::derive(master_seed, &id), "noise");
        for d in 0..n_days {
            let date = start + Duration::days(d as i64);
            let values = (0..SLOTS_PER_DAY)
                .map(|slot| {
                    let z: f64 = rng.sample(StandardNormal);
                    let sigma = shape.noise_sigma;
                    shape.mean_value(date, slot) * (sigma * z - sigma * sigma / 2.0).exp()
                })
                .collect();
            profiles.push(DailyProfile {
                customer_id: id.clone(),
                date,
                values,
            });
        }
    }
    Ok(profiles)
}

/// Group flat profiles per customer, chronologically ordered.
pub fn group_by_customer(profiles: &[DailyProfile]) -> BTreeMap<String, Vec<DailyProfile>> {
    let mut grouped: BTreeMap<String, Vec<DailyProfile>> = BTreeMap::new();
    for p in profiles {
        grouped.entry(p.customer_id.clone()).or_default().push(p.clone());
    }
    for days in grouped.values_mut() {
        days.sort_by_key(|p| p.date);
    }
    grouped
}
