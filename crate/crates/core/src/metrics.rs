//! Evaluation scheme: paired RMSE/MAE, Gaussian-kernel MMD, 1-D
//! Wasserstein distance, and the augmentation metrics (Affinity,
//! Diversity, forecast improvement) with their baseline next-day load
//! forecaster.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::Duration;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DailyProfile, SLOTS_PER_DAY};
use crate::estimator::{self, DATE_ONEHOT_DIM};
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, ParamSet, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty sample set")]
    EmptySet,
    #[error("unpaired profile ({customer_id}, {date}) in {side} set")]
    Unpaired {
        customer_id: String,
        date: String,
        side: &'static str,
    },
    #[error("need at least 2 consecutive-day pairs, found {0}")]
    InsufficientPairs(usize),
    #[error("forecaster training diverged: non-finite loss at epoch {0}")]
    Divergence(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    MalformedReport(String),
}

/// Match profiles by (customer, date); both sets must pair exactly.
pub fn pair_profiles<'a>(
    real: &'a [DailyProfile],
    synthetic: &'a [DailyProfile],
) -> Result<Vec<(&'a DailyProfile, &'a DailyProfile)>, MetricsError> {
    let mut by_key: BTreeMap<(&str, chrono::NaiveDate), &DailyProfile> = BTreeMap::new();
    for p in real {
        by_key.insert((p.customer_id.as_str(), p.date), p);
    }
    if by_key.len() != synthetic.len() {
        // Find a concrete offender for the error message.
        let synth_keys: std::collections::BTreeSet<_> = synthetic
            .iter()
            .map(|p| (p.customer_id.as_str(), p.date))
            .collect();
        for p in real {
            if !synth_keys.contains(&(p.customer_id.as_str(), p.date)) {
                return Err(MetricsError::Unpaired {
                    customer_id: p.customer_id.clone(),
                    date: p.date.to_string(),
                    side: "real",
                });
            }
        }
    }
    let mut pairs = Vec::with_capacity(synthetic.len());
    for p in synthetic {
        let real = by_key
            .remove(&(p.customer_id.as_str(), p.date))
            .ok_or_else(|| MetricsError::Unpaired {
                customer_id: p.customer_id.clone(),
                date: p.date.to_string(),
                side: "synthetic",
            })?;
        pairs.push((real, p));
    }
    if let Some(p) = by_key.into_values().next() {
        return Err(MetricsError::Unpaired {
            customer_id: p.customer_id.clone(),
            date: p.date.to_string(),
            side: "real",
        });
    }
    if pairs.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    Ok(pairs)
}

pub fn rmse(real: &[DailyProfile], synthetic: &[DailyProfile]) -> Result<f64, MetricsError> {
    let pairs = pair_profiles(real, synthetic)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, s) in pairs {
        for (a, b) in r.values.iter().zip(&s.values) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}

pub fn mae(real: &[DailyProfile], synthetic: &[DailyProfile]) -> Result<f64, MetricsError> {
    let pairs = pair_profiles(real, synthetic)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, s) in pairs {
        for (a, b) in r.values.iter().zip(&s.values) {
            sum += (a - b).abs();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance over the pooled samples.
pub fn median_heuristic_bandwidth(sets: &[&[Vec<f64>]]) -> f64 {
    let pooled: Vec<&Vec<f64>> = sets.iter().flat_map(|s| s.iter()).collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = dists[dists.len() / 2];
    if h > 0.0 {
        h
    } else {
        1.0
    }
}

fn subsample(set: &[Vec<f64>], m: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<f64>> {
    if set.len() <= m {
        return set.to_vec();
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(rng);
    let mut chosen: Vec<usize> = idx.into_iter().take(m).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| set[i].clone()).collect()
}

/// Biased V-statistic MMD with Gaussian kernel exp(-||a-b||^2 / (2 h^2)).
/// Unequal set sizes are equalized by seeded uniform subsampling of the
/// larger set; `bandwidth = None` applies the median heuristic. Returns
/// (mmd, bandwidth used).
pub fn mmd(
    real_set: &[Vec<f64>],
    synthetic_set: &[Vec<f64>],
    bandwidth: Option<f64>,
    subsample_seed: u64,
) -> Result<(f64, f64), MetricsError> {
    if real_set.is_empty() || synthetic_set.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let m = real_set.len().min(synthetic_set.len());
    let mut rng = seed::stream_rng(subsample_seed, "mmd-subsample");
    let ys = subsample(real_set, m, &mut rng);
    let yhats = subsample(synthetic_set, m, &mut rng);
    let h = bandwidth.unwrap_or_else(|| median_heuristic_bandwidth(&[&ys, &yhats]));
    let k = |a: &[f64], b: &[f64]| (-sq_dist(a, b) / (2.0 * h * h)).exp();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            total += k(&ys[i], &ys[j]) + k(&yhats[i], &yhats[j]) - 2.0 * k(&ys[i], &yhats[j]);
        }
    }
    Ok((total / (m * m) as f64, h))
}

/// Exact 1-D Wasserstein-1 distance between the empirical distributions of
/// two pooled scalar samples, as the integral of |F1 - F2|.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut all: Vec<f64> = xs.iter().chain(ys.iter()).copied().collect();
    all.sort_by(|p, q| p.partial_cmp(q).unwrap());
    all.dedup();
    let (mut i, mut j) = (0usize, 0usize);
    let mut w = 0.0;
    for window in all.windows(2) {
        let (z0, z1) = (window[0], window[1]);
        while i < xs.len() && xs[i] <= z0 {
            i += 1;
        }
        while j < ys.len() && ys[j] <= z0 {
            j += 1;
        }
        let f1 = i as f64 / xs.len() as f64;
        let f2 = j as f64 / ys.len() as f64;
        w += (f1 - f2).abs() * (z1 - z0);
    }
    Ok(w)
}

/// Flatten profile sets to the pooled scalar readings for WD.
pub fn pooled_readings(profiles: &[DailyProfile]) -> Vec<f64> {
    profiles.iter().flat_map(|p| p.values.iter().copied()).collect()
}

pub fn profile_vectors(profiles: &[DailyProfile]) -> Vec<Vec<f64>> {
    profiles.iter().map(|p| p.values.clone()).collect()
}

// ---------------------------------------------------------------------------
// Baseline next-day load forecaster: one hidden layer, tanh.
// ---------------------------------------------------------------------------

pub const FORECASTER_INPUT: usize = SLOTS_PER_DAY + DATE_ONEHOT_DIM;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForecasterConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

pub struct ForecasterModel {
    pub config: ForecasterConfig,
    pub params: ParamSet,
    /// Mean per-sample training loss (MSE) in the final epoch; this is the
    /// Diversity statistic of the set the model was trained on.
    pub final_train_loss: f64,
}

/// (previous day, next day) pairs over consecutive dates per customer.
pub fn consecutive_pairs(profiles: &[DailyProfile]) -> Vec<(&DailyProfile, &DailyProfile)> {
    let mut by_customer: BTreeMap<&str, Vec<&DailyProfile>> = BTreeMap::new();
    for p in profiles {
        by_customer.entry(&p.customer_id).or_default().push(p);
    }
    let mut pairs = Vec::new();
    for days in by_customer.values_mut() {
        days.sort_by_key(|p| p.date);
        for w in days.windows(2) {
            if w[1].date == w[0].date + Duration::days(1) {
                pairs.push((w[0], w[1]));
            }
        }
    }
    pairs
}

fn forecaster_input(prev: &[f64], date: chrono::NaiveDate) -> Vec<f64> {
    let mut input = prev.to_vec();
    input.extend(estimator::date_onehot(date));
    input
}

fn forecaster_forward(
    tape: &mut Tape,
    vars: &BTreeMap<String, crate::tensor::Var>,
    input: crate::tensor::Var,
) -> Result<crate::tensor::Var, TensorError> {
    let h = tape.matmul(input, vars["fc1.w"])?;
    let h = tape.add(h, vars["fc1.b"])?;
    let h = tape.tanh(h);
    let o = tape.matmul(h, vars["fc2.w"])?;
    tape.add(o, vars["fc2.b"])
}

/// Train the baseline forecaster on (day d -> day d+1) pairs.
pub fn train_forecaster(
    train_set: &[DailyProfile],
    config: &ForecasterConfig,
) -> Result<ForecasterModel, MetricsError> {
    let pairs = consecutive_pairs(train_set);
    if pairs.len() < 2 {
        return Err(MetricsError::InsufficientPairs(pairs.len()));
    }
    let mut rng = seed::stream_rng(config.seed, "forecaster");
    let glorot = |rng: &mut ChaCha12Rng, din: usize, dout: usize| {
        let bound = (6.0 / (din + dout) as f64).sqrt();
        let data = (0..din * dout).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::new(vec![din, dout], data).expect("consistent shape")
    };
    let mut params = ParamSet::new();
    params.insert("fc1.w".into(), glorot(&mut rng, FORECASTER_INPUT, config.hidden));
    params.insert("fc1.b".into(), Tensor::zeros(vec![config.hidden]));
    params.insert("fc2.w".into(), glorot(&mut rng, config.hidden, SLOTS_PER_DAY));
    params.insert("fc2.b".into(), Tensor::zeros(vec![SLOTS_PER_DAY]));
    let mut adam = AdamState::new(config.adam);

    let inputs: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(prev, next)| forecaster_input(&prev.values, next.date))
        .collect();
    let targets: Vec<&[f64]> = pairs.iter().map(|(_, next)| next.values.as_slice()).collect();

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut final_loss = f64::NAN;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut grad_sum: BTreeMap<String, Tensor> = params
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect();
            for &i in batch {
                let mut tape = Tape::new();
                let vars = estimator::param_leaves(&mut tape, &params);
                let input = tape.constant(Tensor::vector(inputs[i].clone()));
                let pred = forecaster_forward(&mut tape, &vars, input)?;
                let target = tape.constant(Tensor::vector(targets[i].to_vec()));
                let sse = tape.sse(target, pred)?;
                let loss = tape.scale(sse, 1.0 / SLOTS_PER_DAY as f64);
                let loss_value = tape.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(MetricsError::Divergence(epoch));
                }
                loss_sum += loss_value;
                let grads = tape.backward(loss)?;
                let scale = 1.0 / batch.len() as f64;
                for (name, var) in &vars {
                    let acc = grad_sum.get_mut(name).expect("aligned keys");
                    for (a, b) in acc.data_mut().iter_mut().zip(grads.get(*var).data()) {
                        *a += scale * b;
                    }
                }
            }
            adam.step(&mut params, &grad_sum)?;
        }
        final_loss = loss_sum / pairs.len() as f64;
    }
    Ok(ForecasterModel {
        config: config.clone(),
        params,
        final_train_loss: final_loss,
    })
}

pub fn forecast(model: &ForecasterModel, prev: &[f64], date: chrono::NaiveDate) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = estimator::param_leaves(&mut tape, &model.params);
    let input = tape.constant(Tensor::vector(forecaster_input(prev, date)));
    let pred = forecaster_forward(&mut tape, &vars, input).expect("fixed shapes");
    tape.value(pred).data().to_vec()
}

/// RMSE over all consecutive-day pairs of the evaluation set.
pub fn forecast_rmse(model: &ForecasterModel, eval_set: &[DailyProfile]) -> Result<f64, MetricsError> {
    let pairs = consecutive_pairs(eval_set);
    if pairs.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (prev, next) in pairs {
        let pred = forecast(model, &prev.values, next.date);
        for (a, b) in pred.iter().zip(&next.values) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    Ok((sum / n as f64).sqrt())
}

/// Performance scalar: negative RMSE, so larger is better.
pub fn forecast_performance(
    model: &ForecasterModel,
    eval_set: &[DailyProfile],
) -> Result<f64, MetricsError> {
    Ok(-forecast_rmse(model, eval_set)?)
}

/// Affinity: performance on the augmented validation set minus performance
/// on the original one, for a forecaster trained on original data only.
pub fn affinity(
    model: &ForecasterModel,
    d_val: &[DailyProfile],
    d_val_augmented: &[DailyProfile],
) -> Result<f64, MetricsError> {
    Ok(forecast_performance(model, d_val_augmented)? - forecast_performance(model, d_val)?)
}

/// Diversity: mean training loss of a forecaster trained on the augmented
/// training set, at the end of training.
pub fn diversity(
    d_train_augmented: &[DailyProfile],
    config: &ForecasterConfig,
) -> Result<f64, MetricsError> {
    Ok(train_forecaster(d_train_augmented, config)?.final_train_loss)
}

pub fn improvement_percent(rmse_baseline: f64, rmse_augmented: f64) -> f64 {
    (rmse_baseline - rmse_augmented) / rmse_baseline * 100.0
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub customer_id: String,
    pub n_samples: usize,
    pub rmse: f64,
    pub mae: f64,
    pub mmd: f64,
    pub wd: f64,
    pub mmd_bandwidth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationMetrics {
    pub affinity: f64,
    pub diversity: f64,
    pub improvement_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_customer: Vec<MetricRow>,
    /// Mean and standard deviation across customers, per metric.
    pub aggregate_mean: MetricRow,
    pub aggregate_std: MetricRow,
    pub augmentation: Option<AugmentationMetrics>,
}

fn aggregate(rows: &[MetricRow]) -> (MetricRow, MetricRow) {
    let n = rows.len() as f64;
    let mean_of = |f: &dyn Fn(&MetricRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
    let std_of = |f: &dyn Fn(&MetricRow) -> f64, mean: f64| {
        (rows.iter().map(|r| (f(r) - mean) * (f(r) - mean)).sum::<f64>() / n).sqrt()
    };
    let (m_rmse, m_mae, m_mmd, m_wd, m_h) = (
        mean_of(&|r| r.rmse),
        mean_of(&|r| r.mae),
        mean_of(&|r| r.mmd),
        mean_of(&|r| r.wd),
        mean_of(&|r| r.mmd_bandwidth),
    );
    let total: usize = rows.iter().map(|r| r.n_samples).sum();
    let mean = MetricRow {
        customer_id: "aggregate_mean".into(),
        n_samples: total,
        rmse: m_rmse,
        mae: m_mae,
        mmd: m_mmd,
        wd: m_wd,
        mmd_bandwidth: m_h,
    };
    let std = MetricRow {
        customer_id: "aggregate_std".into(),
        n_samples: total,
        rmse: std_of(&|r| r.rmse, m_rmse),
        mae: std_of(&|r| r.mae, m_mae),
        mmd: std_of(&|r| r.mmd, m_mmd),
        wd: std_of(&|r| r.wd, m_wd),
        mmd_bandwidth: std_of(&|r| r.mmd_bandwidth, m_h),
    };
    (mean, std)
}

/// Generation-scenario report: per-customer RMSE/MAE/MMD/WD plus the mean
/// and standard deviation across customers.
pub fn generation_report(
    real: &[DailyProfile],
    synthetic: &[DailyProfile],
    subsample_seed: u64,
) -> Result<MetricsReport, MetricsError> {
    let customers: std::collections::BTreeSet<&str> =
        real.iter().map(|p| p.customer_id.as_str()).collect();
    let mut rows = Vec::new();
    for customer in customers {
        let r: Vec<DailyProfile> = real
            .iter()
            .filter(|p| p.customer_id == customer)
            .cloned()
            .collect();
        let s: Vec<DailyProfile> = synthetic
            .iter()
            .filter(|p| p.customer_id == customer)
            .cloned()
            .collect();
        if s.is_empty() {
            return Err(MetricsError::Unpaired {
                customer_id: customer.to_string(),
                date: "*".into(),
                side: "real",
            });
        }
        let (mmd_value, h) = mmd(&profile_vectors(&r), &profile_vectors(&s), None, subsample_seed)?;
        rows.push(MetricRow {
            customer_id: customer.to_string(),
            n_samples: s.len(),
            rmse: rmse(&r, &s)?,
            mae: mae(&r, &s)?,
            mmd: mmd_value,
            wd: wasserstein_1d(&pooled_readings(&r), &pooled_readings(&s))?,
            mmd_bandwidth: h,
        });
    }
    if rows.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let (aggregate_mean, aggregate_std) = aggregate(&rows);
    Ok(MetricsReport {
        per_customer: rows,
        aggregate_mean,
        aggregate_std,
        augmentation: None,
    })
}

impl MetricsReport {
    /// One row per customer plus the two aggregate rows. Float formatting
    /// is shortest-round-trip, so parsing back is lossless.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricsError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "customer_id",
            "n_samples",
            "rmse",
            "mae",
            "mmd",
            "wd",
            "mmd_bandwidth",
        ])?;
        for row in self.per_customer.iter().chain([&self.aggregate_mean, &self.aggregate_std]) {
            wtr.write_record([
                row.customer_id.as_str(),
                &row.n_samples.to_string(),
                &row.rmse.to_string(),
                &row.mae.to_string(),
                &row.mmd.to_string(),
                &row.wd.to_string(),
                &row.mmd_bandwidth.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, MetricsError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64, MetricsError> {
                record[i]
                    .parse()
                    .map_err(|e| MetricsError::MalformedReport(format!("field {i}: {e}")))
            };
            rows.push(MetricRow {
                customer_id: record[0].to_string(),
                n_samples: record[1]
                    .parse()
                    .map_err(|e| MetricsError::MalformedReport(format!("n_samples: {e}")))?,
                rmse: parse(2)?,
                mae: parse(3)?,
                mmd: parse(4)?,
                wd: parse(5)?,
                mmd_bandwidth: parse(6)?,
            });
        }
        if rows.len() < 3 {
            return Err(MetricsError::MalformedReport(
                "expected at least one customer row and two aggregate rows".into(),
            ));
        }
        let aggregate_std = rows.pop().unwrap();
        let aggregate_mean = rows.pop().unwrap();
        Ok(Self {
            per_customer: rows,
            aggregate_mean,
            aggregate_std,
            augmentation: None,
        })
    }
}

/// Raw 48-dim profiles with a real/synthetic label, for external 2-D
/// embedding tools.
pub fn export_reduction_csv<W: Write>(
    writer: W,
    real: &[DailyProfile],
    synthetic: &[DailyProfile],
) -> Result<(), MetricsError> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string(), "customer_id".into(), "date".into()];
    header.extend((0..SLOTS_PER_DAY).map(|i| format!("v{i:02}")));
    wtr.write_record(&header)?;
    for (label, set) in [("real", real), ("synthetic", synthetic)] {
        for p in set {
            let mut record = vec![label.to_string(), p.customer_id.clone(), p.date.to_string()];
            record.extend(p.values.iter().map(|v| format!("{v:.9}")));
            wtr.write_record(&record)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Gaussian-noise augmentation baseline: each replica adds independent
/// noise scaled to the profile's own spread.
pub fn noise_augment(
    profiles: &[DailyProfile],
    factor: usize,
    master_seed: u64,
) -> Vec<DailyProfile> {
    let mut out = Vec::with_capacity(profiles.len() * factor);
    for p in profiles {
        let mean = p.values.iter().sum::<f64>() / p.values.len() as f64;
        let sd = (p.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / p.values.len() as f64)
            .sqrt()
            .max(1e-6);
        let mut rng = seed::stream_rng(
            seed::derive(seed::derive(master_seed, &p.customer_id), &p.date.to_string()),
            "noise-augment",
        );
        for k in 0..factor {
            let values = p
                .values
                .iter()
                .map(|v| (v + sd * rng.sample::<f64, _>(StandardNormal)).max(0.0))
                .collect();
            out.push(DailyProfile {
                customer_id: format!("{}~{k}", p.customer_id),
                date: p.date,
                values,
            });
        }
    }
    out
}

/// Copy augmentation baseline: exact replicas under replica ids.
pub fn copy_augment(profiles: &[DailyProfile], factor: usize) -> Vec<DailyProfile> {
    let mut out = Vec::with_capacity(profiles.len() * factor);
    for p in profiles {
        for k in 0..factor {
            out.push(DailyProfile {
                customer_id: format!("{}~{k}", p.customer_id),
                date: p.date,
                values: p.values.clone(),
            });
        }
    }
    out
}
