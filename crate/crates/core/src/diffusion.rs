//! Diffusion mathematics: linear noise schedule, closed-form forward
//! process, conditional reverse step, training loss, and the training and
//! synthesis loops.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::data::{Condition, DailyProfile, DataError};
use crate::estimator::{self, EstimatorConfig, ModelError};
use crate::seed;
use crate::tensor::{AdamConfig, AdamState, ParamSet, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: T={t_max}, beta range ({beta_start}, {beta_end})")]
    InvalidSchedule {
        t_max: usize,
        beta_start: f64,
        beta_end: f64,
    },
    #[error("timestep {t} outside 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("profile length {got}, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Precomputed beta/alpha tables for t = 1..T.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    t_max: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

/// Linear beta schedule: beta_t interpolates beta_start..beta_end over
/// t = 1..T; alpha_bar is the running product of (1 - beta).
pub fn build_schedule(
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if t_max < 2 || beta_start <= 0.0 || beta_start >= beta_end || beta_end >= 1.0 {
        return Err(DiffusionError::InvalidSchedule {
            t_max,
            beta_start,
            beta_end,
        });
    }
    let mut beta = Vec::with_capacity(t_max);
    let mut alpha = Vec::with_capacity(t_max);
    let mut alpha_bar = Vec::with_capacity(t_max);
    let mut beta_tilde = Vec::with_capacity(t_max);
    let mut running = 1.0;
    for t in 1..=t_max {
        let b = beta_start + ((t - 1) as f64 / (t_max - 1) as f64) * (beta_end - beta_start);
        let a = 1.0 - b;
        let prev_bar = running;
        running *= a;
        beta.push(b);
        alpha.push(a);
        alpha_bar.push(running);
        // alpha_bar[0] := 1 makes beta_tilde[1] = 0.
        beta_tilde.push((1.0 - prev_bar) / (1.0 - running) * b);
    }
    Ok(NoiseSchedule {
        t_max,
        beta,
        alpha,
        alpha_bar,
        beta_tilde,
    })
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.t_max {
            return Err(DiffusionError::TimestepOutOfRange { t, t_max: self.t_max });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }
}

/// Closed-form forward process: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
pub fn forward_diffuse(
    x0: &[f64],
    t: usize,
    epsilon: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    schedule.check(t)?;
    if x0.len() != epsilon.len() {
        return Err(DiffusionError::BadLength {
            expected: x0.len(),
            got: epsilon.len(),
        });
    }
    let signal = schedule.alpha_bar(t).sqrt();
    let noise = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(x0
        .iter()
        .zip(epsilon)
        .map(|(x, e)| signal * x + noise * e)
        .collect())
}

/// Build the training-loss node ||eps - eps_theta(x_t, t | x_c)||^2 on an
/// existing tape whose leaves are already registered.
fn loss_node(
    tape: &mut Tape,
    cfg: &EstimatorConfig,
    vars: &BTreeMap<String, Var>,
    x0: &[f64],
    condition: &Condition,
    t: usize,
    epsilon: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Var, DiffusionError> {
    let xt = forward_diffuse(x0, t, epsilon, schedule)?;
    let xt_var = tape.constant(Tensor::new(vec![cfg.seq_len, 1], xt)?);
    let load_var = tape.constant(Tensor::new(
        vec![cfg.seq_len, 1],
        condition.typical_load.clone(),
    )?);
    let date_var = tape.constant(Tensor::vector(estimator::date_onehot(condition.date)));
    let eps_hat = estimator::forward(tape, cfg, vars, xt_var, t, load_var, date_var)?;
    let eps_var = tape.constant(Tensor::vector(epsilon.to_vec()));
    Ok(tape.sse(eps_var, eps_hat)?)
}

/// Sum of squared differences between the drawn and the estimated noise.
pub fn training_loss(
    cfg: &EstimatorConfig,
    params: &ParamSet,
    x0: &[f64],
    condition: &Condition,
    t: usize,
    epsilon: &[f64],
    schedule: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    let mut tape = Tape::new();
    let vars = estimator::param_leaves(&mut tape, params);
    let loss = loss_node(&mut tape, cfg, &vars, x0, condition, t, epsilon, schedule)?;
    Ok(tape.value(loss).item())
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub master_seed: u64,
}

pub struct TrainedModel {
    pub params: ParamSet,
    /// Mean per-sample loss for each epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Algorithm: per epoch, shuffle the normalized training profiles; per
/// batch element draw its own timestep and noise, average the gradients
/// over the batch, and take one Adam step. Deterministic for a fixed seed.
pub fn train(
    cfg: &EstimatorConfig,
    schedule: &NoiseSchedule,
    dataset: &[DailyProfile],
    typical_loads: &BTreeMap<String, Vec<f64>>,
    opts: &TrainOptions,
) -> Result<TrainedModel, DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    cfg.validate()?;
    for p in dataset {
        if p.values.len() != cfg.seq_len {
            return Err(DiffusionError::BadLength {
                expected: cfg.seq_len,
                got: p.values.len(),
            });
        }
        if !typical_loads.contains_key(&p.customer_id) {
            return Err(DataError::UnknownCustomer(p.customer_id.clone()).into());
        }
    }
    let mut init_rng = seed::stream_rng(opts.master_seed, seed::stream::INIT);
    let mut params = estimator::init_params(cfg, &mut init_rng)?;
    let mut train_rng = seed::stream_rng(opts.master_seed, seed::stream::TRAIN);
    let mut adam = AdamState::new(opts.adam);
    let mut epoch_losses = Vec::with_capacity(opts.epochs);

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut train_rng);
        let mut epoch_loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(opts.batch_size.max(1)).enumerate() {
            let mut grad_sum: BTreeMap<String, Tensor> = params
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect();
            for &sample_idx in batch {
                let profile = &dataset[sample_idx];
                let t = train_rng.random_range(1..=schedule.t_max());
                let epsilon: Vec<f64> = (0..cfg.seq_len)
                    .map(|_| train_rng.sample(StandardNormal))
                    .collect();
                let condition = Condition {
                    typical_load: typical_loads[&profile.customer_id].clone(),
                    date: profile.date,
                };
                let mut tape = Tape::new();
                let vars = estimator::param_leaves(&mut tape, &params);
                let loss = loss_node(
                    &mut tape, cfg, &vars, &profile.values, &condition, t, &epsilon, schedule,
                )?;
                let loss_value = tape.value(loss).item();
                if !loss_value.is_finite() {
                    return Err(DiffusionError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                epoch_loss_sum += loss_value;
                let grads = tape.backward(loss)?;
                let scale = 1.0 / batch.len() as f64;
                for (name, var) in &vars {
                    let g = grads.get(*var);
                    let acc = grad_sum.get_mut(name).expect("aligned keys");
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * b;
                    }
                }
            }
            adam.step(&mut params, &grad_sum)?;
        }
        epoch_losses.push(epoch_loss_sum / dataset.len() as f64);
    }
    Ok(TrainedModel {
        params,
        epoch_losses,
    })
}

/// One line per epoch: `epoch,mean_loss`.
pub fn write_training_log<W: Write>(mut writer: W, losses: &[f64]) -> std::io::Result<()> {
    writeln!(writer, "epoch,mean_loss")?;
    for (i, loss) in losses.iter().enumerate() {
        writeln!(writer, "{},{:.12}", i + 1, loss)?;
    }
    Ok(())
}

/// One conditional reverse step. The added noise has standard deviation
/// sqrt(beta_tilde_t); the final step (t = 1) adds none.
pub fn reverse_step(
    xt: &[f64],
    t: usize,
    condition: &Condition,
    cfg: &EstimatorConfig,
    params: &ParamSet,
    schedule: &NoiseSchedule,
    epsilon_draw: &[f64],
) -> Result<Vec<f64>, DiffusionError> {
    schedule.check(t)?;
    let eps_hat = estimator::estimate_noise(cfg, params, xt, t, condition)?;
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let noise_coeff = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let sigma = if t > 1 {
        schedule.beta_tilde(t).sqrt()
    } else {
        0.0
    };
    Ok(xt
        .iter()
        .zip(&eps_hat)
        .zip(epsilon_draw)
        .map(|((x, e), z)| inv_sqrt_alpha * (x - noise_coeff * e) + sigma * z)
        .collect())
}

/// Run the full reverse chain from Gaussian noise; returns the normalized
/// profile. No noise is drawn for the final step.
pub fn synthesize(
    cfg: &EstimatorConfig,
    params: &ParamSet,
    schedule: &NoiseSchedule,
    condition: &Condition,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>, DiffusionError> {
    let mut x: Vec<f64> = (0..cfg.seq_len).map(|_| rng.sample(StandardNormal)).collect();
    let zeros = vec![0.0; cfg.seq_len];
    for t in (1..=schedule.t_max()).rev() {
        let draw: Vec<f64> = if t > 1 {
            (0..cfg.seq_len).map(|_| rng.sample(StandardNormal)).collect()
        } else {
            zeros.clone()
        };
        x = reverse_step(&x, t, condition, cfg, params, schedule, &draw)?;
    }
    Ok(x)
}
