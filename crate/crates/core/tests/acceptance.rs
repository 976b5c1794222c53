//! End-to-end acceptance gate. Each test prints a PASS/FAIL line for its
//! criterion; heavyweight criteria share one trained model.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use rand::Rng;
use rand_distr::StandardNormal;

use loadsynth::data::{self, DatasetSplit, NormalizationStats};
use loadsynth::diffusion::{self, NoiseSchedule, TrainOptions, TrainedModel};
use loadsynth::estimator::{self, EstimatorConfig};
use loadsynth::metrics::{self, ForecasterConfig};
use loadsynth::seed;
use loadsynth::tensor::{Tape, Tensor};
use loadsynth::{Condition, DailyProfile, SLOTS_PER_DAY};

fn report(criterion: &str, pass: bool) {
    println!(
        "acceptance: {criterion}: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion failed: {criterion}");
}

// ---------------------------------------------------------------------------
// Shared trained model: 4 customers x 120 days, T=50, d_model=16, N=4,
// E=100, B=16, fixed seed.
// ---------------------------------------------------------------------------

const MASTER_SEED: u64 = 20130101;

struct Setup {
    split: DatasetSplit,
    stats: BTreeMap<String, NormalizationStats>,
    typical: BTreeMap<String, Vec<f64>>,
    schedule: NoiseSchedule,
    cfg: EstimatorConfig,
    trained: TrainedModel,
}

static SETUP: LazyLock<Setup> = LazyLock::new(|| {
    let corpus = data::generate_synthetic_corpus(4, 120, MASTER_SEED).unwrap();
    let grouped = data::group_by_customer(&corpus);
    let split = data::split_dataset(&grouped, (0.6, 0.2, 0.2)).unwrap();
    let (stats, _) = data::compute_stats(&split.train);
    let normalized = data::normalize_profiles(&split.train, &stats).unwrap();
    let typical = data::typical_loads(&normalized);
    let schedule = diffusion::build_schedule(50, 0.0001, 0.5).unwrap();
    let cfg = EstimatorConfig {
        d_model: 16,
        n_layers: 4,
        ..EstimatorConfig::default()
    };
    let opts = TrainOptions {
        epochs: 100,
        batch_size: 16,
        adam: loadsynth::tensor::AdamConfig {
            learning_rate: 0.003,
            ..Default::default()
        },
        master_seed: MASTER_SEED,
    };
    let trained = diffusion::train(&cfg, &schedule, &normalized, &typical, &opts).unwrap();
    Setup {
        split,
        stats,
        typical,
        schedule,
        cfg,
        trained,
    }
});

/// Synthesize one kW profile with a per-(customer, date, replica) stream.
fn synth_profile(setup: &Setup, customer: &str, date: chrono::NaiveDate, replica: usize) -> DailyProfile {
    let s = seed::derive(MASTER_SEED, seed::stream::SAMPLE);
    let s = seed::derive(s, customer);
    let s = seed::derive(s, &date.to_string());
    let mut rng = seed::stream_rng(s, &replica.to_string());
    let condition = Condition {
        typical_load: setup.typical[customer].clone(),
        date,
    };
    let normalized = diffusion::synthesize(
        &setup.cfg,
        &setup.trained.params,
        &setup.schedule,
        &condition,
        &mut rng,
    )
    .unwrap();
    let stats = &setup.stats[customer];
    DailyProfile {
        customer_id: customer.to_string(),
        date,
        values: normalized.iter().map(|v| stats.denormalize(*v).max(0.0)).collect(),
    }
}

fn customers(setup: &Setup) -> Vec<String> {
    setup.stats.keys().cloned().collect()
}

fn of_customer<'a>(profiles: &'a [DailyProfile], customer: &str) -> Vec<&'a DailyProfile> {
    profiles.iter().filter(|p| p.customer_id == customer).collect()
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn schedule_correctness() {
    let schedule = diffusion::build_schedule(50, 0.0001, 0.5).unwrap();
    let mut pass = schedule.beta(1) == 0.0001 && schedule.beta(50) == 0.5;
    for t in 2..=50 {
        pass &= schedule.beta(t) > schedule.beta(t - 1);
    }
    let mut abar = 1.0;
    for t in 1..=50 {
        pass &= (schedule.alpha(t) - (1.0 - schedule.beta(t))).abs() < 1e-12;
        let prev_abar = abar;
        abar *= 1.0 - schedule.beta(t);
        pass &= (schedule.alpha_bar(t) - abar).abs() < 1e-12;
        let beta_tilde = (1.0 - prev_abar) / (1.0 - abar) * schedule.beta(t);
        pass &= (schedule.beta_tilde(t) - beta_tilde).abs() < 1e-12;
    }
    report("schedule correctness", pass);
}

#[test]
fn forward_process_moments() {
    let schedule = diffusion::build_schedule(50, 0.0001, 0.5).unwrap();
    let x0 = [1.4, -0.6, 0.0, 2.2];
    let n = 100_000usize;
    let mut pass = true;
    for (case, &t) in [1usize, 25, 50].iter().enumerate() {
        let mut rng = seed::stream_rng(771, &format!("moments-{case}"));
        let mut sum = vec![0.0; x0.len()];
        let mut sum_sq = vec![0.0; x0.len()];
        for _ in 0..n {
            let eps: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
            let xt = diffusion::forward_diffuse(&x0, t, &eps, &schedule).unwrap();
            for (i, v) in xt.iter().enumerate() {
                sum[i] += v;
                sum_sq[i] += v * v;
            }
        }
        let abar = schedule.alpha_bar(t);
        let expect_var = 1.0 - abar;
        for i in 0..x0.len() {
            let mean = sum[i] / n as f64;
            let var = sum_sq[i] / n as f64 - mean * mean;
            let expect_mean = abar.sqrt() * x0[i];
            let se_mean = (expect_var.max(1e-30) / n as f64).sqrt();
            let se_var = expect_var * (2.0 / n as f64).sqrt();
            if t == 1 {
                // Variance 1 - abar_1 is tiny but nonzero; the same bounds apply.
            }
            pass &= (mean - expect_mean).abs() <= 3.0 * se_mean.max(1e-12);
            pass &= (var - expect_var).abs() <= 3.0 * se_var.max(1e-12);
        }
    }
    report("forward-process moments", pass);
}

#[test]
fn gradient_oracle() {
    let schedule = diffusion::build_schedule(50, 0.0001, 0.5).unwrap();
    let cfg = EstimatorConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ..EstimatorConfig::default()
    };
    let step = 1e-5;
    let mut pass = true;
    let mut worst = 0.0f64;
    for instance in 0..5u64 {
        let mut rng = seed::stream_rng(4242 + instance, "grad-oracle");
        let params = estimator::init_params(&cfg, &mut rng).unwrap();
        let x0: Vec<f64> = (0..SLOTS_PER_DAY).map(|_| rng.random_range(-1.5..1.5)).collect();
        let epsilon: Vec<f64> = (0..SLOTS_PER_DAY).map(|_| rng.sample(StandardNormal)).collect();
        let condition = Condition {
            typical_load: (0..SLOTS_PER_DAY).map(|_| rng.random_range(-1.0..1.0)).collect(),
            date: chrono::NaiveDate::from_ymd_opt(2013, 4, 1 + instance as u32).unwrap(),
        };
        let t = rng.random_range(1..=50usize);
        let xt = diffusion::forward_diffuse(&x0, t, &epsilon, &schedule).unwrap();

        // Reverse-mode gradients of the loss with respect to every parameter.
        let mut tape = Tape::new();
        let vars = estimator::param_leaves(&mut tape, &params);
        let xt_var = tape.constant(Tensor::new(vec![SLOTS_PER_DAY, 1], xt.clone()).unwrap());
        let load_var = tape
            .constant(Tensor::new(vec![SLOTS_PER_DAY, 1], condition.typical_load.clone()).unwrap());
        let date_var = tape.constant(Tensor::vector(estimator::date_onehot(condition.date)));
        let eps_hat = estimator::forward(&mut tape, &cfg, &vars, xt_var, t, load_var, date_var).unwrap();
        let eps_var = tape.constant(Tensor::vector(epsilon.clone()));
        let loss = tape.sse(eps_var, eps_hat).unwrap();
        let grads = tape.backward(loss).unwrap();

        for (name, var) in &vars {
            let analytic = grads.get(*var).data().to_vec();
            for j in 0..analytic.len() {
                let eval = |delta: f64| {
                    let mut perturbed = params.clone();
                    perturbed.get_mut(name).unwrap().data_mut()[j] += delta;
                    diffusion::training_loss(&cfg, &perturbed, &x0, &condition, t, &epsilon, &schedule)
                        .unwrap()
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                let rel = (fd - analytic[j]).abs() / fd.abs().max(analytic[j].abs()).max(1e-3);
                worst = worst.max(rel);
                pass &= rel < 1e-4;
            }
        }
    }
    println!("acceptance: gradient oracle worst relative error {worst:.3e}");
    report("gradient oracle", pass);
}

/// Independent 1-D Wasserstein oracle: replicate both samples to a common
/// size (the LCM), sort, and average coordinate distances.
fn w1_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let l = a.len() / gcd(a.len(), b.len()) * b.len();
    let expand = |s: &[f64]| {
        let mut v: Vec<f64> = s.iter().flat_map(|&x| std::iter::repeat(x).take(l / s.len())).collect();
        v.sort_by(|p, q| p.partial_cmp(q).unwrap());
        v
    };
    let (xa, xb) = (expand(a), expand(b));
    xa.iter().zip(&xb).map(|(x, y)| (x - y).abs()).sum::<f64>() / l as f64
}

fn mmd_oracle(x: &[Vec<f64>], y: &[Vec<f64>], h: f64) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        (-d2 / (2.0 * h * h)).exp()
    };
    let m = x.len() as f64;
    let mut total = 0.0;
    for a in x {
        for b in x {
            total += k(a, b);
        }
    }
    for a in y {
        for b in y {
            total += k(a, b);
        }
    }
    for a in x {
        for b in y {
            total -= 2.0 * k(a, b);
        }
    }
    total / (m * m)
}

#[test]
fn metric_oracles() {
    let mut rng = seed::stream_rng(31337, "metric-grid");
    let mut sets: Vec<Vec<Vec<f64>>> = Vec::new();
    for size in 1..=5usize {
        for _ in 0..3 {
            sets.push(
                (0..size)
                    .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect(),
            );
        }
    }
    let mut pass = true;
    let bandwidth = 1.3;
    for x in &sets {
        for y in &sets {
            let scalars_x: Vec<f64> = x.iter().flatten().copied().collect();
            let scalars_y: Vec<f64> = y.iter().flatten().copied().collect();
            let wd = metrics::wasserstein_1d(&scalars_x, &scalars_y).unwrap();
            pass &= (wd - w1_oracle(&scalars_x, &scalars_y)).abs() < 1e-12;
            if x.len() == y.len() {
                let (got, _) = metrics::mmd(x, y, Some(bandwidth), 0).unwrap();
                pass &= (got - mmd_oracle(x, y, bandwidth)).abs() < 1e-12;
            }
        }
        let (self_mmd, _) = metrics::mmd(x, x, Some(bandwidth), 0).unwrap();
        let scalars_x: Vec<f64> = x.iter().flatten().copied().collect();
        pass &= self_mmd == 0.0;
        pass &= metrics::wasserstein_1d(&scalars_x, &scalars_x).unwrap() == 0.0;
    }
    report("metric oracles", pass);
}

#[test]
fn training_progress() {
    let setup = &*SETUP;
    let first = setup.trained.epoch_losses[0];
    let last = *setup.trained.epoch_losses.last().unwrap();
    println!("acceptance: training loss epoch 1 = {first:.4}, epoch 100 = {last:.4}");
    report("training progress", last < 0.5 * first);
}

#[test]
fn conditional_fidelity() {
    let setup = &*SETUP;
    let ids = customers(setup);
    // Individual draws feed the distribution-level MMD check; the paired
    // point prediction per (customer, date) is the centroid of several
    // draws, matching the centroid output of the augmentation workflow.
    let n_draws = 16;
    let mut synth: Vec<DailyProfile> = Vec::new();
    let mut centroids: Vec<DailyProfile> = Vec::new();
    for id in &ids {
        for p in of_customer(&setup.split.test, id) {
            let draws: Vec<DailyProfile> = (0..n_draws)
                .map(|k| synth_profile(setup, id, p.date, k))
                .collect();
            let mut mean = vec![0.0; SLOTS_PER_DAY];
            for d in &draws {
                for (m, v) in mean.iter_mut().zip(&d.values) {
                    *m += v / n_draws as f64;
                }
            }
            centroids.push(DailyProfile {
                customer_id: id.clone(),
                date: p.date,
                values: mean,
            });
            synth.push(draws.into_iter().next().unwrap());
        }
    }

    // A single bandwidth from the pooled real test profiles keeps the
    // per-customer comparisons on one scale.
    let real_vectors: Vec<Vec<f64>> = setup.split.test.iter().map(|p| p.values.clone()).collect();
    let refs: Vec<&[Vec<f64>]> = vec![&real_vectors];
    let bandwidth = metrics::median_heuristic_bandwidth(&refs);

    let mut matched = 0;
    for a in &ids {
        let synth_a: Vec<Vec<f64>> = of_customer(&synth, a).iter().map(|p| p.values.clone()).collect();
        let real_a: Vec<Vec<f64>> = of_customer(&setup.split.test, a)
            .iter()
            .map(|p| p.values.clone())
            .collect();
        let (own, _) = metrics::mmd(&synth_a, &real_a, Some(bandwidth), 0).unwrap();
        let mut closest_to_own = true;
        for b in &ids {
            if b == a {
                continue;
            }
            let real_b: Vec<Vec<f64>> = of_customer(&setup.split.test, b)
                .iter()
                .map(|p| p.values.clone())
                .collect();
            let (other, _) = metrics::mmd(&synth_a, &real_b, Some(bandwidth), 0).unwrap();
            closest_to_own &= own < other;
        }
        if closest_to_own {
            matched += 1;
        }
    }
    println!("acceptance: conditional fidelity MMD match {matched}/4 customers");

    // Paired RMSE must beat a baseline that always emits the population
    // mean training profile.
    let mut mean_profile = vec![0.0; SLOTS_PER_DAY];
    for p in &setup.split.train {
        for (m, v) in mean_profile.iter_mut().zip(&p.values) {
            *m += v / setup.split.train.len() as f64;
        }
    }
    let baseline: Vec<DailyProfile> = setup
        .split
        .test
        .iter()
        .map(|p| DailyProfile {
            customer_id: p.customer_id.clone(),
            date: p.date,
            values: mean_profile.clone(),
        })
        .collect();
    let rmse_synth = metrics::rmse(&setup.split.test, &centroids).unwrap();
    let rmse_baseline = metrics::rmse(&setup.split.test, &baseline).unwrap();
    println!("acceptance: paired RMSE synthesized {rmse_synth:.4} vs population-mean {rmse_baseline:.4}");
    report(
        "conditional fidelity",
        matched >= 3 && rmse_synth < rmse_baseline,
    );
}

#[test]
fn augmentation_ordering() {
    let setup = &*SETUP;
    // Two customers keep the factor-20 synthesis budget modest; all three
    // augmentation variants see exactly the same data and seeds.
    let ids: Vec<String> = customers(setup).into_iter().take(2).collect();
    let train: Vec<DailyProfile> = setup
        .split
        .train
        .iter()
        .filter(|p| ids.contains(&p.customer_id))
        .cloned()
        .collect();
    let val: Vec<DailyProfile> = setup
        .split
        .validation
        .iter()
        .filter(|p| ids.contains(&p.customer_id))
        .cloned()
        .collect();
    let factor = 20;

    let diffusion_replicas = |source: &[DailyProfile]| -> Vec<DailyProfile> {
        let mut out = Vec::with_capacity(source.len() * factor);
        for p in source {
            for k in 0..factor {
                let mut replica = synth_profile(setup, &p.customer_id, p.date, k);
                replica.customer_id = format!("{}~{k}", p.customer_id);
                out.push(replica);
            }
        }
        out
    };

    let fc = |label: &str| ForecasterConfig {
        seed: seed::derive(MASTER_SEED, label),
        ..ForecasterConfig::default()
    };

    // Affinity: forecaster trained on original data, validation set extended
    // by each augmentation method.
    let baseline_model = metrics::train_forecaster(&train, &fc("aug-baseline")).unwrap();
    let extend = |extra: Vec<DailyProfile>| {
        let mut v = val.clone();
        v.extend(extra);
        v
    };
    let val_diffusion = extend(diffusion_replicas(&val));
    let val_noise = extend(metrics::noise_augment(&val, factor, MASTER_SEED));
    let affinity_diffusion = metrics::affinity(&baseline_model, &val, &val_diffusion).unwrap();
    let affinity_noise = metrics::affinity(&baseline_model, &val, &val_noise).unwrap();
    println!(
        "acceptance: affinity diffusion {affinity_diffusion:.4} vs gaussian-noise {affinity_noise:.4}"
    );

    // Diversity: final training loss on the augmented training set.
    let extend_train = |extra: Vec<DailyProfile>| {
        let mut v = train.clone();
        v.extend(extra);
        v
    };
    let train_diffusion = extend_train(diffusion_replicas(&train));
    let train_copies = extend_train(metrics::copy_augment(&train, factor));
    let diversity_diffusion = metrics::diversity(&train_diffusion, &fc("aug-diversity")).unwrap();
    let diversity_copies = metrics::diversity(&train_copies, &fc("aug-diversity")).unwrap();
    println!(
        "acceptance: diversity diffusion {diversity_diffusion:.4} vs copy-augmentation {diversity_copies:.4}"
    );

    report(
        "augmentation ordering",
        affinity_diffusion > affinity_noise && diversity_diffusion > diversity_copies,
    );
}

#[test]
fn ablation_direction() {
    let corpus = data::generate_synthetic_corpus(3, 50, 7_700).unwrap();
    let grouped = data::group_by_customer(&corpus);
    let split = data::split_dataset(&grouped, (0.6, 0.2, 0.2)).unwrap();
    let (stats, _) = data::compute_stats(&split.train);
    let normalized = data::normalize_profiles(&split.train, &stats).unwrap();
    let typical = data::typical_loads(&normalized);
    let schedule = diffusion::build_schedule(50, 0.0001, 0.5).unwrap();

    let run = |seed_value: u64, attention: bool, skip: bool| -> f64 {
        let cfg = EstimatorConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            use_attention: attention,
            use_skip_connections: skip,
            ..EstimatorConfig::default()
        };
        let opts = TrainOptions {
            epochs: 30,
            batch_size: 16,
            adam: Default::default(),
            master_seed: seed_value,
        };
        *diffusion::train(&cfg, &schedule, &normalized, &typical, &opts)
            .unwrap()
            .epoch_losses
            .last()
            .unwrap()
    };

    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let seeds = [11u64, 22, 33];
    let full = median(seeds.iter().map(|&s| run(s, true, true)).collect());
    let stripped = median(seeds.iter().map(|&s| run(s, false, false)).collect());
    println!("acceptance: ablation median final loss full {full:.4} vs stripped {stripped:.4}");
    report("ablation direction", full < stripped);
}

#[test]
fn sampler_contract() {
    let setup = &*SETUP;
    let customer = customers(setup).remove(0);
    let condition = Condition {
        typical_load: setup.typical[&customer].clone(),
        date: chrono::NaiveDate::from_ymd_opt(2013, 6, 15).unwrap(),
    };
    let mut rng = seed::stream_rng(MASTER_SEED, "sampler-contract");
    let xt: Vec<f64> = (0..SLOTS_PER_DAY).map(|_| rng.sample(StandardNormal)).collect();
    let zeros = vec![0.0; SLOTS_PER_DAY];
    let ones = vec![1.0; SLOTS_PER_DAY];
    let a = diffusion::reverse_step(
        &xt,
        1,
        &condition,
        &setup.cfg,
        &setup.trained.params,
        &setup.schedule,
        &zeros,
    )
    .unwrap();
    let b = diffusion::reverse_step(
        &xt,
        1,
        &condition,
        &setup.cfg,
        &setup.trained.params,
        &setup.schedule,
        &ones,
    )
    .unwrap();
    // At t = 2 the same perturbation must matter, so the t = 1 invariance
    // is not vacuous.
    let c = diffusion::reverse_step(
        &xt,
        2,
        &condition,
        &setup.cfg,
        &setup.trained.params,
        &setup.schedule,
        &zeros,
    )
    .unwrap();
    let d = diffusion::reverse_step(
        &xt,
        2,
        &condition,
        &setup.cfg,
        &setup.trained.params,
        &setup.schedule,
        &ones,
    )
    .unwrap();
    report("sampler contract", a == b && c != d);
}
