//! The noise estimation network: embedding module, N stacked residual
//! layers with two multi-head self-attention branches and gated fusion,
//! and a skip-connection output head. Ablation flags swap attention for a
//! recurrent layer and/or bypass the skip concatenation.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::data::Condition;
use crate::tensor::{ParamSet, Tape, Tensor, TensorError, Var};

/// 12 month indicators + 7 weekday indicators.
pub const DATE_ONEHOT_DIM: usize = 19;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid estimator config: {0}")]
    Config(String),
    #[error("input length {got} does not match sequence length {expected}")]
    BadInputLength { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EstimatorConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub seq_len: usize,
    pub use_attention: bool,
    pub use_skip_connections: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            d_model: 16,
            n_layers: 6,
            n_heads: 4,
            seq_len: 48,
            use_attention: true,
            use_skip_connections: true,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(ModelError::Config(format!(
                "d_model must be positive and even, got {}",
                self.d_model
            )));
        }
        if self.n_layers == 0 {
            return Err(ModelError::Config("n_layers must be at least 1".into()));
        }
        if self.use_attention && self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.seq_len == 0 {
            return Err(ModelError::Config("seq_len must be positive".into()));
        }
        Ok(())
    }
}

/// Sinusoidal encoding: entry 2i is sin(t * 10^(16 i / d_model)),
/// entry 2i+1 the matching cosine.
pub fn timestep_embedding(t: f64, d_model: usize) -> Result<Vec<f64>, ModelError> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(ModelError::Config(format!(
            "timestep embedding needs an even width, got {d_model}"
        )));
    }
    let mut emb = vec![0.0; d_model];
    for i in 0..d_model / 2 {
        let freq = 10f64.powf(16.0 * i as f64 / d_model as f64);
        emb[2 * i] = (t * freq).sin();
        emb[2 * i + 1] = (t * freq).cos();
    }
    Ok(emb)
}

/// Fixed positional encoding over positions 0..seq_len-1, same sinusoid
/// family as the timestep embedding.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Tensor, ModelError> {
    let mut data = Vec::with_capacity(seq_len * d_model);
    for pos in 0..seq_len {
        data.extend(timestep_embedding(pos as f64, d_model)?);
    }
    Ok(Tensor::new(vec![seq_len, d_model], data).expect("consistent shape"))
}

/// One-hot month (12) concatenated with one-hot day-of-week (7).
pub fn date_onehot(date: NaiveDate) -> Vec<f64> {
    let mut v = vec![0.0; DATE_ONEHOT_DIM];
    v[date.month0() as usize] = 1.0;
    v[12 + date.weekday().num_days_from_monday() as usize] = 1.0;
    v
}

fn glorot(rng: &mut ChaCha12Rng, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("consistent shape")
}

/// Initialize all trainable parameters: uniform Glorot weights, zero biases.
pub fn init_params(cfg: &EstimatorConfig, rng: &mut ChaCha12Rng) -> Result<ParamSet, ModelError> {
    cfg.validate()?;
    let d = cfg.d_model;
    let mut params = ParamSet::new();
    let fc = |params: &mut ParamSet, rng: &mut ChaCha12Rng, name: &str, din: usize, dout: usize| {
        params.insert(format!("{name}.w"), glorot(rng, din, dout, vec![din, dout]));
        params.insert(format!("{name}.b"), Tensor::zeros(vec![dout]));
    };
    fc(&mut params, rng, "embed.xt", 1, d);
    fc(&mut params, rng, "embed.cond_load", 1, d);
    fc(&mut params, rng, "embed.date", DATE_ONEHOT_DIM, d);
    for layer in 0..cfg.n_layers {
        let p = format!("layer{layer:02}");
        fc(&mut params, rng, &format!("{p}.fc_x"), d, d);
        fc(&mut params, rng, &format!("{p}.fc_c"), d, d);
        for branch in ["attn_x", "attn_c"] {
            if cfg.use_attention {
                for proj in ["wq", "wk", "wv", "wo"] {
                    params.insert(
                        format!("{p}.{branch}.{proj}"),
                        glorot(rng, d, d, vec![d, d]),
                    );
                }
            } else {
                let rnn = branch.replace("attn", "rnn");
                params.insert(format!("{p}.{rnn}.wx"), glorot(rng, d, d, vec![d, d]));
                params.insert(format!("{p}.{rnn}.wh"), glorot(rng, d, d, vec![d, d]));
                params.insert(format!("{p}.{rnn}.b"), Tensor::zeros(vec![d]));
            }
        }
        fc(&mut params, rng, &format!("{p}.fc_chunk"), d, 2 * d);
        fc(&mut params, rng, &format!("{p}.fc_out"), d, d);
    }
    let head_in = if cfg.use_skip_connections {
        cfg.n_layers * d
    } else {
        d
    };
    fc(&mut params, rng, "head", head_in, 1);
    Ok(params)
}

/// Register every parameter as a tape leaf; names map to vars.
pub fn param_leaves(tape: &mut Tape, params: &ParamSet) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(name, tensor)| (name.clone(), tape.leaf(tensor.clone())))
        .collect()
}

fn var(vars: &BTreeMap<String, Var>, name: &str) -> Var {
    *vars.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`"))
}

fn linear(
    tape: &mut Tape,
    x: Var,
    vars: &BTreeMap<String, Var>,
    name: &str,
) -> Result<Var, TensorError> {
    let y = tape.matmul(x, var(vars, &format!("{name}.w")))?;
    tape.add(y, var(vars, &format!("{name}.b")))
}

/// Multi-head self-attention over a (seq_len, d_model) sequence. Returns
/// the output and the per-head attention weight matrices.
pub fn mhsa(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    prefix: &str,
    x: Var,
    n_heads: usize,
) -> Result<(Var, Vec<Var>), TensorError> {
    let q = tape.matmul(x, var(vars, &format!("{prefix}.wq")))?;
    let k = tape.matmul(x, var(vars, &format!("{prefix}.wk")))?;
    let v = tape.matmul(x, var(vars, &format!("{prefix}.wv")))?;
    let q_heads = tape.split(q, 1, n_heads)?;
    let k_heads = tape.split(k, 1, n_heads)?;
    let v_heads = tape.split(v, 1, n_heads)?;
    let head_width = tape.value(q_heads[0]).shape()[1];
    let scale = 1.0 / (head_width as f64).sqrt();
    let mut outs = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let kt = tape.transpose(k_heads[h])?;
        let scores = tape.matmul(q_heads[h], kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_last(scores)?;
        weights.push(attn);
        outs.push(tape.matmul(attn, v_heads[h])?);
    }
    let merged = tape.concat(&outs, 1)?;
    let out = tape.matmul(merged, var(vars, &format!("{prefix}.wo")))?;
    Ok((out, weights))
}

/// Single-direction tanh recurrent layer of width d_model, the
/// attention-ablation substitute.
fn recurrent(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    prefix: &str,
    x: Var,
) -> Result<Var, TensorError> {
    let shape = tape.value(x).shape().to_vec();
    let (seq_len, d) = (shape[0], shape[1]);
    let rows = tape.split(x, 0, seq_len)?;
    let wx = var(vars, &format!("{prefix}.wx"));
    let wh = var(vars, &format!("{prefix}.wh"));
    let b = var(vars, &format!("{prefix}.b"));
    let mut h = tape.constant(Tensor::zeros(vec![1, d]));
    let mut outs = Vec::with_capacity(seq_len);
    for row in rows {
        let xin = tape.matmul(row, wx)?;
        let hin = tape.matmul(h, wh)?;
        let sum = tape.add(xin, hin)?;
        let sum = tape.add(sum, b)?;
        h = tape.tanh(sum);
        outs.push(h);
    }
    tape.concat(&outs, 0)
}

/// One residual layer: two fused-and-attended branches summed, gated
/// sigmoid/tanh fusion over the two chunks, output projection, and the
/// residual connection back onto the layer input.
fn residual_layer(
    tape: &mut Tape,
    cfg: &EstimatorConfig,
    vars: &BTreeMap<String, Var>,
    layer: usize,
    xt_emb: Var,
    t_emb: Var,
    cond_emb: Var,
) -> Result<(Var, Var), TensorError> {
    let p = format!("layer{layer:02}");
    let seq = |tape: &mut Tape, input: Var, fc: &str, branch: &str| -> Result<Var, TensorError> {
        let fused = linear(tape, input, vars, &format!("{p}.{fc}"))?;
        if cfg.use_attention {
            Ok(mhsa(tape, vars, &format!("{p}.attn_{branch}"), fused, cfg.n_heads)?.0)
        } else {
            recurrent(tape, vars, &format!("{p}.rnn_{branch}"), fused)
        }
    };
    let x_in = tape.add(xt_emb, t_emb)?;
    let x_branch = seq(tape, x_in, "fc_x", "x")?;
    let c_branch = seq(tape, cond_emb, "fc_c", "c")?;
    let total = tape.add(x_branch, c_branch)?;
    let chunk_in = linear(tape, total, vars, &format!("{p}.fc_chunk"))?;
    let chunks = tape.split(chunk_in, 1, 2)?;
    let gate = tape.sigmoid(chunks[0]);
    let content = tape.tanh(chunks[1]);
    let gated = tape.mul(gate, content)?;
    let x_output = linear(tape, gated, vars, &format!("{p}.fc_out"))?;
    let x_res = tape.add(x_output, xt_emb)?;
    Ok((x_res, x_output))
}

/// Full forward pass on an existing tape. `xt` and `cond_load` are
/// (seq_len, 1) columns, `date` a one-hot vector. Returns the estimated
/// noise as a length-seq_len vector node.
pub fn forward(
    tape: &mut Tape,
    cfg: &EstimatorConfig,
    vars: &BTreeMap<String, Var>,
    xt: Var,
    t: usize,
    cond_load: Var,
    date: Var,
) -> Result<Var, ModelError> {
    let pe = tape.constant(positional_encoding(cfg.seq_len, cfg.d_model)?);
    let t_emb = tape.constant(Tensor::vector(timestep_embedding(t as f64, cfg.d_model)?));

    let lift = |tape: &mut Tape, x: Var, name: &str| -> Result<Var, TensorError> {
        let fc = linear(tape, x, vars, name)?;
        tape.add(fc, pe)
    };
    let xt_emb = lift(tape, xt, "embed.xt")?;
    let cond_load_emb = lift(tape, cond_load, "embed.cond_load")?;
    let date_emb = linear(tape, date, vars, "embed.date")?;
    // Condition embeddings fuse once and feed every layer.
    let cond_emb = tape.add(cond_load_emb, date_emb)?;

    let mut x = xt_emb;
    let mut skips = Vec::with_capacity(cfg.n_layers);
    for layer in 0..cfg.n_layers {
        let (x_res, x_output) = residual_layer(tape, cfg, vars, layer, x, t_emb, cond_emb)?;
        x = x_res;
        skips.push(x_output);
    }
    let head_in = if cfg.use_skip_connections {
        tape.concat(&skips, 1)?
    } else {
        *skips.last().expect("n_layers >= 1")
    };
    let out = linear(tape, head_in, vars, "head")?;
    Ok(tape.reshape(out, vec![cfg.seq_len])?)
}

/// Convenience single-shot evaluation outside any training graph.
pub fn estimate_noise(
    cfg: &EstimatorConfig,
    params: &ParamSet,
    xt: &[f64],
    t: usize,
    condition: &Condition,
) -> Result<Vec<f64>, ModelError> {
    if xt.len() != cfg.seq_len {
        return Err(ModelError::BadInputLength {
            expected: cfg.seq_len,
            got: xt.len(),
        });
    }
    if condition.typical_load.len() != cfg.seq_len {
        return Err(ModelError::BadInputLength {
            expected: cfg.seq_len,
            got: condition.typical_load.len(),
        });
    }
    let mut tape = Tape::new();
    let vars = param_leaves(&mut tape, params);
    let xt_var = tape.constant(Tensor::new(vec![cfg.seq_len, 1], xt.to_vec())?);
    let load_var = tape.constant(Tensor::new(
        vec![cfg.seq_len, 1],
        condition.typical_load.clone(),
    )?);
    let date_var = tape.constant(Tensor::vector(date_onehot(condition.date)));
    let out = forward(&mut tape, cfg, &vars, xt_var, t, load_var, date_var)?;
    Ok(tape.value(out).data().to_vec())
}
