//! Server-side summation of shared updates, client-side averaging, the
//! adaptive server optimizer applied to the revealed aggregate, and the
//! plaintext pipelines the secure path must agree with.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fedcore::{local_train, ClientDataset, FedError, ModelVector, TrainConfig};
use crate::field::{Codec, FieldElement, FieldError};
use crate::sharing::{linear_combine_local, AuthShare, SharingError};

#[derive(Debug, Error)]
pub enum AggregationError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty cohort")]
    EmptyCohort,
    #[error("non-finite value in optimizer input")]
    NonFinite,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Fed(#[from] FedError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMode {
    /// FedAdam-style moments.
    Adaptive,
    /// `w <- w_prev + eta * delta`.
    FedAvg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
    pub mode: OptimizerMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            eta: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            tau: 1e-3,
            mode: OptimizerMode::Adaptive,
        }
    }
}

impl OptimizerConfig {
    /// Plain averaging: the new model is the cohort average.
    pub fn plain_average() -> Self {
        OptimizerConfig {
            eta: 1.0,
            mode: OptimizerMode::FedAvg,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Rounds applied so far.
    pub round: u32,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, dim: usize) -> Self {
        OptimizerState {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            round: 0,
        }
    }
}

/// Component-wise sum of every cohort client's authenticated shares held by
/// one server. Purely local.
pub fn server_aggregate_shares(
    per_client: &[Vec<AuthShare>],
) -> Result<Vec<AuthShare>, AggregationError> {
    let first = per_client.first().ok_or(AggregationError::EmptyCohort)?;
    let dim = first.len();
    if let Some(bad) = per_client.iter().find(|v| v.len() != dim) {
        return Err(AggregationError::Dimension(format!(
            "client vector of length {} in a cohort of dimension {dim}",
            bad.len()
        )));
    }
    let Some(s0) = first.first() else {
        return Ok(Vec::new());
    };
    let ones = vec![s0.value.field().one(); per_client.len()];
    (0..dim)
        .map(|l| {
            let column: Vec<AuthShare> = per_client.iter().map(|v| v[l]).collect();
            Ok(linear_combine_local(&column, &ones)?)
        })
        .collect()
}

/// Decodes an opened sum and divides by the cohort size in real arithmetic.
pub fn client_average(
    opened_sum: &[FieldElement],
    cohort_size: usize,
    codec: &Codec,
) -> Result<Vec<f64>, AggregationError> {
    if cohort_size == 0 {
        return Err(AggregationError::EmptyCohort);
    }
    opened_sum
        .iter()
        .map(|&e| Ok(codec.decode(e)? / cohort_size as f64))
        .collect()
}

/// `m <- b1 m + (1-b1) d; v <- b2 v + (1-b2) d^2; w <- w + eta m / (sqrt(v) + tau)`.
pub fn adaptive_step(
    w_prev: &ModelVector,
    delta: &[f64],
    state: &OptimizerState,
) -> Result<(ModelVector, OptimizerState), AggregationError> {
    let dim = w_prev.dim();
    if delta.len() != dim || state.m.len() != dim || state.v.len() != dim {
        return Err(AggregationError::Dimension(format!(
            "model {dim}, delta {}, moments {}/{}",
            delta.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if delta.iter().any(|d| !d.is_finite()) {
        return Err(AggregationError::NonFinite);
    }
    let c = state.config;
    let mut next = state.clone();
    next.round += 1;
    let mut w = w_prev.weights().to_vec();
    match c.mode {
        OptimizerMode::Adaptive => {
            for i in 0..dim {
                next.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * delta[i];
                next.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * delta[i] * delta[i];
                w[i] += c.eta * next.m[i] / (next.v[i].sqrt() + c.tau);
            }
        }
        OptimizerMode::FedAvg => {
            for i in 0..dim {
                w[i] += c.eta * delta[i];
            }
        }
    }
    let model = ModelVector::new(w_prev.shape(), w).map_err(|_| AggregationError::NonFinite)?;
    Ok((model, next))
}

/// Recovers the averaged delta from two consecutive public models.
///
/// Adaptive mode solves `eta * m(d) / (sqrt(v(d)) + tau) = w_new - w_prev`
/// per coordinate. Squaring gives a quadratic in `d`; of the roots that
/// satisfy the unsquared equation the one closest to zero is returned.
pub fn invert_adaptive_step(
    w_prev: &[f64],
    w_new: &[f64],
    state: &OptimizerState,
) -> Result<Vec<f64>, AggregationError> {
    let dim = w_prev.len();
    if w_new.len() != dim || state.m.len() != dim || state.v.len() != dim {
        return Err(AggregationError::Dimension("inversion inputs".into()));
    }
    let c = state.config;
    (0..dim)
        .map(|i| {
            let target = w_new[i] - w_prev[i];
            match c.mode {
                OptimizerMode::FedAvg => Ok(target / c.eta),
                OptimizerMode::Adaptive => invert_coordinate(target, state.m[i], state.v[i], &c)
                    .ok_or(AggregationError::NonFinite),
            }
        })
        .collect()
}

fn invert_coordinate(target: f64, m: f64, v: f64, c: &OptimizerConfig) -> Option<f64> {
    let step = |d: f64| {
        let m = c.beta1 * m + (1.0 - c.beta1) * d;
        let v = c.beta2 * v + (1.0 - c.beta2) * d * d;
        c.eta * m / (v.sqrt() + c.tau)
    };
    let u = target / c.eta;
    let alpha = 1.0 - c.beta1;
    let gamma = 1.0 - c.beta2;
    let k = c.beta1 * m - u * c.tau;
    let b = c.beta2 * v;
    // (alpha d + k)^2 = u^2 (b + gamma d^2), with alpha d + k sharing the sign of u.
    let qa = alpha * alpha - u * u * gamma;
    let qb = 2.0 * alpha * k;
    let qc = k * k - u * u * b;
    let mut roots = Vec::with_capacity(2);
    if qa.abs() < 1e-300 {
        if qb != 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let t = -0.5 * (qb + qb.signum() * sq);
            if t != 0.0 {
                roots.push(t / qa);
                roots.push(qc / t);
            } else {
                roots.push(0.0);
            }
        } else if disc > -1e-12 * qb * qb {
            roots.push(-qb / (2.0 * qa));
        }
    }
    let scale = target.abs().max(1e-12);
    roots
        .into_iter()
        .filter(|d| d.is_finite())
        .map(|d| polish(d, target, &step))
        .filter(|&d| (step(d) - target).abs() <= 1e-6 * scale)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
}

fn polish(d: f64, target: f64, step: &impl Fn(f64) -> f64) -> f64 {
    let f = |x: f64| step(x) - target;
    let mut h = 1e-12 * d.abs().max(1e-6);
    while h < 1e-2 * d.abs().max(1.0) {
        let (mut lo, mut hi) = (d - h, d + h);
        if f(lo).signum() != f(hi).signum() {
            let up = f(hi) > 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (f(mid) > 0.0) == up {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        h *= 4.0;
    }
    d
}

/// Rounds a model onto the codec's grid so that it can be broadcast exactly.
/// Integer mode carries models unchanged.
pub fn quantize_model(w: ModelVector, codec: &Codec) -> Result<ModelVector, AggregationError> {
    match codec {
        Codec::Integer(_) => Ok(w),
        Codec::FixedPoint(c) => {
            let shape = w.shape();
            let q = w
                .into_weights()
                .into_iter()
                .map(|x| c.quantize(x))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ModelVector::new(shape, q)?)
        }
    }
}

/// Public post-processing shared by every federated scheme: average, step,
/// quantize.
pub fn finish_round(
    w_prev: &ModelVector,
    opened_sum: &[FieldElement],
    cohort_size: usize,
    codec: &Codec,
    state: &OptimizerState,
) -> Result<(ModelVector, OptimizerState), AggregationError> {
    let avg = client_average(opened_sum, cohort_size, codec)?;
    if avg.len() != w_prev.dim() {
        return Err(AggregationError::Dimension(format!(
            "aggregate of length {} for a model of dimension {}",
            avg.len(),
            w_prev.dim()
        )));
    }
    let delta: Vec<f64> = avg.iter().zip(w_prev.weights()).map(|(a, w)| a - w).collect();
    let (w, next) = adaptive_step(w_prev, &delta, state)?;
    Ok((quantize_model(w, codec)?, next))
}

/// Plaintext field sum of encoded updates.
pub fn encoded_sum(updates: &[Vec<f64>], codec: &Codec) -> Result<Vec<FieldElement>, AggregationError> {
    let first = updates.first().ok_or(AggregationError::EmptyCohort)?;
    let field = codec.field();
    let mut sum = vec![field.zero(); first.len()];
    for u in updates {
        if u.len() != sum.len() {
            return Err(AggregationError::Dimension("update lengths differ".into()));
        }
        for (acc, &x) in sum.iter_mut().zip(u) {
            *acc += codec.encode(x)?;
        }
    }
    Ok(sum)
}

/// Insecure single-server pipeline: `ius[k]` holds the round-`k+1` updates of
/// the cohort. Returns `OM_1..OM_t`.
pub fn plaintext_adaptive_fl_oracle(
    om0: &ModelVector,
    ius: &[Vec<Vec<f64>>],
    optimizer: OptimizerConfig,
    codec: &Codec,
) -> Result<Vec<ModelVector>, AggregationError> {
    let mut state = OptimizerState::new(optimizer, om0.dim());
    let mut w = om0.clone();
    let mut out = Vec::with_capacity(ius.len());
    for round in ius {
        let sum = encoded_sum(round, codec)?;
        let (next, s) = finish_round(&w, &sum, round.len(), codec, &state)?;
        w = next;
        state = s;
        out.push(w.clone());
    }
    Ok(out)
}

/// One training run on pooled data.
pub fn plaintext_datacentre_oracle(
    init: &ModelVector,
    pooled: &ClientDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelVector, AggregationError> {
    Ok(local_train(init, pooled, cfg, seed)?)
}
