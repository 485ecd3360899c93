//! Synthetic heterogeneous gaze-regression task and everything a client does
//! with it: local training and gaze-space evaluation.

mod data;
mod model;

use thiserror::Error;

pub use data::{
    gen_synthetic_population, read_csv, write_csv, ClientDataset, ClientProfile, GazeSample,
    Population, PopulationPrior, PopulationSpec,
};
pub use model::{
    local_train, train_samples, ModelShape, ModelVector, TrainConfig, TrainOutcome,
};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("malformed dataset file: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Unit gaze vector in the normalized camera frame.
pub fn gaze_to_vec(pitch: f64, yaw: f64) -> [f64; 3] {
    [pitch.cos() * yaw.sin(), pitch.sin(), pitch.cos() * yaw.cos()]
}

/// Angle between two gaze directions, in degrees.
pub fn angular_error(pred: [f64; 2], truth: [f64; 2]) -> f64 {
    let a = gaze_to_vec(pred[0], pred[1]);
    let b = gaze_to_vec(truth[0], truth[1]);
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean angular error over all test samples, degrees.
    pub mean_error: f64,
    /// Mean angular error per client, in client-id order.
    pub per_client: Vec<(u32, f64)>,
}

impl Evaluation {
    /// Max minus min of the per-client mean errors.
    pub fn fairness_spread(&self) -> f64 {
        let (lo, hi) = self
            .per_client
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, e)| {
                (lo.min(e), hi.max(e))
            });
        if self.per_client.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

pub fn evaluate_model(w: &ModelVector, test: &[ClientDataset]) -> Result<Evaluation, FedError> {
    let mut total = 0.0;
    let mut count = 0usize;
    let mut per_client: Vec<(u32, f64)> = Vec::new();
    for ds in test {
        if ds.samples.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for s in &ds.samples {
            sum += angular_error(w.predict(&s.features)?, s.gaze);
        }
        total += sum;
        count += ds.samples.len();
        per_client.push((ds.client, sum / ds.samples.len() as f64));
    }
    if count == 0 {
        return Err(FedError::EmptyTestSet);
    }
    per_client.sort_by_key(|&(c, _)| c);
    Ok(Evaluation {
        mean_error: total / count as f64,
        per_client,
    })
}
