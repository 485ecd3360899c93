use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ClientDataset, FedError, GazeSample};
use crate::seed::derive_seed;

/// Architecture of a gaze regressor mapping `d_in` features to `(pitch, yaw)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelShape {
    /// `g = W f + c`. Weights: `W` row-major (`2 x d_in`), then `c`.
    Linear { d_in: usize },
    /// `g = W2 tanh(W1 f + b1) + b2`. Weights: `W1`, `b1`, `W2`, `b2`, row-major.
    Hidden { d_in: usize, width: usize },
}

impl ModelShape {
    pub fn dim(&self) -> usize {
        match *self {
            ModelShape::Linear { d_in } => 2 * d_in + 2,
            ModelShape::Hidden { d_in, width } => width * d_in + width + 2 * width + 2,
        }
    }

    pub fn d_in(&self) -> usize {
        match *self {
            ModelShape::Linear { d_in } | ModelShape::Hidden { d_in, .. } => d_in,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    shape: ModelShape,
    weights: Vec<f64>,
}

impl ModelVector {
    pub fn new(shape: ModelShape, weights: Vec<f64>) -> Result<Self, FedError> {
        if weights.len() != shape.dim() {
            return Err(FedError::Shape(format!(
                "{} weights for a model of dimension {}",
                weights.len(),
                shape.dim()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(FedError::Shape("non-finite weight".into()));
        }
        Ok(ModelVector { shape, weights })
    }

    pub fn zeros(shape: ModelShape) -> Self {
        ModelVector {
            shape,
            weights: vec![0.0; shape.dim()],
        }
    }

    /// Seeded Gaussian weights with standard deviation `scale`.
    pub fn random(shape: ModelShape, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let weights = (0..shape.dim())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        ModelVector { shape, weights }
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn predict(&self, x: &[f64]) -> Result<[f64; 2], FedError> {
        let d_in = self.shape.d_in();
        if x.len() != d_in {
            return Err(FedError::Shape(format!(
                "{} features for a model expecting {d_in}",
                x.len()
            )));
        }
        let w = &self.weights;
        Ok(match self.shape {
            ModelShape::Linear { d_in } => {
                let mut out = [w[2 * d_in], w[2 * d_in + 1]];
                for (o, v) in out.iter_mut().enumerate() {
                    *v += dot(&w[o * d_in..(o + 1) * d_in], x);
                }
                out
            }
            ModelShape::Hidden { d_in, width } => {
                let h = hidden_activations(w, d_in, width, x);
                let off2 = width * d_in + width;
                let mut out = [w[off2 + 2 * width], w[off2 + 2 * width + 1]];
                for (o, v) in out.iter_mut().enumerate() {
                    *v += dot(&w[off2 + o * width..off2 + (o + 1) * width], &h);
                }
                out
            }
        })
    }

    /// Mean of `0.5 * |pred - gaze|^2` over `batch`; writes the gradient into `grad`.
    pub fn loss_and_grad(&self, batch: &[&GazeSample], grad: &mut [f64]) -> Result<f64, FedError> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if batch.is_empty() {
            return Ok(0.0);
        }
        let inv = 1.0 / batch.len() as f64;
        let w = &self.weights;
        let mut loss = 0.0;
        for s in batch {
            let pred = self.predict(&s.features)?;
            let r = [pred[0] - s.gaze[0], pred[1] - s.gaze[1]];
            loss += 0.5 * (r[0] * r[0] + r[1] * r[1]);
            match self.shape {
                ModelShape::Linear { d_in } => {
                    for o in 0..2 {
                        for (g, &xi) in grad[o * d_in..(o + 1) * d_in].iter_mut().zip(&s.features) {
                            *g += inv * r[o] * xi;
                        }
                        grad[2 * d_in + o] += inv * r[o];
                    }
                }
                ModelShape::Hidden { d_in, width } => {
                    let h = hidden_activations(w, d_in, width, &s.features);
                    let off2 = width * d_in + width;
                    for o in 0..2 {
                        for k in 0..width {
                            grad[off2 + o * width + k] += inv * r[o] * h[k];
                        }
                        grad[off2 + 2 * width + o] += inv * r[o];
                    }
                    for k in 0..width {
                        let back = r[0] * w[off2 + k] + r[1] * w[off2 + width + k];
                        let dz = back * (1.0 - h[k] * h[k]) * inv;
                        for (i, &xi) in s.features.iter().enumerate() {
                            grad[k * d_in + i] += dz * xi;
                        }
                        grad[width * d_in + k] += dz;
                    }
                }
            }
        }
        Ok(loss * inv)
    }

    /// Mean loss over `samples`.
    pub fn loss(&self, samples: &[GazeSample]) -> Result<f64, FedError> {
        let refs: Vec<&GazeSample> = samples.iter().collect();
        let mut scratch = vec![0.0; self.dim()];
        self.loss_and_grad(&refs, &mut scratch)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hidden_activations(w: &[f64], d_in: usize, width: usize, x: &[f64]) -> Vec<f64> {
    (0..width)
        .map(|k| (dot(&w[k * d_in..(k + 1) * d_in], x) + w[width * d_in + k]).tanh())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub rounds: u32,
    pub cohort_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2,
            lr: 0.05,
            batch_size: 5,
            rounds: 10,
            cohort_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FedError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(FedError::Config("batch size must be positive".into()));
        }
        if !(self.cohort_fraction > 0.0 && self.cohort_fraction <= 1.0) {
            return Err(FedError::Config(format!(
                "cohort fraction {} must lie in (0, 1]",
                self.cohort_fraction
            )));
        }
        Ok(())
    }

    /// Gradient steps one local training run takes on `samples` samples.
    pub fn steps_for(&self, samples: usize) -> usize {
        self.epochs * samples.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelVector,
    /// Full-data loss before training followed by the loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent with a seeded shuffle per epoch.
pub fn train_samples(
    w: &ModelVector,
    samples: &[GazeSample],
    cfg: &TrainConfig,
    stream_seed: u64,
) -> Result<TrainOutcome, FedError> {
    cfg.validate()?;
    let mut model = w.clone();
    let mut grad = vec![0.0; model.dim()];
    let initial = model.loss(samples)?;
    if !initial.is_finite() {
        return Err(FedError::Divergence { epoch: 0 });
    }
    let mut epoch_losses = vec![initial];
    if samples.is_empty() {
        return Ok(TrainOutcome {
            model,
            epoch_losses,
        });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(stream_seed, &[epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&GazeSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let l = model.loss_and_grad(&batch, &mut grad)?;
            if !l.is_finite() {
                return Err(FedError::Divergence { epoch: epoch + 1 });
            }
            for (wi, gi) in model.weights.iter_mut().zip(&grad) {
                *wi -= cfg.lr * gi;
            }
        }
        let l = model.loss(samples)?;
        if !l.is_finite() || model.weights.iter().any(|v| !v.is_finite()) {
            return Err(FedError::Divergence { epoch: epoch + 1 });
        }
        epoch_losses.push(l);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}

/// A client's individual update for one round.
pub fn local_train(
    w: &ModelVector,
    data: &ClientDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelVector, FedError> {
    if let Some(s) = data.samples.first() {
        if s.features.len() != w.shape().d_in() {
            return Err(FedError::Shape(format!(
                "dataset has {} features, model expects {}",
                s.features.len(),
                w.shape().d_in()
            )));
        }
    }
    let stream = derive_seed(seed, &[0x6c74, data.client as u64, data.round as u64]);
    Ok(train_samples(w, &data.samples, cfg, stream)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedcore::{gen_synthetic_population, PopulationSpec};
    use rand::Rng;

    fn linear() -> ModelShape {
        ModelShape::Linear { d_in: 8 }
    }

    fn random_sample(rng: &mut ChaCha20Rng, d_in: usize) -> GazeSample {
        GazeSample {
            features: (0..d_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            gaze: [rng.gen_range(-0.5..0.5), rng.gen_range(-0.8..0.8)],
        }
    }

    #[test]
    fn dimensions() {
        assert_eq!(linear().dim(), 18);
        assert_eq!(ModelShape::Hidden { d_in: 8, width: 16 }.dim(), 178);
        assert!(ModelVector::new(linear(), vec![0.0; 17]).is_err());
        assert!(ModelVector::new(linear(), vec![f64::NAN; 18]).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let pop = gen_synthetic_population(&PopulationSpec::default()).unwrap();
        let w = ModelVector::random(linear(), 3, 0.1);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert_eq!(local_train(&w, &pop.rounds[0][0], &cfg, 1).unwrap(), w);
    }

    #[test]
    fn single_sample_step_matches_closed_form() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let s = random_sample(&mut rng, 8);
        let w = ModelVector::random(linear(), 5, 0.3);
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.1,
            batch_size: 1,
            ..Default::default()
        };
        let out = train_samples(&w, std::slice::from_ref(&s), &cfg, 0).unwrap().model;
        // Analytic least-squares gradient: dW = r f^T, dc = r.
        let ww = w.weights();
        let mut expected = ww.to_vec();
        for o in 0..2 {
            let pred = ww[16 + o] + (0..8).map(|i| ww[o * 8 + i] * s.features[i]).sum::<f64>();
            let r = pred - s.gaze[o];
            for i in 0..8 {
                expected[o * 8 + i] -= 0.1 * r * s.features[i];
            }
            expected[16 + o] -= 0.1 * r;
        }
        for (a, b) in out.weights().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn full_batch_loss_is_non_increasing() {
        let pop = gen_synthetic_population(&PopulationSpec::default()).unwrap();
        let samples = pop.client_samples(2);
        let cfg = TrainConfig {
            epochs: 30,
            lr: 0.05,
            batch_size: samples.len(),
            ..Default::default()
        };
        let w = ModelVector::random(linear(), 9, 0.1);
        let trace = train_samples(&w, &samples, &cfg, 1).unwrap().epoch_losses;
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0], "{trace:?}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let pop = gen_synthetic_population(&PopulationSpec::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            lr: 50.0,
            batch_size: 10,
            ..Default::default()
        };
        let w = ModelVector::random(linear(), 9, 0.1);
        assert!(matches!(
            local_train(&w, &pop.rounds[0][0], &cfg, 1),
            Err(FedError::Divergence { .. })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let pop = gen_synthetic_population(&PopulationSpec::default()).unwrap();
        let w = ModelVector::random(linear(), 9, 0.1);
        let cfg = TrainConfig::default();
        let a = local_train(&w, &pop.rounds[1][3], &cfg, 42).unwrap();
        let b = local_train(&w, &pop.rounds[1][3], &cfg, 42).unwrap();
        assert_eq!(a, b);
    }

    fn fd_check(shape: ModelShape, seed: u64) {
        // Central finite differences on the loss of one sample, relative error < 1e-5.
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let s = random_sample(&mut rng, shape.d_in());
            let w = ModelVector::random(shape, rng.gen(), 0.5);
            let mut grad = vec![0.0; w.dim()];
            w.loss_and_grad(&[&s], &mut grad).unwrap();
            let h = 1e-6;
            let mut num = vec![0.0; w.dim()];
            for k in 0..w.dim() {
                let mut plus = w.clone();
                plus.weights[k] += h;
                let mut minus = w.clone();
                minus.weights[k] -= h;
                num[k] = (plus.loss(std::slice::from_ref(&s)).unwrap()
                    - minus.loss(std::slice::from_ref(&s)).unwrap())
                    / (2.0 * h);
            }
            let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / norm.max(1e-12) < 1e-5, "relative error {}", diff / norm);
        }
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        fd_check(linear(), 31);
    }

    #[test]
    fn hidden_gradient_matches_finite_differences() {
        fd_check(ModelShape::Hidden { d_in: 8, width: 16 }, 32);
    }
}
