//! What each training scheme hands an attacker, and how well a
//! gradient-matching reconstruction recovers each client's gaze
//! distribution from it.

pub mod cost;
pub mod dualview;
pub mod kde;

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{adaptive_step, invert_adaptive_step, AggregationError, OptimizerState};
use crate::fedcore::{angular_error, ClientDataset, FedError, ModelShape, ModelVector, Population, PopulationPrior};
use crate::protocol::{samples_from_bytes, ProtocolError, RoundTranscript, Scheme, TranscriptHeader};
use crate::seed::derive_seed;
use crate::simnet::wire::{decode_message, FrameError, MsgType};
use crate::simnet::Party;

pub use cost::{estimate_generic_mpc_cost, reference_cnn, CostReport, Layer, Passes};
pub use dualview::{AttackConfig, Theta};
pub use kde::{kde_kl_divergence, GridSpec};

use dualview::{cholesky, fit_update, PriorCentre, UpdateContext};

#[derive(Debug, Error)]
pub enum LeakError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// What everybody knows: the population law, the mixing map inside it and
/// the per-round sample count that fixes the number of local steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublicKnowledge {
    pub prior: PopulationPrior,
    pub samples_per_round: usize,
}

impl PublicKnowledge {
    pub fn of(pop: &Population) -> Self {
        PublicKnowledge {
            prior: pop.prior.clone(),
            samples_per_round: pop.spec.samples_per_round,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakKind {
    IndividualUpdate,
    OutputModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakedModel {
    pub round: u32,
    pub client: Option<u32>,
    pub kind: LeakKind,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageTranscript {
    pub scheme: Scheme,
    pub header: TranscriptHeader,
    pub public: PublicKnowledge,
    /// `OM_0`, broadcast before any client data is touched.
    pub initial_model: Vec<f64>,
    pub final_model: Vec<f64>,
    pub leak: Vec<LeakedModel>,
    /// Raw datasets, data-centre only.
    pub raw: Vec<ClientDataset>,
}

impl LeakageTranscript {
    pub fn individual_updates(&self) -> impl Iterator<Item = &LeakedModel> {
        self.leak.iter().filter(|m| m.kind == LeakKind::IndividualUpdate)
    }

    pub fn output_models(&self) -> impl Iterator<Item = &LeakedModel> {
        self.leak.iter().filter(|m| m.kind == LeakKind::OutputModel)
    }

    /// `OM_k`, with `OM_0` the initial model.
    fn output(&self, round: u32) -> Option<&[f64]> {
        if round == 0 {
            return Some(&self.initial_model);
        }
        self.output_models()
            .find(|m| m.round == round)
            .map(|m| m.weights.as_slice())
    }
}

/// Client-to-server upload frames as the server received them.
fn uploads(transcript: &RoundTranscript) -> Result<Vec<(u32, u32, Vec<u8>)>, LeakError> {
    let mut out = Vec::new();
    for f in &transcript.frames {
        let (Party::Client(j), Party::Server(0)) = (f.sender, f.receiver) else {
            continue;
        };
        if f.msg_type != MsgType::ShareUpload || !f.delivered {
            continue;
        }
        if f.bytes.is_empty() {
            return Err(LeakError::Unsupported("transcript was recorded without frame bytes".into()));
        }
        let msg = decode_message(&f.bytes)?;
        out.push((f.round, j, msg.payload));
    }
    Ok(out)
}

/// Carves the scheme's leakage set out of a transcript. Only records the
/// scheme's adversary can see are read; the ground-truth section never is.
pub fn build_leak_set(
    scheme: Scheme,
    transcript: &RoundTranscript,
    public: &PublicKnowledge,
) -> Result<LeakageTranscript, LeakError> {
    if transcript.header.scheme != scheme && scheme != Scheme::GenericMpc {
        return Err(LeakError::Unsupported(format!(
            "a {} transcript carries no {} leakage",
            transcript.header.scheme, scheme
        )));
    }
    let outputs = || {
        transcript.outputs.iter().map(|o| LeakedModel {
            round: o.round,
            client: None,
            kind: LeakKind::OutputModel,
            weights: o.weights.clone(),
        })
    };
    let mut leak = Vec::new();
    let mut raw = Vec::new();
    match scheme {
        Scheme::GenericMpc => {}
        Scheme::PrivatEyes => leak.extend(outputs()),
        Scheme::AdaptiveFl => {
            let codec = transcript.header.codec.codec()?;
            let field = codec.field();
            for (round, client, payload) in uploads(transcript)? {
                let weights = crate::simnet::wire::elements_from_bytes(&payload, field)?
                    .into_iter()
                    .map(|e| codec.decode(e))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(ProtocolError::from)?;
                leak.push(LeakedModel {
                    round,
                    client: Some(client),
                    kind: LeakKind::IndividualUpdate,
                    weights,
                });
            }
            leak.extend(outputs());
        }
        Scheme::Datacentre => {
            let d_in = transcript.header.shape.d_in();
            for (round, client, payload) in uploads(transcript)? {
                raw.push(ClientDataset {
                    client,
                    round,
                    samples: samples_from_bytes(&payload, d_in)?,
                    profile: None,
                });
            }
            raw.sort_by_key(|d| (d.client, d.round));
        }
    }
    Ok(LeakageTranscript {
        scheme,
        header: transcript.header.clone(),
        public: public.clone(),
        initial_model: transcript.initial_model.clone(),
        final_model: transcript.final_model()?.into_weights(),
        leak,
        raw,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientEstimate {
    pub client: u32,
    pub gaze_mean: [f64; 2],
    pub gaze_cov: [[f64; 2]; 2],
    pub offset: Vec<f64>,
    pub converged: bool,
    /// Degrees.
    pub mae: Option<f64>,
    pub kl: Option<f64>,
    /// Samples taken as the reconstruction verbatim instead of drawing
    /// from the estimated Gaussian.
    #[serde(skip)]
    pub samples: Option<Vec<[f64; 2]>>,
}

impl ClientEstimate {
    fn from_theta(client: u32, theta: &Theta, converged: bool) -> Self {
        ClientEstimate {
            client,
            gaze_mean: theta.mu,
            gaze_cov: theta.cov(),
            offset: theta.offset.clone(),
            converged,
            mae: None,
            kl: None,
            samples: None,
        }
    }

    /// Seeded draws from the estimated distribution. The stream depends on
    /// the client only, so every scheme is scored on the same noise.
    pub fn draw(&self, n: usize, seed: u64) -> Vec<[f64; 2]> {
        if let Some(s) = &self.samples {
            return s.clone();
        }
        let [l00, l10, l11] = cholesky(self.gaze_cov);
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &[0x6b6c, self.client as u64]));
        (0..n)
            .map(|_| {
                let z0: f64 = StandardNormal.sample(&mut rng);
                let z1: f64 = StandardNormal.sample(&mut rng);
                [self.gaze_mean[0] + l00 * z0, self.gaze_mean[1] + l10 * z0 + l11 * z1]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub scheme: Scheme,
    pub clients: Vec<ClientEstimate>,
    pub mean_mae: Option<f64>,
    pub mean_kl: Option<f64>,
    /// Every fit stopped at a stationary point within the step budget.
    pub converged: bool,
}

impl ReconstructionReport {
    /// Fills per-client MAE and KL against each client's training gazes
    /// across all rounds.
    pub fn score(&mut self, truth: &Population, cfg: &AttackConfig, grid: &GridSpec) -> Result<(), LeakError> {
        let (mut mae_sum, mut kl_sum) = (0.0, 0.0);
        for est in &mut self.clients {
            if est.client >= truth.spec.clients {
                return Err(LeakError::Dimension(format!("client {} is not in the population", est.client)));
            }
            let gazes: Vec<[f64; 2]> = truth.client_samples(est.client).iter().map(|s| s.gaze).collect();
            let true_mean = mean(&gazes);
            let mae = if est.gaze_mean == true_mean {
                0.0
            } else {
                angular_error(est.gaze_mean, true_mean)
            };
            let recon = est.draw(cfg.recon_samples, cfg.seed);
            let to_vecs = |xs: &[[f64; 2]]| xs.iter().map(|x| x.to_vec()).collect::<Vec<_>>();
            let kl = kde_kl_divergence(&to_vecs(&gazes), &to_vecs(&recon), grid)?;
            est.mae = Some(mae);
            est.kl = Some(kl);
            mae_sum += mae;
            kl_sum += kl;
        }
        let n = self.clients.len().max(1) as f64;
        self.mean_mae = Some(mae_sum / n);
        self.mean_kl = Some(kl_sum / n);
        Ok(())
    }
}

fn mean(xs: &[[f64; 2]]) -> [f64; 2] {
    let n = xs.len().max(1) as f64;
    let s = xs.iter().fold([0.0; 2], |a, x| [a[0] + x[0], a[1] + x[1]]);
    [s[0] / n, s[1] / n]
}

fn covariance(xs: &[[f64; 2]]) -> [[f64; 2]; 2] {
    let m = mean(xs);
    let n = (xs.len().max(2) - 1) as f64;
    let mut c = [[0.0; 2]; 2];
    for x in xs {
        let d = [x[0] - m[0], x[1] - m[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j] / n;
            }
        }
    }
    c
}

/// Gaze law of a client nobody has data on: the population mean with the
/// within-client and between-client spreads combined.
fn population_marginal(prior: &PopulationPrior) -> [[f64; 2]; 2] {
    let s2 = prior.gaze_mean_spread * prior.gaze_mean_spread;
    let mut cov = prior.gaze_cov;
    cov[0][0] += s2;
    cov[1][1] += s2;
    cov
}

/// Fits one parameter set to a sequence of `(start, leaked update)` pairs
/// in round order. With chaining each fit starts from, and is pulled
/// towards, the previous round's estimate; without it every round starts
/// from the population prior and the last round's fit is reported.
///
/// A `mixture` target is an average over clients. Its moments are those of
/// one Gaussian client whose gaze spread is the population marginal and
/// whose feature noise absorbs the spread of appearance offsets.
fn attack_sequence(
    units: &[(u32, &[f64], &[f64])],
    leak: &LeakageTranscript,
    cfg: &AttackConfig,
    mixture: bool,
) -> (Theta, bool) {
    let prior = &leak.public.prior;
    let mut population = PriorCentre::population(prior);
    let mut noise_std = prior.noise_std;
    let mut cfg = cfg.clone();
    if mixture {
        cfg.fit_covariance = false;
        // The between-client offset second moment of a finite cohort
        // departs from its population value, which the single-Gaussian
        // model cannot express; count that as extra mismatch.
        let cohort = (leak.header.train.cohort_fraction * leak.header.clients as f64).ceil().max(1.0);
        let spread2 = prior.offset_spread * prior.offset_spread;
        cfg.data_scale = cfg.data_scale.hypot(spread2 * (2.0 / cohort).sqrt());
        population.theta.chol = cholesky(population_marginal(prior));
        noise_std = noise_std.hypot(prior.offset_spread);
    }
    let mut centre = population.clone();
    let mut theta = population.theta.clone();
    let mut converged = true;
    let steps = leak.header.train.steps_for(leak.public.samples_per_round);
    for &(round, start, update) in units {
        if cfg.only_round.is_some_and(|r| r != round) {
            continue;
        }
        let ctx = UpdateContext {
            start,
            lr: leak.header.train.lr,
            steps,
            mixing: &prior.mixing,
            noise_std,
        };
        let init = if cfg.chain { theta.clone() } else { population.theta.clone() };
        let fit = fit_update(update, &ctx, &centre, &init, &cfg);
        converged &= fit.converged;
        theta = fit.theta;
        if cfg.chain {
            centre = centre.recentred(theta.clone());
        }
    }
    (theta, converged)
}

/// Runs the gradient-matching reconstruction on a leakage set. Scoring
/// against ground truth is a separate step, see
/// [`ReconstructionReport::score`].
pub fn dualview_lite_reconstruct(leak: &LeakageTranscript, cfg: &AttackConfig) -> Result<ReconstructionReport, LeakError> {
    cfg.validate()?;
    let prior = &leak.public.prior;
    let fitted = matches!(leak.scheme, Scheme::AdaptiveFl | Scheme::PrivatEyes);
    if fitted {
        match leak.header.shape {
            ModelShape::Linear { d_in } if d_in == prior.mixing.len() => {}
            ModelShape::Linear { d_in } => {
                return Err(LeakError::Dimension(format!(
                    "model has {d_in} inputs, the public mixing map {}",
                    prior.mixing.len()
                )))
            }
            shape => {
                return Err(LeakError::Unsupported(format!(
                    "reconstruction needs the linear model, got {shape:?}"
                )))
            }
        }
    }
    let om = |k: u32| {
        leak.output(k)
            .ok_or_else(|| LeakError::Dimension(format!("output model of round {k} missing from the leak")))
    };
    let mut clients = Vec::new();
    let mut converged = true;
    match leak.scheme {
        Scheme::Datacentre => {
            let mut by_client: BTreeMap<u32, Vec<[f64; 2]>> = BTreeMap::new();
            for ds in &leak.raw {
                by_client
                    .entry(ds.client)
                    .or_default()
                    .extend(ds.samples.iter().map(|s| s.gaze));
            }
            for (j, gazes) in by_client {
                clients.push(ClientEstimate {
                    client: j,
                    gaze_mean: mean(&gazes),
                    gaze_cov: covariance(&gazes),
                    offset: Vec::new(),
                    converged: true,
                    mae: None,
                    kl: None,
                    samples: Some(gazes),
                });
            }
        }
        Scheme::GenericMpc => {
            // Nothing but priors: report the population marginal.
            let cov = population_marginal(prior);
            for j in 0..leak.header.clients {
                clients.push(ClientEstimate {
                    client: j,
                    gaze_mean: prior.gaze_mean,
                    gaze_cov: cov,
                    offset: vec![0.0; prior.mixing.len()],
                    converged: true,
                    mae: None,
                    kl: None,
                    samples: None,
                });
            }
        }
        Scheme::AdaptiveFl => {
            let mut by_client: BTreeMap<u32, Vec<&LeakedModel>> = BTreeMap::new();
            for m in leak.individual_updates() {
                by_client.entry(m.client.expect("updates are labelled")).or_default().push(m);
            }
            for (j, mut ms) in by_client {
                ms.sort_by_key(|m| m.round);
                let units = ms
                    .iter()
                    .map(|m| Ok((m.round, om(m.round - 1)?, m.weights.as_slice())))
                    .collect::<Result<Vec<_>, LeakError>>()?;
                let (theta, ok) = attack_sequence(&units, leak, cfg, false);
                converged &= ok;
                clients.push(ClientEstimate::from_theta(j, &theta, ok));
            }
        }
        Scheme::PrivatEyes => {
            // Undo the public optimizer step to get each round's average
            // update, then fit one parameter set shared by everybody.
            let mut state = OptimizerState::new(leak.header.optimizer, leak.initial_model.len());
            let mut averages = Vec::new();
            let rounds = leak.output_models().map(|m| m.round).max().unwrap_or(0);
            for k in 1..=rounds {
                let (prev, next) = (om(k - 1)?, om(k)?);
                let delta = invert_adaptive_step(prev, next, &state)?;
                let prev_model = ModelVector::new(leak.header.shape, prev.to_vec())?;
                state = adaptive_step(&prev_model, &delta, &state)?.1;
                let avg: Vec<f64> = prev.iter().zip(&delta).map(|(w, d)| w + d).collect();
                averages.push((k, prev, avg));
            }
            let units: Vec<(u32, &[f64], &[f64])> = averages
                .iter()
                .map(|(k, prev, avg)| (*k, *prev, avg.as_slice()))
                .collect();
            let (theta, ok) = attack_sequence(&units, leak, cfg, true);
            converged = ok;
            for j in 0..leak.header.clients {
                clients.push(ClientEstimate::from_theta(j, &theta, ok));
            }
        }
    }
    Ok(ReconstructionReport {
        scheme: leak.scheme,
        clients,
        mean_mae: None,
        mean_kl: None,
        converged,
    })
}

/// Scheme x {MAE, KL}, six decimals.
pub fn write_leakage_table<W: Write>(reports: &[ReconstructionReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "scheme,mae_deg,kl")?;
    for r in reports {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(out, "{},{},{}", r.scheme, cell(r.mean_mae), cell(r.mean_kl))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedcore::{gen_synthetic_population, PopulationSpec, TrainConfig};
    use crate::protocol::{run_training, ProtocolConfig};
    use crate::simnet::AdversarySpec;

    fn run(scheme: Scheme, spec: &PopulationSpec, rounds: u32) -> (Population, RoundTranscript) {
        let pop = gen_synthetic_population(spec).unwrap();
        let mut cfg = ProtocolConfig::new(scheme);
        cfg.train.rounds = rounds;
        let shape = ModelShape::Linear { d_in: spec.d_in };
        let t = run_training(&pop, shape, cfg, AdversarySpec::honest()).unwrap().transcript;
        (pop, t)
    }

    #[test]
    fn leak_sets_have_the_right_sizes() {
        let spec = PopulationSpec::default();
        let public = PublicKnowledge::of(&gen_synthetic_population(&spec).unwrap());
        let (_, afl) = run(Scheme::AdaptiveFl, &spec, 10);
        let l = build_leak_set(Scheme::AdaptiveFl, &afl, &public).unwrap();
        assert_eq!(l.individual_updates().count(), 150);
        assert_eq!(l.output_models().count(), 10);
        let (_, pe) = run(Scheme::PrivatEyes, &spec, 10);
        let l = build_leak_set(Scheme::PrivatEyes, &pe, &public).unwrap();
        assert_eq!(l.individual_updates().count(), 0);
        assert_eq!(l.output_models().count(), 10);
        assert!(l.raw.is_empty());
        let l = build_leak_set(Scheme::GenericMpc, &pe, &public).unwrap();
        assert!(l.leak.is_empty());
        assert_eq!(l.final_model, pe.final_model().unwrap().into_weights());
    }

    #[test]
    fn adaptive_fl_updates_match_ground_truth() {
        let spec = PopulationSpec::default();
        let public = PublicKnowledge::of(&gen_synthetic_population(&spec).unwrap());
        let (_, afl) = run(Scheme::AdaptiveFl, &spec, 3);
        let l = build_leak_set(Scheme::AdaptiveFl, &afl, &public).unwrap();
        for m in l.individual_updates() {
            let g = afl
                .ground_truth
                .iter()
                .find(|g| g.round == m.round && Some(g.client) == m.client)
                .unwrap();
            assert_eq!(g.weights, m.weights);
        }
    }

    #[test]
    fn datacentre_is_perfect() {
        let spec = PopulationSpec {
            rounds: 3,
            ..Default::default()
        };
        let (pop, t) = run(Scheme::Datacentre, &spec, 3);
        let l = build_leak_set(Scheme::Datacentre, &t, &PublicKnowledge::of(&pop)).unwrap();
        assert_eq!(l.raw.len(), 45);
        let cfg = AttackConfig::default();
        let mut r = dualview_lite_reconstruct(&l, &cfg).unwrap();
        r.score(&pop, &cfg, &GridSpec::default()).unwrap();
        assert_eq!(r.mean_mae, Some(0.0));
        assert!(r.mean_kl.unwrap() < 1e-6);
    }

    #[test]
    fn single_sample_full_batch_update_inverts_in_closed_form() {
        // One sample, batch = data, one step: the gradient is (e f, e) with
        // residual e = W f + c - g, so f = grad_W / e and g = W f + c - e.
        // A single sample has no spread, which the attacker knows.
        let mut prior = PopulationPrior::for_spec(&PopulationSpec::default());
        prior.noise_std = 0.0;
        prior.gaze_cov = [[0.0; 2]; 2];
        let truth = Theta {
            mu: [0.2, -0.15],
            chol: [0.0; 3],
            offset: (0..8).map(|i| 0.3 * (i as f64 - 3.5) / 3.5).collect(),
        };
        let start = ModelVector::random(ModelShape::Linear { d_in: 8 }, 11, 0.3).into_weights();
        let train = TrainConfig {
            epochs: 1,
            lr: 0.05,
            batch_size: 1,
            ..Default::default()
        };
        let ctx = UpdateContext {
            start: &start,
            lr: train.lr,
            steps: 1,
            mixing: &prior.mixing,
            noise_std: 0.0,
        };
        let update = dualview::simulate_update(&truth, &ctx);
        let grad: Vec<f64> = start.iter().zip(&update).map(|(a, b)| (a - b) / train.lr).collect();
        let e = [grad[16], grad[17]];
        let f: Vec<f64> = (0..8).map(|i| grad[i] / e[0]).collect();
        let oracle: Vec<f64> = (0..2)
            .map(|r| (0..8).map(|i| start[r * 8 + i] * f[i]).sum::<f64>() + start[16 + r] - e[r])
            .collect();

        let mut header = run(Scheme::AdaptiveFl, &PopulationSpec::default(), 1).1.header;
        header.train = train;
        let leak = LeakageTranscript {
            scheme: Scheme::AdaptiveFl,
            header,
            public: PublicKnowledge {
                prior,
                samples_per_round: 1,
            },
            initial_model: start.clone(),
            final_model: update.clone(),
            leak: vec![LeakedModel {
                round: 1,
                client: Some(0),
                kind: LeakKind::IndividualUpdate,
                weights: update,
            }],
            raw: Vec::new(),
        };
        let cfg = AttackConfig {
            alpha: 0.0,
            steps: 300,
            fit_covariance: false,
            ..Default::default()
        };
        let r = dualview_lite_reconstruct(&leak, &cfg).unwrap();
        let mu = r.clients[0].gaze_mean;
        for k in 0..2 {
            let rel = (mu[k] - oracle[k]).abs() / oracle[k].abs();
            assert!(rel < 1e-3, "coordinate {k}: {} vs {}", mu[k], oracle[k]);
        }
    }

    #[test]
    fn prior_only_report_equals_the_prior() {
        let spec = PopulationSpec::default();
        let (pop, t) = run(Scheme::AdaptiveFl, &spec, 2);
        let l = build_leak_set(Scheme::AdaptiveFl, &t, &PublicKnowledge::of(&pop)).unwrap();
        let cfg = AttackConfig {
            beta: 0.0,
            gamma: 0.0,
            ..Default::default()
        };
        let r = dualview_lite_reconstruct(&l, &cfg).unwrap();
        let p = Theta::from_prior(&pop.prior);
        for c in &r.clients {
            assert_eq!(c.gaze_mean, p.mu);
            assert_eq!(c.offset, p.offset);
        }
    }

    #[test]
    fn privateyes_on_homogeneous_population_collapses_to_the_mean() {
        let spec = PopulationSpec {
            heterogeneity: 0.0,
            ..Default::default()
        };
        let (pop, t) = run(Scheme::PrivatEyes, &spec, 4);
        let l = build_leak_set(Scheme::PrivatEyes, &t, &PublicKnowledge::of(&pop)).unwrap();
        let r = dualview_lite_reconstruct(&l, &AttackConfig::default()).unwrap();
        let first = &r.clients[0];
        assert!(r.clients.iter().all(|c| c.gaze_mean == first.gaze_mean));
        for k in 0..2 {
            assert!((first.gaze_mean[k] - pop.prior.gaze_mean[k]).abs() < 0.05, "{:?}", first.gaze_mean);
        }
    }

    #[test]
    fn hidden_model_is_rejected() {
        let spec = PopulationSpec::default();
        let pop = gen_synthetic_population(&spec).unwrap();
        let mut cfg = ProtocolConfig::new(Scheme::AdaptiveFl);
        cfg.train.rounds = 1;
        let shape = ModelShape::Hidden { d_in: 8, width: 4 };
        let t = run_training(&pop, shape, cfg, AdversarySpec::honest()).unwrap().transcript;
        let l = build_leak_set(Scheme::AdaptiveFl, &t, &PublicKnowledge::of(&pop)).unwrap();
        assert!(matches!(
            dualview_lite_reconstruct(&l, &AttackConfig::default()),
            Err(LeakError::Unsupported(_))
        ));
    }

    #[test]
    fn table_layout() {
        let r = ReconstructionReport {
            scheme: Scheme::GenericMpc,
            clients: Vec::new(),
            mean_mae: Some(1.0),
            mean_kl: Some(0.25),
            converged: true,
        };
        let mut out = Vec::new();
        write_leakage_table(&[r], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "scheme,mae_deg,kl\nmpc_cost_only,1.000000,0.250000\n");
    }
}
