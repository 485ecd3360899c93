//! Multi-round training: cohort selection, the round state machine for each
//! scheme, abort handling and transcript recording.

mod secure;
mod transcript;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{finish_round, quantize_model, AggregationError, OptimizerConfig, OptimizerState};
use crate::fedcore::{
    evaluate_model, local_train, ClientDataset, FedError, GazeSample, ModelShape, ModelVector,
    Population, TrainConfig,
};
use crate::field::{Codec, Field, FieldElement, FieldError, FieldParams, FixedPointCodec};
use crate::seed::derive_seed;
use crate::sharing::{Abort, AbortReason, Dealer, SharingError};
use crate::simnet::{
    AdversaryError, AdversarySpec, CommMetrics, EdgeBytes, FrameError, MsgType, Network, Party,
    WireMessage,
};

pub use secure::{distribute_keys, receive_keys, run_secure_sum, secure_sum, SecureSumParams};
pub use transcript::{CodecSpec, EventRecord, OutputRecord, RoundTranscript, TranscriptHeader, UpdateRecord};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("the run already aborted")]
    Aborted,
    #[error("malformed transcript: {0}")]
    Transcript(String),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "datacentre")]
    Datacentre,
    #[serde(rename = "adaptive_fl")]
    AdaptiveFl,
    #[serde(rename = "privateyes")]
    PrivatEyes,
    /// Nothing runs; only the communication cost model applies.
    #[serde(rename = "mpc_cost_only")]
    GenericMpc,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Datacentre => "datacentre",
            Scheme::AdaptiveFl => "adaptive_fl",
            Scheme::PrivatEyes => "privateyes",
            Scheme::GenericMpc => "mpc_cost_only",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "datacentre" | "datacenter" => Scheme::Datacentre,
            "adaptive_fl" | "adaptive-fl" => Scheme::AdaptiveFl,
            "privateyes" => Scheme::PrivatEyes,
            "mpc_cost_only" | "generic_mpc" | "mpc" => Scheme::GenericMpc,
            other => return Err(ProtocolError::Config(format!("unknown scheme {other:?}"))),
        })
    }
}

/// The default codec: `q = 2^127 - 1` with 16 fractional bits.
pub fn default_codec() -> Codec {
    let params = FieldParams::new(Field::mersenne127(), 16).expect("fits");
    Codec::FixedPoint(FixedPointCodec::new(params))
}

#[derive(Clone, Debug)]
pub struct ProtocolConfig {
    pub scheme: Scheme,
    /// Number of MPC servers; schemes without MPC use one server.
    pub servers: usize,
    pub codec: Codec,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub seed: u64,
    /// Standard deviation of the seeded initial model.
    pub init_scale: f64,
    pub timeout_steps: u32,
    /// Keep serialized frame bytes in the transcript.
    pub keep_frames: bool,
    /// Keep plaintext updates in the transcript's ground-truth section.
    pub record_ground_truth: bool,
}

impl ProtocolConfig {
    pub fn new(scheme: Scheme) -> Self {
        ProtocolConfig {
            scheme,
            servers: if scheme == Scheme::PrivatEyes { 3 } else { 1 },
            codec: default_codec(),
            optimizer: OptimizerConfig::default(),
            train: TrainConfig::default(),
            seed: 1,
            init_scale: 0.1,
            timeout_steps: 4,
            keep_frames: true,
            record_ground_truth: true,
        }
    }

    fn header(&self, clients: u32, shape: ModelShape, adversary: &AdversarySpec) -> TranscriptHeader {
        let codec = match &self.codec {
            Codec::FixedPoint(c) => CodecSpec {
                modulus: c.params().field().modulus(),
                f_bits: Some(c.params().f_bits()),
            },
            Codec::Integer(f) => CodecSpec {
                modulus: f.modulus(),
                f_bits: None,
            },
        };
        TranscriptHeader {
            scheme: self.scheme,
            servers: self.servers,
            clients,
            rounds: self.train.rounds,
            shape,
            codec,
            optimizer: self.optimizer,
            train: self.train.clone(),
            seed: self.seed,
            adversary: adversary.clone(),
        }
    }
}

/// `ceil(fraction * n)` distinct client ids, sorted, deterministic in
/// `(seed, round)`.
pub fn select_cohort(n: u32, fraction: f64, round: u32, seed: u64) -> Result<Vec<u32>, ProtocolError> {
    if n == 0 {
        return Err(ProtocolError::Config("no clients".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ProtocolError::Config(format!("cohort fraction {fraction} outside (0, 1]")));
    }
    let size = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    if size == n as usize {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &[0x636f_686f, round as u64]));
    let mut ids: Vec<u32> = rand::seq::index::sample(&mut rng, n as usize, size)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Where client updates come from.
pub trait UpdateSource {
    fn clients(&self) -> u32;

    /// Client `client`'s individual update in `round`, starting from `model`.
    fn local_update(
        &self,
        client: u32,
        round: u32,
        model: &ModelVector,
        train: &TrainConfig,
        seed: u64,
    ) -> Result<ModelVector, ProtocolError>;

    /// Raw round data, for the data-centre scheme.
    fn raw_data(&self, _client: u32, _round: u32) -> Option<&ClientDataset> {
        None
    }

    fn test_set(&self) -> Option<&[ClientDataset]> {
        None
    }
}

impl UpdateSource for Population {
    fn clients(&self) -> u32 {
        self.spec.clients
    }

    fn local_update(
        &self,
        client: u32,
        round: u32,
        model: &ModelVector,
        train: &TrainConfig,
        seed: u64,
    ) -> Result<ModelVector, ProtocolError> {
        let data = self.raw_data(client, round).ok_or_else(|| {
            ProtocolError::Config(format!("population has no data for client {client} in round {round}"))
        })?;
        Ok(local_train(model, data, train, seed)?)
    }

    fn raw_data(&self, client: u32, round: u32) -> Option<&ClientDataset> {
        self.rounds
            .get(round.checked_sub(1)? as usize)?
            .get(client as usize)
    }

    fn test_set(&self) -> Option<&[ClientDataset]> {
        Some(&self.test)
    }
}

/// Updates given up front, keyed by `(round, client)`.
#[derive(Clone, Debug, Default)]
pub struct FixedUpdates {
    pub clients: u32,
    pub updates: BTreeMap<(u32, u32), Vec<f64>>,
}

impl UpdateSource for FixedUpdates {
    fn clients(&self) -> u32 {
        self.clients
    }

    fn local_update(
        &self,
        client: u32,
        round: u32,
        model: &ModelVector,
        _train: &TrainConfig,
        _seed: u64,
    ) -> Result<ModelVector, ProtocolError> {
        let w = self.updates.get(&(round, client)).ok_or_else(|| {
            ProtocolError::Config(format!("no update for client {client} in round {round}"))
        })?;
        Ok(ModelVector::new(model.shape(), w.clone())?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Broadcast,
    LocalTrain,
    Input,
    Aggregate,
    Open,
    Done,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: u32,
    pub cohort: Vec<u32>,
    pub phase: Phase,
    /// Every phase entered this round, in order.
    pub trace: Vec<Phase>,
    pub abort: Option<AbortReason>,
}

impl RoundState {
    fn start(round: u32, cohort: Vec<u32>) -> Self {
        RoundState {
            round,
            cohort,
            phase: Phase::Broadcast,
            trace: vec![Phase::Broadcast],
            abort: None,
        }
    }

    fn advance(&mut self, to: Phase) {
        assert!(to > self.phase, "phase {:?} after {:?}", to, self.phase);
        assert!(self.phase != Phase::Aborted, "aborted is terminal");
        self.phase = to;
        self.trace.push(to);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    /// Mean test angular error of the model held after the round, degrees.
    pub test_error: Option<f64>,
    pub fairness_spread: Option<f64>,
    pub bytes: EdgeBytes,
    pub aborted: bool,
}

#[derive(Clone, Debug)]
pub enum RoundOutcome {
    Completed(ModelVector),
    Aborted(Abort),
}

pub struct TrainingRun {
    pub final_model: ModelVector,
    pub transcript: RoundTranscript,
    pub metrics: Vec<RoundMetrics>,
    pub comm: CommMetrics,
    pub abort: Option<(u32, Abort)>,
}

pub struct Engine<'a, S: UpdateSource + ?Sized> {
    source: &'a S,
    cfg: ProtocolConfig,
    net: Network,
    dealer: Option<Dealer>,
    key_shares: Vec<FieldElement>,
    model: ModelVector,
    opt: OptimizerState,
    transcript: RoundTranscript,
    metrics: Vec<RoundMetrics>,
    state: Option<RoundState>,
    completed: u32,
    abort: Option<(u32, Abort)>,
}

impl<'a, S: UpdateSource + ?Sized> Engine<'a, S> {
    pub fn new(
        source: &'a S,
        shape: ModelShape,
        cfg: ProtocolConfig,
        adversary: AdversarySpec,
    ) -> Result<Self, ProtocolError> {
        cfg.train.validate()?;
        if source.clients() == 0 {
            return Err(ProtocolError::Config("no clients".into()));
        }
        match cfg.scheme {
            Scheme::PrivatEyes => {
                if cfg.servers < 2 {
                    return Err(ProtocolError::Config("privateyes needs at least two servers".into()));
                }
                adversary.validate(cfg.servers)?;
            }
            Scheme::AdaptiveFl | Scheme::Datacentre => {
                if cfg.servers != 1 {
                    return Err(ProtocolError::Config(format!("{} runs on a single server", cfg.scheme)));
                }
                if adversary.behavior.is_active() {
                    return Err(ProtocolError::Config(format!(
                        "active adversaries only apply to privateyes, not {}",
                        cfg.scheme
                    )));
                }
            }
            Scheme::GenericMpc => {
                return Err(ProtocolError::Config("mpc_cost_only has no training run".into()));
            }
        }
        if cfg.scheme == Scheme::Datacentre && source.raw_data(0, 1).is_none() && cfg.train.rounds > 0 {
            return Err(ProtocolError::Config("the data-centre scheme needs raw data".into()));
        }
        let field = cfg.codec.field();
        let om0 = ModelVector::random(shape, derive_seed(cfg.seed, &[0x6f6d_30]), cfg.init_scale);
        let om0 = quantize_model(om0, &cfg.codec)?;
        let mut net = Network::new(field, adversary.clone());
        if !cfg.keep_frames {
            net = net.without_frame_bytes();
        }
        let dealer = match cfg.scheme {
            Scheme::PrivatEyes => Some(Dealer::new(field, cfg.servers, derive_seed(cfg.seed, &[0x6465_616c]))?),
            _ => None,
        };
        let header = cfg.header(source.clients(), shape, &adversary);
        Ok(Engine {
            source,
            opt: OptimizerState::new(cfg.optimizer, shape.dim()),
            transcript: RoundTranscript::new(header, &om0),
            model: om0,
            cfg,
            net,
            dealer,
            key_shares: Vec::new(),
            metrics: Vec::new(),
            state: None,
            completed: 0,
            abort: None,
        })
    }

    pub fn model(&self) -> &ModelVector {
        &self.model
    }

    pub fn state(&self) -> Option<&RoundState> {
        self.state.as_ref()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn completed_rounds(&self) -> u32 {
        self.completed
    }

    fn all_clients(&self) -> Vec<u32> {
        (0..self.source.clients()).collect()
    }

    fn evaluate(&self) -> Result<(Option<f64>, Option<f64>), ProtocolError> {
        match self.source.test_set() {
            Some(test) if !test.is_empty() => {
                let ev = evaluate_model(&self.model, test)?;
                Ok((Some(ev.mean_error), Some(ev.fairness_spread())))
            }
            _ => Ok((None, None)),
        }
    }

    fn encode_model(&self) -> Result<Vec<FieldElement>, ProtocolError> {
        Ok(self.cfg.codec.encode_vec(self.model.weights())?)
    }

    /// Server 0 sends the current model to `clients`; each client decodes it.
    fn broadcast_model(&mut self, round: u32, clients: &[u32]) -> Result<(), ProtocolError> {
        let encoded = self.encode_model()?;
        for &c in clients {
            self.net.send(WireMessage::with_elements(
                MsgType::BroadcastModel,
                round,
                Party::Server(0).wire_id(),
                Party::Client(c).wire_id(),
                &encoded,
            ));
        }
        self.net.run(self.cfg.timeout_steps);
        let field = self.net.field();
        for &c in clients {
            let d = self
                .net
                .wait_for(Party::Client(c), MsgType::BroadcastModel, Some(Party::Server(0)), self.cfg.timeout_steps)
                .ok_or_else(|| ProtocolError::Transcript(format!("client {c} missed the model broadcast")))?;
            let decoded = d
                .msg
                .elements(field)?
                .into_iter()
                .map(|e| self.cfg.codec.decode(e))
                .collect::<Result<Vec<_>, _>>()?;
            if decoded != self.model.weights() {
                return Err(ProtocolError::Transcript(format!("client {c} decoded a different model")));
            }
        }
        Ok(())
    }

    /// Runs the next round. Returns the new model, or the abort that ended
    /// the run.
    pub fn run_round(&mut self) -> Result<RoundOutcome, ProtocolError> {
        if self.abort.is_some() {
            return Err(ProtocolError::Aborted);
        }
        let k = self.completed + 1;
        if k > self.cfg.train.rounds {
            return Err(ProtocolError::Config(format!(
                "round {k} exceeds the configured {} rounds",
                self.cfg.train.rounds
            )));
        }
        let n_clients = self.source.clients();
        let cohort = match self.cfg.scheme {
            Scheme::Datacentre => self.all_clients(),
            _ => select_cohort(n_clients, self.cfg.train.cohort_fraction, k, self.cfg.seed)?,
        };
        let mut state = RoundState::start(k, cohort.clone());
        let outcome = match self.cfg.scheme {
            Scheme::PrivatEyes => self.privateyes_round(k, &cohort, &mut state)?,
            Scheme::AdaptiveFl => self.adaptive_fl_round(k, &cohort, &mut state)?,
            Scheme::Datacentre => self.datacentre_round(k, &mut state)?,
            Scheme::GenericMpc => unreachable!("rejected at construction"),
        };
        match &outcome {
            RoundOutcome::Completed(model) => {
                state.advance(Phase::Done);
                self.model = model.clone();
                self.completed = k;
                self.transcript.outputs.push(OutputRecord {
                    round: k,
                    weights: model.weights().to_vec(),
                });
                self.transcript.events.push(EventRecord::RoundDone { round: k, cohort });
            }
            RoundOutcome::Aborted(a) => {
                state.advance(Phase::Aborted);
                state.abort = Some(a.reason);
                self.abort = Some((k, a.clone()));
                self.transcript.events.push(EventRecord::Abort {
                    round: k,
                    reason: a.reason,
                    detail: a.detail.clone(),
                });
            }
        }
        let (test_error, fairness_spread) = self.evaluate()?;
        self.metrics.push(RoundMetrics {
            round: k,
            test_error,
            fairness_spread,
            bytes: self.net.metrics().round(k),
            aborted: matches!(outcome, RoundOutcome::Aborted(_)),
        });
        self.state = Some(state);
        Ok(outcome)
    }

    fn train_cohort(&mut self, k: u32, cohort: &[u32]) -> Result<Vec<(u32, Vec<f64>)>, ProtocolError> {
        let mut out = Vec::with_capacity(cohort.len());
        for &j in cohort {
            let iu = self
                .source
                .local_update(j, k, &self.model, &self.cfg.train, self.cfg.seed)?;
            let iu = quantize_model(iu, &self.cfg.codec)?;
            if self.cfg.record_ground_truth {
                self.transcript.ground_truth.push(UpdateRecord {
                    round: k,
                    client: j,
                    weights: iu.weights().to_vec(),
                });
            }
            out.push((j, iu.into_weights()));
        }
        Ok(out)
    }

    fn privateyes_round(
        &mut self,
        k: u32,
        cohort: &[u32],
        state: &mut RoundState,
    ) -> Result<RoundOutcome, ProtocolError> {
        let everyone = self.all_clients();
        if k == 1 {
            let dealer = self.dealer.as_ref().expect("privateyes has a dealer");
            distribute_keys(&mut self.net, dealer, k);
            self.net.run(self.cfg.timeout_steps);
            match receive_keys(&mut self.net, self.cfg.servers, self.cfg.timeout_steps) {
                Ok(keys) => self.key_shares = keys,
                Err(a) => return Ok(RoundOutcome::Aborted(a)),
            }
            self.broadcast_model(k, &everyone)?;
        }
        state.advance(Phase::LocalTrain);
        let updates = self.train_cohort(k, cohort)?;
        let inputs = updates
            .iter()
            .map(|(j, w)| Ok((*j, self.cfg.codec.encode_vec(w)?)))
            .collect::<Result<Vec<_>, FieldError>>()?;
        state.advance(Phase::Input);
        state.advance(Phase::Aggregate);
        state.advance(Phase::Open);
        let params = SecureSumParams {
            round: k,
            session_seed: derive_seed(self.cfg.seed, &[0x7365_7373]),
            timeout_steps: self.cfg.timeout_steps,
            recipients: &everyone,
            mask_shift: None,
        };
        let dealer = self.dealer.as_mut().expect("privateyes has a dealer");
        match secure_sum(&mut self.net, dealer, &self.key_shares, &inputs, &params) {
            Ok(sum) => {
                let (w, next) = finish_round(&self.model, &sum, cohort.len(), &self.cfg.codec, &self.opt)?;
                self.opt = next;
                Ok(RoundOutcome::Completed(w))
            }
            Err(a) => Ok(RoundOutcome::Aborted(a)),
        }
    }

    fn adaptive_fl_round(
        &mut self,
        k: u32,
        cohort: &[u32],
        state: &mut RoundState,
    ) -> Result<RoundOutcome, ProtocolError> {
        let everyone = self.all_clients();
        if k == 1 {
            self.broadcast_model(k, &everyone)?;
        }
        state.advance(Phase::LocalTrain);
        let updates = self.train_cohort(k, cohort)?;
        state.advance(Phase::Input);
        for (j, w) in &updates {
            let encoded = self.cfg.codec.encode_vec(w)?;
            self.net.send(WireMessage::with_elements(
                MsgType::ShareUpload,
                k,
                Party::Client(*j).wire_id(),
                Party::Server(0).wire_id(),
                &encoded,
            ));
        }
        self.net.run(self.cfg.timeout_steps);
        state.advance(Phase::Aggregate);
        let field = self.net.field();
        let mut sum = vec![field.zero(); self.model.dim()];
        for &j in cohort {
            let d = self
                .net
                .wait_for(Party::Server(0), MsgType::ShareUpload, Some(Party::Client(j)), self.cfg.timeout_steps)
                .ok_or_else(|| ProtocolError::Transcript(format!("update of client {j} lost")))?;
            let v = d.msg.elements(field)?;
            if v.len() != sum.len() {
                return Err(ProtocolError::Transcript(format!("update of client {j} has wrong length")));
            }
            for (acc, x) in sum.iter_mut().zip(v) {
                *acc += x;
            }
        }
        state.advance(Phase::Open);
        let (w, next) = finish_round(&self.model, &sum, cohort.len(), &self.cfg.codec, &self.opt)?;
        self.opt = next;
        self.model = w.clone();
        self.broadcast_model(k, &everyone)?;
        Ok(RoundOutcome::Completed(w))
    }

    fn datacentre_round(&mut self, k: u32, state: &mut RoundState) -> Result<RoundOutcome, ProtocolError> {
        state.advance(Phase::LocalTrain);
        state.advance(Phase::Input);
        let clients = self.all_clients();
        for &j in &clients {
            let data = self.source.raw_data(j, k).ok_or_else(|| {
                ProtocolError::Config(format!("no raw data for client {j} in round {k}"))
            })?;
            self.net.send(WireMessage::new(
                MsgType::ShareUpload,
                k,
                Party::Client(j).wire_id(),
                Party::Server(0).wire_id(),
                samples_to_bytes(&data.samples),
            ));
        }
        self.net.run(self.cfg.timeout_steps);
        state.advance(Phase::Aggregate);
        let d_in = self.model.shape().d_in();
        let mut pooled = Vec::new();
        for &j in &clients {
            let d = self
                .net
                .wait_for(Party::Server(0), MsgType::ShareUpload, Some(Party::Client(j)), self.cfg.timeout_steps)
                .ok_or_else(|| ProtocolError::Transcript(format!("data of client {j} lost")))?;
            pooled.extend(samples_from_bytes(&d.msg.payload, d_in)?);
        }
        let data = ClientDataset {
            client: u32::MAX,
            round: k,
            samples: pooled,
            profile: None,
        };
        state.advance(Phase::Open);
        let w = local_train(&self.model, &data, &self.cfg.train, self.cfg.seed)?;
        let w = quantize_model(w, &self.cfg.codec)?;
        if k == self.cfg.train.rounds {
            self.model = w.clone();
            self.broadcast_model(k, &clients)?;
        }
        Ok(RoundOutcome::Completed(w))
    }

    pub fn finish(self) -> TrainingRun {
        let comm = self.net.metrics().clone();
        let mut transcript = self.transcript;
        transcript.frames = self.net.into_log();
        TrainingRun {
            final_model: self.model,
            transcript,
            metrics: self.metrics,
            comm,
            abort: self.abort,
        }
    }
}

/// Runs `t` rounds or until an abort. The transcript and metrics cover
/// everything that happened either way.
pub fn run_training<S: UpdateSource + ?Sized>(
    source: &S,
    shape: ModelShape,
    cfg: ProtocolConfig,
    adversary: AdversarySpec,
) -> Result<TrainingRun, ProtocolError> {
    let rounds = cfg.train.rounds;
    let mut engine = Engine::new(source, shape, cfg, adversary)?;
    for _ in 0..rounds {
        if let RoundOutcome::Aborted(_) = engine.run_round()? {
            break;
        }
    }
    Ok(engine.finish())
}

/// Raw sample upload: per sample, features then pitch and yaw, as f64 LE.
pub fn samples_to_bytes(samples: &[GazeSample]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in samples {
        for &x in s.features.iter().chain(&s.gaze) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn samples_from_bytes(bytes: &[u8], d_in: usize) -> Result<Vec<GazeSample>, ProtocolError> {
    let width = 8 * (d_in + 2);
    if bytes.len() % width != 0 {
        return Err(ProtocolError::Transcript(format!(
            "{} raw bytes is not a whole number of {d_in}-feature samples",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(width)
        .map(|c| {
            let v: Vec<f64> = c
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            GazeSample {
                features: v[..d_in].to_vec(),
                gaze: [v[d_in], v[d_in + 1]],
            }
        })
        .collect())
}
