use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ProtocolError, Scheme};
use crate::aggregation::OptimizerConfig;
use crate::fedcore::{ModelShape, ModelVector, TrainConfig};
use crate::field::{Codec, Field, FieldParams, FixedPointCodec};
use crate::sharing::AbortReason;
use crate::simnet::{AdversarySpec, FrameRecord, Party};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecSpec {
    #[serde(with = "crate::u128_str")]
    pub modulus: u128,
    /// `None` for integer mode.
    pub f_bits: Option<u32>,
}

impl CodecSpec {
    pub fn codec(&self) -> Result<Codec, ProtocolError> {
        let field = Field::new(self.modulus)?;
        Ok(match self.f_bits {
            Some(f) => Codec::FixedPoint(FixedPointCodec::new(FieldParams::new(field, f)?)),
            None => Codec::Integer(field),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub scheme: Scheme,
    pub servers: usize,
    pub clients: u32,
    pub rounds: u32,
    pub shape: ModelShape,
    pub codec: CodecSpec,
    pub optimizer: OptimizerConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub adversary: AdversarySpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub round: u32,
    pub weights: Vec<f64>,
}

/// A client's plaintext update, kept outside every party's view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub round: u32,
    pub client: u32,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EventRecord {
    RoundDone { round: u32, cohort: Vec<u32> },
    Abort { round: u32, reason: AbortReason, detail: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTranscript {
    pub header: TranscriptHeader,
    pub initial_model: Vec<f64>,
    /// `OM_k`, one per completed round.
    pub outputs: Vec<OutputRecord>,
    /// Ground truth only: individual updates in plaintext.
    pub ground_truth: Vec<UpdateRecord>,
    pub frames: Vec<FrameRecord>,
    pub events: Vec<EventRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum Record {
    Header(TranscriptHeader),
    InitialModel { weights: Vec<f64> },
    Frame(FrameRecord),
    GroundTruth(UpdateRecord),
    Output(OutputRecord),
    Event(EventRecord),
}

impl RoundTranscript {
    pub fn new(header: TranscriptHeader, initial_model: &ModelVector) -> Self {
        RoundTranscript {
            header,
            initial_model: initial_model.weights().to_vec(),
            outputs: Vec::new(),
            ground_truth: Vec::new(),
            frames: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn initial(&self) -> Result<ModelVector, ProtocolError> {
        Ok(ModelVector::new(self.header.shape, self.initial_model.clone())?)
    }

    pub fn output_model(&self, round: u32) -> Option<ModelVector> {
        self.outputs
            .iter()
            .find(|o| o.round == round)
            .and_then(|o| ModelVector::new(self.header.shape, o.weights.clone()).ok())
    }

    /// The last model the clients hold: `OM_t`, or `OM_0` if nothing completed.
    pub fn final_model(&self) -> Result<ModelVector, ProtocolError> {
        match self.outputs.last() {
            Some(o) => Ok(ModelVector::new(self.header.shape, o.weights.clone())?),
            None => self.initial(),
        }
    }

    pub fn abort(&self) -> Option<(u32, AbortReason)> {
        self.events.iter().find_map(|e| match e {
            EventRecord::Abort { round, reason, .. } => Some((*round, *reason)),
            _ => None,
        })
    }

    pub fn completed_rounds(&self) -> u32 {
        self.events
            .iter()
            .filter(|e| matches!(e, EventRecord::RoundDone { .. }))
            .count() as u32
    }

    /// Frames one party sent or received.
    pub fn view_of(&self, party: Party) -> Vec<&FrameRecord> {
        self.frames
            .iter()
            .filter(|r| r.sender == party || (r.receiver == party && r.delivered))
            .collect()
    }

    /// Frames visible to the corrupted coalition.
    pub fn adversary_view(&self) -> Vec<&FrameRecord> {
        self.frames.iter().filter(|r| r.visible_to_adversary).collect()
    }

    /// One JSON record per line: header, initial model, frames, ground
    /// truth, outputs, events.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<(), ProtocolError> {
        let mut line = |r: &Record| -> Result<(), ProtocolError> {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
            Ok(())
        };
        line(&Record::Header(self.header.clone()))?;
        line(&Record::InitialModel {
            weights: self.initial_model.clone(),
        })?;
        for f in &self.frames {
            line(&Record::Frame(f.clone()))?;
        }
        for g in &self.ground_truth {
            line(&Record::GroundTruth(g.clone()))?;
        }
        for o in &self.outputs {
            line(&Record::Output(o.clone()))?;
        }
        for e in &self.events {
            line(&Record::Event(e.clone()))?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self, ProtocolError> {
        let mut header = None;
        let mut initial = None;
        let mut t = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Record>(&line)? {
                Record::Header(h) => header = Some(h),
                Record::InitialModel { weights } => initial = Some(weights),
                Record::Frame(f) => t.0.push(f),
                Record::GroundTruth(g) => t.1.push(g),
                Record::Output(o) => t.2.push(o),
                Record::Event(e) => t.3.push(e),
            }
        }
        let header = header.ok_or_else(|| ProtocolError::Transcript("missing header record".into()))?;
        let initial_model =
            initial.ok_or_else(|| ProtocolError::Transcript("missing initial model record".into()))?;
        Ok(RoundTranscript {
            header,
            initial_model,
            frames: t.0,
            ground_truth: t.1,
            outputs: t.2,
            events: t.3,
        })
    }
}
