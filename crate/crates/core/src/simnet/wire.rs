//! Frame layout (all integers little-endian):
//!
//! | bytes | field                                  |
//! |-------|----------------------------------------|
//! | 2     | magic `"PE"`                           |
//! | 1     | version, currently 1                   |
//! | 1     | message type                           |
//! | 4     | round                                  |
//! | 4     | sender id                              |
//! | 4     | receiver id                            |
//! | 8     | payload length in bytes                |
//! | n     | payload                                |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldElement};

pub const MAGIC: [u8; 2] = *b"PE";
pub const VERSION: u8 = 1;
/// Fixed part of every frame, length field included.
pub const HEADER_LEN: usize = 24;
pub const ELEMENT_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame shorter than its header ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("length field says {declared} payload bytes, frame carries {actual}")]
    BadLength { declared: u64, actual: usize },
    #[error("payload of {0} bytes is not a whole number of field elements")]
    NotElements(usize),
    #[error("payload element is not canonical")]
    NonCanonical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[repr(u8)]
pub enum MsgType {
    BroadcastModel = 0,
    InputEpsilon = 1,
    ShareUpload = 2,
    OpenShare = 3,
    Commit = 4,
    Reveal = 5,
    Abort = 6,
    MaskDelivery = 7,
}

impl TryFrom<u8> for MsgType {
    type Error = FrameError;

    fn try_from(b: u8) -> Result<Self, FrameError> {
        Ok(match b {
            0 => MsgType::BroadcastModel,
            1 => MsgType::InputEpsilon,
            2 => MsgType::ShareUpload,
            3 => MsgType::OpenShare,
            4 => MsgType::Commit,
            5 => MsgType::Reveal,
            6 => MsgType::Abort,
            7 => MsgType::MaskDelivery,
            other => return Err(FrameError::UnknownType(other)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub round: u32,
    pub sender: u32,
    pub receiver: u32,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(msg_type: MsgType, round: u32, sender: u32, receiver: u32, payload: Vec<u8>) -> Self {
        WireMessage {
            msg_type,
            round,
            sender,
            receiver,
            payload,
        }
    }

    pub fn with_elements(
        msg_type: MsgType,
        round: u32,
        sender: u32,
        receiver: u32,
        elements: &[FieldElement],
    ) -> Self {
        let mut payload = Vec::with_capacity(elements.len() * ELEMENT_LEN);
        for e in elements {
            payload.extend_from_slice(&e.to_le_bytes());
        }
        WireMessage::new(msg_type, round, sender, receiver, payload)
    }

    /// Interprets the payload as a sequence of 16-byte field elements.
    pub fn elements(&self, field: Field) -> Result<Vec<FieldElement>, FrameError> {
        elements_from_bytes(&self.payload, field)
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

pub fn elements_from_bytes(bytes: &[u8], field: Field) -> Result<Vec<FieldElement>, FrameError> {
    if bytes.len() % ELEMENT_LEN != 0 {
        return Err(FrameError::NotElements(bytes.len()));
    }
    bytes
        .chunks_exact(ELEMENT_LEN)
        .map(|c| {
            field
                .from_le_bytes(c.try_into().expect("chunk of 16"))
                .map_err(|_| FrameError::NonCanonical)
        })
        .collect()
}

pub fn encode_message(m: &WireMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.frame_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(m.msg_type as u8);
    out.extend_from_slice(&m.round.to_le_bytes());
    out.extend_from_slice(&m.sender.to_le_bytes());
    out.extend_from_slice(&m.receiver.to_le_bytes());
    out.extend_from_slice(&(m.payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&m.payload);
    out
}

pub fn decode_message(bytes: &[u8]) -> Result<WireMessage, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Truncated(bytes.len()));
    }
    let magic = [bytes[0], bytes[1]];
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    if bytes[2] != VERSION {
        return Err(FrameError::BadVersion(bytes[2]));
    }
    let msg_type = MsgType::try_from(bytes[3])?;
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let declared = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let actual = bytes.len() - HEADER_LEN;
    if declared != actual as u64 {
        return Err(FrameError::BadLength { declared, actual });
    }
    Ok(WireMessage {
        msg_type,
        round: u32_at(4),
        sender: u32_at(8),
        receiver: u32_at(12),
        payload: bytes[HEADER_LEN..].to_vec(),
    })
}
