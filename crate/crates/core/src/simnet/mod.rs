//! Deterministic in-process network: serialized frames, a discrete-event
//! scheduler, a pluggable adversary and per-edge byte accounting.

pub mod wire;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::Field;

pub use wire::{
    decode_message, elements_from_bytes, encode_message, FrameError, MsgType, WireMessage,
    ELEMENT_LEN, HEADER_LEN, MAGIC, VERSION,
};

const CLIENT_BASE: u32 = 0x1000_0000;
const DEALER_ID: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "role", content = "index")]
pub enum Party {
    Server(u32),
    Client(u32),
    Dealer,
}

impl Party {
    pub fn wire_id(self) -> u32 {
        match self {
            Party::Server(i) => i,
            Party::Client(j) => CLIENT_BASE + j,
            Party::Dealer => DEALER_ID,
        }
    }

    pub fn from_wire_id(id: u32) -> Party {
        if id == DEALER_ID {
            Party::Dealer
        } else if id >= CLIENT_BASE {
            Party::Client(id - CLIENT_BASE)
        } else {
            Party::Server(id)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeClass {
    ClientToServer,
    ServerToClient,
    Dealer,
    ServerToServer,
    Other,
}

impl EdgeClass {
    pub fn of(sender: Party, receiver: Party) -> EdgeClass {
        match (sender, receiver) {
            (Party::Dealer, _) => EdgeClass::Dealer,
            (Party::Client(_), Party::Server(_)) => EdgeClass::ClientToServer,
            (Party::Server(_), Party::Client(_)) => EdgeClass::ServerToClient,
            (Party::Server(_), Party::Server(_)) => EdgeClass::ServerToServer,
            _ => EdgeClass::Other,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Behavior {
    /// Follows the protocol and records everything it sees.
    PassiveRecord,
    /// Adds `delta` to one coordinate of every opening share a corrupted
    /// server sends.
    TamperShare {
        coordinate: usize,
        #[serde(with = "crate::u128_str")]
        delta: u128,
    },
    /// Substitutes a client input: adds `delta` to one coordinate of every
    /// masked input a corrupted server receives.
    TamperEpsilon {
        coordinate: usize,
        #[serde(with = "crate::u128_str")]
        delta: u128,
    },
    /// Corrupted servers reveal something other than what they committed to.
    EquivocateCommit,
    /// Corrupted servers never deliver their opening shares.
    Withhold,
    /// Share tampering combined with a guessed correction to the corrupted
    /// servers' MAC-check values.
    ForgeSigma {
        coordinate: usize,
        #[serde(with = "crate::u128_str")]
        delta: u128,
        #[serde(with = "crate::u128_str")]
        sigma_guess: u128,
    },
}

impl Behavior {
    pub fn is_active(&self) -> bool {
        !matches!(self, Behavior::PassiveRecord)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarySpec {
    pub corrupted_servers: BTreeSet<u32>,
    pub corrupted_clients: BTreeSet<u32>,
    pub behavior: Behavior,
    /// Round in which an active behavior fires; `None` means every round.
    pub active_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdversaryError {
    #[error("{corrupted} of {servers} servers corrupted: at least one must stay honest")]
    NoHonestServer { corrupted: usize, servers: usize },
    #[error("server {0} does not exist")]
    UnknownServer(u32),
    #[error("an active behavior needs at least one corrupted server")]
    NobodyToAct,
}

impl AdversarySpec {
    pub fn honest() -> Self {
        AdversarySpec {
            corrupted_servers: BTreeSet::new(),
            corrupted_clients: BTreeSet::new(),
            behavior: Behavior::PassiveRecord,
            active_round: None,
        }
    }

    pub fn passive(servers: impl IntoIterator<Item = u32>, clients: impl IntoIterator<Item = u32>) -> Self {
        AdversarySpec {
            corrupted_servers: servers.into_iter().collect(),
            corrupted_clients: clients.into_iter().collect(),
            behavior: Behavior::PassiveRecord,
            active_round: None,
        }
    }

    pub fn active(servers: impl IntoIterator<Item = u32>, behavior: Behavior) -> Self {
        AdversarySpec {
            corrupted_servers: servers.into_iter().collect(),
            corrupted_clients: BTreeSet::new(),
            behavior,
            active_round: None,
        }
    }

    pub fn validate(&self, servers: usize) -> Result<(), AdversaryError> {
        if let Some(&s) = self.corrupted_servers.iter().find(|&&s| s as usize >= servers) {
            return Err(AdversaryError::UnknownServer(s));
        }
        if self.corrupted_servers.len() >= servers {
            return Err(AdversaryError::NoHonestServer {
                corrupted: self.corrupted_servers.len(),
                servers,
            });
        }
        if self.behavior.is_active() && self.corrupted_servers.is_empty() {
            return Err(AdversaryError::NobodyToAct);
        }
        Ok(())
    }

    pub fn is_corrupted(&self, party: Party) -> bool {
        match party {
            Party::Server(i) => self.corrupted_servers.contains(&i),
            Party::Client(j) => self.corrupted_clients.contains(&j),
            Party::Dealer => false,
        }
    }

    pub fn acts_in(&self, round: u32) -> bool {
        self.behavior.is_active() && self.active_round.map_or(true, |r| r == round)
    }

    /// Whether a frame between these parties lands in the coalition's view.
    pub fn sees(&self, sender: Party, receiver: Party) -> bool {
        self.is_corrupted(sender) || self.is_corrupted(receiver)
    }
}

/// Applies the adversary to one frame in transit. `None` means the frame is
/// dropped. Frames are returned untouched unless the spec says otherwise.
pub fn deliver_with_adversary(
    msg: WireMessage,
    spec: &AdversarySpec,
    field: Field,
) -> Option<WireMessage> {
    if !spec.acts_in(msg.round) {
        return Some(msg);
    }
    let sender = Party::from_wire_id(msg.sender);
    let receiver = Party::from_wire_id(msg.receiver);
    let from_corrupt_server = matches!(sender, Party::Server(_)) && spec.is_corrupted(sender);
    let server_to_server = EdgeClass::of(sender, receiver) == EdgeClass::ServerToServer;
    match &spec.behavior {
        Behavior::PassiveRecord => Some(msg),
        Behavior::TamperShare { coordinate, delta }
        | Behavior::ForgeSigma {
            coordinate, delta, ..
        } => {
            if msg.msg_type == MsgType::OpenShare && from_corrupt_server && server_to_server {
                Some(add_to_element(msg, *coordinate, *delta, field))
            } else {
                Some(msg)
            }
        }
        Behavior::TamperEpsilon { coordinate, delta } => {
            let to_corrupt_server = matches!(receiver, Party::Server(_)) && spec.is_corrupted(receiver);
            if msg.msg_type == MsgType::InputEpsilon && to_corrupt_server {
                Some(add_to_element(msg, *coordinate, *delta, field))
            } else {
                Some(msg)
            }
        }
        Behavior::EquivocateCommit => {
            if msg.msg_type == MsgType::Reveal && from_corrupt_server && !msg.payload.is_empty() {
                let mut msg = msg;
                msg.payload[0] ^= 0x01;
                Some(msg)
            } else {
                Some(msg)
            }
        }
        Behavior::Withhold => {
            if msg.msg_type == MsgType::OpenShare && from_corrupt_server && server_to_server {
                None
            } else {
                Some(msg)
            }
        }
    }
}

fn add_to_element(mut msg: WireMessage, coordinate: usize, delta: u128, field: Field) -> WireMessage {
    let at = coordinate * ELEMENT_LEN;
    if at + ELEMENT_LEN <= msg.payload.len() {
        let bytes: [u8; 16] = msg.payload[at..at + ELEMENT_LEN].try_into().expect("16 bytes");
        if let Ok(e) = field.from_le_bytes(bytes) {
            let shifted = e + field.element(delta % field.modulus());
            msg.payload[at..at + ELEMENT_LEN].copy_from_slice(&shifted.to_le_bytes());
        }
    }
    msg
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeBytes {
    pub client_to_server: u64,
    pub server_to_client: u64,
    pub dealer: u64,
    pub server_to_server: u64,
    pub other: u64,
}

impl EdgeBytes {
    pub fn add(&mut self, edge: EdgeClass, bytes: u64) {
        match edge {
            EdgeClass::ClientToServer => self.client_to_server += bytes,
            EdgeClass::ServerToClient => self.server_to_client += bytes,
            EdgeClass::Dealer => self.dealer += bytes,
            EdgeClass::ServerToServer => self.server_to_server += bytes,
            EdgeClass::Other => self.other += bytes,
        }
    }

    pub fn get(&self, edge: EdgeClass) -> u64 {
        match edge {
            EdgeClass::ClientToServer => self.client_to_server,
            EdgeClass::ServerToClient => self.server_to_client,
            EdgeClass::Dealer => self.dealer,
            EdgeClass::ServerToServer => self.server_to_server,
            EdgeClass::Other => self.other,
        }
    }

    pub fn total(&self) -> u64 {
        self.client_to_server + self.server_to_client + self.dealer + self.server_to_server + self.other
    }

    /// Bytes on edges that touch a client, including the dealer's traffic.
    pub fn client_facing(&self) -> u64 {
        self.client_to_server + self.server_to_client + self.dealer
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommMetrics {
    /// Frame bytes (header included) per round.
    pub per_round: BTreeMap<u32, EdgeBytes>,
    /// Payload bytes only, per round.
    pub payload_per_round: BTreeMap<u32, EdgeBytes>,
    pub frames: u64,
}

impl CommMetrics {
    pub fn record(&mut self, round: u32, edge: EdgeClass, frame_len: usize, payload_len: usize) {
        self.per_round.entry(round).or_default().add(edge, frame_len as u64);
        self.payload_per_round
            .entry(round)
            .or_default()
            .add(edge, payload_len as u64);
        self.frames += 1;
    }

    pub fn total(&self) -> EdgeBytes {
        sum_edges(self.per_round.values())
    }

    pub fn payload_total(&self) -> EdgeBytes {
        sum_edges(self.payload_per_round.values())
    }

    pub fn round(&self, round: u32) -> EdgeBytes {
        self.per_round.get(&round).copied().unwrap_or_default()
    }

    pub fn payload_round(&self, round: u32) -> EdgeBytes {
        self.payload_per_round.get(&round).copied().unwrap_or_default()
    }
}

fn sum_edges<'a>(it: impl Iterator<Item = &'a EdgeBytes>) -> EdgeBytes {
    let mut t = EdgeBytes::default();
    for e in it {
        t.client_to_server += e.client_to_server;
        t.server_to_client += e.server_to_client;
        t.dealer += e.dealer;
        t.server_to_server += e.server_to_server;
        t.other += e.other;
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub time: u64,
    pub seq: u64,
    pub round: u32,
    pub msg_type: MsgType,
    pub sender: Party,
    pub receiver: Party,
    pub edge: EdgeClass,
    pub sent_len: usize,
    pub delivered: bool,
    pub mutated: bool,
    pub visible_to_adversary: bool,
    /// Frame bytes as delivered, or as sent if dropped. Empty when the
    /// network does not keep frames.
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Sums the serialized lengths of the frames that were actually delivered.
pub fn account_bytes<'a>(records: impl IntoIterator<Item = &'a FrameRecord>) -> CommMetrics {
    let mut m = CommMetrics::default();
    for r in records.into_iter().filter(|r| r.delivered) {
        m.record(r.round, r.edge, r.sent_len, r.sent_len - HEADER_LEN);
    }
    m
}

struct Pending {
    time: u64,
    seq: u64,
    bytes: Vec<u8>,
    msg: WireMessage,
}

/// A frame sitting in a party's inbox.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivered {
    pub msg: WireMessage,
    pub bytes: Vec<u8>,
}

pub struct Network {
    field: Field,
    adversary: AdversarySpec,
    clock: u64,
    seq: u64,
    queue: Vec<Pending>,
    inboxes: BTreeMap<u32, Vec<Delivered>>,
    log: Vec<FrameRecord>,
    metrics: CommMetrics,
    keep_frames: bool,
}

impl Network {
    pub fn new(field: Field, adversary: AdversarySpec) -> Self {
        Network {
            field,
            adversary,
            clock: 0,
            seq: 0,
            queue: Vec::new(),
            inboxes: BTreeMap::new(),
            log: Vec::new(),
            metrics: CommMetrics::default(),
            keep_frames: true,
        }
    }

    /// Keeps only headers and lengths in the log, for large runs.
    pub fn without_frame_bytes(mut self) -> Self {
        self.keep_frames = false;
        self
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn adversary(&self) -> &AdversarySpec {
        &self.adversary
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Serializes and enqueues; delivery happens on the next `step`.
    pub fn send(&mut self, msg: WireMessage) {
        let bytes = encode_message(&msg);
        self.queue.push(Pending {
            time: self.clock + 1,
            seq: self.seq,
            bytes,
            msg,
        });
        self.seq += 1;
    }

    /// Advances the clock by one tick and delivers everything due, ordered by
    /// (time, sender, receiver, send order). Returns the number of frames
    /// that reached an inbox.
    pub fn step(&mut self) -> usize {
        self.clock += 1;
        let now = self.clock;
        let (mut due, rest): (Vec<Pending>, Vec<Pending>) =
            std::mem::take(&mut self.queue).into_iter().partition(|p| p.time <= now);
        self.queue = rest;
        due.sort_by_key(|p| (p.time, p.msg.sender, p.msg.receiver, p.seq));
        let mut delivered = 0;
        for p in due {
            let sender = Party::from_wire_id(p.msg.sender);
            let receiver = Party::from_wire_id(p.msg.receiver);
            let edge = EdgeClass::of(sender, receiver);
            let out = deliver_with_adversary(p.msg.clone(), &self.adversary, self.field);
            let (bytes, ok, mutated) = match out {
                Some(m) => {
                    let b = encode_message(&m);
                    let mutated = b != p.bytes;
                    self.inboxes.entry(m.receiver).or_default().push(Delivered {
                        msg: m,
                        bytes: b.clone(),
                    });
                    delivered += 1;
                    (b, true, mutated)
                }
                None => (p.bytes.clone(), false, true),
            };
            if ok {
                self.metrics
                    .record(p.msg.round, edge, bytes.len(), bytes.len() - HEADER_LEN);
            }
            self.log.push(FrameRecord {
                time: p.time,
                seq: p.seq,
                round: p.msg.round,
                msg_type: p.msg.msg_type,
                sender,
                receiver,
                edge,
                sent_len: bytes.len(),
                delivered: ok,
                mutated,
                visible_to_adversary: self.adversary.sees(sender, receiver),
                bytes: if self.keep_frames { bytes } else { Vec::new() },
            });
        }
        delivered
    }

    /// Steps until the queue is empty or `budget` ticks have passed.
    pub fn run(&mut self, budget: u32) {
        for _ in 0..budget {
            if self.queue.is_empty() {
                break;
            }
            self.step();
        }
    }

    /// Removes and returns the first frame in `party`'s inbox matching the
    /// filter.
    pub fn take(
        &mut self,
        party: Party,
        msg_type: MsgType,
        from: Option<Party>,
    ) -> Option<Delivered> {
        let inbox = self.inboxes.get_mut(&party.wire_id())?;
        let pos = inbox.iter().position(|d| {
            d.msg.msg_type == msg_type && from.map_or(true, |f| d.msg.sender == f.wire_id())
        })?;
        Some(inbox.remove(pos))
    }

    /// Waits up to `budget` ticks for a matching frame.
    pub fn wait_for(
        &mut self,
        party: Party,
        msg_type: MsgType,
        from: Option<Party>,
        budget: u32,
    ) -> Option<Delivered> {
        for _ in 0..=budget {
            if let Some(d) = self.take(party, msg_type, from) {
                return Some(d);
            }
            if self.queue.is_empty() {
                return None;
            }
            self.step();
        }
        None
    }

    /// The bytes a frame from `sender` of the given type carried when it was
    /// delivered in `round`. Lets a corrupted party see its own frames as the
    /// adversary left them.
    pub fn delivered_payload(&self, sender: Party, msg_type: MsgType, round: u32) -> Option<Vec<u8>> {
        self.log
            .iter()
            .rev()
            .find(|r| r.sender == sender && r.msg_type == msg_type && r.round == round && r.delivered)
            .and_then(|r| decode_message(&r.bytes).ok())
            .map(|m| m.payload)
    }

    pub fn clear_inboxes(&mut self) {
        self.inboxes.clear();
    }

    pub fn log(&self) -> &[FrameRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<FrameRecord> {
        self.log
    }

    pub fn metrics(&self) -> &CommMetrics {
        &self.metrics
    }

    /// Frames the corrupted coalition saw, in delivery order.
    pub fn adversary_view(&self) -> Vec<&FrameRecord> {
        self.log.iter().filter(|r| r.visible_to_adversary).collect()
    }

    /// Frames sent or received by one party.
    pub fn view_of(&self, party: Party) -> Vec<&FrameRecord> {
        self.log
            .iter()
            .filter(|r| r.sender == party || (r.receiver == party && r.delivered))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f23() -> Field {
        Field::new(23).unwrap()
    }

    #[test]
    fn party_ids_round_trip() {
        for p in [Party::Server(0), Party::Server(7), Party::Client(0), Party::Client(1473), Party::Dealer] {
            assert_eq!(Party::from_wire_id(p.wire_id()), p);
        }
    }

    #[test]
    fn delivery_order_is_time_sender_receiver_seq() {
        let mut net = Network::new(f23(), AdversarySpec::honest());
        let s = |a: u32, b: u32, tag: u8| WireMessage::new(MsgType::Commit, 1, a, b, vec![tag]);
        net.send(s(2, 0, 1));
        net.send(s(1, 2, 2));
        net.send(s(1, 0, 3));
        net.send(s(1, 0, 4));
        net.step();
        let order: Vec<u8> = net.log().iter().map(|r| decode_message(&r.bytes).unwrap().payload[0]).collect();
        assert_eq!(order, vec![3, 4, 2, 1]);
    }

    #[test]
    fn metering_counts_delivered_frames() {
        let mut net = Network::new(f23(), AdversarySpec::honest());
        let f = f23();
        let c = Party::Client(0).wire_id();
        net.send(WireMessage::with_elements(MsgType::InputEpsilon, 1, c, 0, &[f.element(3); 10]));
        net.send(WireMessage::with_elements(MsgType::OpenShare, 1, 0, 1, &[f.element(3); 2]));
        net.step();
        let t = net.metrics().total();
        assert_eq!(t.client_to_server, (HEADER_LEN + 160) as u64);
        assert_eq!(t.server_to_server, (HEADER_LEN + 32) as u64);
        assert_eq!(net.metrics().payload_total().client_to_server, 160);
        assert_eq!(account_bytes(net.log()), *net.metrics());
    }

    #[test]
    fn honest_network_never_mutates() {
        let f = f23();
        let spec = AdversarySpec::passive([0], [1]);
        let mut net = Network::new(f, spec);
        for t in 0..8u8 {
            let m = WireMessage::with_elements(MsgType::try_from(t).unwrap(), 1, 0, 1, &[f.element(4)]);
            net.send(m);
        }
        net.step();
        assert!(net.log().iter().all(|r| r.delivered && !r.mutated));
    }

    #[test]
    fn tamper_share_hits_only_corrupted_open_shares() {
        let f = f23();
        let spec = AdversarySpec::active([0], Behavior::TamperShare { coordinate: 0, delta: 1 });
        let m = WireMessage::with_elements(MsgType::OpenShare, 1, 0, 1, &[f.element(5), f.element(9)]);
        let out = deliver_with_adversary(m, &spec, f).unwrap();
        let e = out.elements(f).unwrap();
        assert_eq!((e[0].value(), e[1].value()), (6, 9));
        let honest = WireMessage::with_elements(MsgType::OpenShare, 1, 1, 0, &[f.element(5)]);
        assert_eq!(deliver_with_adversary(honest.clone(), &spec, f).unwrap(), honest);
    }

    #[test]
    fn active_round_limits_behavior() {
        let f = f23();
        let mut spec = AdversarySpec::active([0], Behavior::Withhold);
        spec.active_round = Some(2);
        let m = |r| WireMessage::with_elements(MsgType::OpenShare, r, 0, 1, &[f.element(5)]);
        assert!(deliver_with_adversary(m(1), &spec, f).is_some());
        assert!(deliver_with_adversary(m(2), &spec, f).is_none());
    }

    #[test]
    fn withheld_frames_are_not_metered() {
        let f = f23();
        let mut net = Network::new(f, AdversarySpec::active([0], Behavior::Withhold));
        net.send(WireMessage::with_elements(MsgType::OpenShare, 1, 0, 1, &[f.element(5)]));
        net.step();
        assert_eq!(net.metrics().total().total(), 0);
        assert!(!net.log()[0].delivered);
        assert!(net.wait_for(Party::Server(1), MsgType::OpenShare, None, 3).is_none());
    }

    #[test]
    fn spec_validation() {
        assert!(AdversarySpec::passive([0, 1], []).validate(3).is_ok());
        assert!(matches!(
            AdversarySpec::passive([0, 1, 2], []).validate(3),
            Err(AdversaryError::NoHonestServer { .. })
        ));
        assert_eq!(
            AdversarySpec::passive([5], []).validate(3),
            Err(AdversaryError::UnknownServer(5))
        );
        assert_eq!(
            AdversarySpec::active([], Behavior::Withhold).validate(3),
            Err(AdversaryError::NobodyToAct)
        );
    }
}
