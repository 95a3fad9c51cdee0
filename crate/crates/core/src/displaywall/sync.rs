//! Session synchronization: message contract, logical client state, a
//! single-writer hub with heartbeats, and the length-prefixed wire codec.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraPose, Poi};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnnotationKind {
    DipStick,
    BuildingSelect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub kind: AnnotationKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum PoiChange {
    Upsert { poi: Poi },
    Remove { id: u64 },
}

/// Replicated session state. A late joiner receives it as a `Snapshot`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub timepoint: usize,
    pub camera: Option<CameraPose>,
    pub pois: BTreeMap<u64, Poi>,
    pub annotations: BTreeMap<String, Annotation>,
}

impl SessionSnapshot {
    fn apply(&mut self, body: &SyncBody) {
        match body {
            SyncBody::TimepointSet { timepoint } => self.timepoint = *timepoint,
            SyncBody::CameraPose(pose) => self.camera = Some(*pose),
            SyncBody::PoiUpdate(PoiChange::Upsert { poi }) => {
                self.pois.insert(poi.id, *poi);
            }
            SyncBody::PoiUpdate(PoiChange::Remove { id }) => {
                self.pois.remove(id);
            }
            SyncBody::ShareAnnotation { id, annotation } => {
                self.annotations.insert(id.clone(), annotation.clone());
            }
            SyncBody::Snapshot(s) => *self = s.clone(),
            SyncBody::Heartbeat { .. } => {}
        }
    }
}

/// Message kinds and their payloads. `Snapshot` is only ever sent by the
/// hub, as the first message a client receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum SyncBody {
    TimepointSet { timepoint: usize },
    CameraPose(CameraPose),
    PoiUpdate(PoiChange),
    ShareAnnotation { id: String, annotation: Annotation },
    Heartbeat { sender: String },
    Snapshot(SessionSnapshot),
}

impl SyncBody {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::TimepointSet { .. } => "TimepointSet",
            Self::CameraPose(_) => "CameraPose",
            Self::PoiUpdate(_) => "PoiUpdate",
            Self::ShareAnnotation { .. } => "ShareAnnotation",
            Self::Heartbeat { .. } => "Heartbeat",
            Self::Snapshot(_) => "Snapshot",
        }
    }
}

/// `{kind, seq, payload}` on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncMessage {
    pub seq: u64,
    #[serde(flatten)]
    pub body: SyncBody,
}

#[derive(Debug, Error, PartialEq)]
pub enum SyncError {
    #[error("client {0} timed out")]
    ClientTimeout(String),
    #[error("unknown client {0}")]
    UnknownClient(String),
    #[error("client {0} is already connected")]
    DuplicateClient(String),
    #[error("sequence {got} from {sender} does not follow {last}")]
    OutOfOrder { sender: String, got: u64, last: u64 },
    #[error("timepoint {0} out of range ({1} timepoints)")]
    InvalidTimepoint(usize, usize),
    #[error("{0} messages may only originate from the hub")]
    Forbidden(&'static str),
}

/// State a display client derives from the stream it receives.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub last_seq: Option<u64>,
    pub session: SessionSnapshot,
}

impl ClientState {
    pub fn apply(&mut self, msg: &SyncMessage) -> Result<(), SyncError> {
        if let Some(last) = self.last_seq {
            if msg.seq <= last {
                return Err(SyncError::OutOfOrder { sender: "hub".into(), got: msg.seq, last });
            }
        }
        self.last_seq = Some(msg.seq);
        self.session.apply(&msg.body);
        Ok(())
    }
}

/// Outbound queue of one client. Returns false once the client is gone.
pub trait ClientSink: Send {
    fn deliver(&mut self, msg: &SyncMessage) -> bool;
}

impl ClientSink for std::sync::mpsc::Sender<SyncMessage> {
    fn deliver(&mut self, msg: &SyncMessage) -> bool {
        self.send(msg.clone()).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatPolicy {
    /// Seconds between heartbeats.
    pub interval: f64,
    /// Heartbeats a client may miss before it is dropped.
    pub missed: u32,
}

impl Default for HeartbeatPolicy {
    fn default() -> Self {
        Self { interval: 5.0, missed: 3 }
    }
}

struct Link {
    sink: Box<dyn ClientSink>,
    last_seen: f64,
    last_client_seq: Option<u64>,
}

/// Single-writer sync server. Every accepted message is applied to the
/// session, stamped with the next hub sequence number and queued to every
/// connected client in that order. Times are seconds on any monotone clock.
pub struct SyncHub {
    session: SessionSnapshot,
    timepoints: usize,
    seq: u64,
    policy: HeartbeatPolicy,
    clients: BTreeMap<String, Link>,
    last_beat: f64,
}

impl SyncHub {
    pub fn new(session: SessionSnapshot, timepoints: usize, policy: HeartbeatPolicy) -> Self {
        Self { session, timepoints, seq: 0, policy, clients: BTreeMap::new(), last_beat: f64::NEG_INFINITY }
    }

    pub fn session(&self) -> &SessionSnapshot {
        &self.session
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn clients(&self) -> Vec<String> {
        self.clients.keys().cloned().collect()
    }

    /// Registers a client and queues the current snapshot to it.
    pub fn join(&mut self, id: &str, mut sink: Box<dyn ClientSink>, now: f64) -> Result<(), SyncError> {
        if self.clients.contains_key(id) {
            return Err(SyncError::DuplicateClient(id.into()));
        }
        let snapshot = SyncMessage { seq: self.seq, body: SyncBody::Snapshot(self.session.clone()) };
        if sink.deliver(&snapshot) {
            self.clients.insert(id.into(), Link { sink, last_seen: now, last_client_seq: None });
        }
        Ok(())
    }

    pub fn leave(&mut self, id: &str) -> bool {
        self.clients.remove(id).is_some()
    }

    /// Accepts a message from `sender`; `msg.seq` is the sender's own
    /// counter and must strictly increase. Returns the hub sequence assigned.
    /// Client heartbeats refresh liveness and are not relayed.
    pub fn submit(&mut self, sender: &str, msg: SyncMessage, now: f64) -> Result<Option<u64>, SyncError> {
        let link = self.clients.get_mut(sender).ok_or_else(|| SyncError::UnknownClient(sender.into()))?;
        if let Some(last) = link.last_client_seq {
            if msg.seq <= last {
                return Err(SyncError::OutOfOrder { sender: sender.into(), got: msg.seq, last });
            }
        }
        link.last_seen = now;
        let assigned = match msg.body {
            SyncBody::Heartbeat { .. } => None,
            body => Some(self.publish(body)?),
        };
        if let Some(link) = self.clients.get_mut(sender) {
            link.last_client_seq = Some(msg.seq);
        }
        Ok(assigned)
    }

    /// Applies and broadcasts a message originating at the hub itself.
    pub fn publish(&mut self, body: SyncBody) -> Result<u64, SyncError> {
        match &body {
            SyncBody::Snapshot(_) => return Err(SyncError::Forbidden("Snapshot")),
            SyncBody::TimepointSet { timepoint } if *timepoint >= self.timepoints => {
                return Err(SyncError::InvalidTimepoint(*timepoint, self.timepoints));
            }
            _ => {}
        }
        self.session.apply(&body);
        self.seq += 1;
        let msg = SyncMessage { seq: self.seq, body };
        self.fan_out(&msg);
        Ok(self.seq)
    }

    fn fan_out(&mut self, msg: &SyncMessage) {
        self.clients.retain(|_, link| link.sink.deliver(msg));
    }

    /// Sends a hub heartbeat when one is due and drops clients that missed
    /// too many. Returns a `ClientTimeout` per dropped client.
    pub fn tick(&mut self, now: f64) -> Vec<SyncError> {
        let limit = self.policy.interval * self.policy.missed as f64;
        let mut dropped = Vec::new();
        self.clients.retain(|id, link| {
            let alive = now - link.last_seen <= limit;
            if !alive {
                dropped.push(SyncError::ClientTimeout(id.clone()));
            }
            alive
        });
        if now - self.last_beat >= self.policy.interval {
            self.last_beat = now;
            self.seq += 1;
            let msg = SyncMessage { seq: self.seq, body: SyncBody::Heartbeat { sender: "hub".into() } };
            self.fan_out(&msg);
        }
        dropped
    }
}

/// Largest accepted frame body in bytes.
pub const MAX_FRAME_LEN: usize = 16 << 20;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("bad frame body: {0}")]
    Json(#[from] serde_json::Error),
}

/// 4-byte little-endian length followed by the UTF-8 JSON message.
pub fn encode_frame(msg: &SyncMessage) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("sync messages serialize");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decodes one frame from the front of `buf`, returning the message and the
/// bytes consumed, or `None` if the frame is incomplete.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(SyncMessage, usize)>, CodecError> {
    let Some(head) = buf.get(..4) else { return Ok(None) };
    let len = u32::from_le_bytes(head.try_into().unwrap()) as usize;
    if len > MAX_FRAME_LEN {
        return Err(CodecError::TooLarge(len));
    }
    let Some(body) = buf.get(4..4 + len) else { return Ok(None) };
    Ok(Some((serde_json::from_slice(body)?, 4 + len)))
}

/// Reassembles frames from an arbitrary chunking of the byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<SyncMessage>, CodecError> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut at = 0;
        while let Some((msg, used)) = decode_frame(&self.buf[at..])? {
            out.push(msg);
            at += used;
        }
        self.buf.drain(..at);
        Ok(out)
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}
