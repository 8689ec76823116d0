//! Framed wire protocol for server-to-server synchronization.
//!
//! Clients never talk to remote servers; only catalog servers connect to
//! each other, which keeps firewall conduits down to one port per site.
//!
//! Every frame is `[length u32 BE][msg_type u8][payload]` where length
//! counts payload bytes only and is capped at 64 MiB. Message types:
//!
//! | type | message      | payload                                          |
//! |------|--------------|--------------------------------------------------|
//! | 0x01 | HELLO        | version u16, site, federation digest (32 bytes)  |
//! | 0x02 | CURSORS_REQ  | empty                                            |
//! | 0x03 | CURSORS_RESP | count u32, then (site, seq u64) pairs            |
//! | 0x04 | DELTA_REQ    | origin site, after u64, max_batch u32            |
//! | 0x05 | DELTA_RESP   | origin site, last u8, count u32, then            |
//! |      |              | length-prefixed canonical operation records      |
//! | 0x06 | SNAP_REQ     | empty                                            |
//! | 0x07 | SNAP_CHUNK   | data (u32 length-prefixed); a zero-length chunk  |
//! |      |              | terminates the stream and carries the 32-byte    |
//! |      |              | snapshot digest as a trailer                     |
//! | 0x08 | ERROR        | code u16, detail string                          |
//!
//! Sessions open with a HELLO exchange; version or federation-digest
//! mismatches are answered with ERROR and the connection closes. One
//! DELTA_REQ is answered by `max(1, ceil(available / max_batch))`
//! DELTA_RESP frames, the final one flagged `last`.

pub mod sim;
pub mod tcp;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    decode_exact, CanonicalDecode, CanonicalEncode, OperationRecord, Reader, SequenceNumber,
    SiteId,
};
use crate::store::{Snapshot, Store, StoreError};

pub const PROTOCOL_VERSION: u16 = 1;
pub const DEFAULT_PORT: u16 = 7474;
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;
pub const MAX_SNAP_CHUNK: usize = 4 * 1024 * 1024;
pub const DEFAULT_MAX_BATCH: u32 = 5_000;
pub const HANDSHAKE_TIMEOUT_SECS: u64 = 10;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer unreachable: {0}")]
    Unreachable(String),
    #[error("peer speaks protocol version {theirs}, this build speaks {PROTOCOL_VERSION}")]
    VersionMismatch { theirs: u16 },
    #[error("peer holds a different federation config")]
    FederationMismatch,
    #[error("handshake timed out")]
    HandshakeTimeout,
    #[error("frame of {0} bytes exceeds the 64 MiB cap")]
    FrameTooLarge(u32),
    #[error("unknown message type {0:#04x}")]
    UnknownMessageType(u8),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("peer pruned ops for origin {origin}; snapshot required")]
    GapNeedsSnapshot { origin: String },
    #[error("peer reported error {code:?}: {detail}")]
    PeerError { code: ErrorCode, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    CursorsReq = 0x02,
    CursorsResp = 0x03,
    DeltaReq = 0x04,
    DeltaResp = 0x05,
    SnapReq = 0x06,
    SnapChunk = 0x07,
    Error = 0x08,
}

impl MessageType {
    pub fn from_byte(b: u8) -> Option<MessageType> {
        match b {
            0x01 => Some(MessageType::Hello),
            0x02 => Some(MessageType::CursorsReq),
            0x03 => Some(MessageType::CursorsResp),
            0x04 => Some(MessageType::DeltaReq),
            0x05 => Some(MessageType::DeltaResp),
            0x06 => Some(MessageType::SnapReq),
            0x07 => Some(MessageType::SnapChunk),
            0x08 => Some(MessageType::Error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    Version = 1,
    Federation = 2,
    Gap = 3,
    UnknownType = 4,
    Malformed = 5,
    Internal = 6,
}

impl ErrorCode {
    fn from_u16(v: u16) -> Option<ErrorCode> {
        match v {
            1 => Some(ErrorCode::Version),
            2 => Some(ErrorCode::Federation),
            3 => Some(ErrorCode::Gap),
            4 => Some(ErrorCode::UnknownType),
            5 => Some(ErrorCode::Malformed),
            6 => Some(ErrorCode::Internal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello {
        version: u16,
        site: SiteId,
        federation_digest: [u8; 32],
    },
    CursorsReq,
    CursorsResp {
        cursors: BTreeMap<SiteId, SequenceNumber>,
    },
    DeltaReq {
        origin: SiteId,
        after: SequenceNumber,
        max_batch: u32,
    },
    DeltaResp {
        origin: SiteId,
        last: bool,
        ops: Vec<OperationRecord>,
    },
    SnapReq,
    SnapChunk {
        data: Vec<u8>,
        digest: Option<[u8; 32]>,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

impl Message {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::CursorsReq => MessageType::CursorsReq,
            Message::CursorsResp { .. } => MessageType::CursorsResp,
            Message::DeltaReq { .. } => MessageType::DeltaReq,
            Message::DeltaResp { .. } => MessageType::DeltaResp,
            Message::SnapReq => MessageType::SnapReq,
            Message::SnapChunk { .. } => MessageType::SnapChunk,
            Message::Error { .. } => MessageType::Error,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        match self {
            Message::Hello {
                version,
                site,
                federation_digest,
            } => {
                buf.extend_from_slice(&version.to_be_bytes());
                site.encode_into(&mut buf);
                buf.extend_from_slice(federation_digest);
            }
            Message::CursorsReq | Message::SnapReq => {}
            Message::CursorsResp { cursors } => {
                buf.extend_from_slice(&(cursors.len() as u32).to_be_bytes());
                for (site, seq) in cursors {
                    site.encode_into(&mut buf);
                    buf.extend_from_slice(&seq.0.to_be_bytes());
                }
            }
            Message::DeltaReq {
                origin,
                after,
                max_batch,
            } => {
                origin.encode_into(&mut buf);
                buf.extend_from_slice(&after.0.to_be_bytes());
                buf.extend_from_slice(&max_batch.to_be_bytes());
            }
            Message::DeltaResp { origin, last, ops } => {
                origin.encode_into(&mut buf);
                buf.push(u8::from(*last));
                buf.extend_from_slice(&(ops.len() as u32).to_be_bytes());
                for op in ops {
                    let body = op.encode();
                    buf.extend_from_slice(&(body.len() as u32).to_be_bytes());
                    buf.extend_from_slice(&body);
                }
            }
            Message::SnapChunk { data, digest } => {
                buf.extend_from_slice(&(data.len() as u32).to_be_bytes());
                buf.extend_from_slice(data);
                if let Some(d) = digest {
                    buf.extend_from_slice(d);
                }
            }
            Message::Error { code, detail } => {
                buf.extend_from_slice(&(*code as u16).to_be_bytes());
                crate::model::codec_put_string(&mut buf, detail);
            }
        }
        buf
    }

    /// Serializes the message as one frame.
    pub fn to_frame(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut frame = Vec::with_capacity(payload.len() + 5);
        frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        frame.push(self.msg_type() as u8);
        frame.extend_from_slice(&payload);
        frame
    }

    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Message, TransportError> {
        let ty = MessageType::from_byte(msg_type)
            .ok_or(TransportError::UnknownMessageType(msg_type))?;
        let mut r = Reader::new(payload);
        let bad = |e: crate::model::DecodeError| TransportError::Protocol(e.to_string());
        let msg = match ty {
            MessageType::Hello => Message::Hello {
                version: r.u16().map_err(bad)?,
                site: SiteId::decode_from(&mut r).map_err(bad)?,
                federation_digest: r.array::<32>().map_err(bad)?,
            },
            MessageType::CursorsReq => Message::CursorsReq,
            MessageType::CursorsResp => {
                let n = r.u32().map_err(bad)?;
                let mut cursors = BTreeMap::new();
                for _ in 0..n {
                    let site = SiteId::decode_from(&mut r).map_err(bad)?;
                    let seq = SequenceNumber(r.u64().map_err(bad)?);
                    cursors.insert(site, seq);
                }
                Message::CursorsResp { cursors }
            }
            MessageType::DeltaReq => Message::DeltaReq {
                origin: SiteId::decode_from(&mut r).map_err(bad)?,
                after: SequenceNumber(r.u64().map_err(bad)?),
                max_batch: r.u32().map_err(bad)?,
            },
            MessageType::DeltaResp => {
                let origin = SiteId::decode_from(&mut r).map_err(bad)?;
                let last = match r.u8().map_err(bad)? {
                    0 => false,
                    1 => true,
                    v => {
                        return Err(TransportError::Protocol(format!(
                            "bad last flag {v}"
                        )))
                    }
                };
                let n = r.u32().map_err(bad)?;
                let mut ops = Vec::with_capacity(n.min(1 << 20) as usize);
                for _ in 0..n {
                    let body = r.bytes().map_err(bad)?;
                    let op: OperationRecord = decode_exact(body).map_err(bad)?;
                    ops.push(op);
                }
                Message::DeltaResp { origin, last, ops }
            }
            MessageType::SnapReq => Message::SnapReq,
            MessageType::SnapChunk => {
                let data = r.bytes().map_err(bad)?.to_vec();
                let digest = if data.is_empty() {
                    Some(r.array::<32>().map_err(bad)?)
                } else {
                    None
                };
                Message::SnapChunk { data, digest }
            }
            MessageType::Error => {
                let code = r.u16().map_err(bad)?;
                let detail = r.string().map_err(bad)?;
                Message::Error {
                    code: ErrorCode::from_u16(code)
                        .ok_or_else(|| TransportError::Protocol(format!("bad error code {code}")))?,
                    detail,
                }
            }
        };
        if r.remaining() != 0 {
            return Err(TransportError::Protocol(
                "trailing bytes in message payload".into(),
            ));
        }
        Ok(msg)
    }
}

/// Splits one frame off the front of `buf`. Returns the message and the
/// bytes consumed, or `None` if the buffer does not yet hold a full frame.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Message, usize)>, TransportError> {
    if buf.len() < 5 {
        return Ok(None);
    }
    let len = u32::from_be_bytes(buf[0..4].try_into().unwrap());
    if len > MAX_FRAME_LEN {
        return Err(TransportError::FrameTooLarge(len));
    }
    let total = 5 + len as usize;
    if buf.len() < total {
        return Ok(None);
    }
    let msg = Message::decode(buf[4], &buf[5..total])?;
    Ok(Some((msg, total)))
}

/// Traffic counters for one session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub frames_sent: u64,
    pub frames_received: u64,
    pub delta_frames_received: u64,
    pub ops_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Result of one delta pull. Batches are complete frames, each safe to
/// apply atomically; a session failure mid-stream still hands back every
/// batch that arrived whole, so lossy links make forward progress.
#[derive(Debug)]
pub struct DeltaStream {
    pub batches: Vec<Vec<OperationRecord>>,
    /// `None` when the stream finished with its `last` frame; otherwise
    /// why it stopped early.
    pub error: Option<TransportError>,
}

impl DeltaStream {
    pub fn complete(batches: Vec<Vec<OperationRecord>>) -> DeltaStream {
        DeltaStream {
            batches,
            error: None,
        }
    }

    pub fn failed(error: TransportError) -> DeltaStream {
        DeltaStream {
            batches: Vec::new(),
            error: Some(error),
        }
    }
}

/// Client side of an established sync session.
pub trait SyncSession {
    fn peer_site(&self) -> &SiteId;

    /// The peer's applied high-water mark per origin.
    fn fetch_cursors(&mut self) -> Result<BTreeMap<SiteId, SequenceNumber>, TransportError>;

    /// Pulls operations of one origin after the given cursor.
    fn fetch_delta(
        &mut self,
        origin: &SiteId,
        after: SequenceNumber,
        max_batch: u32,
    ) -> DeltaStream;

    /// Pulls a full snapshot for bootstrap.
    fn fetch_snapshot(&mut self) -> Result<Snapshot, TransportError>;

    fn stats(&self) -> SessionStats;
}

/// Opens sessions to peers; implemented by the TCP transport and the
/// in-process simulator so replication logic stays transport-agnostic.
pub trait Connector {
    type Session: SyncSession;

    fn connect(&self, site: &SiteId, address: &str) -> Result<Self::Session, TransportError>;
}

/// Server-side handling shared by every transport: one request message in,
/// the response frames out.
pub struct RequestHandler {
    pub store: Arc<Store>,
    pub federation_digest: [u8; 32],
    /// Server-side cap on ops per DELTA_RESP frame.
    pub max_batch: u32,
}

impl RequestHandler {
    pub fn new(store: Arc<Store>, federation_digest: [u8; 32]) -> RequestHandler {
        RequestHandler {
            store,
            federation_digest,
            max_batch: DEFAULT_MAX_BATCH,
        }
    }

    /// Validates a client HELLO. Returns the response message; on success
    /// it is this server's own HELLO carrying its site id.
    pub fn handle_hello(&self, msg: &Message) -> Result<(SiteId, Message), Message> {
        match msg {
            Message::Hello {
                version,
                site,
                federation_digest,
            } => {
                if *version != PROTOCOL_VERSION {
                    return Err(Message::Error {
                        code: ErrorCode::Version,
                        detail: format!("speaking version {PROTOCOL_VERSION}, got {version}"),
                    });
                }
                if *federation_digest != self.federation_digest {
                    return Err(Message::Error {
                        code: ErrorCode::Federation,
                        detail: "federation digest mismatch".into(),
                    });
                }
                if !self.store.federation_sites().contains(site) {
                    return Err(Message::Error {
                        code: ErrorCode::Federation,
                        detail: format!("site {} not in federation", site.id()),
                    });
                }
                Ok((
                    site.clone(),
                    Message::Hello {
                        version: PROTOCOL_VERSION,
                        site: self.store.site().clone(),
                        federation_digest: self.federation_digest,
                    },
                ))
            }
            _ => Err(Message::Error {
                code: ErrorCode::Malformed,
                detail: "expected HELLO".into(),
            }),
        }
    }

    /// Handles one post-handshake request, producing the ordered response
    /// frames.
    pub fn handle_request(&self, peer: &SiteId, msg: Message) -> Vec<Message> {
        match msg {
            Message::CursorsReq => vec![Message::CursorsResp {
                cursors: self.store.cursors(),
            }],
            Message::DeltaReq {
                origin,
                after,
                max_batch,
            } => {
                self.store.note_peer_ack(peer, &origin, after);
                let batch_cap = max_batch.clamp(1, self.max_batch) as usize;
                // serve up to the high-water observed now; anything newer
                // belongs to the peer's next request. Exactly
                // max(1, ceil(delta / batch)) frames leave the server.
                let upto = self
                    .store
                    .cursors()
                    .get(&origin)
                    .copied()
                    .unwrap_or_default();
                let mut frames = Vec::new();
                let mut cursor = after;
                loop {
                    let remaining = upto.0.saturating_sub(cursor.0) as usize;
                    let take = remaining.min(batch_cap);
                    match self.store.scan_partition_capped(&origin, cursor, take) {
                        Ok(ops) => {
                            if let Some(op) = ops.last() {
                                cursor = op.seq;
                            }
                            let done = cursor >= upto || ops.is_empty();
                            frames.push(Message::DeltaResp {
                                origin: origin.clone(),
                                last: done,
                                ops,
                            });
                            if done {
                                break;
                            }
                        }
                        Err(StoreError::GapDetected { .. }) => {
                            return vec![Message::Error {
                                code: ErrorCode::Gap,
                                detail: format!("ops for {} pruned", origin.id()),
                            }];
                        }
                        Err(e) => {
                            return vec![Message::Error {
                                code: ErrorCode::Internal,
                                detail: e.to_string(),
                            }];
                        }
                    }
                }
                frames
            }
            Message::SnapReq => match self.store.take_snapshot() {
                Ok(snap) => {
                    let bytes = snap.encode();
                    let mut frames: Vec<Message> = bytes
                        .chunks(MAX_SNAP_CHUNK)
                        .map(|chunk| Message::SnapChunk {
                            data: chunk.to_vec(),
                            digest: None,
                        })
                        .collect();
                    frames.push(Message::SnapChunk {
                        data: Vec::new(),
                        digest: Some(snap.digest),
                    });
                    frames
                }
                Err(e) => vec![Message::Error {
                    code: ErrorCode::Internal,
                    detail: e.to_string(),
                }],
            },
            Message::Hello { .. } => vec![Message::Error {
                code: ErrorCode::Malformed,
                detail: "unexpected HELLO after handshake".into(),
            }],
            other => vec![Message::Error {
                code: ErrorCode::UnknownType,
                detail: format!("cannot serve {:?}", other.msg_type()),
            }],
        }
    }
}

/// Reassembles SNAP_CHUNK frames into a verified snapshot.
pub(crate) fn assemble_snapshot(
    chunks: Vec<Message>,
) -> Result<Snapshot, TransportError> {
    let mut bytes = Vec::new();
    let mut trailer: Option<[u8; 32]> = None;
    for chunk in chunks {
        match chunk {
            Message::SnapChunk { data, digest } => {
                if data.is_empty() {
                    trailer =
                        Some(digest.ok_or_else(|| {
                            TransportError::Protocol("terminal chunk lacks digest".into())
                        })?);
                    break;
                }
                bytes.extend_from_slice(&data);
            }
            Message::Error { code, detail } => {
                return Err(TransportError::PeerError { code, detail })
            }
            other => {
                return Err(TransportError::Protocol(format!(
                    "expected SNAP_CHUNK, got {:?}",
                    other.msg_type()
                )))
            }
        }
    }
    let trailer =
        trailer.ok_or_else(|| TransportError::Protocol("snapshot stream not terminated".into()))?;
    let snap = Snapshot::decode(&bytes)
        .map_err(|e| TransportError::Protocol(format!("snapshot rejected: {e}")))?;
    if snap.digest != trailer {
        return Err(TransportError::Protocol(
            "snapshot digest trailer mismatch".into(),
        ));
    }
    Ok(snap)
}

/// Maps an ERROR frame received mid-request to the client-side error.
pub(crate) fn error_from_peer(code: ErrorCode, detail: String, origin: Option<&SiteId>) -> TransportError {
    match code {
        ErrorCode::Version => TransportError::VersionMismatch { theirs: 0 },
        ErrorCode::Federation => TransportError::FederationMismatch,
        ErrorCode::Gap => TransportError::GapNeedsSnapshot {
            origin: origin.map(|s| s.id().to_string()).unwrap_or(detail),
        },
        code => TransportError::PeerError { code, detail },
    }
}
