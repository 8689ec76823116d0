//! Canonical byte encoding for all catalog types.
//!
//! This format is normative: the durable log, the wire protocol, and every
//! state digest hash exactly these bytes. Equal values encode to equal
//! bytes; any differing field yields differing bytes.
//!
//! Rules: integers are big-endian fixed width; strings are u32
//! length-prefixed UTF-8; enums are a single tag byte; timestamps are
//! seconds (i64) then nanoseconds (u32). Fields are emitted in the order
//! documented on each type below.

use chrono::{DateTime, Utc};
use thiserror::Error;

use super::{
    timestamp_from_parts, ClusterId, Cost, FileKey, FileRecord, Host, LinkCost, LogicalFileName,
    ModelError, OpKind, OpPayload, OperationRecord, RowData, RowKey, SequenceNumber, SiteId,
    StorageClass, Subject,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("string is not valid UTF-8")]
    BadUtf8,
    #[error("bad {what} tag {value}")]
    BadTag { what: &'static str, value: u8 },
    #[error("timestamp out of range")]
    BadTimestamp,
    #[error("operation payload does not match kind/subject")]
    PayloadMismatch,
    #[error("trailing bytes after value")]
    TrailingBytes,
    #[error("decoded value violates invariant: {0}")]
    Invalid(#[from] ModelError),
}

/// Cursor over an encoded buffer.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEof);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError::BadUtf8)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

pub trait CanonicalEncode {
    fn encode_into(&self, buf: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.encode_into(&mut buf);
        buf
    }
}

pub trait CanonicalDecode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;
}

/// Decodes a value and requires the buffer to be fully consumed.
pub fn decode_exact<T: CanonicalDecode>(buf: &[u8]) -> Result<T, DecodeError> {
    let mut r = Reader::new(buf);
    let v = T::decode_from(&mut r)?;
    if r.remaining() != 0 {
        return Err(DecodeError::TrailingBytes);
    }
    Ok(v)
}

pub(crate) fn put_string(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_be_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub(crate) fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    buf.extend_from_slice(&(b.len() as u32).to_be_bytes());
    buf.extend_from_slice(b);
}

fn put_timestamp(buf: &mut Vec<u8>, t: &DateTime<Utc>) {
    buf.extend_from_slice(&t.timestamp().to_be_bytes());
    buf.extend_from_slice(&t.timestamp_subsec_nanos().to_be_bytes());
}

fn read_timestamp(r: &mut Reader<'_>) -> Result<DateTime<Utc>, DecodeError> {
    let secs = r.i64()?;
    let nanos = r.u32()?;
    timestamp_from_parts(secs, nanos).ok_or(DecodeError::BadTimestamp)
}

// SiteId: ordinal u32, id string.
impl CanonicalEncode for SiteId {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.ordinal().to_be_bytes());
        put_string(buf, self.id());
    }
}

impl CanonicalDecode for SiteId {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let ordinal = r.u32()?;
        let id = r.string()?;
        Ok(SiteId::new(ordinal, &id)?)
    }
}

// LogicalFileName: string.
impl CanonicalEncode for LogicalFileName {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        put_string(buf, self.as_str());
    }
}

impl CanonicalDecode for LogicalFileName {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let s = r.string()?;
        Ok(LogicalFileName::new(&s)?)
    }
}

// StorageClass: u8, disk=0 tape=1.
impl CanonicalEncode for StorageClass {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.push(match self {
            StorageClass::Disk => 0,
            StorageClass::Tape => 1,
        });
    }
}

impl CanonicalDecode for StorageClass {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(StorageClass::Disk),
            1 => Ok(StorageClass::Tape),
            value => Err(DecodeError::BadTag {
                what: "storage class",
                value,
            }),
        }
    }
}

// ClusterId: name string, site.
impl CanonicalEncode for ClusterId {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        put_string(buf, &self.name);
        self.site.encode_into(buf);
    }
}

impl CanonicalDecode for ClusterId {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let name = r.string()?;
        let site = SiteId::decode_from(r)?;
        Ok(ClusterId::new(&name, site)?)
    }
}

// Host: hostname string, cluster, storage.
impl CanonicalEncode for Host {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        put_string(buf, &self.hostname);
        self.cluster.encode_into(buf);
        self.storage.encode_into(buf);
    }
}

impl CanonicalDecode for Host {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let hostname = r.string()?;
        let cluster = ClusterId::decode_from(r)?;
        let storage = StorageClass::decode_from(r)?;
        Ok(Host::new(&hostname, cluster, storage)?)
    }
}

// Cost: numerator u64, denominator u64 (normalized).
impl CanonicalEncode for Cost {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.extend_from_slice(&self.numerator().to_be_bytes());
        buf.extend_from_slice(&self.denominator().to_be_bytes());
    }
}

impl CanonicalDecode for Cost {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let num = r.u64()?;
        let den = r.u64()?;
        Ok(Cost::new(num, den)?)
    }
}

// LinkCost: from, to, cost.
impl CanonicalEncode for LinkCost {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        self.from.encode_into(buf);
        self.to.encode_into(buf);
        self.cost.encode_into(buf);
    }
}

impl CanonicalDecode for LinkCost {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let from = SiteId::decode_from(r)?;
        let to = SiteId::decode_from(r)?;
        let cost = Cost::decode_from(r)?;
        Ok(LinkCost::new(from, to, cost)?)
    }
}

// FileRecord: lfn, host string, path string, storage, production string,
// size u64, created_at timestamp, origin.
impl CanonicalEncode for FileRecord {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        self.lfn.encode_into(buf);
        put_string(buf, &self.host);
        put_string(buf, &self.path);
        self.storage.encode_into(buf);
        put_string(buf, &self.production);
        buf.extend_from_slice(&self.size_bytes.to_be_bytes());
        put_timestamp(buf, &self.created_at);
        self.origin.encode_into(buf);
    }
}

impl CanonicalDecode for FileRecord {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let rec = FileRecord {
            lfn: LogicalFileName::decode_from(r)?,
            host: r.string()?,
            path: r.string()?,
            storage: StorageClass::decode_from(r)?,
            production: r.string()?,
            size_bytes: r.u64()?,
            created_at: read_timestamp(r)?,
            origin: SiteId::decode_from(r)?,
        };
        rec.validate()?;
        Ok(rec)
    }
}

// FileKey: lfn, host string, path string.
impl CanonicalEncode for FileKey {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        self.lfn.encode_into(buf);
        put_string(buf, &self.host);
        put_string(buf, &self.path);
    }
}

impl CanonicalDecode for FileKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(FileKey {
            lfn: LogicalFileName::decode_from(r)?,
            host: r.string()?,
            path: r.string()?,
        })
    }
}

fn subject_tag(s: Subject) -> u8 {
    match s {
        Subject::Files => 0,
        Subject::Hosts => 1,
        Subject::Clusters => 2,
        Subject::Sites => 3,
        Subject::Costs => 4,
    }
}

fn subject_from_tag(value: u8) -> Result<Subject, DecodeError> {
    match value {
        0 => Ok(Subject::Files),
        1 => Ok(Subject::Hosts),
        2 => Ok(Subject::Clusters),
        3 => Ok(Subject::Sites),
        4 => Ok(Subject::Costs),
        _ => Err(DecodeError::BadTag {
            what: "subject",
            value,
        }),
    }
}

impl CanonicalEncode for Subject {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.push(subject_tag(*self));
    }
}

impl CanonicalDecode for Subject {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        subject_from_tag(r.u8()?)
    }
}

// RowData: subject tag u8, then the record for that table.
impl CanonicalEncode for RowData {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        self.subject().encode_into(buf);
        match self {
            RowData::File(v) => v.encode_into(buf),
            RowData::Host(v) => v.encode_into(buf),
            RowData::Cluster(v) => v.encode_into(buf),
            RowData::Site(v) => v.encode_into(buf),
            RowData::Cost(v) => v.encode_into(buf),
        }
    }
}

impl CanonicalDecode for RowData {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match Subject::decode_from(r)? {
            Subject::Files => RowData::File(FileRecord::decode_from(r)?),
            Subject::Hosts => RowData::Host(Host::decode_from(r)?),
            Subject::Clusters => RowData::Cluster(ClusterId::decode_from(r)?),
            Subject::Sites => RowData::Site(SiteId::decode_from(r)?),
            Subject::Costs => RowData::Cost(LinkCost::decode_from(r)?),
        })
    }
}

// RowKey: subject tag u8, then the key fields for that table.
impl CanonicalEncode for RowKey {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        self.subject().encode_into(buf);
        match self {
            RowKey::File(k) => k.encode_into(buf),
            RowKey::Host(hostname) => put_string(buf, hostname),
            RowKey::Cluster(c) => c.encode_into(buf),
            RowKey::Site(s) => s.encode_into(buf),
            RowKey::Cost(from, to) => {
                from.encode_into(buf);
                to.encode_into(buf);
            }
        }
    }
}

impl CanonicalDecode for RowKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match Subject::decode_from(r)? {
            Subject::Files => RowKey::File(FileKey::decode_from(r)?),
            Subject::Hosts => RowKey::Host(r.string()?),
            Subject::Clusters => RowKey::Cluster(ClusterId::decode_from(r)?),
            Subject::Sites => RowKey::Site(SiteId::decode_from(r)?),
            Subject::Costs => RowKey::Cost(SiteId::decode_from(r)?, SiteId::decode_from(r)?),
        })
    }
}

impl CanonicalEncode for OpKind {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.push(match self {
            OpKind::Insert => 0,
            OpKind::Update => 1,
            OpKind::Delete => 2,
        });
    }
}

impl CanonicalDecode for OpKind {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(OpKind::Insert),
            1 => Ok(OpKind::Update),
            2 => Ok(OpKind::Delete),
            value => Err(DecodeError::BadTag {
                what: "op kind",
                value,
            }),
        }
    }
}

// OperationRecord: origin, seq u64, kind u8, subject u8,
// payload (u32 length-prefixed encoding of the row or key), committed_at.
impl CanonicalEncode for OperationRecord {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        self.origin.encode_into(buf);
        buf.extend_from_slice(&self.seq.0.to_be_bytes());
        self.kind.encode_into(buf);
        self.subject.encode_into(buf);
        let payload = match &self.payload {
            OpPayload::Row(row) => row.encode(),
            OpPayload::Key(key) => key.encode(),
        };
        put_bytes(buf, &payload);
        put_timestamp(buf, &self.committed_at);
    }
}

impl CanonicalDecode for OperationRecord {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let origin = SiteId::decode_from(r)?;
        let seq = SequenceNumber(r.u64()?);
        let kind = OpKind::decode_from(r)?;
        let subject = Subject::decode_from(r)?;
        let payload_buf = r.bytes()?;
        let payload = match kind {
            OpKind::Insert | OpKind::Update => OpPayload::Row(decode_exact(payload_buf)?),
            OpKind::Delete => OpPayload::Key(decode_exact(payload_buf)?),
        };
        let committed_at = read_timestamp(r)?;
        let op = OperationRecord {
            origin,
            seq,
            kind,
            subject,
            payload,
            committed_at,
        };
        if !op.is_consistent() {
            return Err(DecodeError::PayloadMismatch);
        }
        Ok(op)
    }
}
