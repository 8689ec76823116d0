//! Per-site durable storage with deferred updates.
//!
//! Client writes land in the Buffer and are captured, in order, into the
//! local origin's append-only log. A periodic apply folds captured
//! operations into the replicated Data table, after which Buffer and the
//! local Data partition are identical. Remote partitions change only
//! through [`Store::apply_remote`]; the local partition changes only
//! through [`Store::write_local`]. Snapshots copy the Data side and never
//! touch the write path, so ingestion keeps running while a new site is
//! being seeded.
//!
//! On-disk layout under the store root:
//!
//! ```text
//! site                    canonical SiteId of the owning site
//! log/<ordinal>.oplog     per-origin operation log (see oplog module)
//! snap/<digest>.snap      full-state snapshots
//! cursors                 applied high-water marks, atomically replaced
//! .lock                   advisory flock taken by read-write opens
//! ```
//!
//! All integers in these files are big-endian.

mod lock;
mod oplog;
mod snapshot;

pub use snapshot::{digest_rows, Snapshot, StoredRow};

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::Utc;
use thiserror::Error;

use crate::model::{
    decode_exact, CanonicalEncode, DecodeError, ModelError, OpKind, OpPayload, OperationRecord,
    RowData, RowKey, SequenceNumber, SiteId, Subject,
};
use lock::DirLock;
use oplog::LogWriter;

/// Default minimum number of recent operations kept per origin when
/// pruning replication logs.
pub const DEFAULT_RETENTION_FLOOR: u64 = 100_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt log {path} at offset {offset}")]
    CorruptLog { path: PathBuf, offset: u64 },
    #[error("log for origin {origin} jumps from seq {expected} to {found}")]
    LogGap {
        origin: String,
        expected: u64,
        found: u64,
    },
    #[error("store belongs to site {dir_site}, not {expected}")]
    SiteMismatch { dir_site: String, expected: String },
    #[error("row is owned by {owner}; this store only writes {local}")]
    OwnershipViolation { owner: String, local: String },
    #[error("no such row in buffer")]
    UnknownKey,
    #[error("row already exists in buffer")]
    DuplicateKey,
    #[error("unknown origin {0}")]
    UnknownOrigin(String),
    #[error("ops before seq {first_available} for origin {origin} have been pruned")]
    GapDetected {
        origin: String,
        first_available: u64,
    },
    #[error("out-of-order batch for origin {origin}: expected seq {expected}, found {found}")]
    OutOfOrder {
        origin: String,
        expected: u64,
        found: u64,
    },
    #[error("operation batch contains ops originated by this site")]
    OriginIsSelf,
    #[error("snapshot digest does not match its rows")]
    DigestMismatch,
    #[error("snapshot as-of map is inconsistent with its rows")]
    InconsistentSnapshot,
    #[error("snapshot is older than local state")]
    SnapshotStale,
    #[error("snapshot is malformed: {0}")]
    SnapshotDecode(DecodeError),
    #[error("invalid operation: {0}")]
    InvalidOperation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("store at {0} is locked by another process")]
    Locked(PathBuf),
    #[error("store was opened read-only")]
    ReadOnly,
}

/// A local catalog write: the full row for inserts and updates, the
/// primary key for deletes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    Insert(RowData),
    Update(RowData),
    Delete(RowKey),
}

impl Mutation {
    pub fn subject(&self) -> Subject {
        match self {
            Mutation::Insert(r) | Mutation::Update(r) => r.subject(),
            Mutation::Delete(k) => k.subject(),
        }
    }

    pub fn kind(&self) -> OpKind {
        match self {
            Mutation::Insert(_) => OpKind::Insert,
            Mutation::Update(_) => OpKind::Update,
            Mutation::Delete(_) => OpKind::Delete,
        }
    }

    fn key(&self) -> RowKey {
        match self {
            Mutation::Insert(r) | Mutation::Update(r) => r.key(),
            Mutation::Delete(k) => k.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub site: SiteId,
    /// All federation members, including the local site.
    pub federation: Vec<SiteId>,
    pub retention_floor: u64,
    pub read_only: bool,
}

impl StoreConfig {
    pub fn new(site: SiteId, federation: Vec<SiteId>) -> StoreConfig {
        StoreConfig {
            site,
            federation,
            retention_floor: DEFAULT_RETENTION_FLOOR,
            read_only: false,
        }
    }
}

/// Per-origin slice of the replication log held in memory. Operations with
/// `base < seq <= base + ops.len()` are available; anything at or below
/// `base` has been pruned (or arrived via snapshot and never existed here).
struct LogCache {
    base: SequenceNumber,
    ops: VecDeque<OperationRecord>,
    writer: Option<LogWriter>,
}

impl LogCache {
    fn high(&self) -> SequenceNumber {
        SequenceNumber(self.base.0 + self.ops.len() as u64)
    }

    fn slice(&self, after: SequenceNumber, upto: SequenceNumber) -> Vec<OperationRecord> {
        let hi = upto.min(self.high());
        if after >= hi {
            return Vec::new();
        }
        debug_assert!(after >= self.base, "slice below log base");
        let start = (after.0 - self.base.0) as usize;
        let end = (hi.0 - self.base.0) as usize;
        self.ops.range(start..end).cloned().collect()
    }

    fn push(&mut self, op: &OperationRecord) -> Result<usize, StoreError> {
        let bytes = match &mut self.writer {
            Some(w) => w.append(op)?,
            None => return Err(StoreError::ReadOnly),
        };
        self.ops.push_back(op.clone());
        Ok(bytes)
    }

    fn flush(&mut self) -> Result<(), StoreError> {
        if let Some(w) = &mut self.writer {
            w.flush()?;
        }
        Ok(())
    }

    fn sync(&mut self) -> Result<(), StoreError> {
        if let Some(w) = &mut self.writer {
            w.sync()?;
        }
        Ok(())
    }

    fn drop_through(&mut self, keep_after: SequenceNumber) {
        while self
            .ops
            .front()
            .map(|op| op.seq <= keep_after)
            .unwrap_or(false)
        {
            self.ops.pop_front();
        }
        self.base = self.base.max(keep_after);
    }
}

type Partitions = BTreeMap<u32, BTreeMap<RowKey, StoredRow>>;

/// Client-facing write side: the Buffer and the local capture log.
struct Ingest {
    buffer: BTreeMap<RowKey, RowData>,
    committed: SequenceNumber,
    log: LogCache,
}

/// Replicated truth: all partitions of the Data table plus fold progress.
struct Applied {
    data: Partitions,
    applied: BTreeMap<u32, SequenceNumber>,
    remote_logs: BTreeMap<u32, LogCache>,
    snapshot_floor: BTreeMap<u32, SequenceNumber>,
}

/// One site's catalog store. Safe to share across threads; local writes
/// serialize on the ingest side and never wait on snapshots, applies of
/// remote deltas, or readers.
///
/// Debug output intentionally stays shallow: a store can hold a lot of
/// rows.
pub struct Store {
    root: PathBuf,
    site: SiteId,
    federation: BTreeMap<u32, SiteId>,
    retention_floor: u64,
    read_only: bool,
    _lock: Option<DirLock>,
    // lock order: applied before ingest, never the reverse
    ingest: Mutex<Ingest>,
    applied: RwLock<Applied>,
    peer_acks: Mutex<BTreeMap<u32, BTreeMap<u32, SequenceNumber>>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("site", &self.site.id())
            .field("root", &self.root)
            .finish_non_exhaustive()
    }
}

/// Outcome of applying a remote batch: new applied cursor per origin that
/// advanced, plus the number of operations actually folded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RemoteApply {
    pub advanced: BTreeMap<SiteId, SequenceNumber>,
    pub applied_ops: usize,
}

impl Store {
    /// Opens (or initializes) the store at `root`, recovering state from
    /// the latest snapshot plus the per-origin logs.
    pub fn open(root: &Path, config: StoreConfig) -> Result<Store, StoreError> {
        if !config.federation.iter().any(|s| *s == config.site) {
            return Err(StoreError::UnknownOrigin(config.site.id().to_string()));
        }
        let read_only = config.read_only;
        if !read_only {
            fs::create_dir_all(root.join("log"))?;
            fs::create_dir_all(root.join("snap"))?;
        }
        let lock = if read_only {
            None
        } else {
            Some(DirLock::acquire(&root.join(".lock")).map_err(|e| match e {
                lock::LockError::Busy => StoreError::Locked(root.to_path_buf()),
                lock::LockError::Io(io) => StoreError::Io(io),
            })?)
        };

        let site_path = root.join("site");
        match fs::read(&site_path) {
            Ok(bytes) => {
                let dir_site: SiteId =
                    decode_exact(&bytes).map_err(StoreError::SnapshotDecode)?;
                if dir_site != config.site {
                    return Err(StoreError::SiteMismatch {
                        dir_site: dir_site.id().to_string(),
                        expected: config.site.id().to_string(),
                    });
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if read_only {
                    return Err(e.into());
                }
                fs::write(&site_path, config.site.encode())?;
            }
            Err(e) => return Err(e.into()),
        }

        let federation: BTreeMap<u32, SiteId> = config
            .federation
            .iter()
            .map(|s| (s.ordinal(), s.clone()))
            .collect();
        let local_ord = config.site.ordinal();

        // recovery base
        let base_snap = snapshot::latest_snapshot(&root.join("snap"))?;
        let mut data: Partitions = federation
            .keys()
            .map(|ord| (*ord, BTreeMap::new()))
            .collect();
        let mut snap_as_of: BTreeMap<u32, SequenceNumber> = BTreeMap::new();
        if let Some(snap) = &base_snap {
            for (site, seq) in &snap.as_of {
                snap_as_of.insert(site.ordinal(), *seq);
            }
            for row in &snap.rows {
                data.entry(row.origin.ordinal())
                    .or_default()
                    .insert(row.row.key(), row.clone());
            }
        }

        let saved_cursors = read_cursor_file(&root.join("cursors"))?;
        let mut applied: BTreeMap<u32, SequenceNumber> = BTreeMap::new();
        let mut remote_logs: BTreeMap<u32, LogCache> = BTreeMap::new();
        let mut ingest: Option<Ingest> = None;

        for (ord, origin) in &federation {
            let path = root.join("log").join(format!("{ord}.oplog"));
            let snap_base = snap_as_of.get(ord).copied().unwrap_or(SequenceNumber::ZERO);
            let ops = oplog::read_log(&path, !read_only)?;
            validate_log(origin, snap_base, &ops, &path)?;
            let base = ops
                .first()
                .map(|o| SequenceNumber(o.seq.0 - 1))
                .unwrap_or(snap_base);
            let high = ops.last().map(|o| o.seq).unwrap_or(base).max(snap_base);
            let writer = if read_only {
                None
            } else {
                Some(LogWriter::open(&path)?)
            };
            let mut cache = LogCache {
                base,
                ops: ops.into(),
                writer,
            };
            // ops at or below the snapshot base are already reflected in it
            cache.drop_through(snap_base);

            if *ord == local_ord {
                // fold the already-applied prefix into Data, keep the rest
                // pending; the buffer always reflects every committed write
                let committed = high;
                let saved = saved_cursors
                    .get(ord)
                    .copied()
                    .unwrap_or(SequenceNumber::ZERO);
                let applied_local = saved.clamp(snap_base, committed);
                for op in cache.slice(snap_base, applied_local) {
                    fold_op(&mut data, &op);
                }
                let mut buffer: BTreeMap<RowKey, RowData> = data[ord]
                    .values()
                    .map(|row| (row.row.key(), row.row.clone()))
                    .collect();
                for op in cache.slice(applied_local, committed) {
                    fold_buffer(&mut buffer, &op);
                }
                applied.insert(*ord, applied_local);
                ingest = Some(Ingest {
                    buffer,
                    committed,
                    log: cache,
                });
            } else {
                // remote ops are applied the moment they are durably
                // logged, so recovery folds everything past the snapshot
                let high = cache.high().max(snap_base);
                for op in cache.slice(snap_base, high) {
                    fold_op(&mut data, &op);
                }
                applied.insert(*ord, high);
                remote_logs.insert(*ord, cache);
            }
        }

        let store = Store {
            root: root.to_path_buf(),
            site: config.site,
            federation,
            retention_floor: config.retention_floor,
            read_only,
            _lock: lock,
            ingest: Mutex::new(ingest.expect("local site is in federation")),
            applied: RwLock::new(Applied {
                data,
                applied,
                remote_logs,
                snapshot_floor: snap_as_of,
            }),
            peer_acks: Mutex::new(BTreeMap::new()),
        };
        if !read_only {
            store.persist_cursors(&store.applied.read().unwrap().applied)?;
        }
        Ok(store)
    }

    pub fn site(&self) -> &SiteId {
        &self.site
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn federation_sites(&self) -> Vec<SiteId> {
        self.federation.values().cloned().collect()
    }

    fn origin_by_ordinal(&self, ord: u32) -> &SiteId {
        &self.federation[&ord]
    }

    fn check_known(&self, origin: &SiteId) -> Result<(), StoreError> {
        match self.federation.get(&origin.ordinal()) {
            Some(known) if known == origin => Ok(()),
            _ => Err(StoreError::UnknownOrigin(origin.id().to_string())),
        }
    }

    /// Applies one client write to the Buffer and durably captures it in
    /// the local operation log. Returns the sequence number assigned to
    /// the captured operation.
    pub fn write_local(&self, mutation: Mutation) -> Result<SequenceNumber, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        match &mutation {
            Mutation::Insert(row) | Mutation::Update(row) => {
                row.validate()?;
                if *row.owner() != self.site {
                    return Err(StoreError::OwnershipViolation {
                        owner: row.owner().id().to_string(),
                        local: self.site.id().to_string(),
                    });
                }
            }
            Mutation::Delete(key) => {
                if let Some(owner) = key_owner(key) {
                    if *owner != self.site {
                        return Err(StoreError::OwnershipViolation {
                            owner: owner.id().to_string(),
                            local: self.site.id().to_string(),
                        });
                    }
                }
            }
        }

        let key = mutation.key();
        let mut ingest = self.ingest.lock().unwrap();
        match &mutation {
            Mutation::Insert(_) => {
                if ingest.buffer.contains_key(&key) {
                    return Err(StoreError::DuplicateKey);
                }
            }
            Mutation::Update(_) | Mutation::Delete(_) => {
                if !ingest.buffer.contains_key(&key) {
                    return Err(StoreError::UnknownKey);
                }
            }
        }

        let seq = ingest.committed.next();
        let op = OperationRecord {
            origin: self.site.clone(),
            seq,
            kind: mutation.kind(),
            subject: mutation.subject(),
            payload: match &mutation {
                Mutation::Insert(r) | Mutation::Update(r) => OpPayload::Row(r.clone()),
                Mutation::Delete(k) => OpPayload::Key(k.clone()),
            },
            committed_at: Utc::now(),
        };
        ingest.log.push(&op)?;
        // one flush per write: the record is OS-visible before we return
        ingest.log.flush()?;
        match mutation {
            Mutation::Insert(row) | Mutation::Update(row) => {
                ingest.buffer.insert(key, row);
            }
            Mutation::Delete(_) => {
                ingest.buffer.remove(&key);
            }
        }
        ingest.committed = seq;
        Ok(seq)
    }

    /// Folds every captured-but-unapplied local operation into the Data
    /// table, in sequence order. Afterwards the Buffer and the local Data
    /// partition are identical and the capture queue is empty.
    pub fn apply_buffer(&self) -> Result<usize, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        let local = self.site.ordinal();
        let mut applied = self.applied.write().unwrap();
        let from = applied.applied[&local];
        let pending = {
            let mut ingest = self.ingest.lock().unwrap();
            let upto = ingest.committed;
            if upto > from {
                ingest.log.sync()?;
            }
            ingest.log.slice(from, upto)
        };
        if pending.is_empty() {
            return Ok(0);
        }
        for op in &pending {
            fold_op(&mut applied.data, op);
        }
        let new_cursor = pending.last().unwrap().seq;
        applied.applied.insert(local, new_cursor);
        self.persist_cursors(&applied.applied)?;
        Ok(pending.len())
    }

    /// Applies a batch of remote operations. The batch is validated as a
    /// whole before anything is folded: per origin, operations must arrive
    /// in sequence order with no gap against the applied cursor. Already
    /// seen `(origin, seq)` pairs are skipped, making redelivery a no-op.
    pub fn apply_remote(&self, ops: &[OperationRecord]) -> Result<RemoteApply, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        for op in ops {
            if op.origin == self.site {
                return Err(StoreError::OriginIsSelf);
            }
            self.check_known(&op.origin)?;
            if !op.is_consistent() {
                return Err(StoreError::InvalidOperation(format!(
                    "inconsistent op ({}, {})",
                    op.origin.id(),
                    op.seq
                )));
            }
            if let OpPayload::Row(row) = &op.payload {
                row.validate()?;
            }
        }

        let mut applied = self.applied.write().unwrap();

        // validate every origin group before touching anything
        let mut groups: BTreeMap<u32, Vec<&OperationRecord>> = BTreeMap::new();
        for op in ops {
            groups.entry(op.origin.ordinal()).or_default().push(op);
        }
        let mut retained: BTreeMap<u32, Vec<&OperationRecord>> = BTreeMap::new();
        for (ord, group) in &groups {
            let cursor = applied.applied[ord];
            let keep: Vec<&OperationRecord> =
                group.iter().copied().filter(|op| op.seq > cursor).collect();
            let mut expected = cursor.next();
            for op in &keep {
                if op.seq != expected {
                    return Err(StoreError::OutOfOrder {
                        origin: self.origin_by_ordinal(*ord).id().to_string(),
                        expected: expected.0,
                        found: op.seq.0,
                    });
                }
                expected = expected.next();
            }
            if !keep.is_empty() {
                retained.insert(*ord, keep);
            }
        }

        let mut result = RemoteApply::default();
        for (ord, keep) in &retained {
            let applied_ref = &mut *applied;
            let cache = applied_ref.remote_logs.get_mut(ord).expect("known origin");
            for op in keep {
                cache.push(op)?;
                fold_op(&mut applied_ref.data, op);
            }
            cache.sync()?;
            let new_cursor = keep.last().unwrap().seq;
            applied_ref.applied.insert(*ord, new_cursor);
            result
                .advanced
                .insert(self.origin_by_ordinal(*ord).clone(), new_cursor);
            result.applied_ops += keep.len();
        }
        if result.applied_ops > 0 {
            self.persist_cursors(&applied.applied)?;
        }
        Ok(result)
    }

    /// Operations from one origin partition with `seq > after`, in order.
    /// Serves only what has been folded into the Data side; local writes
    /// still sitting in the capture queue are not visible here.
    pub fn scan_partition(
        &self,
        origin: &SiteId,
        after: SequenceNumber,
    ) -> Result<Vec<OperationRecord>, StoreError> {
        self.scan_partition_capped(origin, after, usize::MAX)
    }

    /// Like [`Store::scan_partition`] with a result size cap.
    pub fn scan_partition_capped(
        &self,
        origin: &SiteId,
        after: SequenceNumber,
        max: usize,
    ) -> Result<Vec<OperationRecord>, StoreError> {
        self.check_known(origin)?;
        let ord = origin.ordinal();
        let applied = self.applied.read().unwrap();
        let upto = applied.applied[&ord];
        let mut ops = if ord == self.site.ordinal() {
            let ingest = self.ingest.lock().unwrap();
            if after < ingest.log.base && after < upto {
                return Err(StoreError::GapDetected {
                    origin: origin.id().to_string(),
                    first_available: ingest.log.base.next().0,
                });
            }
            ingest.log.slice(after, upto)
        } else {
            let cache = &applied.remote_logs[&ord];
            if after < cache.base && after < upto {
                return Err(StoreError::GapDetected {
                    origin: origin.id().to_string(),
                    first_available: cache.base.next().0,
                });
            }
            cache.slice(after, upto)
        };
        ops.truncate(max);
        Ok(ops)
    }

    /// Copies the entire Data table with its as-of cursors, writes the
    /// snapshot durably under `snap/`, and returns it. Runs entirely on
    /// the Data side: concurrent local writes keep landing in the Buffer.
    pub fn take_snapshot(&self) -> Result<Snapshot, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        let (rows, as_of_ord) = {
            let applied = self.applied.read().unwrap();
            let rows: Vec<StoredRow> = applied
                .data
                .values()
                .flat_map(|part| part.values().cloned())
                .collect();
            (rows, applied.applied.clone())
        };
        let as_of: BTreeMap<SiteId, SequenceNumber> = as_of_ord
            .iter()
            .map(|(ord, seq)| (self.origin_by_ordinal(*ord).clone(), *seq))
            .collect();
        let snap = Snapshot::build(as_of, rows);
        snap.save(&self.root.join("snap"))?;
        let mut applied = self.applied.write().unwrap();
        for (ord, seq) in &as_of_ord {
            let floor = applied.snapshot_floor.entry(*ord).or_default();
            *floor = (*floor).max(*seq);
        }
        drop(applied);
        Ok(snap)
    }

    /// Replaces the remote partitions and cursors with a snapshot's
    /// contents. The local partition and the local capture queue are
    /// untouched. Refuses snapshots whose digest fails or that are behind
    /// what this store has already applied.
    pub fn install_snapshot(&self, snap: &Snapshot) -> Result<(), StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        snap.verify()?;
        for site in snap.as_of.keys() {
            self.check_known(site)?;
        }
        let mut applied = self.applied.write().unwrap();
        let local = self.site.ordinal();
        for (ord, cursor) in &applied.applied {
            if *ord == local || cursor.0 == 0 {
                continue;
            }
            match snap.as_of.get(self.origin_by_ordinal(*ord)) {
                Some(hw) if *hw >= *cursor => {}
                _ => return Err(StoreError::SnapshotStale),
            }
        }

        // merge: local partition stays ours, remote partitions come from
        // the snapshot; the merged snapshot on disk is the commit point
        let mut merged: Vec<StoredRow> = applied
            .data
            .get(&local)
            .map(|part| part.values().cloned().collect())
            .unwrap_or_default();
        for row in &snap.rows {
            if row.origin.ordinal() != local {
                merged.push(row.clone());
            }
        }
        let mut as_of = snap.as_of.clone();
        as_of.insert(self.site.clone(), applied.applied[&local]);
        let merged_snap = Snapshot::build(as_of, merged);
        merged_snap.save(&self.root.join("snap"))?;

        let applied_ref = &mut *applied;
        for (ord, part) in applied_ref.data.iter_mut() {
            if *ord != local {
                part.clear();
            }
        }
        for row in &merged_snap.rows {
            if row.origin.ordinal() != local {
                applied_ref
                    .data
                    .entry(row.origin.ordinal())
                    .or_default()
                    .insert(row.row.key(), row.clone());
            }
        }
        for (site, hw) in &merged_snap.as_of {
            let ord = site.ordinal();
            let floor = applied_ref.snapshot_floor.entry(ord).or_default();
            *floor = (*floor).max(*hw);
            if ord == local {
                continue;
            }
            applied_ref.applied.insert(ord, *hw);
            let path = self.root.join("log").join(format!("{ord}.oplog"));
            oplog::rewrite_log(&path, &[], SequenceNumber::ZERO)?;
            let cache = applied_ref.remote_logs.get_mut(&ord).expect("known origin");
            cache.base = *hw;
            cache.ops.clear();
            cache.writer = Some(LogWriter::open(&path)?);
        }
        self.persist_cursors(&applied.applied)?;
        Ok(())
    }

    /// SHA-256 over the canonical encoding of all Data rows sorted by
    /// (origin ordinal, seq). Equal states yield equal digests.
    pub fn checksum_data(&self) -> [u8; 32] {
        let applied = self.applied.read().unwrap();
        digest_rows(applied.data.values().flat_map(|part| part.values()))
    }

    /// Applied high-water mark per federation origin.
    pub fn cursors(&self) -> BTreeMap<SiteId, SequenceNumber> {
        let applied = self.applied.read().unwrap();
        applied
            .applied
            .iter()
            .map(|(ord, seq)| (self.origin_by_ordinal(*ord).clone(), *seq))
            .collect()
    }

    /// Highest sequence number captured by the local site, applied or not.
    pub fn committed_seq(&self) -> SequenceNumber {
        self.ingest.lock().unwrap().committed
    }

    /// Captured local operations not yet folded into Data.
    pub fn queue_len(&self) -> usize {
        let applied_local = {
            let applied = self.applied.read().unwrap();
            applied.applied[&self.site.ordinal()]
        };
        let ingest = self.ingest.lock().unwrap();
        (ingest.committed.0 - applied_local.0) as usize
    }

    /// The capture queue: local operations awaiting apply, in order.
    pub fn pending_ops(&self) -> Vec<OperationRecord> {
        let applied_local = {
            let applied = self.applied.read().unwrap();
            applied.applied[&self.site.ordinal()]
        };
        let ingest = self.ingest.lock().unwrap();
        let upto = ingest.committed;
        ingest.log.slice(applied_local, upto)
    }

    /// Current Buffer contents (the local partition as clients see it).
    pub fn buffer_rows(&self) -> Vec<RowData> {
        let ingest = self.ingest.lock().unwrap();
        ingest.buffer.values().cloned().collect()
    }

    /// Every row of the Data table, all partitions.
    pub fn data_rows(&self) -> Vec<StoredRow> {
        let applied = self.applied.read().unwrap();
        applied
            .data
            .values()
            .flat_map(|part| part.values().cloned())
            .collect()
    }

    /// Rows of one partition of the Data table.
    pub fn partition_rows(&self, origin: &SiteId) -> Vec<RowData> {
        let applied = self.applied.read().unwrap();
        applied
            .data
            .get(&origin.ordinal())
            .map(|part| part.values().map(|row| row.row.clone()).collect())
            .unwrap_or_default()
    }

    /// Runs `f` over every Data row without copying the table.
    pub fn visit_data<F: FnMut(&StoredRow)>(&self, mut f: F) {
        let applied = self.applied.read().unwrap();
        for part in applied.data.values() {
            for row in part.values() {
                f(row);
            }
        }
    }

    /// Records how far a peer has acknowledged each origin; pruning never
    /// discards operations a registered peer still needs.
    pub fn note_peer_ack(&self, peer: &SiteId, origin: &SiteId, seq: SequenceNumber) {
        let mut acks = self.peer_acks.lock().unwrap();
        let entry = acks
            .entry(peer.ordinal())
            .or_default()
            .entry(origin.ordinal())
            .or_default();
        *entry = (*entry).max(seq);
    }

    /// Drops log prefixes every registered peer has acknowledged, bounded
    /// by the latest snapshot and the retention floor.
    pub fn prune_logs(&self) -> Result<BTreeMap<SiteId, SequenceNumber>, StoreError> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        let acks = self.peer_acks.lock().unwrap().clone();
        let peers: Vec<u32> = self
            .federation
            .keys()
            .copied()
            .filter(|ord| *ord != self.site.ordinal())
            .collect();
        let mut pruned = BTreeMap::new();

        let mut applied = self.applied.write().unwrap();
        for ord in self.federation.keys().copied().collect::<Vec<_>>() {
            let snap_floor = applied
                .snapshot_floor
                .get(&ord)
                .copied()
                .unwrap_or(SequenceNumber::ZERO);
            let min_ack = peers
                .iter()
                .map(|p| {
                    acks.get(p)
                        .and_then(|m| m.get(&ord))
                        .copied()
                        .unwrap_or(SequenceNumber::ZERO)
                })
                .min()
                .unwrap_or(SequenceNumber::ZERO);
            let high = if ord == self.site.ordinal() {
                self.ingest.lock().unwrap().committed
            } else {
                applied.applied[&ord]
            };
            let retention_cut = SequenceNumber(high.0.saturating_sub(self.retention_floor));
            let keep_after = snap_floor.min(min_ack).min(retention_cut);
            let path = self.root.join("log").join(format!("{ord}.oplog"));

            if ord == self.site.ordinal() {
                let mut ingest = self.ingest.lock().unwrap();
                if keep_after <= ingest.log.base {
                    continue;
                }
                let all: Vec<OperationRecord> = ingest.log.ops.iter().cloned().collect();
                oplog::rewrite_log(&path, &all, keep_after)?;
                ingest.log.drop_through(keep_after);
                ingest.log.writer = Some(LogWriter::open(&path)?);
            } else {
                let cache = applied.remote_logs.get_mut(&ord).expect("known origin");
                if keep_after <= cache.base {
                    continue;
                }
                let all: Vec<OperationRecord> = cache.ops.iter().cloned().collect();
                oplog::rewrite_log(&path, &all, keep_after)?;
                cache.drop_through(keep_after);
                cache.writer = Some(LogWriter::open(&path)?);
            }
            pruned.insert(self.origin_by_ordinal(ord).clone(), keep_after);
        }
        Ok(pruned)
    }

    /// Flushes and fsyncs all log writers; used at clean shutdown.
    pub fn sync_all(&self) -> Result<(), StoreError> {
        if self.read_only {
            return Ok(());
        }
        {
            let mut ingest = self.ingest.lock().unwrap();
            ingest.log.sync()?;
        }
        let mut applied = self.applied.write().unwrap();
        for cache in applied.remote_logs.values_mut() {
            cache.sync()?;
        }
        self.persist_cursors(&applied.applied)?;
        Ok(())
    }

    fn persist_cursors(&self, applied: &BTreeMap<u32, SequenceNumber>) -> Result<(), StoreError> {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"CATCURS1");
        buf.extend_from_slice(&(applied.len() as u32).to_be_bytes());
        for (ord, seq) in applied {
            self.origin_by_ordinal(*ord).encode_into(&mut buf);
            buf.extend_from_slice(&seq.0.to_be_bytes());
        }
        let path = self.root.join("cursors");
        let tmp = self.root.join("cursors.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            use std::io::Write;
            f.write_all(&buf)?;
            f.sync_data()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

fn read_cursor_file(path: &Path) -> Result<BTreeMap<u32, SequenceNumber>, StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(e.into()),
    };
    let mut r = crate::model::Reader::new(&bytes);
    let magic = r.array::<8>().map_err(StoreError::SnapshotDecode)?;
    if &magic != b"CATCURS1" {
        return Err(StoreError::SnapshotDecode(DecodeError::BadTag {
            what: "cursor magic",
            value: magic[0],
        }));
    }
    let n = r.u32().map_err(StoreError::SnapshotDecode)?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let site = <SiteId as crate::model::CanonicalDecode>::decode_from(&mut r)
            .map_err(StoreError::SnapshotDecode)?;
        let seq = SequenceNumber(r.u64().map_err(StoreError::SnapshotDecode)?);
        out.insert(site.ordinal(), seq);
    }
    Ok(out)
}

fn validate_log(
    origin: &SiteId,
    snap_base: SequenceNumber,
    ops: &[OperationRecord],
    path: &Path,
) -> Result<(), StoreError> {
    let mut prev: Option<SequenceNumber> = None;
    for op in ops {
        if op.origin != *origin {
            return Err(StoreError::CorruptLog {
                path: path.to_path_buf(),
                offset: 0,
            });
        }
        if let Some(p) = prev {
            if op.seq.0 != p.0 + 1 {
                return Err(StoreError::LogGap {
                    origin: origin.id().to_string(),
                    expected: p.0 + 1,
                    found: op.seq.0,
                });
            }
        }
        prev = Some(op.seq);
    }
    if let Some(first) = ops.first() {
        if first.seq > snap_base.next() {
            return Err(StoreError::LogGap {
                origin: origin.id().to_string(),
                expected: snap_base.next().0,
                found: first.seq.0,
            });
        }
    }
    Ok(())
}

fn key_owner(key: &RowKey) -> Option<&SiteId> {
    match key {
        RowKey::File(_) | RowKey::Host(_) => None,
        RowKey::Cluster(c) => Some(&c.site),
        RowKey::Site(s) => Some(s),
        RowKey::Cost(from, _) => Some(from),
    }
}

/// Folds one operation into the Data table. Inserts and updates upsert,
/// deletes remove; redelivery is absorbed by the cursor gating above, and
/// delete-of-absent stays a no-op because capture is at-least-once.
fn fold_op(data: &mut Partitions, op: &OperationRecord) {
    let part = data.entry(op.origin.ordinal()).or_default();
    match (&op.kind, &op.payload) {
        (OpKind::Insert | OpKind::Update, OpPayload::Row(row)) => {
            part.insert(
                row.key(),
                StoredRow {
                    origin: op.origin.clone(),
                    seq: op.seq,
                    row: row.clone(),
                },
            );
        }
        (OpKind::Delete, OpPayload::Key(key)) => {
            part.remove(key);
        }
        _ => unreachable!("validated on entry"),
    }
}

fn fold_buffer(buffer: &mut BTreeMap<RowKey, RowData>, op: &OperationRecord) {
    match (&op.kind, &op.payload) {
        (OpKind::Insert | OpKind::Update, OpPayload::Row(row)) => {
            buffer.insert(row.key(), row.clone());
        }
        (OpKind::Delete, OpPayload::Key(key)) => {
            buffer.remove(key);
        }
        _ => unreachable!("validated on entry"),
    }
}

#[cfg(test)]
mod tests;
