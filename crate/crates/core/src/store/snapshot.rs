//! Full-state snapshots: the bootstrap payload for new sites and the
//! recovery base that lets old log prefixes be pruned.
//!
//! File format (`<root>/snap/<digest-hex>.snap`): magic `CATSNAP1`, the
//! as-of cursor map, the rows sorted by (origin ordinal, seq), then the
//! 32-byte row digest. The digest is recomputable from the rows alone, so
//! a receiver can verify a snapshot no matter how it arrived.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest as _, Sha256};

use crate::model::{
    CanonicalDecode, CanonicalEncode, DecodeError, Reader, RowData, SequenceNumber, SiteId,
};
use crate::store::StoreError;

const MAGIC: &[u8; 8] = b"CATSNAP1";

/// One row of the replicated Data table together with its provenance: the
/// origin partition it belongs to and the sequence number of the operation
/// that last wrote it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRow {
    pub origin: SiteId,
    pub seq: SequenceNumber,
    pub row: RowData,
}

impl CanonicalEncode for StoredRow {
    fn encode_into(&self, buf: &mut Vec<u8>) {
        self.origin.encode_into(buf);
        buf.extend_from_slice(&self.seq.0.to_be_bytes());
        self.row.encode_into(buf);
    }
}

impl CanonicalDecode for StoredRow {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(StoredRow {
            origin: SiteId::decode_from(r)?,
            seq: SequenceNumber(r.u64()?),
            row: RowData::decode_from(r)?,
        })
    }
}

/// SHA-256 over the canonical encodings of rows sorted by
/// (origin ordinal, seq). This is both the Data-table checksum and the
/// snapshot digest; equal states yield equal digests.
pub fn digest_rows<'a, I>(rows: I) -> [u8; 32]
where
    I: Iterator<Item = &'a StoredRow>,
{
    let mut sorted: Vec<&StoredRow> = rows.collect();
    sorted.sort_by_key(|r| (r.origin.ordinal(), r.seq));
    let mut hasher = Sha256::new();
    for row in sorted {
        hasher.update(row.encode());
    }
    hasher.finalize().into()
}

/// A consistent copy of the whole Data table: every partition's rows plus
/// the per-origin high-water marks they reflect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub as_of: BTreeMap<SiteId, SequenceNumber>,
    pub rows: Vec<StoredRow>,
    pub digest: [u8; 32],
}

impl Snapshot {
    pub fn build(as_of: BTreeMap<SiteId, SequenceNumber>, mut rows: Vec<StoredRow>) -> Snapshot {
        rows.sort_by_key(|r| (r.origin.ordinal(), r.seq));
        let digest = digest_rows(rows.iter());
        Snapshot {
            as_of,
            rows,
            digest,
        }
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest)
    }

    /// Structural checks: digest matches rows, every row's origin has an
    /// as-of entry and sits at or below it.
    pub fn verify(&self) -> Result<(), StoreError> {
        if digest_rows(self.rows.iter()) != self.digest {
            return Err(StoreError::DigestMismatch);
        }
        for row in &self.rows {
            match self.as_of.get(&row.origin) {
                Some(hw) if row.seq <= *hw => {}
                _ => return Err(StoreError::InconsistentSnapshot),
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.as_of.len() as u32).to_be_bytes());
        for (site, seq) in &self.as_of {
            site.encode_into(&mut buf);
            buf.extend_from_slice(&seq.0.to_be_bytes());
        }
        buf.extend_from_slice(&(self.rows.len() as u64).to_be_bytes());
        let mut sorted: Vec<&StoredRow> = self.rows.iter().collect();
        sorted.sort_by_key(|r| (r.origin.ordinal(), r.seq));
        for row in sorted {
            row.encode_into(&mut buf);
        }
        buf.extend_from_slice(&self.digest);
        buf
    }

    pub fn decode(buf: &[u8]) -> Result<Snapshot, StoreError> {
        let mut r = Reader::new(buf);
        let magic = r.array::<8>().map_err(StoreError::SnapshotDecode)?;
        if &magic != MAGIC {
            return Err(StoreError::SnapshotDecode(DecodeError::BadTag {
                what: "snapshot magic",
                value: magic[0],
            }));
        }
        let n = r.u32().map_err(StoreError::SnapshotDecode)?;
        let mut as_of = BTreeMap::new();
        for _ in 0..n {
            let site = SiteId::decode_from(&mut r).map_err(StoreError::SnapshotDecode)?;
            let seq = SequenceNumber(r.u64().map_err(StoreError::SnapshotDecode)?);
            as_of.insert(site, seq);
        }
        let rows_n = r.u64().map_err(StoreError::SnapshotDecode)?;
        let mut rows = Vec::with_capacity(rows_n.min(1 << 20) as usize);
        for _ in 0..rows_n {
            rows.push(StoredRow::decode_from(&mut r).map_err(StoreError::SnapshotDecode)?);
        }
        let digest = r.array::<32>().map_err(StoreError::SnapshotDecode)?;
        if r.remaining() != 0 {
            return Err(StoreError::SnapshotDecode(DecodeError::TrailingBytes));
        }
        let snap = Snapshot {
            as_of,
            rows,
            digest,
        };
        snap.verify()?;
        Ok(snap)
    }

    /// Writes the snapshot under `snap_dir`, named by digest. Atomic.
    pub fn save(&self, snap_dir: &Path) -> Result<PathBuf, StoreError> {
        fs::create_dir_all(snap_dir)?;
        let path = snap_dir.join(format!("{}.snap", self.digest_hex()));
        let tmp = snap_dir.join(format!("{}.tmp", self.digest_hex()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.encode())?;
            f.sync_data()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Snapshot, StoreError> {
        Snapshot::decode(&fs::read(path)?)
    }
}

/// Finds the snapshot with the greatest total as-of coverage under
/// `snap_dir`; ties broken by digest for determinism.
pub(crate) fn latest_snapshot(snap_dir: &Path) -> Result<Option<Snapshot>, StoreError> {
    let entries = match fs::read_dir(snap_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut best: Option<(u128, String, Snapshot)> = None;
    for entry in entries {
        let entry = entry?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("snap") {
            continue;
        }
        let snap = Snapshot::load(&path)?;
        let coverage: u128 = snap.as_of.values().map(|s| s.0 as u128).sum();
        let key = snap.digest_hex();
        let better = match &best {
            None => true,
            Some((c, k, _)) => coverage > *c || (coverage == *c && key > *k),
        };
        if better {
            best = Some((coverage, key, snap));
        }
    }
    Ok(best.map(|(_, _, s)| s))
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FileRecord, LogicalFileName, StorageClass};
    use chrono::{TimeZone, Utc};

    fn site(ord: u32, id: &str) -> SiteId {
        SiteId::new(ord, id).unwrap()
    }

    fn row(ord: u32, id: &str, seq: u64) -> StoredRow {
        let origin = site(ord, id);
        StoredRow {
            origin: origin.clone(),
            seq: SequenceNumber(seq),
            row: RowData::File(FileRecord {
                lfn: LogicalFileName::new(format!("f{ord}_{seq}").as_str()).unwrap(),
                host: "h".into(),
                path: format!("/d/f{ord}_{seq}"),
                storage: StorageClass::Disk,
                production: String::new(),
                size_bytes: 0,
                created_at: Utc.timestamp_opt(0, 0).unwrap(),
                origin,
            }),
        }
    }

    fn sample() -> Snapshot {
        let mut as_of = BTreeMap::new();
        as_of.insert(site(1, "BNL"), SequenceNumber(2));
        as_of.insert(site(2, "SBU"), SequenceNumber(1));
        Snapshot::build(
            as_of,
            vec![row(1, "BNL", 1), row(1, "BNL", 2), row(2, "SBU", 1)],
        )
    }

    #[test]
    fn empty_snapshot() {
        let snap = Snapshot::build(BTreeMap::new(), Vec::new());
        assert!(snap.rows.is_empty());
        assert_eq!(snap.digest, digest_rows(std::iter::empty()));
        snap.verify().unwrap();
    }

    #[test]
    fn round_trips() {
        let snap = sample();
        let back = Snapshot::decode(&snap.encode()).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn flipped_byte_is_digest_mismatch() {
        let snap = sample();
        let mut bytes = snap.encode();
        // flip a byte inside the row region, not the header or trailer
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        assert!(Snapshot::decode(&bytes).is_err());
    }

    #[test]
    fn row_beyond_as_of_rejected() {
        let mut as_of = BTreeMap::new();
        as_of.insert(site(1, "BNL"), SequenceNumber(1));
        let snap = Snapshot::build(as_of, vec![row(1, "BNL", 5)]);
        assert!(matches!(
            snap.verify(),
            Err(StoreError::InconsistentSnapshot)
        ));
    }

    #[test]
    fn save_and_pick_latest() {
        let dir = tempfile::tempdir().unwrap();
        let old = Snapshot::build(
            {
                let mut m = BTreeMap::new();
                m.insert(site(1, "BNL"), SequenceNumber(1));
                m
            },
            vec![row(1, "BNL", 1)],
        );
        let new = sample();
        old.save(dir.path()).unwrap();
        new.save(dir.path()).unwrap();
        let picked = latest_snapshot(dir.path()).unwrap().unwrap();
        assert_eq!(picked.digest, new.digest);
    }
}
