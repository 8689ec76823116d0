//! Append-only per-origin operation log.
//!
//! One file per origin partition, `<root>/log/<origin-ordinal>.oplog`.
//! Each record is `[len u32 BE][canonical OperationRecord][crc32 u32 BE]`
//! where the CRC (IEEE polynomial) covers the record bytes only.
//!
//! A torn tail (the file ends inside a record) is treated as an interrupted
//! append and truncated on open; a complete record with a bad CRC means the
//! log is damaged and the store refuses to open.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::model::{decode_exact, CanonicalEncode, OperationRecord, SequenceNumber};
use crate::store::StoreError;

pub(crate) struct LogWriter {
    writer: BufWriter<File>,
}

impl LogWriter {
    pub(crate) fn open(path: &Path) -> Result<LogWriter, StoreError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(LogWriter {
            writer: BufWriter::new(file),
        })
    }

    /// Appends one record into the write buffer. Not visible to the OS
    /// until [`LogWriter::flush`]; batch appends flush once at the end.
    pub(crate) fn append(&mut self, op: &OperationRecord) -> Result<usize, StoreError> {
        let body = op.encode();
        let crc = crc32fast::hash(&body);
        self.writer.write_all(&(body.len() as u32).to_be_bytes())?;
        self.writer.write_all(&body)?;
        self.writer.write_all(&crc.to_be_bytes())?;
        Ok(body.len() + 8)
    }

    /// Pushes buffered records to the OS; they now survive a process kill.
    pub(crate) fn flush(&mut self) -> Result<(), StoreError> {
        self.writer.flush()?;
        Ok(())
    }

    /// Flush plus fsync, for power-loss durability at batch boundaries.
    pub(crate) fn sync(&mut self) -> Result<(), StoreError> {
        self.writer.flush()?;
        self.writer.get_ref().sync_data()?;
        Ok(())
    }
}

/// Reads every record in a log file. Returns the decoded operations and
/// truncates a torn tail in place when `repair` is set.
pub(crate) fn read_log(path: &Path, repair: bool) -> Result<Vec<OperationRecord>, StoreError> {
    let mut data = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut data)?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    }

    let mut ops = Vec::new();
    let mut pos = 0usize;
    let mut good_end = 0usize;
    while pos < data.len() {
        if pos + 4 > data.len() {
            break; // torn length prefix
        }
        let len = u32::from_be_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        let end = pos + 4 + len + 4;
        if end > data.len() {
            break; // torn record body or crc
        }
        let body = &data[pos + 4..pos + 4 + len];
        let stored_crc = u32::from_be_bytes(data[pos + 4 + len..end].try_into().unwrap());
        if crc32fast::hash(body) != stored_crc {
            return Err(StoreError::CorruptLog {
                path: path.to_path_buf(),
                offset: pos as u64,
            });
        }
        let op = decode_exact::<OperationRecord>(body).map_err(|_| StoreError::CorruptLog {
            path: path.to_path_buf(),
            offset: pos as u64,
        })?;
        ops.push(op);
        pos = end;
        good_end = end;
    }

    if good_end < data.len() {
        if repair {
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(good_end as u64)?;
            f.sync_data()?;
        } else {
            log::warn!(
                "{}: ignoring torn tail of {} bytes",
                path.display(),
                data.len() - good_end
            );
        }
    }
    Ok(ops)
}

/// Rewrites a log keeping only records with `seq > keep_after`. Atomic:
/// the new file is built alongside and renamed over the old one.
pub(crate) fn rewrite_log(
    path: &Path,
    ops: &[OperationRecord],
    keep_after: SequenceNumber,
) -> Result<(), StoreError> {
    let tmp = path.with_extension("oplog.tmp");
    {
        let file = File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        for op in ops.iter().filter(|op| op.seq > keep_after) {
            let body = op.encode();
            let crc = crc32fast::hash(&body);
            w.write_all(&(body.len() as u32).to_be_bytes())?;
            w.write_all(&body)?;
            w.write_all(&crc.to_be_bytes())?;
        }
        w.flush()?;
        w.get_ref().sync_data()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
