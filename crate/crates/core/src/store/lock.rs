//! Advisory lock on the store root, so two read-write opens of the same
//! directory cannot interleave log appends.

use std::fs::{File, OpenOptions};
use std::os::unix::io::AsRawFd;
use std::path::Path;

#[derive(Debug)]
pub(crate) enum LockError {
    Busy,
    Io(std::io::Error),
}

pub(crate) struct DirLock {
    _file: File,
}

impl DirLock {
    /// Takes an exclusive flock, non-blocking. Released when dropped (or
    /// the process dies).
    pub(crate) fn acquire(path: &Path) -> Result<DirLock, LockError> {
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .open(path)
            .map_err(LockError::Io)?;
        let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
        if rc != 0 {
            let err = std::io::Error::last_os_error();
            return Err(match err.raw_os_error() {
                Some(code) if code == libc::EWOULDBLOCK => LockError::Busy,
                _ => LockError::Io(err),
            });
        }
        Ok(DirLock { _file: file })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_acquire_is_busy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(".lock");
        let held = DirLock::acquire(&path).unwrap();
        assert!(matches!(DirLock::acquire(&path), Err(LockError::Busy)));
        drop(held);
        assert!(DirLock::acquire(&path).is_ok());
    }
}
