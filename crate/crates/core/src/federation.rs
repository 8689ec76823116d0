//! Federation membership config.
//!
//! Sites join the federation administratively: operators share a text file
//! with one line per site, `<ordinal> <site-id> <host:port>`. Blank lines
//! and `#` comments are allowed. Peers refuse to talk unless both sides
//! hold the same membership (compared by digest).

use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{CanonicalEncode, ModelError, SiteId};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("line {0}: expected `<ordinal> <site-id> <host:port>`")]
    Malformed(usize),
    #[error("line {0}: {1}")]
    BadSite(usize, ModelError),
    #[error("duplicate ordinal {0}")]
    DuplicateOrdinal(u32),
    #[error("duplicate site id {0:?}")]
    DuplicateId(String),
    #[error("duplicate address {0:?}")]
    DuplicateAddress(String),
    #[error("federation has no sites")]
    Empty,
    #[error("site {0:?} is not in the federation")]
    UnknownSite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One membership line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FederationEntry {
    pub site: SiteId,
    pub address: String,
}

/// Parsed federation membership, sorted by ordinal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Federation {
    entries: Vec<FederationEntry>,
}

impl Federation {
    pub fn parse(text: &str) -> Result<Federation, FederationError> {
        let mut entries: Vec<FederationEntry> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (ord, id, addr) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(o), Some(i), Some(a), None) => (o, i, a),
                _ => return Err(FederationError::Malformed(lineno)),
            };
            let ordinal: u32 = ord.parse().map_err(|_| FederationError::Malformed(lineno))?;
            let site =
                SiteId::new(ordinal, id).map_err(|e| FederationError::BadSite(lineno, e))?;
            entries.push(FederationEntry {
                site,
                address: addr.to_string(),
            });
        }
        if entries.is_empty() {
            return Err(FederationError::Empty);
        }
        entries.sort_by_key(|e| e.site.ordinal());
        for pair in entries.windows(2) {
            if pair[0].site.ordinal() == pair[1].site.ordinal() {
                return Err(FederationError::DuplicateOrdinal(pair[0].site.ordinal()));
            }
        }
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.site.id() == b.site.id() {
                    return Err(FederationError::DuplicateId(a.site.id().to_string()));
                }
                if a.address == b.address {
                    return Err(FederationError::DuplicateAddress(a.address.clone()));
                }
            }
        }
        Ok(Federation { entries })
    }

    pub fn load(path: &Path) -> Result<Federation, FederationError> {
        Federation::parse(&fs::read_to_string(path)?)
    }

    pub fn entries(&self) -> &[FederationEntry] {
        &self.entries
    }

    pub fn sites(&self) -> impl Iterator<Item = &SiteId> {
        self.entries.iter().map(|e| &e.site)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn by_id(&self, id: &str) -> Result<&FederationEntry, FederationError> {
        self.entries
            .iter()
            .find(|e| e.site.id() == id)
            .ok_or_else(|| FederationError::UnknownSite(id.to_string()))
    }

    pub fn by_ordinal(&self, ordinal: u32) -> Option<&FederationEntry> {
        self.entries.iter().find(|e| e.site.ordinal() == ordinal)
    }

    pub fn contains(&self, site: &SiteId) -> bool {
        self.entries.iter().any(|e| e.site == *site)
    }

    /// SHA-256 over the canonical encoding of the sorted entries. Two
    /// operators holding differently formatted copies of the same
    /// membership still agree on the digest.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for entry in &self.entries {
            let mut buf = Vec::new();
            entry.site.encode_into(&mut buf);
            crate::model::codec_put_string(&mut buf, &entry.address);
            hasher.update(&buf);
        }
        hasher.finalize().into()
    }
}

impl fmt::Display for Federation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{} {} {}", e.site.ordinal(), e.site.id(), e.address)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# production federation
1 BNL 127.0.0.1:7474
2 SBU 127.0.0.1:7475

3 VU 127.0.0.1:7476
";

    #[test]
    fn parses_and_sorts() {
        let fed = Federation::parse(SAMPLE).unwrap();
        assert_eq!(fed.len(), 3);
        assert_eq!(fed.entries()[0].site.id(), "BNL");
        assert_eq!(fed.by_id("VU").unwrap().address, "127.0.0.1:7476");
        assert!(fed.by_id("CCJ").is_err());
    }

    #[test]
    fn digest_ignores_formatting() {
        let a = Federation::parse(SAMPLE).unwrap();
        let b = Federation::parse("3 VU 127.0.0.1:7476\n1 BNL 127.0.0.1:7474\n2   SBU\t127.0.0.1:7475\n").unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = Federation::parse("1 BNL 127.0.0.1:7474\n2 SBU 127.0.0.1:7475\n").unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn rejects_duplicates() {
        assert!(matches!(
            Federation::parse("1 BNL x:1\n1 SBU x:2\n"),
            Err(FederationError::DuplicateOrdinal(1))
        ));
        assert!(matches!(
            Federation::parse("1 BNL x:1\n2 BNL x:2\n"),
            Err(FederationError::DuplicateId(_))
        ));
        assert!(matches!(
            Federation::parse("1 BNL x:1\n2 SBU x:1\n"),
            Err(FederationError::DuplicateAddress(_))
        ));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            Federation::parse("1 BNL\n"),
            Err(FederationError::Malformed(1))
        ));
        assert!(matches!(
            Federation::parse("x BNL a:1\n"),
            Err(FederationError::Malformed(1))
        ));
        assert!(matches!(Federation::parse(""), Err(FederationError::Empty)));
    }
}
