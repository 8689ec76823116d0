//! Logical-to-physical file name translation.
//!
//! Analysis code asks for files by logical name; where the bytes actually
//! live is decided here, by walking a search path from the
//! `CATALOG_SEARCH_PATH` environment variable. The path is a
//! colon-separated list of local directories and reserved words for the
//! catalog tiers:
//!
//! * `DB_LOCAL_DISK` — a disk replica at the local site
//! * `DB_CLOSEST`    — the replica with the smallest link cost
//! * `DB_ANY`        — any replica, in query order
//!
//! The first element that produces a hit wins; directories are checked on
//! the local filesystem and are authoritative when they hit.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::model::LogicalFileName;
use crate::query::{CatalogView, QueryError, ReplicaView};
use crate::store::Store;

/// Environment variable consulted by the CLI for the default search path.
pub const SEARCH_PATH_ENV: &str = "CATALOG_SEARCH_PATH";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("search path is empty")]
    EmptyPath,
    #[error("search path element {0:?} is neither an absolute directory nor a reserved word")]
    UnknownToken(String),
    #[error("{lfn} not found in any search path element")]
    NotFound { lfn: String },
    #[error(transparent)]
    Query(#[from] QueryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReservedWord {
    DbLocalDisk,
    DbClosest,
    DbAny,
}

impl ReservedWord {
    fn parse(token: &str) -> Option<ReservedWord> {
        match token {
            "DB_LOCAL_DISK" => Some(ReservedWord::DbLocalDisk),
            "DB_CLOSEST" => Some(ReservedWord::DbClosest),
            "DB_ANY" => Some(ReservedWord::DbAny),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ReservedWord::DbLocalDisk => "DB_LOCAL_DISK",
            ReservedWord::DbClosest => "DB_CLOSEST",
            ReservedWord::DbAny => "DB_ANY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathElement {
    LocalDir(PathBuf),
    Reserved(ReservedWord),
}

/// Ordered list of places to look for a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchPath {
    elements: Vec<PathElement>,
}

impl SearchPath {
    /// Parses the colon-separated grammar: tokens starting with `/` are
    /// local directories, the three reserved words select catalog tiers,
    /// anything else is rejected.
    pub fn parse(raw: &str) -> Result<SearchPath, ResolveError> {
        if raw.is_empty() {
            return Err(ResolveError::EmptyPath);
        }
        let mut elements = Vec::new();
        for token in raw.split(':') {
            if token.starts_with('/') {
                elements.push(PathElement::LocalDir(PathBuf::from(token)));
            } else if let Some(word) = ReservedWord::parse(token) {
                elements.push(PathElement::Reserved(word));
            } else {
                return Err(ResolveError::UnknownToken(token.to_string()));
            }
        }
        Ok(SearchPath { elements })
    }

    pub fn elements(&self) -> &[PathElement] {
        &self.elements
    }
}

impl fmt::Display for SearchPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .elements
            .iter()
            .map(|e| match e {
                PathElement::LocalDir(p) => p.display().to_string(),
                PathElement::Reserved(w) => w.as_str().to_string(),
            })
            .collect();
        f.write_str(&parts.join(":"))
    }
}

/// Where the search stopped: a directory hit on the local filesystem or a
/// catalog replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionSource {
    Directory,
    Catalog,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Resolution {
    pub lfn: LogicalFileName,
    pub physical_path: String,
    pub source: ResolutionSource,
    pub replica: Option<ReplicaView>,
}

/// Walks the search path in order and returns the first hit. Pure given
/// the filesystem, the Data snapshot, the path, and the name: repeated
/// calls under unchanged state agree.
pub fn resolve(
    lfn: &LogicalFileName,
    path: &SearchPath,
    store: &Store,
    site: &str,
) -> Result<Resolution, ResolveError> {
    let view = CatalogView::capture(store, false);
    resolve_in_view(lfn, path, &view, site)
}

/// [`resolve`] against an already captured view.
pub fn resolve_in_view(
    lfn: &LogicalFileName,
    path: &SearchPath,
    view: &CatalogView,
    site: &str,
) -> Result<Resolution, ResolveError> {
    for element in &path.elements {
        match element {
            PathElement::LocalDir(dir) => {
                let candidate = dir.join(lfn.as_str());
                if file_exists(&candidate) {
                    return Ok(Resolution {
                        lfn: lfn.clone(),
                        physical_path: candidate.to_string_lossy().into_owned(),
                        source: ResolutionSource::Directory,
                        replica: None,
                    });
                }
            }
            PathElement::Reserved(word) => {
                let hit = match word {
                    ReservedWord::DbLocalDisk => view.find_local_disk_replica(lfn, site)?,
                    ReservedWord::DbClosest => view
                        .find_closest_replica(lfn, site)?
                        .map(|c| c.replica),
                    ReservedWord::DbAny => view.find_replicas(lfn).into_iter().next(),
                };
                if let Some(replica) = hit {
                    return Ok(Resolution {
                        lfn: lfn.clone(),
                        physical_path: replica.path.clone(),
                        source: ResolutionSource::Catalog,
                        replica: Some(replica),
                    });
                }
            }
        }
    }
    Err(ResolveError::NotFound {
        lfn: lfn.to_string(),
    })
}

fn file_exists(path: &Path) -> bool {
    std::fs::metadata(path).map(|m| m.is_file()).unwrap_or(false)
}
