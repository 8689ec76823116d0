//! Domain types for the file catalog: identifiers, replica records, the
//! topology tables, and the operation records that flow through the
//! replication logs.
//!
//! Everything here is an immutable value type. The canonical byte encoding
//! shared by the durable log, the wire protocol, and state digests lives in
//! [`codec`].

mod codec;
mod cost;

pub use codec::{decode_exact, CanonicalDecode, CanonicalEncode, DecodeError, Reader};
pub(crate) use codec::put_string as codec_put_string;
pub use cost::Cost;

use std::fmt;

use chrono::{DateTime, TimeZone, Utc};
use serde::Serialize;
use thiserror::Error;

/// Longest accepted logical file name, in bytes.
pub const MAX_LFN_LEN: usize = 255;

/// Longest accepted site id token, in bytes.
pub const MAX_SITE_ID_LEN: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("logical file name is empty")]
    EmptyName,
    #[error("illegal character {0:?} in name")]
    IllegalCharacter(char),
    #[error("name exceeds {MAX_LFN_LEN} bytes")]
    TooLong,
    #[error("site id is empty")]
    EmptySiteId,
    #[error("site id exceeds {MAX_SITE_ID_LEN} bytes")]
    SiteIdTooLong,
    #[error("cost denominator is zero")]
    ZeroDenominator,
    #[error("cost from a site to itself must be zero")]
    NonZeroSelfCost,
    #[error("malformed cost literal {0:?}")]
    BadCostLiteral(String),
    #[error("hostname is empty")]
    EmptyHostname,
    #[error("cluster name is empty")]
    EmptyClusterName,
    #[error("physical path {0:?} is not absolute")]
    RelativePath(String),
    #[error("unknown site {0:?}")]
    UnknownSite(String),
    #[error("unknown cluster {0:?}")]
    UnknownCluster(String),
    #[error("duplicate site ordinal {0}")]
    DuplicateOrdinal(u32),
    #[error("duplicate site id {0:?}")]
    DuplicateSiteId(String),
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-'
}

/// Stable, location-independent identifier for a file. One logical name,
/// many physical replicas.
///
/// Grammar: one to 255 bytes drawn from `[A-Za-z0-9._-]`. Names double as
/// file basenames, so the charset is filesystem-safe everywhere.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct LogicalFileName(String);

impl LogicalFileName {
    /// Validates `raw` against the name grammar.
    pub fn new(raw: &str) -> Result<Self, ModelError> {
        if raw.is_empty() {
            return Err(ModelError::EmptyName);
        }
        if raw.len() > MAX_LFN_LEN {
            return Err(ModelError::TooLong);
        }
        if let Some(bad) = raw.chars().find(|c| !is_name_char(*c)) {
            return Err(ModelError::IllegalCharacter(bad));
        }
        Ok(LogicalFileName(raw.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LogicalFileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A federation member. The ordinal is assigned at registration, is unique,
/// and stays fixed for the life of the federation; it keys the per-origin
/// replication logs and sort orders.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SiteId {
    ordinal: u32,
    id: String,
}

impl SiteId {
    pub fn new(ordinal: u32, id: &str) -> Result<Self, ModelError> {
        if id.is_empty() {
            return Err(ModelError::EmptySiteId);
        }
        if id.len() > MAX_SITE_ID_LEN {
            return Err(ModelError::SiteIdTooLong);
        }
        if let Some(bad) = id.chars().find(|c| !is_name_char(*c)) {
            return Err(ModelError::IllegalCharacter(bad));
        }
        Ok(SiteId {
            ordinal,
            id: id.to_string(),
        })
    }

    pub fn ordinal(&self) -> u32 {
        self.ordinal
    }

    pub fn id(&self) -> &str {
        &self.id
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Disk or tape. Tape models the mass-storage master copies; disk replicas
/// are the ones analysis jobs want.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageClass {
    Disk,
    Tape,
}

impl StorageClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StorageClass::Disk => "disk",
            StorageClass::Tape => "tape",
        }
    }

    pub fn parse(s: &str) -> Option<StorageClass> {
        match s {
            "disk" => Some(StorageClass::Disk),
            "tape" => Some(StorageClass::Tape),
            _ => None,
        }
    }
}

impl fmt::Display for StorageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A set of NFS-interconnected hosts. A cluster belongs to exactly one site,
/// so the pair (name, site) identifies it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ClusterId {
    pub name: String,
    pub site: SiteId,
}

impl ClusterId {
    pub fn new(name: &str, site: SiteId) -> Result<Self, ModelError> {
        if name.is_empty() {
            return Err(ModelError::EmptyClusterName);
        }
        Ok(ClusterId {
            name: name.to_string(),
            site,
        })
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.site.id(), self.name)
    }
}

/// A physical machine with local data storage: a computer with local disks
/// or a tape frontend. Hostnames are unique within the federation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Host {
    pub hostname: String,
    pub cluster: ClusterId,
    pub storage: StorageClass,
}

impl Host {
    pub fn new(hostname: &str, cluster: ClusterId, storage: StorageClass) -> Result<Self, ModelError> {
        if hostname.is_empty() {
            return Err(ModelError::EmptyHostname);
        }
        Ok(Host {
            hostname: hostname.to_string(),
            cluster,
            storage,
        })
    }
}

/// Relative cost of moving a file from one site to another. Directional:
/// cost(A,B) and cost(B,A) are independent entries. cost(A,A) is zero by
/// axiom.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LinkCost {
    pub from: SiteId,
    pub to: SiteId,
    pub cost: Cost,
}

impl LinkCost {
    pub fn new(from: SiteId, to: SiteId, cost: Cost) -> Result<Self, ModelError> {
        if from == to && !cost.is_zero() {
            return Err(ModelError::NonZeroSelfCost);
        }
        Ok(LinkCost { from, to, cost })
    }
}

/// One catalog row in the `files` table: a logical name plus one physical
/// replica location, stamped with the partition (site) that owns it.
///
/// `(lfn, host, path)` is the row key. `origin` is set by the creating site
/// and never changes; remote stores may read the row but never write it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FileRecord {
    pub lfn: LogicalFileName,
    pub host: String,
    pub path: String,
    pub storage: StorageClass,
    pub production: String,
    pub size_bytes: u64,
    #[serde(with = "chrono::serde::ts_microseconds")]
    pub created_at: DateTime<Utc>,
    pub origin: SiteId,
}

impl FileRecord {
    /// Structural validation shared by local writes and remote applies.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.host.is_empty() {
            return Err(ModelError::EmptyHostname);
        }
        if !self.path.starts_with('/') {
            return Err(ModelError::RelativePath(self.path.clone()));
        }
        Ok(())
    }

    pub fn key(&self) -> FileKey {
        FileKey {
            lfn: self.lfn.clone(),
            host: self.host.clone(),
            path: self.path.clone(),
        }
    }
}

/// Primary key of a `files` row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct FileKey {
    pub lfn: LogicalFileName,
    pub host: String,
    pub path: String,
}

/// The five replicated catalog tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Files,
    Hosts,
    Clusters,
    Sites,
    Costs,
}

impl Subject {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subject::Files => "files",
            Subject::Hosts => "hosts",
            Subject::Clusters => "clusters",
            Subject::Sites => "sites",
            Subject::Costs => "costs",
        }
    }
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A full row of one of the replicated tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(untagged)]
pub enum RowData {
    File(FileRecord),
    Host(Host),
    Cluster(ClusterId),
    Site(SiteId),
    Cost(LinkCost),
}

impl RowData {
    pub fn subject(&self) -> Subject {
        match self {
            RowData::File(_) => Subject::Files,
            RowData::Host(_) => Subject::Hosts,
            RowData::Cluster(_) => Subject::Clusters,
            RowData::Site(_) => Subject::Sites,
            RowData::Cost(_) => Subject::Costs,
        }
    }

    pub fn key(&self) -> RowKey {
        match self {
            RowData::File(r) => RowKey::File(r.key()),
            RowData::Host(h) => RowKey::Host(h.hostname.clone()),
            RowData::Cluster(c) => RowKey::Cluster(c.clone()),
            RowData::Site(s) => RowKey::Site(s.clone()),
            RowData::Cost(c) => RowKey::Cost(c.from.clone(), c.to.clone()),
        }
    }

    /// The site that may create this row under the partitioned ownership
    /// model: file rows carry it explicitly, topology rows own the site
    /// they describe.
    pub fn owner(&self) -> &SiteId {
        match self {
            RowData::File(r) => &r.origin,
            RowData::Host(h) => &h.cluster.site,
            RowData::Cluster(c) => &c.site,
            RowData::Site(s) => s,
            RowData::Cost(c) => &c.from,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            RowData::File(r) => r.validate(),
            _ => Ok(()),
        }
    }
}

/// Primary key of a row in any of the replicated tables.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum RowKey {
    File(FileKey),
    Host(String),
    Cluster(ClusterId),
    Site(SiteId),
    Cost(SiteId, SiteId),
}

impl RowKey {
    pub fn subject(&self) -> Subject {
        match self {
            RowKey::File(_) => Subject::Files,
            RowKey::Host(_) => Subject::Hosts,
            RowKey::Cluster(_) => Subject::Clusters,
            RowKey::Site(_) => Subject::Sites,
            RowKey::Cost(_, _) => Subject::Costs,
        }
    }
}

/// Per-origin sequence number. Strictly increasing from 1 within an origin's
/// log; 0 means "nothing applied yet".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct SequenceNumber(pub u64);

impl SequenceNumber {
    pub const ZERO: SequenceNumber = SequenceNumber(0);

    pub fn next(self) -> SequenceNumber {
        SequenceNumber(self.0 + 1)
    }
}

impl fmt::Display for SequenceNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Insert, update, or delete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Insert,
    Update,
    Delete,
}

/// Payload of an operation: the full row for inserts and updates, the
/// primary key for deletes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum OpPayload {
    Row(RowData),
    Key(RowKey),
}

/// A captured insert/update/delete: the unit of replication. `(origin, seq)`
/// is globally unique and seq has no gaps within an origin's log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OperationRecord {
    pub origin: SiteId,
    pub seq: SequenceNumber,
    pub kind: OpKind,
    pub subject: Subject,
    pub payload: OpPayload,
    #[serde(with = "chrono::serde::ts_microseconds")]
    pub committed_at: DateTime<Utc>,
}

impl OperationRecord {
    /// Checks that kind, subject, and payload agree and that a file row's
    /// origin stamp matches the operation's origin.
    pub fn is_consistent(&self) -> bool {
        match (&self.kind, &self.payload) {
            (OpKind::Insert | OpKind::Update, OpPayload::Row(row)) => {
                row.subject() == self.subject
                    && match row {
                        RowData::File(r) => r.origin == self.origin,
                        _ => true,
                    }
            }
            (OpKind::Delete, OpPayload::Key(key)) => key.subject() == self.subject,
            _ => false,
        }
    }

    /// Key the operation addresses.
    pub fn row_key(&self) -> RowKey {
        match &self.payload {
            OpPayload::Row(row) => row.key(),
            OpPayload::Key(key) => key.clone(),
        }
    }
}

/// Validated view of the federation's physical layout: sites, clusters,
/// hosts, and the pairwise link-cost table. Registration order is free but
/// every reference must resolve at insertion time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    sites: std::collections::BTreeSet<SiteId>,
    clusters: std::collections::BTreeSet<ClusterId>,
    hosts: std::collections::BTreeMap<String, Host>,
    costs: std::collections::BTreeMap<(SiteId, SiteId), Cost>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_site(&mut self, site: SiteId) -> Result<(), ModelError> {
        for s in &self.sites {
            if s.ordinal() == site.ordinal() && *s != site {
                return Err(ModelError::DuplicateOrdinal(site.ordinal()));
            }
            if s.id() == site.id() && *s != site {
                return Err(ModelError::DuplicateSiteId(site.id().to_string()));
            }
        }
        self.sites.insert(site);
        Ok(())
    }

    pub fn add_cluster(&mut self, cluster: ClusterId) -> Result<(), ModelError> {
        if !self.sites.contains(&cluster.site) {
            return Err(ModelError::UnknownSite(cluster.site.id().to_string()));
        }
        self.clusters.insert(cluster);
        Ok(())
    }

    pub fn add_host(&mut self, host: Host) -> Result<(), ModelError> {
        if !self.clusters.contains(&host.cluster) {
            return Err(ModelError::UnknownCluster(host.cluster.to_string()));
        }
        self.hosts.insert(host.hostname.clone(), host);
        Ok(())
    }

    pub fn add_cost(&mut self, link: LinkCost) -> Result<(), ModelError> {
        if !self.sites.contains(&link.from) {
            return Err(ModelError::UnknownSite(link.from.id().to_string()));
        }
        if !self.sites.contains(&link.to) {
            return Err(ModelError::UnknownSite(link.to.id().to_string()));
        }
        self.costs.insert((link.from, link.to), link.cost);
        Ok(())
    }

    pub fn sites(&self) -> impl Iterator<Item = &SiteId> {
        self.sites.iter()
    }

    pub fn clusters(&self) -> impl Iterator<Item = &ClusterId> {
        self.clusters.iter()
    }

    pub fn hosts(&self) -> impl Iterator<Item = &Host> {
        self.hosts.values()
    }

    pub fn host(&self, hostname: &str) -> Option<&Host> {
        self.hosts.get(hostname)
    }

    /// Site a hostname resolves to, via its cluster.
    pub fn site_of_host(&self, hostname: &str) -> Option<&SiteId> {
        self.hosts.get(hostname).map(|h| &h.cluster.site)
    }

    /// Link cost between two sites. Self-pairs are zero without a table
    /// entry; missing entries are `None`.
    pub fn cost(&self, from: &SiteId, to: &SiteId) -> Option<Cost> {
        if from == to {
            return Some(Cost::ZERO);
        }
        self.costs.get(&(from.clone(), to.clone())).cloned()
    }

    /// True when every ordered pair of distinct registered sites has a cost
    /// entry and all host/cluster references resolve.
    pub fn is_complete(&self) -> bool {
        let refs_ok = self.clusters.iter().all(|c| self.sites.contains(&c.site))
            && self.hosts.values().all(|h| self.clusters.contains(&h.cluster));
        let costs_ok = self.sites.iter().all(|a| {
            self.sites
                .iter()
                .all(|b| a == b || self.costs.contains_key(&(a.clone(), b.clone())))
        });
        refs_ok && costs_ok
    }
}

/// Builds a UTC timestamp from the wire representation.
pub(crate) fn timestamp_from_parts(secs: i64, nanos: u32) -> Option<DateTime<Utc>> {
    Utc.timestamp_opt(secs, nanos).single()
}
