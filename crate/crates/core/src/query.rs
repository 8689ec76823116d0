//! The catalog query set, answered from the local store's full Data view.
//!
//! Queries see every partition at once: the ownership split matters for
//! writes, not reads. All queries run against the applied Data side, so a
//! write becomes visible here only after the next apply; pass
//! `include_pending` to union the local Buffer for read-your-writes.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    ClusterId, Cost, FileRecord, Host, LogicalFileName, RowData, SiteId, StorageClass,
};
use crate::store::Store;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("unknown site {0:?}")]
    UnknownSite(String),
    #[error("unknown cluster {0:?}")]
    UnknownCluster(String),
    #[error("cluster name {0:?} exists at several sites; qualify it")]
    AmbiguousCluster(String),
    #[error("production tag is empty")]
    EmptyProductionTag,
}

/// One physical replica with its location resolved through the topology
/// tables. `site` is `None` when the replica's host is not registered
/// (surfaced by `fsck`, never a query failure).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ReplicaView {
    pub lfn: LogicalFileName,
    pub host: String,
    pub path: String,
    pub storage: StorageClass,
    pub site: Option<SiteId>,
    pub origin: SiteId,
}

/// A replica ranked by link cost from the requesting site. `cost` is
/// `None` when the cost table has no entry for the pair; such replicas
/// rank after every costed one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostedReplica {
    pub replica: ReplicaView,
    pub cost: Option<Cost>,
}

/// A point-in-time view of the catalog: file rows plus the topology
/// tables, indexed for the query set. Capture once, query many times.
pub struct CatalogView {
    files: Vec<(SiteId, FileRecord)>,
    by_lfn: BTreeMap<LogicalFileName, Vec<usize>>,
    hosts: BTreeMap<String, Host>,
    clusters: BTreeSet<ClusterId>,
    sites: BTreeMap<String, SiteId>,
    costs: BTreeMap<(u32, u32), Cost>,
}

impl CatalogView {
    /// Captures the applied Data table. With `include_pending`, the local
    /// partition is taken from the Buffer instead, so the caller sees its
    /// own writes before the next apply.
    pub fn capture(store: &Store, include_pending: bool) -> CatalogView {
        let local = store.site().clone();
        let mut view = CatalogView {
            files: Vec::new(),
            by_lfn: BTreeMap::new(),
            hosts: BTreeMap::new(),
            clusters: BTreeSet::new(),
            sites: BTreeMap::new(),
            costs: BTreeMap::new(),
        };
        store.visit_data(|stored| {
            if include_pending && stored.origin == local {
                return;
            }
            view.add_row(stored.origin.clone(), &stored.row);
        });
        if include_pending {
            for row in store.buffer_rows() {
                view.add_row(local.clone(), &row);
            }
        }
        view
    }

    fn add_row(&mut self, origin: SiteId, row: &RowData) {
        match row {
            RowData::File(rec) => {
                let idx = self.files.len();
                self.files.push((origin, rec.clone()));
                self.by_lfn.entry(rec.lfn.clone()).or_default().push(idx);
            }
            RowData::Host(h) => {
                self.hosts.insert(h.hostname.clone(), h.clone());
            }
            RowData::Cluster(c) => {
                self.clusters.insert(c.clone());
            }
            RowData::Site(s) => {
                self.sites.insert(s.id().to_string(), s.clone());
            }
            RowData::Cost(l) => {
                self.costs.insert((l.from.ordinal(), l.to.ordinal()), l.cost);
            }
        }
    }

    pub fn site(&self, id: &str) -> Result<&SiteId, QueryError> {
        self.sites
            .get(id)
            .ok_or_else(|| QueryError::UnknownSite(id.to_string()))
    }

    fn site_of_host(&self, hostname: &str) -> Option<SiteId> {
        self.hosts
            .get(hostname)
            .map(|h| h.cluster.site.clone())
            .filter(|s| self.sites.contains_key(s.id()))
    }

    fn cost_between(&self, from: &SiteId, to: &SiteId) -> Option<Cost> {
        if from == to {
            return Some(Cost::ZERO);
        }
        self.costs.get(&(from.ordinal(), to.ordinal())).copied()
    }

    fn replica(&self, idx: usize) -> ReplicaView {
        let (origin, rec) = &self.files[idx];
        ReplicaView {
            lfn: rec.lfn.clone(),
            host: rec.host.clone(),
            path: rec.path.clone(),
            storage: rec.storage,
            site: self.site_of_host(&rec.host),
            origin: origin.clone(),
        }
    }

    /// All replicas of a file, across every partition. Sorted by
    /// (host, path, origin ordinal); empty when the file is unknown.
    pub fn find_replicas(&self, lfn: &LogicalFileName) -> Vec<ReplicaView> {
        let mut out: Vec<ReplicaView> = self
            .by_lfn
            .get(lfn)
            .map(|idxs| idxs.iter().map(|i| self.replica(*i)).collect())
            .unwrap_or_default();
        out.sort_by(|a, b| {
            (&a.host, &a.path, a.origin.ordinal()).cmp(&(&b.host, &b.path, b.origin.ordinal()))
        });
        out
    }

    /// Replicas on disk storage only.
    pub fn find_disk_replicas(&self, lfn: &LogicalFileName) -> Vec<ReplicaView> {
        self.find_replicas(lfn)
            .into_iter()
            .filter(|r| r.storage == StorageClass::Disk)
            .collect()
    }

    /// A disk replica at the given site, if any. With several candidates
    /// the lexicographically smallest (host, path) wins, so repeated calls
    /// agree.
    pub fn find_local_disk_replica(
        &self,
        lfn: &LogicalFileName,
        site: &str,
    ) -> Result<Option<ReplicaView>, QueryError> {
        let site = self.site(site)?.clone();
        Ok(self
            .find_disk_replicas(lfn)
            .into_iter()
            .filter(|r| r.site.as_ref() == Some(&site))
            .min_by(|a, b| (&a.host, &a.path).cmp(&(&b.host, &b.path))))
    }

    /// Every logical file with a replica at the site. Sorted, no
    /// duplicates.
    pub fn list_files_at_site(&self, site: &str) -> Result<Vec<LogicalFileName>, QueryError> {
        let site = self.site(site)?.clone();
        let set: BTreeSet<LogicalFileName> = self
            .files
            .iter()
            .filter(|(_, rec)| self.site_of_host(&rec.host).as_ref() == Some(&site))
            .map(|(_, rec)| rec.lfn.clone())
            .collect();
        Ok(set.into_iter().collect())
    }

    /// Hosts of one cluster, sorted by hostname. The cluster may be
    /// qualified by site; an unqualified name that exists at several sites
    /// is ambiguous.
    pub fn list_hosts_in_cluster(
        &self,
        name: &str,
        site: Option<&str>,
    ) -> Result<Vec<Host>, QueryError> {
        let matches: Vec<&ClusterId> = match site {
            Some(id) => {
                let site = self.site(id)?.clone();
                self.clusters
                    .iter()
                    .filter(|c| c.name == name && c.site == site)
                    .collect()
            }
            None => self.clusters.iter().filter(|c| c.name == name).collect(),
        };
        match matches.len() {
            0 => Err(QueryError::UnknownCluster(name.to_string())),
            1 => {
                let cluster = matches[0];
                let mut hosts: Vec<Host> = self
                    .hosts
                    .values()
                    .filter(|h| h.cluster == *cluster)
                    .cloned()
                    .collect();
                hosts.sort_by(|a, b| a.hostname.cmp(&b.hostname));
                Ok(hosts)
            }
            _ => Err(QueryError::AmbiguousCluster(name.to_string())),
        }
    }

    /// Every logical file from one production, across all partitions.
    /// Sorted, no duplicates.
    pub fn list_files_by_production(&self, tag: &str) -> Result<Vec<LogicalFileName>, QueryError> {
        if tag.is_empty() {
            return Err(QueryError::EmptyProductionTag);
        }
        let set: BTreeSet<LogicalFileName> = self
            .files
            .iter()
            .filter(|(_, rec)| rec.production == tag)
            .map(|(_, rec)| rec.lfn.clone())
            .collect();
        Ok(set.into_iter().collect())
    }

    /// The replica with the smallest link cost from `from_site`. Ties
    /// prefer disk over tape, then the smallest (host, path). Replicas
    /// whose cost is unknown rank after every costed one.
    pub fn find_closest_replica(
        &self,
        lfn: &LogicalFileName,
        from_site: &str,
    ) -> Result<Option<CostedReplica>, QueryError> {
        let from = self.site(from_site)?.clone();
        let candidates = self.find_replicas(lfn);
        Ok(candidates
            .into_iter()
            .map(|replica| {
                let cost = replica
                    .site
                    .as_ref()
                    .and_then(|site| self.cost_between(&from, site));
                CostedReplica { replica, cost }
            })
            .min_by(|a, b| rank(a).cmp(&rank(b))))
    }
}

type Rank<'a> = (bool, Option<Cost>, u8, &'a str, &'a str);

fn rank(c: &CostedReplica) -> Rank<'_> {
    let storage_rank = match c.replica.storage {
        StorageClass::Disk => 0u8,
        StorageClass::Tape => 1u8,
    };
    (
        c.cost.is_none(),
        c.cost,
        storage_rank,
        c.replica.host.as_str(),
        c.replica.path.as_str(),
    )
}

// Free-function forms: capture a fresh view per call.

pub fn find_replicas(store: &Store, lfn: &LogicalFileName) -> Vec<ReplicaView> {
    CatalogView::capture(store, false).find_replicas(lfn)
}

pub fn find_disk_replicas(store: &Store, lfn: &LogicalFileName) -> Vec<ReplicaView> {
    CatalogView::capture(store, false).find_disk_replicas(lfn)
}

pub fn find_local_disk_replica(
    store: &Store,
    lfn: &LogicalFileName,
    site: &str,
) -> Result<Option<ReplicaView>, QueryError> {
    CatalogView::capture(store, false).find_local_disk_replica(lfn, site)
}

pub fn list_files_at_site(store: &Store, site: &str) -> Result<Vec<LogicalFileName>, QueryError> {
    CatalogView::capture(store, false).list_files_at_site(site)
}

pub fn list_hosts_in_cluster(
    store: &Store,
    name: &str,
    site: Option<&str>,
) -> Result<Vec<Host>, QueryError> {
    CatalogView::capture(store, false).list_hosts_in_cluster(name, site)
}

pub fn list_files_by_production(
    store: &Store,
    tag: &str,
) -> Result<Vec<LogicalFileName>, QueryError> {
    CatalogView::capture(store, false).list_files_by_production(tag)
}

pub fn find_closest_replica(
    store: &Store,
    lfn: &LogicalFileName,
    from_site: &str,
) -> Result<Option<CostedReplica>, QueryError> {
    CatalogView::capture(store, false).find_closest_replica(lfn, from_site)
}

/// Catalog lints: referential breakage and write-path divergence that the
/// query layer tolerates silently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum FsckIssue {
    DanglingHost { lfn: String, host: String },
    DanglingCluster { host: String, cluster: String },
    DanglingSite { cluster: String, site: String },
    MissingCost { from: String, to: String },
    CrossPartitionDuplicate { key: String, origins: Vec<String> },
    BufferDivergence { detail: String },
}

impl std::fmt::Display for FsckIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FsckIssue::DanglingHost { lfn, host } => {
                write!(f, "file {lfn} references unregistered host {host}")
            }
            FsckIssue::DanglingCluster { host, cluster } => {
                write!(f, "host {host} references unregistered cluster {cluster}")
            }
            FsckIssue::DanglingSite { cluster, site } => {
                write!(f, "cluster {cluster} references unregistered site {site}")
            }
            FsckIssue::MissingCost { from, to } => {
                write!(f, "no link cost registered for {from} -> {to}")
            }
            FsckIssue::CrossPartitionDuplicate { key, origins } => {
                write!(f, "row {key} exists in several partitions: {origins:?}")
            }
            FsckIssue::BufferDivergence { detail } => {
                write!(f, "buffer diverges from applied local partition: {detail}")
            }
        }
    }
}

/// Scans the whole store for lints. Read-only.
pub fn fsck(store: &Store) -> Vec<FsckIssue> {
    let view = CatalogView::capture(store, false);
    let mut issues = Vec::new();

    for (_, rec) in &view.files {
        if !view.hosts.contains_key(&rec.host) {
            issues.push(FsckIssue::DanglingHost {
                lfn: rec.lfn.to_string(),
                host: rec.host.clone(),
            });
        }
    }
    for host in view.hosts.values() {
        if !view.clusters.contains(&host.cluster) {
            issues.push(FsckIssue::DanglingCluster {
                host: host.hostname.clone(),
                cluster: host.cluster.to_string(),
            });
        }
    }
    for cluster in &view.clusters {
        if !view.sites.contains_key(cluster.site.id()) {
            issues.push(FsckIssue::DanglingSite {
                cluster: cluster.to_string(),
                site: cluster.site.id().to_string(),
            });
        }
    }
    let sites: Vec<&SiteId> = view.sites.values().collect();
    for a in &sites {
        for b in &sites {
            if a != b && view.cost_between(a, b).is_none() {
                issues.push(FsckIssue::MissingCost {
                    from: a.id().to_string(),
                    to: b.id().to_string(),
                });
            }
        }
    }

    // the same row key living in more than one partition
    let mut owners: BTreeMap<crate::model::RowKey, Vec<SiteId>> = BTreeMap::new();
    store.visit_data(|stored| {
        owners
            .entry(stored.row.key())
            .or_default()
            .push(stored.origin.clone());
    });
    for (key, origins) in owners {
        if origins.len() > 1 {
            issues.push(FsckIssue::CrossPartitionDuplicate {
                key: format!("{key:?}"),
                origins: origins.iter().map(|s| s.id().to_string()).collect(),
            });
        }
    }

    // buffer must equal the applied local partition plus the capture queue
    let mut expected: BTreeMap<crate::model::RowKey, RowData> = store
        .partition_rows(store.site())
        .into_iter()
        .map(|row| (row.key(), row))
        .collect();
    for op in store.pending_ops() {
        match (&op.kind, &op.payload) {
            (
                crate::model::OpKind::Insert | crate::model::OpKind::Update,
                crate::model::OpPayload::Row(row),
            ) => {
                expected.insert(row.key(), row.clone());
            }
            (crate::model::OpKind::Delete, crate::model::OpPayload::Key(key)) => {
                expected.remove(key);
            }
            _ => {}
        }
    }
    let actual: BTreeMap<crate::model::RowKey, RowData> = store
        .buffer_rows()
        .into_iter()
        .map(|row| (row.key(), row))
        .collect();
    if expected != actual {
        let missing = expected.keys().filter(|k| !actual.contains_key(k)).count();
        let extra = actual.keys().filter(|k| !expected.contains_key(k)).count();
        issues.push(FsckIssue::BufferDivergence {
            detail: format!("{missing} rows missing from buffer, {extra} unexpected"),
        });
    }

    issues
}
