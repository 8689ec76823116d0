//! Shared fixtures for the integration and acceptance suites: seeded
//! generators, a simulated multi-site cluster, and independent oracles.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use catalog_core::model::{
    ClusterId, Cost, FileRecord, Host, LinkCost, LogicalFileName, OpKind, OpPayload, RowData,
    RowKey, SequenceNumber, SiteId, StorageClass,
};
use catalog_core::replication::{sync_with_peer, Peer, SyncReport};
use catalog_core::store::{Mutation, Store, StoreConfig, StoredRow};
use catalog_core::transport::sim::{SimConnector, SimNetwork};

pub const SITE_IDS: &[&str] = &["BNL", "SBU", "VU", "CCJ", "CCF", "UNM", "WI"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sites(n: usize) -> Vec<SiteId> {
    (0..n)
        .map(|i| SiteId::new(i as u32 + 1, SITE_IDS[i % SITE_IDS.len()]).unwrap())
        .collect()
}

pub fn lfn(s: &str) -> LogicalFileName {
    LogicalFileName::new(s).unwrap()
}

/// A file row with a unique-per-counter key, deterministic timestamps.
pub fn file_record(origin: &SiteId, counter: u64, rng: &mut ChaCha8Rng) -> FileRecord {
    let storage = if rng.random_bool(0.25) {
        StorageClass::Tape
    } else {
        StorageClass::Disk
    };
    let production = match rng.random_range(0..4u8) {
        0 => String::new(),
        n => format!("run{n}_v{:02}", rng.random_range(1..4u8)),
    };
    FileRecord {
        lfn: lfn(&format!(
            "{}_{counter:08}.prdf",
            origin.id().to_lowercase()
        )),
        host: format!("{}-n{}", origin.id().to_lowercase(), rng.random_range(1..5u8)),
        path: format!("/data/{}/{counter:08}", origin.id().to_lowercase()),
        storage,
        production,
        size_bytes: rng.random_range(0..10_000_000_000u64),
        created_at: Utc
            .timestamp_opt(1_040_000_000 + rng.random_range(0..100_000_000i64), 0)
            .unwrap(),
        origin: origin.clone(),
    }
}

/// N sites, one store each, wired through one simulated network.
pub struct SimCluster {
    pub dirs: Vec<tempfile::TempDir>,
    pub stores: Vec<Arc<Store>>,
    pub sites: Vec<SiteId>,
    pub net: SimNetwork,
}

impl SimCluster {
    pub fn new(n: usize, seed: u64) -> SimCluster {
        Self::with_config(n, seed, |_| {})
    }

    pub fn with_config<F: Fn(&mut StoreConfig)>(n: usize, seed: u64, tweak: F) -> SimCluster {
        let sites = sites(n);
        let net = SimNetwork::new(seed, [0x5A; 32]);
        let mut dirs = Vec::new();
        let mut stores = Vec::new();
        for s in &sites {
            let dir = tempfile::tempdir().unwrap();
            let mut config = StoreConfig::new(s.clone(), sites.clone());
            tweak(&mut config);
            let store = Arc::new(Store::open(dir.path(), config).unwrap());
            net.register(Arc::clone(&store));
            dirs.push(dir);
            stores.push(store);
        }
        SimCluster {
            dirs,
            stores,
            sites,
            net,
        }
    }

    pub fn connector(&self, local: usize) -> SimConnector {
        self.net.connector_for(self.sites[local].clone())
    }

    pub fn peer(&self, target: usize) -> Peer {
        Peer::new(self.sites[target].clone(), "sim")
    }

    pub fn apply_all(&self) {
        for store in &self.stores {
            store.apply_buffer().unwrap();
        }
    }

    /// `dst` pulls from `src` once.
    pub fn pull(&self, dst: usize, src: usize, max_batch: u32) -> SyncReport {
        sync_with_peer(
            &self.stores[dst],
            &self.connector(dst),
            &self.peer(src),
            max_batch,
        )
    }

    /// Runs full rounds over `edges` (ordered pull pairs) until a round
    /// moves zero operations. Returns the number of rounds taken.
    pub fn converge_over(&self, edges: &[(usize, usize)], max_batch: u32) -> usize {
        let mut rounds = 0;
        loop {
            rounds += 1;
            assert!(rounds < 100, "no quiescence after 100 rounds");
            self.apply_all();
            let mut moved = 0u64;
            for (dst, src) in edges {
                let report = self.pull(*dst, *src, max_batch);
                moved += report.total_ops();
            }
            if moved == 0 {
                return rounds;
            }
        }
    }

    /// All ordered pairs, both directions.
    pub fn full_mesh(&self) -> Vec<(usize, usize)> {
        let n = self.stores.len();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    edges.push((a, b));
                }
            }
        }
        edges
    }

    pub fn digests(&self) -> Vec<[u8; 32]> {
        self.stores.iter().map(|s| s.checksum_data()).collect()
    }

    pub fn assert_all_digests_equal(&self) {
        let digests = self.digests();
        for (i, d) in digests.iter().enumerate() {
            assert_eq!(
                *d, digests[0],
                "store {i} diverged from store 0 ({} vs {} rows)",
                self.stores[i].data_rows().len(),
                self.stores[0].data_rows().len()
            );
        }
    }
}

/// Randomized client workload over a cluster, recording every accepted
/// mutation so oracles can replay them independently.
pub struct WorkloadGen {
    pub rng: ChaCha8Rng,
    counters: Vec<u64>,
    live: Vec<Vec<FileRecord>>,
    /// Every accepted write: (site index, assigned seq, mutation).
    pub log: Vec<(usize, SequenceNumber, Mutation)>,
}

impl WorkloadGen {
    pub fn new(seed: u64, n_sites: usize) -> WorkloadGen {
        WorkloadGen {
            rng: rng(seed ^ 0x9E3779B97F4A7C15),
            counters: vec![0; n_sites],
            live: vec![Vec::new(); n_sites],
            log: Vec::new(),
        }
    }

    /// One random local write at `site_idx`: insert/update/delete mixed
    /// 70/20/10, falling back to insert when the partition is empty.
    pub fn random_write(&mut self, cluster: &SimCluster, site_idx: usize) {
        let origin = cluster.sites[site_idx].clone();
        let store = &cluster.stores[site_idx];
        let roll = self.rng.random_range(0..10u8);
        let mutation = if roll < 7 || self.live[site_idx].is_empty() {
            self.counters[site_idx] += 1;
            let rec = file_record(&origin, self.counters[site_idx], &mut self.rng);
            self.live[site_idx].push(rec.clone());
            Mutation::Insert(RowData::File(rec))
        } else if roll < 9 {
            let idx = self.rng.random_range(0..self.live[site_idx].len());
            let mut rec = self.live[site_idx][idx].clone();
            rec.size_bytes = self.rng.random_range(0..10_000_000_000u64);
            rec.production = format!("rev{}", self.rng.random_range(0..100u8));
            self.live[site_idx][idx] = rec.clone();
            Mutation::Update(RowData::File(rec))
        } else {
            let idx = self.rng.random_range(0..self.live[site_idx].len());
            let rec = self.live[site_idx].swap_remove(idx);
            Mutation::Delete(RowKey::File(rec.key()))
        };
        let seq = store.write_local(mutation.clone()).unwrap();
        self.log.push((site_idx, seq, mutation));
    }
}

/// Independent union-replay oracle: folds the recorded mutation log into
/// a fresh map, per origin in sequence order, with plain upsert/remove
/// semantics. Shares no code with the store's fold path.
pub fn union_replay(
    cluster_sites: &[SiteId],
    log: &[(usize, SequenceNumber, Mutation)],
) -> BTreeMap<(u32, RowKey), (SequenceNumber, RowData)> {
    let mut per_origin: BTreeMap<usize, Vec<(SequenceNumber, &Mutation)>> = BTreeMap::new();
    for (site_idx, seq, mutation) in log {
        per_origin.entry(*site_idx).or_default().push((*seq, mutation));
    }
    let mut state = BTreeMap::new();
    for (site_idx, mut ops) in per_origin {
        let ord = cluster_sites[site_idx].ordinal();
        ops.sort_by_key(|(seq, _)| *seq);
        for (seq, mutation) in ops {
            match mutation {
                Mutation::Insert(row) | Mutation::Update(row) => {
                    state.insert((ord, row.key()), (seq, row.clone()));
                }
                Mutation::Delete(key) => {
                    state.remove(&(ord, key.clone()));
                }
            }
        }
    }
    state
}

/// A store's Data table in the oracle's shape.
pub fn store_state(store: &Store) -> BTreeMap<(u32, RowKey), (SequenceNumber, RowData)> {
    store
        .data_rows()
        .into_iter()
        .map(|StoredRow { origin, seq, row }| ((origin.ordinal(), row.key()), (seq, row)))
        .collect()
}

/// Registers a full random topology for 5 sites on one store: sites,
/// clusters, hosts, and a complete (or deliberately holed) cost table.
/// Returns every row with its owning site, for the query oracles.
pub struct CatalogFixture {
    pub _dir: tempfile::TempDir,
    pub store: Store,
    pub sites: Vec<SiteId>,
    /// Every row in the catalog with its origin.
    pub rows: Vec<(SiteId, RowData)>,
}

pub fn random_catalog(seed: u64, max_files: usize, drop_costs: bool) -> CatalogFixture {
    let mut rng = rng(seed);
    let sites = sites(5);
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(
        dir.path(),
        StoreConfig::new(sites[0].clone(), sites.clone()),
    )
    .unwrap();

    let mut rows: Vec<(SiteId, RowData)> = Vec::new();
    let mut host_pool: Vec<(SiteId, String, StorageClass)> = Vec::new();

    // topology rows per site
    let mut topo_rows: Vec<Vec<RowData>> = vec![Vec::new(); sites.len()];
    for (i, site) in sites.iter().enumerate() {
        topo_rows[i].push(RowData::Site(site.clone()));
        let n_clusters = rng.random_range(1..=2u8);
        for c in 0..n_clusters {
            let cluster = ClusterId::new(&format!("c{c}"), site.clone()).unwrap();
            topo_rows[i].push(RowData::Cluster(cluster.clone()));
            let n_hosts = rng.random_range(1..=3u8);
            for h in 0..n_hosts {
                let storage = if rng.random_bool(0.2) {
                    StorageClass::Tape
                } else {
                    StorageClass::Disk
                };
                let hostname = format!("{}-c{c}-n{h}", site.id().to_lowercase());
                topo_rows[i].push(RowData::Host(
                    Host::new(&hostname, cluster.clone(), storage).unwrap(),
                ));
                host_pool.push((site.clone(), hostname, storage));
            }
        }
        for to in &sites {
            if to == site {
                continue;
            }
            if drop_costs && rng.random_bool(0.15) {
                continue; // leave a hole in the cost table
            }
            let cost = Cost::new(rng.random_range(1..100u64), rng.random_range(1..10u64)).unwrap();
            topo_rows[i].push(RowData::Cost(
                LinkCost::new(site.clone(), to.clone(), cost).unwrap(),
            ));
        }
    }

    // file rows: reuse a small lfn pool so replicas overlap across sites
    let n_files = rng.random_range(0..=max_files);
    let lfn_pool: Vec<LogicalFileName> = (0..(max_files / 2 + 1))
        .map(|i| lfn(&format!("file_{i:06}.prdf")))
        .collect();
    let mut file_rows: Vec<Vec<RowData>> = vec![Vec::new(); sites.len()];
    let mut seen: std::collections::BTreeSet<RowKey> = std::collections::BTreeSet::new();
    for _ in 0..n_files {
        let (site, hostname, host_storage) = &host_pool[rng.random_range(0..host_pool.len())];
        let site_idx = sites.iter().position(|s| s == site).unwrap();
        let name = lfn_pool[rng.random_range(0..lfn_pool.len())].clone();
        let rec = FileRecord {
            lfn: name.clone(),
            host: hostname.clone(),
            path: format!("/d{}/{}", rng.random_range(0..3u8), name),
            storage: *host_storage,
            production: format!("prod{}", rng.random_range(0..5u8)),
            size_bytes: rng.random_range(0..1_000_000u64),
            created_at: Utc.timestamp_opt(1_040_000_000, 0).unwrap(),
            origin: site.clone(),
        };
        let key = RowKey::File(rec.key());
        if !seen.insert(key) {
            continue; // same replica drawn twice
        }
        file_rows[site_idx].push(RowData::File(rec));
    }

    // local partition through write_local, remote partitions via batches
    for (i, site) in sites.iter().enumerate() {
        let site_rows: Vec<RowData> = topo_rows[i]
            .iter()
            .chain(file_rows[i].iter())
            .cloned()
            .collect();
        for row in &site_rows {
            rows.push((site.clone(), row.clone()));
        }
        if i == 0 {
            for row in site_rows {
                store.write_local(Mutation::Insert(row)).unwrap();
            }
            store.apply_buffer().unwrap();
        } else {
            let ops: Vec<catalog_core::model::OperationRecord> = site_rows
                .into_iter()
                .enumerate()
                .map(|(n, row)| catalog_core::model::OperationRecord {
                    origin: site.clone(),
                    seq: SequenceNumber(n as u64 + 1),
                    kind: OpKind::Insert,
                    subject: row.subject(),
                    payload: OpPayload::Row(row),
                    committed_at: Utc.timestamp_opt(1_040_000_001, 0).unwrap(),
                })
                .collect();
            store.apply_remote(&ops).unwrap();
        }
    }

    CatalogFixture {
        _dir: dir,
        store,
        sites,
        rows,
    }
}
