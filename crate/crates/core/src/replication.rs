//! Site-to-site anti-entropy.
//!
//! Synchronization is pull-based: the receiver asks each peer for its
//! cursor set and pulls, per origin partition, exactly the operations past
//! its own applied cursor. Peers relay third-party partitions, so a site
//! can converge on an unreachable site's data through any peer that has
//! it. Failed syncs are retried forever with capped exponential backoff;
//! local writes never wait on any of this.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::model::{SequenceNumber, SiteId};
use crate::store::{Store, StoreError};
use crate::transport::{Connector, SyncSession, TransportError, DEFAULT_MAX_BATCH};

/// Applied high-water mark per origin partition. Entries never decrease.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct SyncCursorSet {
    entries: BTreeMap<SiteId, SequenceNumber>,
}

impl SyncCursorSet {
    pub fn new() -> SyncCursorSet {
        SyncCursorSet::default()
    }

    pub fn get(&self, site: &SiteId) -> SequenceNumber {
        self.entries.get(site).copied().unwrap_or_default()
    }

    /// Moves a cursor forward; backwards movements are ignored.
    pub fn advance(&mut self, site: &SiteId, seq: SequenceNumber) {
        let entry = self.entries.entry(site.clone()).or_default();
        *entry = (*entry).max(seq);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SiteId, &SequenceNumber)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl From<BTreeMap<SiteId, SequenceNumber>> for SyncCursorSet {
    fn from(entries: BTreeMap<SiteId, SequenceNumber>) -> Self {
        SyncCursorSet { entries }
    }
}

/// A federation peer as the scheduler tracks it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Peer {
    pub site: SiteId,
    pub address: String,
    pub last_success: Option<Instant>,
    pub consecutive_failures: u32,
}

impl Peer {
    pub fn new(site: SiteId, address: impl Into<String>) -> Peer {
        Peer {
            site,
            address: address.into(),
            last_success: None,
            consecutive_failures: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SyncOutcome {
    Success,
    Unreachable,
    ProtocolError,
    GapNeedsSnapshot,
}

/// What one synchronization attempt against one peer did.
#[derive(Debug, Clone, Serialize)]
pub struct SyncReport {
    #[serde(serialize_with = "site_id_only")]
    pub peer: SiteId,
    /// Operations pulled and applied, per origin partition. Zero entries
    /// are omitted.
    #[serde(serialize_with = "ops_by_site_id")]
    pub ops_pulled: BTreeMap<SiteId, u64>,
    /// Operation records that crossed the wire, applied or not. Equals
    /// the pulled total unless the peer redelivered something idempotence
    /// absorbed.
    pub ops_transferred: u64,
    /// Payload bytes received from the peer.
    pub bytes: u64,
    #[serde(with = "duration_millis")]
    pub duration: Duration,
    pub outcome: SyncOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl SyncReport {
    fn failure(peer: &SiteId, outcome: SyncOutcome, detail: String, started: Instant) -> SyncReport {
        SyncReport {
            peer: peer.clone(),
            ops_pulled: BTreeMap::new(),
            ops_transferred: 0,
            bytes: 0,
            duration: started.elapsed(),
            outcome,
            detail: Some(detail),
        }
    }

    pub fn total_ops(&self) -> u64 {
        self.ops_pulled.values().sum()
    }
}

mod duration_millis {
    use serde::Serializer;
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }
}

// JSON-friendly shapes: site tokens as plain strings
fn site_id_only<S: serde::Serializer>(site: &SiteId, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(site.id())
}

fn ops_by_site_id<S: serde::Serializer>(
    ops: &BTreeMap<SiteId, u64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(ops.len()))?;
    for (site, n) in ops {
        map.serialize_entry(site.id(), n)?;
    }
    map.end()
}

/// Retry cadence: `interval` between rounds, failures backed off
/// exponentially up to `max_backoff`. Setting `max_backoff == interval`
/// retries every round regardless of failure count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub interval: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            interval: Duration::from_secs(30),
            max_backoff: Duration::from_secs(600),
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, consecutive_failures: u32) -> Duration {
        if consecutive_failures == 0 {
            return Duration::ZERO;
        }
        let factor = 1u32 << (consecutive_failures - 1).min(20);
        self.interval
            .saturating_mul(factor)
            .min(self.max_backoff)
            .max(self.interval)
    }
}

fn outcome_of(err: &TransportError) -> (SyncOutcome, String) {
    let detail = err.to_string();
    let outcome = match err {
        TransportError::Unreachable(_)
        | TransportError::HandshakeTimeout
        | TransportError::Io(_) => SyncOutcome::Unreachable,
        TransportError::GapNeedsSnapshot { .. } => SyncOutcome::GapNeedsSnapshot,
        _ => SyncOutcome::ProtocolError,
    };
    (outcome, detail)
}

/// Pulls every origin partition the peer knows (including relayed third
/// parties) past the local cursors and applies it. Transfers exactly the
/// delta; a peer that is current contributes nothing.
pub fn sync_with_peer<C: Connector>(
    store: &Store,
    connector: &C,
    peer: &Peer,
    max_batch: u32,
) -> SyncReport {
    let started = Instant::now();
    let mut session = match connector.connect(&peer.site, &peer.address) {
        Ok(s) => s,
        Err(e) => {
            let (outcome, detail) = outcome_of(&e);
            return SyncReport::failure(&peer.site, outcome, detail, started);
        }
    };
    let peer_cursors = match session.fetch_cursors() {
        Ok(c) => c,
        Err(e) => {
            let (outcome, detail) = outcome_of(&e);
            return SyncReport::failure(&peer.site, outcome, detail, started);
        }
    };

    let local_site = store.site().clone();
    let federation = store.federation_sites();
    let mut ops_pulled = BTreeMap::new();

    for (origin, peer_high) in &peer_cursors {
        if *origin == local_site || !federation.contains(origin) {
            continue;
        }
        let mut local_cursor = store.cursors().get(origin).copied().unwrap_or_default();
        // loop guards against the peer advancing while we pull
        while local_cursor < *peer_high {
            let batches = match session.fetch_delta(origin, local_cursor, max_batch) {
                Ok(b) => b,
                Err(e) => {
                    let (outcome, detail) = outcome_of(&e);
                    return SyncReport {
                        peer: peer.site.clone(),
                        ops_pulled,
                        ops_transferred: session.stats().ops_received,
                        bytes: session.stats().bytes_received,
                        duration: started.elapsed(),
                        outcome,
                        detail: Some(detail),
                    };
                }
            };
            let mut progressed = false;
            for batch in batches {
                if batch.is_empty() {
                    continue;
                }
                match store.apply_remote(&batch) {
                    Ok(applied) => {
                        let count = ops_pulled.entry(origin.clone()).or_insert(0);
                        *count += applied.applied_ops as u64;
                        if let Some(new_cursor) = applied.advanced.get(origin) {
                            if *new_cursor > local_cursor {
                                local_cursor = *new_cursor;
                                progressed = true;
                            }
                        }
                    }
                    Err(e) => {
                        return SyncReport {
                            peer: peer.site.clone(),
                            ops_pulled,
                            ops_transferred: session.stats().ops_received,
                            bytes: session.stats().bytes_received,
                            duration: started.elapsed(),
                            outcome: SyncOutcome::ProtocolError,
                            detail: Some(format!("apply failed: {e}")),
                        };
                    }
                }
            }
            if !progressed {
                break;
            }
        }
    }

    SyncReport {
        peer: peer.site.clone(),
        ops_pulled,
        ops_transferred: session.stats().ops_received,
        bytes: session.stats().bytes_received,
        duration: started.elapsed(),
        outcome: SyncOutcome::Success,
        detail: None,
    }
}

/// One anti-entropy round: every peer attempted, failures reported but
/// never fatal. The store stays writable throughout.
pub fn sync_round<C: Connector>(
    store: &Store,
    connector: &C,
    peers: &mut [Peer],
    max_batch: u32,
) -> Vec<SyncReport> {
    let mut reports = Vec::with_capacity(peers.len());
    for peer in peers.iter_mut() {
        let report = sync_with_peer(store, connector, peer, max_batch);
        match report.outcome {
            SyncOutcome::Success => {
                peer.last_success = Some(Instant::now());
                peer.consecutive_failures = 0;
            }
            _ => {
                peer.consecutive_failures += 1;
            }
        }
        reports.push(report);
    }
    reports
}

/// How long bootstrap keeps chasing the donor before declaring itself
/// caught up: one final sync runs once a catch-up round pulls fewer than
/// this many operations.
pub const BOOTSTRAP_QUIESCENT_OPS: u64 = 100;

/// Seeds an empty (or stale) store from a donor peer: full snapshot
/// install, then incremental catch-up rounds until the delta is quiescent.
/// The donor keeps accepting writes the whole time; they land in its
/// buffer and are picked up by the catch-up syncs.
pub fn bootstrap_from<C: Connector>(
    store: &Store,
    connector: &C,
    peer: &Peer,
    max_batch: u32,
) -> Result<SyncReport, StoreError> {
    let started = Instant::now();
    let mut session = match connector.connect(&peer.site, &peer.address) {
        Ok(s) => s,
        Err(e) => {
            let (outcome, detail) = outcome_of(&e);
            return Ok(SyncReport::failure(&peer.site, outcome, detail, started));
        }
    };
    let snapshot = match session.fetch_snapshot() {
        Ok(s) => s,
        Err(e) => {
            let (outcome, detail) = outcome_of(&e);
            return Ok(SyncReport::failure(&peer.site, outcome, detail, started));
        }
    };
    let snapshot_bytes = session.stats().bytes_received;
    drop(session);
    store.install_snapshot(&snapshot)?;

    let mut total_ops: BTreeMap<SiteId, u64> = BTreeMap::new();
    let mut transferred = 0u64;
    let mut bytes = snapshot_bytes;
    let mut outcome = SyncOutcome::Success;
    let mut detail = None;
    // catch-up: bounded only as a defensive guard; a live donor converges
    // because each round shrinks the remaining delta
    for _ in 0..100_000 {
        let report = sync_with_peer(store, connector, peer, max_batch);
        bytes += report.bytes;
        transferred += report.ops_transferred;
        for (origin, n) in &report.ops_pulled {
            *total_ops.entry(origin.clone()).or_insert(0) += n;
        }
        match report.outcome {
            SyncOutcome::Success => {
                if report.total_ops() < BOOTSTRAP_QUIESCENT_OPS {
                    // final cutover sync picks up the stragglers
                    let last = sync_with_peer(store, connector, peer, max_batch);
                    bytes += last.bytes;
                    transferred += last.ops_transferred;
                    for (origin, n) in &last.ops_pulled {
                        *total_ops.entry(origin.clone()).or_insert(0) += n;
                    }
                    outcome = last.outcome;
                    detail = last.detail;
                    break;
                }
            }
            other => {
                outcome = other;
                detail = report.detail;
                break;
            }
        }
    }

    Ok(SyncReport {
        peer: peer.site.clone(),
        ops_pulled: total_ops,
        ops_transferred: transferred,
        bytes,
        duration: started.elapsed(),
        outcome,
        detail,
    })
}

/// The periodic daemon driver: apply captured writes, then one sync round,
/// with per-peer backoff. One scheduler per store process.
pub struct Scheduler<C: Connector> {
    store: Arc<Store>,
    connector: C,
    peers: Vec<Peer>,
    policy: RetryPolicy,
    max_batch: u32,
    next_attempt: Vec<Duration>,
    shutdown: Arc<AtomicBool>,
    ticks: u64,
}

impl<C: Connector> Scheduler<C> {
    pub fn new(store: Arc<Store>, connector: C, peers: Vec<Peer>, policy: RetryPolicy) -> Self {
        let next_attempt = vec![Duration::ZERO; peers.len()];
        Scheduler {
            store,
            connector,
            peers,
            policy,
            max_batch: DEFAULT_MAX_BATCH,
            next_attempt,
            shutdown: Arc::new(AtomicBool::new(false)),
            ticks: 0,
        }
    }

    pub fn with_max_batch(mut self, max_batch: u32) -> Self {
        self.max_batch = max_batch;
        self
    }

    /// Flag for signal handlers: set it and the run loop exits cleanly.
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shutdown)
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn peers(&self) -> &[Peer] {
        &self.peers
    }

    /// One scheduler tick at scheduler-time `now`: apply the capture
    /// queue, then sync with every peer whose backoff window has elapsed.
    /// `now` only needs to be monotone; tests drive it directly.
    pub fn tick(&mut self, now: Duration) -> Vec<SyncReport> {
        self.ticks += 1;
        if let Err(e) = self.store.apply_buffer() {
            log::error!("apply_buffer failed: {e}");
        }
        let mut reports = Vec::new();
        for idx in 0..self.peers.len() {
            if now < self.next_attempt[idx] {
                continue;
            }
            let report = {
                let peer = &self.peers[idx];
                sync_with_peer(self.store.as_ref(), &self.connector, peer, self.max_batch)
            };
            let peer = &mut self.peers[idx];
            match report.outcome {
                SyncOutcome::Success => {
                    peer.last_success = Some(Instant::now());
                    peer.consecutive_failures = 0;
                    self.next_attempt[idx] = Duration::ZERO;
                }
                _ => {
                    peer.consecutive_failures += 1;
                    self.next_attempt[idx] =
                        now + self.policy.backoff(peer.consecutive_failures);
                }
            }
            reports.push(report);
        }
        reports
    }

    /// Runs until the shutdown flag is set, invoking `observer` with each
    /// tick's reports. Flushes the store on the way out.
    pub fn run<F: FnMut(u64, &[SyncReport])>(&mut self, mut observer: F) {
        let started = Instant::now();
        while !self.shutdown.load(Ordering::SeqCst) {
            let reports = self.tick(started.elapsed());
            observer(self.ticks, &reports);
            // sleep in slices so shutdown stays prompt
            let deadline = Instant::now() + self.policy.interval;
            while Instant::now() < deadline {
                if self.shutdown.load(Ordering::SeqCst) {
                    break;
                }
                std::thread::sleep(Duration::from_millis(50).min(self.policy.interval));
            }
        }
        if let Err(e) = self.store.sync_all() {
            log::error!("final store sync failed: {e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FileRecord, LogicalFileName, RowData, StorageClass};
    use crate::store::{Mutation, StoreConfig};
    use crate::transport::sim::{LinkConfig, SimNetwork};
    use chrono::{TimeZone, Utc};

    fn site(ord: u32, id: &str) -> SiteId {
        SiteId::new(ord, id).unwrap()
    }

    fn file_row(origin: &SiteId, n: u64) -> RowData {
        RowData::File(FileRecord {
            lfn: LogicalFileName::new(&format!("{}_{n}", origin.id().to_lowercase())).unwrap(),
            host: format!("{}-host", origin.id().to_lowercase()),
            path: format!("/d/{}/{n}", origin.id().to_lowercase()),
            storage: StorageClass::Disk,
            production: String::new(),
            size_bytes: n,
            created_at: Utc.timestamp_opt(0, 0).unwrap(),
            origin: origin.clone(),
        })
    }

    struct Cluster {
        _dirs: Vec<tempfile::TempDir>,
        net: SimNetwork,
        stores: Vec<Arc<Store>>,
        sites: Vec<SiteId>,
    }

    fn cluster(seed: u64) -> Cluster {
        let sites = vec![site(1, "BNL"), site(2, "SBU"), site(3, "VU")];
        let net = SimNetwork::new(seed, [0x11; 32]);
        let mut dirs = Vec::new();
        let mut stores = Vec::new();
        for s in &sites {
            let dir = tempfile::tempdir().unwrap();
            let store = Arc::new(
                Store::open(dir.path(), StoreConfig::new(s.clone(), sites.clone())).unwrap(),
            );
            net.register(Arc::clone(&store));
            dirs.push(dir);
            stores.push(store);
        }
        Cluster {
            _dirs: dirs,
            net,
            stores,
            sites,
        }
    }

    fn peer(site: &SiteId) -> Peer {
        Peer::new(site.clone(), "sim")
    }

    #[test]
    fn current_peers_exchange_nothing() {
        let fx = cluster(1);
        let connector = fx.net.connector_for(fx.sites[0].clone());
        let report = sync_with_peer(&fx.stores[0], &connector, &peer(&fx.sites[1]), 100);
        assert_eq!(report.outcome, SyncOutcome::Success);
        assert_eq!(report.total_ops(), 0);
        assert!(report.ops_pulled.is_empty());
    }

    #[test]
    fn pull_is_delta_exact() {
        let fx = cluster(2);
        let sbu = &fx.sites[1];
        for n in 1..=500 {
            fx.stores[1]
                .write_local(Mutation::Insert(file_row(sbu, n)))
                .unwrap();
        }
        fx.stores[1].apply_buffer().unwrap();

        let connector = fx.net.connector_for(fx.sites[0].clone());
        let report = sync_with_peer(&fx.stores[0], &connector, &peer(sbu), 100);
        assert_eq!(report.outcome, SyncOutcome::Success);
        assert_eq!(report.ops_pulled[sbu], 500);

        // second sync transfers exactly the 20 new ops
        for n in 501..=520 {
            fx.stores[1]
                .write_local(Mutation::Insert(file_row(sbu, n)))
                .unwrap();
        }
        fx.stores[1].apply_buffer().unwrap();
        let report = sync_with_peer(&fx.stores[0], &connector, &peer(sbu), 100);
        assert_eq!(report.ops_pulled[sbu], 20);
    }

    #[test]
    fn relay_carries_third_party_partitions() {
        let fx = cluster(3);
        let (bnl, sbu, vu) = (&fx.sites[0], &fx.sites[1], &fx.sites[2]);
        for n in 1..=40 {
            fx.stores[2].write_local(Mutation::Insert(file_row(vu, n))).unwrap();
        }
        fx.stores[2].apply_buffer().unwrap();

        // SBU pulls VU directly
        let sbu_conn = fx.net.connector_for(sbu.clone());
        let report = sync_with_peer(&fx.stores[1], &sbu_conn, &peer(vu), 100);
        assert_eq!(report.ops_pulled[vu], 40);

        // VU goes dark; BNL still converges on VU's partition through SBU
        fx.net.partition_site(vu).unwrap();
        let bnl_conn = fx.net.connector_for(bnl.clone());
        let direct = sync_with_peer(&fx.stores[0], &bnl_conn, &peer(vu), 100);
        assert_eq!(direct.outcome, SyncOutcome::Unreachable);
        let relayed = sync_with_peer(&fx.stores[0], &bnl_conn, &peer(sbu), 100);
        assert_eq!(relayed.outcome, SyncOutcome::Success);
        assert_eq!(relayed.ops_pulled[vu], 40);
        assert_eq!(
            fx.stores[0].partition_rows(vu),
            fx.stores[1].partition_rows(vu)
        );
    }

    #[test]
    fn round_survives_dead_peers_and_store_stays_writable() {
        let fx = cluster(4);
        let bnl = &fx.sites[0];
        fx.net.partition_site(&fx.sites[1]).unwrap();
        fx.net.partition_site(&fx.sites[2]).unwrap();

        let connector = fx.net.connector_for(bnl.clone());
        let mut peers = vec![peer(&fx.sites[1]), peer(&fx.sites[2])];
        let reports = sync_round(&fx.stores[0], &connector, &mut peers, 100);
        assert_eq!(reports.len(), 2);
        assert!(reports.iter().all(|r| r.outcome == SyncOutcome::Unreachable));
        assert_eq!(peers[0].consecutive_failures, 1);

        // single point of failure eliminated: local writes keep working
        fx.stores[0].write_local(Mutation::Insert(file_row(bnl, 1))).unwrap();
        assert_eq!(fx.stores[0].committed_seq(), SequenceNumber(1));
    }

    #[test]
    fn empty_peer_set_is_empty_round() {
        let fx = cluster(5);
        let connector = fx.net.connector_for(fx.sites[0].clone());
        let reports = sync_round(&fx.stores[0], &connector, &mut [], 100);
        assert!(reports.is_empty());
    }

    #[test]
    fn bootstrap_from_empty_donor() {
        let fx = cluster(6);
        let connector = fx.net.connector_for(fx.sites[0].clone());
        let report = bootstrap_from(&fx.stores[0], &connector, &peer(&fx.sites[1]), 100).unwrap();
        assert_eq!(report.outcome, SyncOutcome::Success);
        assert_eq!(report.total_ops(), 0);
        assert!(fx.stores[0]
            .cursors()
            .values()
            .all(|s| *s == SequenceNumber::ZERO));
    }

    #[test]
    fn bootstrap_matches_donor() {
        let fx = cluster(7);
        let sbu = &fx.sites[1];
        for n in 1..=2_000 {
            fx.stores[1].write_local(Mutation::Insert(file_row(sbu, n))).unwrap();
        }
        fx.stores[1].apply_buffer().unwrap();

        let connector = fx.net.connector_for(fx.sites[0].clone());
        let report = bootstrap_from(&fx.stores[0], &connector, &peer(sbu), 500).unwrap();
        assert_eq!(report.outcome, SyncOutcome::Success);
        assert_eq!(fx.stores[0].checksum_data(), fx.stores[1].checksum_data());
    }

    #[test]
    fn backoff_caps_and_flattens() {
        let policy = RetryPolicy {
            interval: Duration::from_secs(30),
            max_backoff: Duration::from_secs(600),
        };
        assert_eq!(policy.backoff(0), Duration::ZERO);
        assert_eq!(policy.backoff(1), Duration::from_secs(30));
        assert_eq!(policy.backoff(3), Duration::from_secs(120));
        assert_eq!(policy.backoff(10), Duration::from_secs(600));
        assert_eq!(policy.backoff(200), Duration::from_secs(600));

        let flat = RetryPolicy {
            interval: Duration::from_secs(30),
            max_backoff: Duration::from_secs(30),
        };
        for failures in 1..10 {
            assert_eq!(flat.backoff(failures), Duration::from_secs(30));
        }
    }

    #[test]
    fn scheduler_retries_until_success() {
        let fx = cluster(8);
        let (bnl, sbu) = (fx.sites[0].clone(), fx.sites[1].clone());
        for n in 1..=10 {
            fx.stores[1].write_local(Mutation::Insert(file_row(&sbu, n))).unwrap();
        }
        fx.stores[1].apply_buffer().unwrap();

        let tick = Duration::from_secs(30);
        // flat policy: a downed peer is retried every tick
        let policy = RetryPolicy {
            interval: tick,
            max_backoff: tick,
        };
        let connector = fx.net.connector_for(bnl.clone());
        let mut scheduler = Scheduler::new(
            Arc::clone(&fx.stores[0]),
            connector,
            vec![peer(&sbu)],
            policy,
        )
        .with_max_batch(100);

        fx.net.partition_site(&sbu).unwrap();
        for t in 0..5 {
            let reports = scheduler.tick(tick * t);
            assert_eq!(reports[0].outcome, SyncOutcome::Unreachable);
        }
        fx.net.heal_site(&sbu).unwrap();
        // first tick after recovery succeeds
        let reports = scheduler.tick(tick * 5);
        assert_eq!(reports[0].outcome, SyncOutcome::Success);
        assert_eq!(reports[0].ops_pulled[&sbu], 10);
        assert_eq!(scheduler.peers()[0].consecutive_failures, 0);
    }

    #[test]
    fn scheduler_backoff_skips_downed_peer() {
        let fx = cluster(9);
        let (bnl, sbu) = (fx.sites[0].clone(), fx.sites[1].clone());
        let tick = Duration::from_secs(30);
        let policy = RetryPolicy {
            interval: tick,
            max_backoff: Duration::from_secs(600),
        };
        let connector = fx.net.connector_for(bnl.clone());
        let mut scheduler =
            Scheduler::new(Arc::clone(&fx.stores[0]), connector, vec![peer(&sbu)], policy);

        fx.net.partition_site(&sbu).unwrap();
        let mut attempts = 0;
        for t in 0..8 {
            attempts += scheduler.tick(tick * t).len();
        }
        // exponential backoff: attempts at t0, t1 (+30s), t3 (+60s), t7 (+120s)
        assert_eq!(attempts, 4);
    }

    #[test]
    fn scheduler_applies_buffer_each_tick() {
        let fx = cluster(10);
        let bnl = fx.sites[0].clone();
        fx.stores[0].write_local(Mutation::Insert(file_row(&bnl, 1))).unwrap();
        assert_eq!(fx.stores[0].queue_len(), 1);
        let connector = fx.net.connector_for(bnl.clone());
        let mut scheduler = Scheduler::new(
            Arc::clone(&fx.stores[0]),
            connector,
            Vec::new(),
            RetryPolicy::default(),
        );
        scheduler.tick(Duration::ZERO);
        assert_eq!(fx.stores[0].queue_len(), 0);
    }

    #[test]
    fn steady_state_reports_zero_ops() {
        let fx = cluster(11);
        let connector = fx.net.connector_for(fx.sites[0].clone());
        let mut scheduler = Scheduler::new(
            Arc::clone(&fx.stores[0]),
            connector,
            vec![peer(&fx.sites[1]), peer(&fx.sites[2])],
            RetryPolicy::default(),
        );
        for t in 0..3 {
            let reports = scheduler.tick(Duration::from_secs(30) * t);
            assert!(reports.iter().all(|r| r.total_ops() == 0));
            assert!(reports
                .iter()
                .all(|r| r.outcome == SyncOutcome::Success));
        }
    }

    #[test]
    fn cursor_set_never_decreases() {
        let mut cursors = SyncCursorSet::new();
        let bnl = site(1, "BNL");
        cursors.advance(&bnl, SequenceNumber(10));
        cursors.advance(&bnl, SequenceNumber(3));
        assert_eq!(cursors.get(&bnl), SequenceNumber(10));
        cursors.advance(&bnl, SequenceNumber(11));
        assert_eq!(cursors.get(&bnl), SequenceNumber(11));
    }

    /// Kill the receiving site mid-sync, restart it from disk, and resume:
    /// nothing is lost and redelivered ops change nothing.
    #[test]
    fn crash_and_restart_mid_sync_loses_nothing() {
        let sites = vec![site(1, "BNL"), site(2, "SBU")];
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();

        let net = SimNetwork::new(21, [0x33; 32]);
        let a = Arc::new(
            Store::open(dir_a.path(), StoreConfig::new(sites[0].clone(), sites.clone())).unwrap(),
        );
        let b = Arc::new(
            Store::open(dir_b.path(), StoreConfig::new(sites[1].clone(), sites.clone())).unwrap(),
        );
        net.register(Arc::clone(&a));
        net.register(Arc::clone(&b));

        for n in 1..=300 {
            a.write_local(Mutation::Insert(file_row(&sites[0], n))).unwrap();
        }
        a.apply_buffer().unwrap();

        // B pulls only part of the delta, then "crashes"
        {
            use crate::transport::{Connector, SyncSession};
            let connector = net.connector_for(sites[1].clone());
            let mut session = connector.connect(&sites[0], "sim").unwrap();
            let batches = session
                .fetch_delta(&sites[0], SequenceNumber::ZERO, 100)
                .unwrap();
            b.apply_remote(&batches[0]).unwrap();
            // the rest of the stream is dropped on the floor
        }
        assert_eq!(b.cursors()[&sites[0]], SequenceNumber(100));
        drop(b);
        drop(net);

        // restart B from its directory and resume syncing
        let net = SimNetwork::new(22, [0x33; 32]);
        let b = Arc::new(
            Store::open(dir_b.path(), StoreConfig::new(sites[1].clone(), sites.clone())).unwrap(),
        );
        net.register(Arc::clone(&a));
        net.register(Arc::clone(&b));
        assert_eq!(b.cursors()[&sites[0]], SequenceNumber(100), "partial pull survived");

        let connector = net.connector_for(sites[1].clone());
        let report = sync_with_peer(&b, &connector, &peer(&sites[0]), 100);
        assert_eq!(report.outcome, SyncOutcome::Success);
        assert_eq!(report.ops_pulled[&sites[0]], 200, "only the missing suffix moves");
        assert_eq!(a.checksum_data(), b.checksum_data());
        assert_eq!(b.data_rows().len(), 300);
    }

    /// With a lossy (but not dead) link and flat retry, every delta is
    /// eventually delivered.
    #[test]
    fn lossy_link_still_converges() {
        let fx = cluster(23);
        fx.net.set_all_links(LinkConfig {
            drop_probability: 0.35,
            latency: (Duration::from_micros(5), Duration::from_micros(50)),
        });
        let sbu = fx.sites[1].clone();
        for n in 1..=200 {
            fx.stores[1].write_local(Mutation::Insert(file_row(&sbu, n))).unwrap();
        }
        fx.stores[1].apply_buffer().unwrap();

        let tick = Duration::from_secs(30);
        let flat = RetryPolicy {
            interval: tick,
            max_backoff: tick,
        };
        let mut scheduler = Scheduler::new(
            Arc::clone(&fx.stores[0]),
            fx.net.connector_for(fx.sites[0].clone()),
            vec![peer(&sbu)],
            flat,
        )
        .with_max_batch(20);

        let mut converged_at = None;
        for t in 0..200u32 {
            scheduler.tick(tick * t);
            if fx.stores[0].checksum_data() == fx.stores[1].checksum_data() {
                converged_at = Some(t);
                break;
            }
        }
        let t = converged_at.expect("no convergence within the bounded horizon");
        assert!(t > 0, "with 35% drop the first tick should not finish clean");
    }
}
