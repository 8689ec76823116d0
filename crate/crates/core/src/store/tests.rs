use super::*;
use crate::model::{FileRecord, LogicalFileName, StorageClass};
use chrono::TimeZone;
use std::sync::Arc;

fn site(ord: u32, id: &str) -> SiteId {
    SiteId::new(ord, id).unwrap()
}

fn bnl() -> SiteId {
    site(1, "BNL")
}

fn sbu() -> SiteId {
    site(2, "SBU")
}

fn vu() -> SiteId {
    site(3, "VU")
}

fn federation() -> Vec<SiteId> {
    vec![bnl(), sbu(), vu()]
}

fn file_row(origin: &SiteId, n: u64) -> RowData {
    RowData::File(FileRecord {
        lfn: LogicalFileName::new(&format!("{}_f{:06}.prdf", origin.id().to_lowercase(), n))
            .unwrap(),
        host: format!("{}-host", origin.id().to_lowercase()),
        path: format!("/data/{}/f{:06}", origin.id().to_lowercase(), n),
        storage: StorageClass::Disk,
        production: "run2".into(),
        size_bytes: n * 1000,
        created_at: Utc.timestamp_opt(1_050_000_000 + n as i64, 0).unwrap(),
        origin: origin.clone(),
    })
}

fn open_store(dir: &Path, s: SiteId) -> Store {
    Store::open(dir, StoreConfig::new(s, federation())).unwrap()
}

/// Builds an op as a remote peer would have produced it.
fn remote_op(origin: &SiteId, seq: u64, row: RowData) -> OperationRecord {
    OperationRecord {
        origin: origin.clone(),
        seq: SequenceNumber(seq),
        kind: OpKind::Insert,
        subject: row.subject(),
        payload: OpPayload::Row(row),
        committed_at: Utc.timestamp_opt(1_050_000_000, 0).unwrap(),
    }
}

#[test]
fn open_empty_dir_is_blank_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    assert_eq!(store.committed_seq(), SequenceNumber::ZERO);
    assert_eq!(store.queue_len(), 0);
    assert!(store.data_rows().is_empty());
    assert!(store.buffer_rows().is_empty());
    for (_, seq) in store.cursors() {
        assert_eq!(seq, SequenceNumber::ZERO);
    }
}

#[test]
fn open_as_wrong_site_is_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    {
        let _ = open_store(dir.path(), sbu());
    }
    let err = Store::open(dir.path(), StoreConfig::new(bnl(), federation())).unwrap_err();
    assert!(matches!(err, StoreError::SiteMismatch { .. }));
}

#[test]
fn second_writer_is_locked_out() {
    let dir = tempfile::tempdir().unwrap();
    let _held = open_store(dir.path(), bnl());
    let err = Store::open(dir.path(), StoreConfig::new(bnl(), federation())).unwrap_err();
    assert!(matches!(err, StoreError::Locked(_)));
}

#[test]
fn read_only_open_coexists_with_writer() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    store.write_local(Mutation::Insert(file_row(&bnl(), 1))).unwrap();
    store.apply_buffer().unwrap();

    let mut cfg = StoreConfig::new(bnl(), federation());
    cfg.read_only = true;
    let ro = Store::open(dir.path(), cfg).unwrap();
    assert_eq!(ro.data_rows().len(), 1);
    assert!(matches!(
        ro.write_local(Mutation::Insert(file_row(&bnl(), 2))),
        Err(StoreError::ReadOnly)
    ));
}

#[test]
fn first_insert_gets_seq_one() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let seq = store.write_local(Mutation::Insert(file_row(&bnl(), 1))).unwrap();
    assert_eq!(seq, SequenceNumber(1));
}

#[test]
fn foreign_origin_write_is_ownership_violation() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let err = store
        .write_local(Mutation::Insert(file_row(&sbu(), 1)))
        .unwrap_err();
    assert!(matches!(err, StoreError::OwnershipViolation { .. }));
}

#[test]
fn twenty_thousand_inserts_have_no_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    for n in 1..=20_000u64 {
        let seq = store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
        assert_eq!(seq.0, n);
    }
    assert_eq!(store.committed_seq(), SequenceNumber(20_000));
    store.apply_buffer().unwrap();
    let ops = store.scan_partition(&bnl(), SequenceNumber::ZERO).unwrap();
    assert_eq!(ops.len(), 20_000);
    for (i, op) in ops.iter().enumerate() {
        assert_eq!(op.seq.0, i as u64 + 1);
    }
}

#[test]
fn duplicate_insert_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    store.write_local(Mutation::Insert(file_row(&bnl(), 1))).unwrap();
    assert!(matches!(
        store.write_local(Mutation::Insert(file_row(&bnl(), 1))),
        Err(StoreError::DuplicateKey)
    ));
}

#[test]
fn update_and_delete_require_existing_key() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    assert!(matches!(
        store.write_local(Mutation::Update(file_row(&bnl(), 9))),
        Err(StoreError::UnknownKey)
    ));
    let key = file_row(&bnl(), 9).key();
    assert!(matches!(
        store.write_local(Mutation::Delete(key)),
        Err(StoreError::UnknownKey)
    ));
}

#[test]
fn apply_buffer_empty_queue_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    assert_eq!(store.apply_buffer().unwrap(), 0);
}

#[test]
fn apply_buffer_drains_queue() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    for n in 1..=3 {
        store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    assert_eq!(store.queue_len(), 3);
    assert_eq!(store.apply_buffer().unwrap(), 3);
    assert_eq!(store.queue_len(), 0);
    assert!(store.pending_ops().is_empty());
}

#[test]
fn buffer_equals_local_partition_after_apply() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    // randomized-ish workload: inserts, updates, deletes
    let mut live: Vec<u64> = Vec::new();
    for n in 1..=1000u64 {
        match n % 10 {
            0..=6 => {
                store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
                live.push(n);
            }
            7 | 8 if !live.is_empty() => {
                let target = live[(n as usize) % live.len()];
                let mut row = file_row(&bnl(), target);
                if let RowData::File(r) = &mut row {
                    r.size_bytes += 1;
                }
                store.write_local(Mutation::Update(row)).unwrap();
            }
            _ if !live.is_empty() => {
                let target = live.remove((n as usize) % live.len());
                store
                    .write_local(Mutation::Delete(file_row(&bnl(), target).key()))
                    .unwrap();
            }
            _ => {
                store.write_local(Mutation::Insert(file_row(&bnl(), n + 100_000))).unwrap();
            }
        }
    }
    store.apply_buffer().unwrap();
    let mut buffer = store.buffer_rows();
    let mut local = store.partition_rows(&bnl());
    buffer.sort();
    local.sort();
    assert_eq!(buffer, local);
    assert_eq!(store.queue_len(), 0);
}

#[test]
fn scan_after_high_water_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    for n in 1..=4 {
        store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    store.apply_buffer().unwrap();
    let ops = store.scan_partition(&bnl(), SequenceNumber(4)).unwrap();
    assert!(ops.is_empty());
}

#[test]
fn scan_returns_suffix_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    for n in 1..=5 {
        store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    store.apply_buffer().unwrap();
    let ops = store.scan_partition(&bnl(), SequenceNumber(2)).unwrap();
    assert_eq!(ops.iter().map(|o| o.seq.0).collect::<Vec<_>>(), vec![3, 4, 5]);
}

#[test]
fn scan_does_not_serve_unapplied_buffer_ops() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    for n in 1..=5 {
        store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    // nothing applied yet: the Data side has nothing to serve
    let ops = store.scan_partition(&bnl(), SequenceNumber::ZERO).unwrap();
    assert!(ops.is_empty());
    store.apply_buffer().unwrap();
    assert_eq!(
        store.scan_partition(&bnl(), SequenceNumber::ZERO).unwrap().len(),
        5
    );
}

#[test]
fn scan_unknown_origin_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let stranger = site(9, "CCJ");
    assert!(matches!(
        store.scan_partition(&stranger, SequenceNumber::ZERO),
        Err(StoreError::UnknownOrigin(_))
    ));
}

#[test]
fn scan_into_pruned_range_is_gap() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = StoreConfig::new(bnl(), federation());
    cfg.retention_floor = 2;
    let store = Store::open(dir.path(), cfg).unwrap();
    for n in 1..=10 {
        store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    store.apply_buffer().unwrap();
    store.take_snapshot().unwrap();
    // peers have acknowledged everything
    store.note_peer_ack(&sbu(), &bnl(), SequenceNumber(10));
    store.note_peer_ack(&vu(), &bnl(), SequenceNumber(10));
    let pruned = store.prune_logs().unwrap();
    assert_eq!(pruned[&bnl()], SequenceNumber(8));

    let err = store.scan_partition(&bnl(), SequenceNumber::ZERO).unwrap_err();
    match err {
        StoreError::GapDetected { first_available, .. } => assert_eq!(first_available, 9),
        other => panic!("expected GapDetected, got {other:?}"),
    }
    // the retained suffix still serves
    let ops = store.scan_partition(&bnl(), SequenceNumber(8)).unwrap();
    assert_eq!(ops.len(), 2);
}

#[test]
fn prune_respects_unacknowledged_peers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = StoreConfig::new(bnl(), federation());
    cfg.retention_floor = 0;
    let store = Store::open(dir.path(), cfg).unwrap();
    for n in 1..=10 {
        store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    store.apply_buffer().unwrap();
    store.take_snapshot().unwrap();
    store.note_peer_ack(&sbu(), &bnl(), SequenceNumber(10));
    // VU never acknowledged anything: nothing may be pruned
    let pruned = store.prune_logs().unwrap();
    assert!(pruned.is_empty());
}

#[test]
fn apply_remote_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let batch: Vec<_> = (1..=10).map(|n| remote_op(&sbu(), n, file_row(&sbu(), n))).collect();
    let first = store.apply_remote(&batch).unwrap();
    assert_eq!(first.applied_ops, 10);
    let digest = store.checksum_data();
    let second = store.apply_remote(&batch).unwrap();
    assert_eq!(second.applied_ops, 0);
    assert!(second.advanced.is_empty());
    assert_eq!(store.checksum_data(), digest);
}

#[test]
fn apply_remote_gap_is_out_of_order() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let batch: Vec<_> = (1..=3).map(|n| remote_op(&sbu(), n, file_row(&sbu(), n))).collect();
    store.apply_remote(&batch).unwrap();
    let gapped = vec![
        remote_op(&sbu(), 4, file_row(&sbu(), 4)),
        remote_op(&sbu(), 6, file_row(&sbu(), 6)),
    ];
    let digest = store.checksum_data();
    let err = store.apply_remote(&gapped).unwrap_err();
    match err {
        StoreError::OutOfOrder { expected, found, .. } => {
            assert_eq!((expected, found), (5, 6));
        }
        other => panic!("expected OutOfOrder, got {other:?}"),
    }
    // batch rejected as a whole
    assert_eq!(store.checksum_data(), digest);
    assert_eq!(store.cursors()[&sbu()], SequenceNumber(3));
}

#[test]
fn apply_remote_rejects_own_origin() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let batch = vec![remote_op(&bnl(), 1, file_row(&bnl(), 1))];
    assert!(matches!(
        store.apply_remote(&batch),
        Err(StoreError::OriginIsSelf)
    ));
}

#[test]
fn remote_rows_visible_in_full_table() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let batch: Vec<_> = (1..=100).map(|n| remote_op(&sbu(), n, file_row(&sbu(), n))).collect();
    store.apply_remote(&batch).unwrap();
    assert_eq!(store.partition_rows(&sbu()).len(), 100);
    assert_eq!(store.data_rows().len(), 100);
    // local writes land next to them in the same table
    store.write_local(Mutation::Insert(file_row(&bnl(), 1))).unwrap();
    store.apply_buffer().unwrap();
    assert_eq!(store.data_rows().len(), 101);
}

#[test]
fn write_local_never_touches_remote_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let batch: Vec<_> = (1..=5).map(|n| remote_op(&sbu(), n, file_row(&sbu(), n))).collect();
    store.apply_remote(&batch).unwrap();
    let before = store.partition_rows(&sbu());
    for n in 1..=50 {
        store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    store.apply_buffer().unwrap();
    assert_eq!(store.partition_rows(&sbu()), before);
}

#[test]
fn crash_recovery_restores_exact_state() {
    let dir = tempfile::tempdir().unwrap();
    let digest_before;
    let buffer_before;
    let committed_before;
    let queue_before;
    {
        let store = open_store(dir.path(), bnl());
        for n in 1..=100 {
            store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
            if n == 60 {
                store.apply_buffer().unwrap();
            }
        }
        digest_before = store.checksum_data();
        buffer_before = store.buffer_rows();
        committed_before = store.committed_seq();
        queue_before = store.queue_len();
        // dropped without apply/sync: simulates a crash after the last
        // buffered write hit the OS
    }
    let store = open_store(dir.path(), bnl());
    assert_eq!(store.checksum_data(), digest_before);
    assert_eq!(store.buffer_rows(), buffer_before);
    assert_eq!(store.committed_seq(), committed_before);
    assert_eq!(store.queue_len(), queue_before);
}

#[test]
fn recovery_replays_remote_logs() {
    let dir = tempfile::tempdir().unwrap();
    let digest_before;
    {
        let store = open_store(dir.path(), bnl());
        let batch: Vec<_> = (1..=50).map(|n| remote_op(&sbu(), n, file_row(&sbu(), n))).collect();
        store.apply_remote(&batch).unwrap();
        digest_before = store.checksum_data();
    }
    let store = open_store(dir.path(), bnl());
    assert_eq!(store.checksum_data(), digest_before);
    assert_eq!(store.cursors()[&sbu()], SequenceNumber(50));
}

#[test]
fn snapshot_of_empty_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let snap = store.take_snapshot().unwrap();
    assert!(snap.rows.is_empty());
    assert!(snap.as_of.values().all(|s| *s == SequenceNumber::ZERO));
}

#[test]
fn snapshot_roundtrip_through_install() {
    let donor_dir = tempfile::tempdir().unwrap();
    let donor = open_store(donor_dir.path(), bnl());
    for n in 1..=200 {
        donor.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    donor.apply_buffer().unwrap();
    let batch: Vec<_> = (1..=30).map(|n| remote_op(&vu(), n, file_row(&vu(), n))).collect();
    donor.apply_remote(&batch).unwrap();
    let snap = donor.take_snapshot().unwrap();

    let new_dir = tempfile::tempdir().unwrap();
    let newcomer = open_store(new_dir.path(), sbu());
    newcomer.install_snapshot(&snap).unwrap();
    // remote partitions match the donor's view
    assert_eq!(newcomer.partition_rows(&bnl()), donor.partition_rows(&bnl()));
    assert_eq!(newcomer.partition_rows(&vu()), donor.partition_rows(&vu()));
    assert_eq!(newcomer.cursors()[&bnl()], SequenceNumber(200));
    assert_eq!(newcomer.cursors()[&vu()], SequenceNumber(30));
    assert_eq!(newcomer.cursors()[&sbu()], SequenceNumber::ZERO);

    // survives a restart: the merged snapshot is the recovery base
    drop(newcomer);
    let reopened = open_store(new_dir.path(), sbu());
    assert_eq!(reopened.partition_rows(&bnl()), donor.partition_rows(&bnl()));
    assert_eq!(reopened.cursors()[&vu()], SequenceNumber(30));
}

#[test]
fn install_preserves_local_partition_and_accepts_deltas_after() {
    let donor_dir = tempfile::tempdir().unwrap();
    let donor = open_store(donor_dir.path(), bnl());
    for n in 1..=20 {
        donor.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    donor.apply_buffer().unwrap();
    let snap = donor.take_snapshot().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), sbu());
    store.write_local(Mutation::Insert(file_row(&sbu(), 7))).unwrap();
    store.install_snapshot(&snap).unwrap();
    assert_eq!(store.buffer_rows().len(), 1);
    assert_eq!(store.partition_rows(&bnl()).len(), 20);

    // deltas after the snapshot high-water apply cleanly and survive restart
    donor.write_local(Mutation::Insert(file_row(&bnl(), 21))).unwrap();
    donor.apply_buffer().unwrap();
    let delta = donor.scan_partition(&bnl(), SequenceNumber(20)).unwrap();
    store.apply_remote(&delta).unwrap();
    assert_eq!(store.partition_rows(&bnl()).len(), 21);
    drop(store);
    let reopened = open_store(dir.path(), sbu());
    assert_eq!(reopened.partition_rows(&bnl()).len(), 21);
    assert_eq!(reopened.buffer_rows().len(), 1);
}

#[test]
fn install_rejects_tampered_snapshot() {
    let donor_dir = tempfile::tempdir().unwrap();
    let donor = open_store(donor_dir.path(), bnl());
    donor.write_local(Mutation::Insert(file_row(&bnl(), 1))).unwrap();
    donor.apply_buffer().unwrap();
    let mut snap = donor.take_snapshot().unwrap();
    if let RowData::File(r) = &mut snap.rows[0].row {
        r.size_bytes ^= 1;
    }
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), sbu());
    assert!(matches!(
        store.install_snapshot(&snap),
        Err(StoreError::DigestMismatch)
    ));
}

#[test]
fn install_rejects_stale_snapshot() {
    let donor_dir = tempfile::tempdir().unwrap();
    let donor = open_store(donor_dir.path(), bnl());
    donor.write_local(Mutation::Insert(file_row(&bnl(), 1))).unwrap();
    donor.apply_buffer().unwrap();
    let old_snap = donor.take_snapshot().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), sbu());
    // store has already applied further than the snapshot
    let batch: Vec<_> = (1..=5).map(|n| remote_op(&bnl(), n, file_row(&bnl(), n + 100))).collect();
    store.apply_remote(&batch).unwrap();
    assert!(matches!(
        store.install_snapshot(&old_snap),
        Err(StoreError::SnapshotStale)
    ));
}

#[test]
fn checksum_empty_stores_agree() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let s1 = open_store(d1.path(), bnl());
    let s2 = open_store(d2.path(), sbu());
    assert_eq!(s1.checksum_data(), s2.checksum_data());
}

#[test]
fn checksum_detects_single_row_difference() {
    let d1 = tempfile::tempdir().unwrap();
    let s1 = open_store(d1.path(), bnl());
    for n in 1..=10 {
        s1.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    s1.apply_buffer().unwrap();
    let before = s1.checksum_data();
    s1.write_local(Mutation::Delete(file_row(&bnl(), 5).key())).unwrap();
    s1.apply_buffer().unwrap();
    assert_ne!(s1.checksum_data(), before);
}

#[test]
fn snapshot_does_not_block_concurrent_writes() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(open_store(dir.path(), bnl()));
    for n in 1..=5_000 {
        store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
    }
    store.apply_buffer().unwrap();

    let writer = {
        let store = Arc::clone(&store);
        std::thread::spawn(move || {
            for n in 5_001..=6_000 {
                store.write_local(Mutation::Insert(file_row(&bnl(), n))).unwrap();
            }
        })
    };
    let mut snaps = Vec::new();
    for _ in 0..5 {
        snaps.push(store.take_snapshot().unwrap());
    }
    writer.join().unwrap();
    assert_eq!(store.committed_seq(), SequenceNumber(6_000));
    // every snapshot saw a prefix-consistent applied state
    for snap in snaps {
        assert!(snap.as_of[&bnl()] >= SequenceNumber(5_000));
        snap.verify().unwrap();
    }
}

#[test]
fn delete_of_remote_key_is_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    let batch = vec![remote_op(&sbu(), 1, file_row(&sbu(), 1))];
    store.apply_remote(&batch).unwrap();
    // present in Data, but not in the local buffer: not ours to delete
    assert!(matches!(
        store.write_local(Mutation::Delete(file_row(&sbu(), 1).key())),
        Err(StoreError::UnknownKey)
    ));
}

#[test]
fn topology_rows_follow_ownership() {
    let dir = tempfile::tempdir().unwrap();
    let store = open_store(dir.path(), bnl());
    store.write_local(Mutation::Insert(RowData::Site(bnl()))).unwrap();
    let cluster = crate::model::ClusterId::new("rcf", bnl()).unwrap();
    store.write_local(Mutation::Insert(RowData::Cluster(cluster.clone()))).unwrap();
    let host = crate::model::Host::new("rcas2078", cluster, StorageClass::Disk).unwrap();
    store.write_local(Mutation::Insert(RowData::Host(host))).unwrap();

    // rows describing another site are rejected
    assert!(matches!(
        store.write_local(Mutation::Insert(RowData::Site(sbu()))),
        Err(StoreError::OwnershipViolation { .. })
    ));
    let foreign_cluster = crate::model::ClusterId::new("sbu-farm", sbu()).unwrap();
    assert!(matches!(
        store.write_local(Mutation::Insert(RowData::Cluster(foreign_cluster))),
        Err(StoreError::OwnershipViolation { .. })
    ));
    let cost = crate::model::LinkCost::new(sbu(), bnl(), crate::model::Cost::new(5, 1).unwrap())
        .unwrap();
    assert!(matches!(
        store.write_local(Mutation::Insert(RowData::Cost(cost))),
        Err(StoreError::OwnershipViolation { .. })
    ));
}
