//! Core engine of a multi-master replicated file catalog.
//!
//! Each federation site owns a writable partition of the catalog and reads
//! everyone else's partitions locally. Local writes go through a deferred
//! update buffer ([`store`]), change capture feeds per-origin operation
//! logs, and cursor-driven anti-entropy ([`replication`]) moves exactly the
//! missed deltas between sites over a framed wire protocol ([`transport`]).
//! The catalog query set lives in [`query`] and logical-to-physical name
//! resolution in [`resolver`].

pub mod federation;
pub mod model;
pub mod query;
pub mod replication;
pub mod resolver;
pub mod store;
pub mod transport;

pub use federation::{Federation, FederationEntry};
pub use model::{
    Cost, FileKey, FileRecord, LogicalFileName, OperationRecord, RowData, RowKey, SequenceNumber,
    SiteId, StorageClass, Subject,
};
pub use store::{Mutation, Snapshot, Store, StoreConfig, StoreError, StoredRow};
