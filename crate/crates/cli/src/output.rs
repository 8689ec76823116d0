//! Output rendering: line-oriented text (tab-separated, sorted upstream)
//! or one JSON object per line.

use std::path::Path;

use catalog_core::model::{Host, LogicalFileName};
use catalog_core::query::{CostedReplica, FsckIssue, ReplicaView};
use catalog_core::replication::SyncReport;
use catalog_core::store::Store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// Whether a successful command produced anything; empty results exit 1.
pub enum Outcome {
    Ok,
    Empty,
}

fn site_or_dash(site: &Option<catalog_core::model::SiteId>) -> String {
    site.as_ref()
        .map(|s| s.id().to_string())
        .unwrap_or_else(|| "-".into())
}

pub fn replicas(format: Format, rows: &[ReplicaView]) -> String {
    let mut out = String::new();
    for r in rows {
        match format {
            Format::Text => out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.lfn,
                r.host,
                r.path,
                r.storage,
                site_or_dash(&r.site),
                r.origin.id()
            )),
            Format::Json => {
                out.push_str(&serde_json::to_string(r).expect("serializable"));
                out.push('\n');
            }
        }
    }
    out
}

pub fn lfns(format: Format, names: &[LogicalFileName]) -> String {
    let mut out = String::new();
    for n in names {
        match format {
            Format::Text => out.push_str(&format!("{n}\n")),
            Format::Json => {
                out.push_str(&serde_json::to_string(n).expect("serializable"));
                out.push('\n');
            }
        }
    }
    out
}

pub fn hosts(format: Format, hosts: &[Host]) -> String {
    let mut out = String::new();
    for h in hosts {
        match format {
            Format::Text => out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                h.hostname,
                h.cluster.name,
                h.cluster.site.id(),
                h.storage
            )),
            Format::Json => {
                out.push_str(&serde_json::to_string(h).expect("serializable"));
                out.push('\n');
            }
        }
    }
    out
}

pub fn costed(format: Format, hit: Option<&CostedReplica>) -> String {
    match hit {
        None => String::new(),
        Some(c) => match format {
            Format::Text => format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                c.replica.lfn,
                c.replica.host,
                c.replica.path,
                c.replica.storage,
                site_or_dash(&c.replica.site),
                c.cost
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "-".into())
            ),
            Format::Json => format!("{}\n", serde_json::to_string(c).expect("serializable")),
        },
    }
}

pub fn fsck_issues(format: Format, issues: &[FsckIssue]) -> String {
    let mut out = String::new();
    for issue in issues {
        match format {
            Format::Text => out.push_str(&format!("{issue}\n")),
            Format::Json => {
                out.push_str(&serde_json::to_string(issue).expect("serializable"));
                out.push('\n');
            }
        }
    }
    out
}

pub fn status(format: Format, store: &Store, status_file: &Path) -> String {
    let cursors = store.cursors();
    let last = std::fs::read_to_string(status_file).ok();
    match format {
        Format::Text => {
            let mut out = String::new();
            out.push_str(&format!(
                "site\t{} (ordinal {})\n",
                store.site().id(),
                store.site().ordinal()
            ));
            out.push_str(&format!("committed\t{}\n", store.committed_seq()));
            out.push_str(&format!("queue\t{}\n", store.queue_len()));
            for (site, seq) in &cursors {
                out.push_str(&format!("cursor\t{}\t{}\n", site.id(), seq));
            }
            if let Some(last) = last {
                out.push_str("last-sync\t");
                out.push_str(last.trim());
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let cursors: serde_json::Map<String, serde_json::Value> = cursors
                .iter()
                .map(|(site, seq)| (site.id().to_string(), serde_json::json!(seq.0)))
                .collect();
            let value = serde_json::json!({
                "site": store.site().id(),
                "ordinal": store.site().ordinal(),
                "committed": store.committed_seq().0,
                "queue": store.queue_len(),
                "cursors": cursors,
                "last_sync": last.and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok()),
            });
            format!("{value}\n")
        }
    }
}

/// Persists the latest tick's reports so `catalog status` can show them.
pub fn write_status_file(path: &Path, tick: u64, reports: &[SyncReport]) {
    let value = serde_json::json!({
        "tick": tick,
        "at": chrono::Utc::now().to_rfc3339(),
        "reports": reports,
    });
    let tmp = path.with_extension("json.tmp");
    if std::fs::write(&tmp, format!("{value}\n")).is_ok() {
        let _ = std::fs::rename(&tmp, path);
    }
}
