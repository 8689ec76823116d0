//! `catalog` — operator and production-job surface for the replicated
//! file catalog.
//!
//! Exit codes: 0 success, 1 not-found/empty result, 2 usage error,
//! 3 store or protocol error. Errors go to stderr as one line with a
//! machine-parsable prefix `E:<code>:`.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use catalog_core::federation::Federation;
use catalog_core::model::{
    ClusterId, Cost, FileKey, FileRecord, Host, LinkCost, LogicalFileName, RowData, RowKey,
    StorageClass,
};
use catalog_core::query::{self, CatalogView};
use catalog_core::replication::{bootstrap_from, sync_round, Peer, RetryPolicy, Scheduler};
use catalog_core::resolver::{self, SearchPath};
use catalog_core::store::{Mutation, Store, StoreConfig};
use catalog_core::transport::tcp::{serve, TcpConnector};
use catalog_core::transport::DEFAULT_MAX_BATCH;

use config::Settings;
use output::{Format, Outcome};

#[derive(Parser)]
#[command(name = "catalog", version, about = "Distributed replicated file catalog")]
struct Cli {
    /// Store directory (env CATALOG_HOME, conf key `home` not allowed)
    #[arg(long, global = true)]
    home: Option<PathBuf>,
    /// Federation config file (env CATALOG_FEDERATION, conf key `federation`)
    #[arg(long, global = true)]
    federation: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialize a store directory for one federation site
    Init {
        /// Which federation site this store belongs to
        #[arg(long)]
        site: String,
    },
    /// Run the sync server and scheduler until SIGINT/SIGTERM
    Serve {
        /// Scheduler tick interval, e.g. 30s
        #[arg(long, default_value = "30s")]
        tick: String,
        /// Retry backoff cap, e.g. 10m
        #[arg(long, default_value = "10m")]
        backoff_max: String,
        /// Listen address; defaults to this site's federation entry
        #[arg(long)]
        listen: Option<String>,
    },
    /// Catalog one file replica
    AddFile {
        #[arg(long)]
        lfn: String,
        #[arg(long)]
        host: String,
        #[arg(long)]
        path: String,
        #[arg(long, value_parser = parse_storage)]
        storage: StorageClass,
        #[arg(long, default_value = "")]
        production: String,
        #[arg(long, default_value_t = 0)]
        size: u64,
    },
    /// Remove one file replica owned by this site
    DeleteFile {
        #[arg(long)]
        lfn: String,
        #[arg(long)]
        host: String,
        #[arg(long)]
        path: String,
    },
    /// Register topology rows owned by this site
    #[command(subcommand)]
    Register(RegisterCommand),
    /// Query the catalog
    #[command(subcommand)]
    Query(QueryCommand),
    /// Translate a logical file name to a physical location
    Resolve {
        lfn: String,
        /// Search path; defaults to env CATALOG_SEARCH_PATH or conf
        #[arg(long)]
        search: Option<String>,
    },
    /// Force one apply + sync round against all peers
    SyncNow,
    /// Bootstrap this (new) site's store from a donor peer
    AddSite {
        /// Donor peer's site id
        #[arg(long)]
        from: String,
    },
    /// Lint the catalog for dangling references and divergence
    Fsck {
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Show cursors, queue depth, and the last sync reports
    Status {
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Subcommand)]
enum RegisterCommand {
    /// Register this site in the catalog's sites table
    Site,
    /// Register a cluster at this site
    Cluster { name: String },
    /// Register a host in one of this site's clusters
    Host {
        hostname: String,
        #[arg(long)]
        cluster: String,
        #[arg(long, value_parser = parse_storage)]
        storage: StorageClass,
    },
    /// Register the link cost from this site to another
    Cost {
        /// Destination site id
        to: String,
        /// Relative cost, `N` or `N/D`
        cost: String,
    },
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Union the local buffer so this site's unapplied writes show up
    #[arg(long)]
    include_pending: bool,
}

#[derive(Subcommand)]
enum QueryCommand {
    /// All replicas of a file
    Replicas {
        lfn: String,
        #[command(flatten)]
        common: QueryArgs,
    },
    /// All disk replicas of a file
    Disk {
        lfn: String,
        #[command(flatten)]
        common: QueryArgs,
    },
    /// A local disk replica of a file
    Local {
        lfn: String,
        /// Site to treat as local; defaults to this store's site
        #[arg(long)]
        site: Option<String>,
        #[command(flatten)]
        common: QueryArgs,
    },
    /// All files at a site
    Site {
        site: String,
        #[command(flatten)]
        common: QueryArgs,
    },
    /// All hosts in a cluster
    Cluster {
        name: String,
        #[arg(long)]
        site: Option<String>,
        #[command(flatten)]
        common: QueryArgs,
    },
    /// All files from a production
    Production {
        tag: String,
        #[command(flatten)]
        common: QueryArgs,
    },
    /// The replica with the smallest link cost
    Closest {
        lfn: String,
        /// Requesting site; defaults to this store's site
        #[arg(long)]
        from: Option<String>,
        #[command(flatten)]
        common: QueryArgs,
    },
}

fn parse_storage(s: &str) -> Result<StorageClass, String> {
    StorageClass::parse(s).ok_or_else(|| format!("storage must be `disk` or `tape`, got {s:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::from(0),
        Ok(Outcome::Empty) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// CLI failure with its exit-code class. Rendered as `E:<code>: message`.
#[derive(Debug)]
enum CliError {
    Usage(String),
    NotFound(String),
    Store(String),
    Proto(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::NotFound(_) => 1,
            CliError::Store(_) | CliError::Proto(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "E:USAGE: {m}"),
            CliError::NotFound(m) => write!(f, "E:NOTFOUND: {m}"),
            CliError::Store(m) => write!(f, "E:STORE: {m}"),
            CliError::Proto(m) => write!(f, "E:PROTO: {m}"),
        }
    }
}

impl From<catalog_core::store::StoreError> for CliError {
    fn from(e: catalog_core::store::StoreError) -> Self {
        use catalog_core::store::StoreError::*;
        match e {
            OwnershipViolation { .. } | UnknownKey | DuplicateKey | Model(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Store(other.to_string()),
        }
    }
}

impl From<catalog_core::query::QueryError> for CliError {
    fn from(e: catalog_core::query::QueryError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<catalog_core::model::ModelError> for CliError {
    fn from(e: catalog_core::model::ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<catalog_core::federation::FederationError> for CliError {
    fn from(e: catalog_core::federation::FederationError) -> Self {
        CliError::Usage(format!("federation config: {e}"))
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let settings = Settings::gather(cli.home, cli.federation)?;
    match cli.command {
        Command::Init { site } => cmd_init(&settings, &site),
        Command::Serve {
            tick,
            backoff_max,
            listen,
        } => cmd_serve(&settings, &tick, &backoff_max, listen),
        Command::AddFile {
            lfn,
            host,
            path,
            storage,
            production,
            size,
        } => cmd_add_file(&settings, &lfn, &host, &path, storage, &production, size),
        Command::DeleteFile { lfn, host, path } => cmd_delete_file(&settings, &lfn, &host, &path),
        Command::Register(reg) => cmd_register(&settings, reg),
        Command::Query(q) => cmd_query(&settings, q),
        Command::Resolve { lfn, search } => cmd_resolve(&settings, &lfn, search),
        Command::SyncNow => cmd_sync_now(&settings),
        Command::AddSite { from } => cmd_add_site(&settings, &from),
        Command::Fsck { format } => cmd_fsck(&settings, format),
        Command::Status { format } => cmd_status(&settings, format),
    }
}

fn open_rw(settings: &Settings) -> Result<(Store, Federation), CliError> {
    let federation = settings.federation()?;
    let site = settings.site(&federation)?;
    let config = StoreConfig::new(site, federation.sites().cloned().collect());
    let store = Store::open(&settings.home, config)?;
    Ok((store, federation))
}

fn open_ro(settings: &Settings) -> Result<(Store, Federation), CliError> {
    let federation = settings.federation()?;
    let site = settings.site(&federation)?;
    let mut config = StoreConfig::new(site, federation.sites().cloned().collect());
    config.read_only = true;
    let store = Store::open(&settings.home, config).map_err(|e| match e {
        catalog_core::store::StoreError::Io(ref io)
            if io.kind() == std::io::ErrorKind::NotFound =>
        {
            CliError::Store(format!(
                "no store at {}; run `catalog init` first",
                settings.home.display()
            ))
        }
        other => other.into(),
    })?;
    Ok((store, federation))
}

fn cmd_init(settings: &Settings, site_id: &str) -> Result<Outcome, CliError> {
    let federation = settings.federation()?;
    let entry = federation.by_id(site_id)?;
    let config = StoreConfig::new(entry.site.clone(), federation.sites().cloned().collect());
    let store = Store::open(&settings.home, config)?;
    settings.write_conf(site_id)?;
    println!(
        "initialized store for site {} (ordinal {}) at {}",
        store.site().id(),
        store.site().ordinal(),
        settings.home.display()
    );
    Ok(Outcome::Ok)
}

static SIGNALLED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_sig: libc::c_int) {
    SIGNALLED.store(true, Ordering::SeqCst);
}

fn install_signal_handlers() {
    let handler = on_signal as *const () as libc::sighandler_t;
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

fn cmd_serve(
    settings: &Settings,
    tick: &str,
    backoff_max: &str,
    listen: Option<String>,
) -> Result<Outcome, CliError> {
    let tick = settings.duration("tick", tick)?;
    let backoff_max = settings.duration("backoff_max", backoff_max)?;
    let (store, federation) = open_rw(settings)?;
    let store = Arc::new(store);
    let digest = federation.digest();
    let local = store.site().clone();

    let bind = match listen.or_else(|| settings.conf.get("listen").cloned()) {
        Some(addr) => addr,
        None => federation.by_id(local.id())?.address.clone(),
    };
    let server = serve(Arc::clone(&store), digest, &bind)
        .map_err(|e| CliError::Proto(format!("cannot listen on {bind}: {e}")))?;
    log::info!(
        "site {} serving on {}, tick {:?}",
        local.id(),
        server.local_addr(),
        tick
    );

    let peers: Vec<Peer> = federation
        .entries()
        .iter()
        .filter(|e| e.site != local)
        .map(|e| Peer::new(e.site.clone(), e.address.clone()))
        .collect();
    let connector = TcpConnector::new(local.clone(), digest);
    let policy = RetryPolicy {
        interval: tick,
        max_backoff: backoff_max.max(tick),
    };
    let mut scheduler = Scheduler::new(Arc::clone(&store), connector, peers, policy);

    install_signal_handlers();
    let flag = scheduler.shutdown_flag();
    let watcher = std::thread::spawn(move || loop {
        if SIGNALLED.load(Ordering::SeqCst) {
            flag.store(true, Ordering::SeqCst);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    });

    let status_path = settings.home.join("status.json");
    scheduler.run(|tick_no, reports| {
        for r in reports {
            log::info!(
                "tick {tick_no}: peer {} {:?} pulled {} ops in {:?}",
                r.peer.id(),
                r.outcome,
                r.total_ops(),
                r.duration
            );
        }
        output::write_status_file(&status_path, tick_no, reports);
    });

    server.shutdown();
    SIGNALLED.store(true, Ordering::SeqCst);
    let _ = watcher.join();
    log::info!("clean shutdown");
    Ok(Outcome::Ok)
}

fn cmd_add_file(
    settings: &Settings,
    lfn: &str,
    host: &str,
    path: &str,
    storage: StorageClass,
    production: &str,
    size: u64,
) -> Result<Outcome, CliError> {
    let (store, _) = open_rw(settings)?;
    let record = FileRecord {
        lfn: LogicalFileName::new(lfn)?,
        host: host.to_string(),
        path: path.to_string(),
        storage,
        production: production.to_string(),
        size_bytes: size,
        created_at: chrono::Utc::now(),
        origin: store.site().clone(),
    };
    let seq = store.write_local(Mutation::Insert(RowData::File(record)))?;
    println!("captured seq {seq}");
    Ok(Outcome::Ok)
}

fn cmd_delete_file(
    settings: &Settings,
    lfn: &str,
    host: &str,
    path: &str,
) -> Result<Outcome, CliError> {
    let (store, _) = open_rw(settings)?;
    let key = RowKey::File(FileKey {
        lfn: LogicalFileName::new(lfn)?,
        host: host.to_string(),
        path: path.to_string(),
    });
    let seq = store.write_local(Mutation::Delete(key))?;
    println!("captured seq {seq}");
    Ok(Outcome::Ok)
}

fn cmd_register(settings: &Settings, reg: RegisterCommand) -> Result<Outcome, CliError> {
    let (store, federation) = open_rw(settings)?;
    let local = store.site().clone();
    let row = match reg {
        RegisterCommand::Site => RowData::Site(local),
        RegisterCommand::Cluster { name } => RowData::Cluster(ClusterId::new(&name, local)?),
        RegisterCommand::Host {
            hostname,
            cluster,
            storage,
        } => RowData::Host(Host::new(
            &hostname,
            ClusterId::new(&cluster, local)?,
            storage,
        )?),
        RegisterCommand::Cost { to, cost } => {
            let to_site = federation.by_id(&to)?.site.clone();
            RowData::Cost(LinkCost::new(local, to_site, Cost::parse(&cost)?)?)
        }
    };
    let seq = store.write_local(Mutation::Insert(row))?;
    println!("captured seq {seq}");
    Ok(Outcome::Ok)
}

fn cmd_query(settings: &Settings, q: QueryCommand) -> Result<Outcome, CliError> {
    let (store, _) = open_ro(settings)?;
    let local_id = store.site().id().to_string();
    let (rendered, empty) = match q {
        QueryCommand::Replicas { lfn, common } => {
            let view = CatalogView::capture(&store, common.include_pending);
            let rows = view.find_replicas(&LogicalFileName::new(&lfn)?);
            (output::replicas(common.format, &rows), rows.is_empty())
        }
        QueryCommand::Disk { lfn, common } => {
            let view = CatalogView::capture(&store, common.include_pending);
            let rows = view.find_disk_replicas(&LogicalFileName::new(&lfn)?);
            (output::replicas(common.format, &rows), rows.is_empty())
        }
        QueryCommand::Local { lfn, site, common } => {
            let view = CatalogView::capture(&store, common.include_pending);
            let site = site.unwrap_or(local_id);
            let hit = view.find_local_disk_replica(&LogicalFileName::new(&lfn)?, &site)?;
            let rows: Vec<_> = hit.into_iter().collect();
            (output::replicas(common.format, &rows), rows.is_empty())
        }
        QueryCommand::Site { site, common } => {
            let view = CatalogView::capture(&store, common.include_pending);
            let names = view.list_files_at_site(&site)?;
            (output::lfns(common.format, &names), names.is_empty())
        }
        QueryCommand::Cluster { name, site, common } => {
            let view = CatalogView::capture(&store, common.include_pending);
            let hosts = view.list_hosts_in_cluster(&name, site.as_deref())?;
            (output::hosts(common.format, &hosts), hosts.is_empty())
        }
        QueryCommand::Production { tag, common } => {
            let view = CatalogView::capture(&store, common.include_pending);
            let names = view.list_files_by_production(&tag)?;
            (output::lfns(common.format, &names), names.is_empty())
        }
        QueryCommand::Closest { lfn, from, common } => {
            let view = CatalogView::capture(&store, common.include_pending);
            let from = from.unwrap_or(local_id);
            let hit = view.find_closest_replica(&LogicalFileName::new(&lfn)?, &from)?;
            let empty = hit.is_none();
            (output::costed(common.format, hit.as_ref()), empty)
        }
    };
    print!("{rendered}");
    Ok(if empty { Outcome::Empty } else { Outcome::Ok })
}

fn cmd_resolve(
    settings: &Settings,
    lfn: &str,
    search: Option<String>,
) -> Result<Outcome, CliError> {
    let raw = search
        .or_else(|| std::env::var(resolver::SEARCH_PATH_ENV).ok())
        .or_else(|| settings.conf.get("search_path").cloned())
        .ok_or_else(|| {
            CliError::Usage(format!(
                "no search path: pass --search or set {}",
                resolver::SEARCH_PATH_ENV
            ))
        })?;
    let path = SearchPath::parse(&raw).map_err(|e| CliError::Usage(e.to_string()))?;
    let (store, _) = open_ro(settings)?;
    let lfn = LogicalFileName::new(lfn)?;
    let site = store.site().id().to_string();
    match resolver::resolve(&lfn, &path, &store, &site) {
        Ok(res) => {
            println!("{}", res.physical_path);
            Ok(Outcome::Ok)
        }
        Err(resolver::ResolveError::NotFound { lfn }) => {
            Err(CliError::NotFound(format!("{lfn} not found")))
        }
        Err(e) => Err(CliError::Usage(e.to_string())),
    }
}

fn cmd_sync_now(settings: &Settings) -> Result<Outcome, CliError> {
    let (store, federation) = open_rw(settings)?;
    let local = store.site().clone();
    store.apply_buffer()?;
    let connector = TcpConnector::new(local.clone(), federation.digest());
    let mut peers: Vec<Peer> = federation
        .entries()
        .iter()
        .filter(|e| e.site != local)
        .map(|e| Peer::new(e.site.clone(), e.address.clone()))
        .collect();
    let reports = sync_round(&store, &connector, &mut peers, DEFAULT_MAX_BATCH);
    let mut all_ok = true;
    for r in &reports {
        println!(
            "{}\t{:?}\t{} ops\t{} bytes\t{:?}",
            r.peer.id(),
            r.outcome,
            r.total_ops(),
            r.bytes,
            r.duration
        );
        if !matches!(r.outcome, catalog_core::replication::SyncOutcome::Success) {
            all_ok = false;
        }
    }
    store.sync_all()?;
    if all_ok {
        Ok(Outcome::Ok)
    } else {
        Err(CliError::Proto("one or more peers failed to sync".into()))
    }
}

fn cmd_add_site(settings: &Settings, from: &str) -> Result<Outcome, CliError> {
    let (store, federation) = open_rw(settings)?;
    let donor = federation.by_id(from)?;
    if donor.site == *store.site() {
        return Err(CliError::Usage("cannot bootstrap from self".into()));
    }
    let connector = TcpConnector::new(store.site().clone(), federation.digest());
    let peer = Peer::new(donor.site.clone(), donor.address.clone());
    let report = bootstrap_from(&store, &connector, &peer, DEFAULT_MAX_BATCH)?;
    println!(
        "bootstrap from {}: {:?}, {} ops, {} bytes, {:?}",
        report.peer.id(),
        report.outcome,
        report.total_ops(),
        report.bytes,
        report.duration
    );
    store.sync_all()?;
    match report.outcome {
        catalog_core::replication::SyncOutcome::Success => Ok(Outcome::Ok),
        _ => Err(CliError::Proto(
            report.detail.unwrap_or_else(|| "bootstrap failed".into()),
        )),
    }
}

fn cmd_fsck(settings: &Settings, format: Format) -> Result<Outcome, CliError> {
    let (store, _) = open_ro(settings)?;
    let issues = query::fsck(&store);
    print!("{}", output::fsck_issues(format, &issues));
    Ok(if issues.is_empty() {
        Outcome::Ok
    } else {
        Outcome::Empty
    })
}

fn cmd_status(settings: &Settings, format: Format) -> Result<Outcome, CliError> {
    let (store, _) = open_ro(settings)?;
    print!(
        "{}",
        output::status(format, &store, &settings.home.join("status.json"))
    );
    Ok(Outcome::Ok)
}
