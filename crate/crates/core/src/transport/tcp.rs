//! Blocking TCP transport: a per-site server on one port and a client-side
//! connector. I/O runs with deadlines; a stuck peer times out rather than
//! wedging the scheduler.

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::model::{OperationRecord, SequenceNumber, SiteId};
use crate::store::{Snapshot, Store};

use super::{
    assemble_snapshot, decode_frame, error_from_peer, Connector, DeltaStream, Message,
    RequestHandler, SessionStats, SyncSession, TransportError, HANDSHAKE_TIMEOUT_SECS,
    PROTOCOL_VERSION,
};

const ACCEPT_POLL: Duration = Duration::from_millis(50);

/// Framed blocking stream with traffic counters.
struct FramedStream {
    stream: TcpStream,
    rx: Vec<u8>,
    stats: SessionStats,
}

impl FramedStream {
    fn new(stream: TcpStream) -> FramedStream {
        FramedStream {
            stream,
            rx: Vec::new(),
            stats: SessionStats::default(),
        }
    }

    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let frame = msg.to_frame();
        self.stream.write_all(&frame)?;
        self.stats.frames_sent += 1;
        self.stats.bytes_sent += frame.len() as u64;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        loop {
            if let Some((msg, used)) = decode_frame(&self.rx)? {
                self.rx.drain(..used);
                self.stats.frames_received += 1;
                self.stats.bytes_received += used as u64;
                return Ok(msg);
            }
            let mut chunk = [0u8; 64 * 1024];
            let n = self.stream.read(&mut chunk)?;
            if n == 0 {
                return Err(TransportError::Protocol("connection closed".into()));
            }
            self.rx.extend_from_slice(&chunk[..n]);
        }
    }
}

/// Client side of one established TCP session.
pub struct TcpSession {
    framed: FramedStream,
    peer: SiteId,
}

impl std::fmt::Debug for TcpSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TcpSession")
            .field("peer", &self.peer.id())
            .finish_non_exhaustive()
    }
}

impl TcpSession {
    fn expect_no_error(msg: Message, origin: Option<&SiteId>) -> Result<Message, TransportError> {
        match msg {
            Message::Error { code, detail } => Err(error_from_peer(code, detail, origin)),
            other => Ok(other),
        }
    }
}

impl SyncSession for TcpSession {
    fn peer_site(&self) -> &SiteId {
        &self.peer
    }

    fn fetch_cursors(&mut self) -> Result<BTreeMap<SiteId, SequenceNumber>, TransportError> {
        self.framed.send(&Message::CursorsReq)?;
        match Self::expect_no_error(self.framed.recv()?, None)? {
            Message::CursorsResp { cursors } => Ok(cursors),
            other => Err(TransportError::Protocol(format!(
                "expected CURSORS_RESP, got {:?}",
                other.msg_type()
            ))),
        }
    }

    fn fetch_delta(
        &mut self,
        origin: &SiteId,
        after: SequenceNumber,
        max_batch: u32,
    ) -> DeltaStream {
        if let Err(e) = self.framed.send(&Message::DeltaReq {
            origin: origin.clone(),
            after,
            max_batch,
        }) {
            return DeltaStream::failed(e);
        }
        let mut batches = Vec::new();
        loop {
            let msg = match self.framed.recv() {
                Ok(m) => m,
                // batches already received stay usable
                Err(e) => return DeltaStream { batches, error: Some(e) },
            };
            match msg {
                Message::DeltaResp {
                    origin: resp_origin,
                    last,
                    ops,
                } => {
                    if resp_origin != *origin {
                        return DeltaStream {
                            batches,
                            error: Some(TransportError::Protocol(
                                "DELTA_RESP for a different origin".into(),
                            )),
                        };
                    }
                    self.framed.stats.delta_frames_received += 1;
                    self.framed.stats.ops_received += ops.len() as u64;
                    batches.push(ops);
                    if last {
                        return DeltaStream::complete(batches);
                    }
                }
                Message::Error { code, detail } => {
                    return DeltaStream {
                        batches,
                        error: Some(error_from_peer(code, detail, Some(origin))),
                    }
                }
                other => {
                    return DeltaStream {
                        batches,
                        error: Some(TransportError::Protocol(format!(
                            "expected DELTA_RESP, got {:?}",
                            other.msg_type()
                        ))),
                    }
                }
            }
        }
    }

    fn fetch_snapshot(&mut self) -> Result<Snapshot, TransportError> {
        self.framed.send(&Message::SnapReq)?;
        let mut chunks = Vec::new();
        loop {
            let msg = self.framed.recv()?;
            let terminal = matches!(
                &msg,
                Message::SnapChunk { data, .. } if data.is_empty()
            ) || matches!(&msg, Message::Error { .. });
            chunks.push(msg);
            if terminal {
                break;
            }
        }
        assemble_snapshot(chunks)
    }

    fn stats(&self) -> SessionStats {
        self.framed.stats
    }
}

/// Opens TCP sessions, performing the HELLO exchange.
#[derive(Clone)]
pub struct TcpConnector {
    pub local: SiteId,
    pub federation_digest: [u8; 32],
    pub connect_timeout: Duration,
    pub io_timeout: Duration,
}

impl TcpConnector {
    pub fn new(local: SiteId, federation_digest: [u8; 32]) -> TcpConnector {
        TcpConnector {
            local,
            federation_digest,
            connect_timeout: Duration::from_secs(HANDSHAKE_TIMEOUT_SECS),
            io_timeout: Duration::from_secs(60),
        }
    }
}

impl Connector for TcpConnector {
    type Session = TcpSession;

    fn connect(&self, site: &SiteId, address: &str) -> Result<TcpSession, TransportError> {
        let addrs: Vec<SocketAddr> = address
            .to_socket_addrs()
            .map_err(|e| TransportError::Unreachable(format!("{address}: {e}")))?
            .collect();
        let mut last_err = None;
        let mut stream = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, self.connect_timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        let stream = stream.ok_or_else(|| {
            TransportError::Unreachable(format!(
                "{address}: {}",
                last_err
                    .map(|e| e.to_string())
                    .unwrap_or_else(|| "no addresses".into())
            ))
        })?;
        stream.set_nodelay(true).ok();
        stream.set_read_timeout(Some(self.connect_timeout)).ok();
        stream.set_write_timeout(Some(self.io_timeout)).ok();

        let mut framed = FramedStream::new(stream);
        framed.send(&Message::Hello {
            version: PROTOCOL_VERSION,
            site: self.local.clone(),
            federation_digest: self.federation_digest,
        })?;
        let reply = framed.recv().map_err(|e| match e {
            TransportError::Io(io) if io.kind() == ErrorKind::WouldBlock => {
                TransportError::HandshakeTimeout
            }
            TransportError::Io(io) if io.kind() == ErrorKind::TimedOut => {
                TransportError::HandshakeTimeout
            }
            other => other,
        })?;
        let peer = match reply {
            Message::Hello { version, site, .. } => {
                if version != PROTOCOL_VERSION {
                    return Err(TransportError::VersionMismatch { theirs: version });
                }
                site
            }
            Message::Error { code, detail } => {
                return Err(error_from_peer(code, detail, None));
            }
            other => {
                return Err(TransportError::Protocol(format!(
                    "expected HELLO, got {:?}",
                    other.msg_type()
                )))
            }
        };
        if peer != *site {
            return Err(TransportError::Protocol(format!(
                "dialed {} but peer identifies as {}",
                site.id(),
                peer.id()
            )));
        }
        framed.stream.set_read_timeout(Some(self.io_timeout)).ok();
        Ok(TcpSession { framed, peer })
    }
}

/// Handle to a running catalog server; shuts down when dropped.
pub struct ServerHandle {
    shutdown: Arc<AtomicBool>,
    local_addr: SocketAddr,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Starts the sync server: accepts peer connections, answers cursor,
/// delta, and snapshot requests against the store.
pub fn serve(
    store: Arc<Store>,
    federation_digest: [u8; 32],
    bind: &str,
) -> Result<ServerHandle, TransportError> {
    let listener = TcpListener::bind(bind)?;
    let local_addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let accept_shutdown = Arc::clone(&shutdown);
    let handler = Arc::new(RequestHandler::new(store, federation_digest));

    let accept_thread = std::thread::Builder::new()
        .name("catalog-accept".into())
        .spawn(move || {
            while !accept_shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let handler = Arc::clone(&handler);
                        let conn_shutdown = Arc::clone(&accept_shutdown);
                        std::thread::Builder::new()
                            .name("catalog-conn".into())
                            .spawn(move || {
                                if let Err(e) = serve_connection(handler, stream, conn_shutdown) {
                                    log::debug!("connection ended: {e}");
                                }
                            })
                            .ok();
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => {
                        std::thread::sleep(ACCEPT_POLL);
                    }
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        std::thread::sleep(ACCEPT_POLL);
                    }
                }
            }
        })
        .expect("spawn accept thread");

    Ok(ServerHandle {
        shutdown,
        local_addr,
        accept_thread: Some(accept_thread),
    })
}

fn serve_connection(
    handler: Arc<RequestHandler>,
    stream: TcpStream,
    shutdown: Arc<AtomicBool>,
) -> Result<(), TransportError> {
    stream.set_nodelay(true).ok();
    stream
        .set_read_timeout(Some(Duration::from_secs(HANDSHAKE_TIMEOUT_SECS)))
        .ok();
    let mut framed = FramedStream::new(stream);

    let hello = framed.recv()?;
    let peer = match handler.handle_hello(&hello) {
        Ok((peer, reply)) => {
            framed.send(&reply)?;
            peer
        }
        Err(reject) => {
            framed.send(&reject)?;
            return Ok(()); // close after ERROR
        }
    };

    // long read timeout between requests; a dead peer eventually times out
    framed
        .stream
        .set_read_timeout(Some(Duration::from_secs(300)))
        .ok();
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(());
        }
        let msg = match framed.recv() {
            Ok(m) => m,
            Err(TransportError::Protocol(_)) => return Ok(()), // clean close
            Err(e) => return Err(e),
        };
        if let Message::Error { detail, .. } = &msg {
            log::debug!("peer {} reported: {detail}", peer.id());
            return Ok(());
        }
        for response in handler.handle_request(&peer, msg) {
            framed.send(&response)?;
        }
    }
}
