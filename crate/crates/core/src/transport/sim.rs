//! In-process simulated network: the same frames and server handling as
//! the TCP transport, minus the sockets, plus seeded fault injection.
//!
//! Every request and response is encoded to real frames and decoded again
//! on the far side, so the codec path is exercised end to end. Message
//! drops, latency draws, and site partitions come from one seeded RNG:
//! the same seed and the same call schedule reproduce the same traffic,
//! byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{OperationRecord, SequenceNumber, SiteId};
use crate::store::{Snapshot, Store};

use super::{
    assemble_snapshot, decode_frame, error_from_peer, Connector, Message, RequestHandler,
    SessionStats, SyncSession, TransportError, PROTOCOL_VERSION,
};

/// Per ordered-pair link behaviour.
#[derive(Debug, Clone, Copy)]
pub struct LinkConfig {
    /// Probability that any single message is dropped in transit.
    pub drop_probability: f64,
    /// Uniform one-way latency range, accounted on the virtual clock.
    pub latency: (Duration, Duration),
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            drop_probability: 0.0,
            latency: (Duration::ZERO, Duration::ZERO),
        }
    }
}

struct SimInner {
    stores: Mutex<BTreeMap<u32, Arc<Store>>>,
    handlers: Mutex<BTreeMap<u32, Arc<RequestHandler>>>,
    links: Mutex<BTreeMap<(u32, u32), LinkConfig>>,
    partitioned: Mutex<BTreeSet<u32>>,
    rng: Mutex<ChaCha8Rng>,
    clock_ns: AtomicU64,
    federation_digest: [u8; 32],
}

/// The simulated federation network. Register one store per site, then
/// hand each site a [`SimConnector`].
#[derive(Clone)]
pub struct SimNetwork {
    inner: Arc<SimInner>,
}

impl SimNetwork {
    pub fn new(seed: u64, federation_digest: [u8; 32]) -> SimNetwork {
        SimNetwork {
            inner: Arc::new(SimInner {
                stores: Mutex::new(BTreeMap::new()),
                handlers: Mutex::new(BTreeMap::new()),
                links: Mutex::new(BTreeMap::new()),
                partitioned: Mutex::new(BTreeSet::new()),
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
                clock_ns: AtomicU64::new(0),
                federation_digest,
            }),
        }
    }

    pub fn register(&self, store: Arc<Store>) {
        let ord = store.site().ordinal();
        self.inner
            .handlers
            .lock()
            .unwrap()
            .insert(ord, Arc::new(RequestHandler::new(Arc::clone(&store), self.inner.federation_digest)));
        self.inner.stores.lock().unwrap().insert(ord, store);
    }

    pub fn set_link(&self, from: &SiteId, to: &SiteId, config: LinkConfig) {
        self.inner
            .links
            .lock()
            .unwrap()
            .insert((from.ordinal(), to.ordinal()), config);
    }

    /// Applies one link config to every ordered pair.
    pub fn set_all_links(&self, config: LinkConfig) {
        let ords: Vec<u32> = self.inner.stores.lock().unwrap().keys().copied().collect();
        let mut links = self.inner.links.lock().unwrap();
        for a in &ords {
            for b in &ords {
                if a != b {
                    links.insert((*a, *b), config);
                }
            }
        }
    }

    /// Cuts every link touching the site, as if it dropped off the net.
    pub fn partition_site(&self, site: &SiteId) -> Result<(), TransportError> {
        self.known(site)?;
        self.inner.partitioned.lock().unwrap().insert(site.ordinal());
        Ok(())
    }

    pub fn heal_site(&self, site: &SiteId) -> Result<(), TransportError> {
        self.known(site)?;
        self.inner.partitioned.lock().unwrap().remove(&site.ordinal());
        Ok(())
    }

    pub fn is_partitioned(&self, site: &SiteId) -> bool {
        self.inner
            .partitioned
            .lock()
            .unwrap()
            .contains(&site.ordinal())
    }

    /// Virtual time spent in simulated transmission so far.
    pub fn elapsed(&self) -> Duration {
        Duration::from_nanos(self.inner.clock_ns.load(Ordering::Relaxed))
    }

    pub fn connector_for(&self, local: SiteId) -> SimConnector {
        SimConnector {
            net: self.clone(),
            local,
        }
    }

    fn known(&self, site: &SiteId) -> Result<(), TransportError> {
        if self.inner.stores.lock().unwrap().contains_key(&site.ordinal()) {
            Ok(())
        } else {
            Err(TransportError::Protocol(format!(
                "unknown site {}",
                site.id()
            )))
        }
    }

    /// One direction of one message: partition check, latency draw, drop
    /// draw. Returns the frame length so callers can account bytes.
    fn transmit(&self, from: u32, to: u32, frame_len: usize) -> Result<(), TransportError> {
        {
            let partitioned = self.inner.partitioned.lock().unwrap();
            if partitioned.contains(&from) || partitioned.contains(&to) {
                return Err(TransportError::Unreachable("site partitioned".into()));
            }
        }
        let link = self
            .inner
            .links
            .lock()
            .unwrap()
            .get(&(from, to))
            .copied()
            .unwrap_or_default();
        let mut rng = self.inner.rng.lock().unwrap();
        let (lo, hi) = link.latency;
        let latency = if hi > lo {
            let span = (hi - lo).as_nanos() as u64;
            lo + Duration::from_nanos(rng.random_range(0..=span))
        } else {
            lo
        };
        // per-byte cost keeps big frames visibly slower on the virtual clock
        let wire_ns = latency.as_nanos() as u64 + frame_len as u64 / 16;
        self.inner.clock_ns.fetch_add(wire_ns, Ordering::Relaxed);
        if link.drop_probability > 0.0 && rng.random::<f64>() < link.drop_probability {
            return Err(TransportError::Unreachable("message dropped".into()));
        }
        Ok(())
    }
}

/// Opens simulated sessions from one site.
#[derive(Clone)]
pub struct SimConnector {
    net: SimNetwork,
    local: SiteId,
}

impl Connector for SimConnector {
    type Session = SimSession;

    fn connect(&self, site: &SiteId, _address: &str) -> Result<SimSession, TransportError> {
        let handler = {
            let handlers = self.net.inner.handlers.lock().unwrap();
            handlers
                .get(&site.ordinal())
                .cloned()
                .ok_or_else(|| TransportError::Unreachable(format!("{} not running", site.id())))?
        };
        let mut session = SimSession {
            net: self.net.clone(),
            local: self.local.clone(),
            peer: site.clone(),
            handler,
            stats: SessionStats::default(),
        };
        // HELLO exchange through the real codec
        let hello = Message::Hello {
            version: PROTOCOL_VERSION,
            site: self.local.clone(),
            federation_digest: self.net.inner.federation_digest,
        };
        let responses = session.exchange(hello, true)?;
        match responses.into_iter().next() {
            Some(Message::Hello { version, .. }) if version == PROTOCOL_VERSION => Ok(session),
            Some(Message::Hello { version, .. }) => {
                Err(TransportError::VersionMismatch { theirs: version })
            }
            Some(Message::Error { code, detail }) => Err(error_from_peer(code, detail, None)),
            _ => Err(TransportError::Protocol("no HELLO reply".into())),
        }
    }
}

/// One simulated session. Requests run synchronously against the peer's
/// request handler, but every message still crosses the frame codec and
/// the fault model.
pub struct SimSession {
    net: SimNetwork,
    local: SiteId,
    peer: SiteId,
    handler: Arc<RequestHandler>,
    stats: SessionStats,
}

impl SimSession {
    fn exchange(
        &mut self,
        request: Message,
        handshake: bool,
    ) -> Result<Vec<Message>, TransportError> {
        let local_ord = self.local.ordinal();
        let peer_ord = self.peer.ordinal();

        // request direction
        let frame = request.to_frame();
        self.stats.frames_sent += 1;
        self.stats.bytes_sent += frame.len() as u64;
        self.net.transmit(local_ord, peer_ord, frame.len())?;
        let (decoded, _) = decode_frame(&frame)?
            .ok_or_else(|| TransportError::Protocol("short frame".into()))?;

        // server side
        let responses = if handshake {
            match self.handler.handle_hello(&decoded) {
                Ok((_peer, reply)) => vec![reply],
                Err(reject) => vec![reject],
            }
        } else {
            self.handler.handle_request(&self.local, decoded)
        };

        // response direction, frame by frame
        let mut out = Vec::with_capacity(responses.len());
        for response in responses {
            let frame = response.to_frame();
            self.net.transmit(peer_ord, local_ord, frame.len())?;
            let (decoded, used) = decode_frame(&frame)?
                .ok_or_else(|| TransportError::Protocol("short frame".into()))?;
            self.stats.frames_received += 1;
            self.stats.bytes_received += used as u64;
            if let Message::DeltaResp { ops, .. } = &decoded {
                self.stats.delta_frames_received += 1;
                self.stats.ops_received += ops.len() as u64;
            }
            out.push(decoded);
        }
        Ok(out)
    }

    fn first_non_error(
        &self,
        mut msgs: Vec<Message>,
        origin: Option<&SiteId>,
    ) -> Result<Message, TransportError> {
        if msgs.is_empty() {
            return Err(TransportError::Protocol("empty response".into()));
        }
        match msgs.remove(0) {
            Message::Error { code, detail } => Err(error_from_peer(code, detail, origin)),
            other => Ok(other),
        }
    }
}

impl SyncSession for SimSession {
    fn peer_site(&self) -> &SiteId {
        &self.peer
    }

    fn fetch_cursors(&mut self) -> Result<BTreeMap<SiteId, SequenceNumber>, TransportError> {
        let responses = self.exchange(Message::CursorsReq, false)?;
        match self.first_non_error(responses, None)? {
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
    ) -> Result<Vec<Vec<OperationRecord>>, TransportError> {
        let responses = self.exchange(
            Message::DeltaReq {
                origin: origin.clone(),
                after,
                max_batch,
            },
            false,
        )?;
        let mut batches = Vec::new();
        for msg in responses {
            match msg {
                Message::DeltaResp {
                    origin: resp_origin,
                    last,
                    ops,
                } => {
                    if resp_origin != *origin {
                        return Err(TransportError::Protocol(
                            "DELTA_RESP for a different origin".into(),
                        ));
                    }
                    batches.push(ops);
                    if last {
                        break;
                    }
                }
                Message::Error { code, detail } => {
                    return Err(error_from_peer(code, detail, Some(origin)))
                }
                other => {
                    return Err(TransportError::Protocol(format!(
                        "expected DELTA_RESP, got {:?}",
                        other.msg_type()
                    )))
                }
            }
        }
        Ok(batches)
    }

    fn fetch_snapshot(&mut self) -> Result<Snapshot, TransportError> {
        let responses = self.exchange(Message::SnapReq, false)?;
        assemble_snapshot(responses)
    }

    fn stats(&self) -> SessionStats {
        self.stats
    }
}
