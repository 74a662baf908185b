//! Message transport between participants.
//!
//! [`Network`] moves opaque byte payloads between numbered endpoints and keeps
//! a [`TrafficLedger`]. Delivery is reliable and ordered per `(from, to)`
//! channel. Time is simulated: every message costs the profile's latency plus
//! its serialization time, so runs are reproducible on any machine.
//!
//! Two wire backends are available: in-memory queues and real TCP
//! connections on which every payload travels in a `u32` big-endian
//! length-prefixed frame.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Link characteristics used for simulated time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub bandwidth_bits_per_sec: f64,
    pub latency_ms: f64,
}

impl NetworkProfile {
    /// 1000 Mbps, no latency.
    pub fn lan() -> Self {
        Self {
            name: "LAN".into(),
            bandwidth_bits_per_sec: 1e9,
            latency_ms: 0.0,
        }
    }

    /// 400 Mbps, 100 ms latency.
    pub fn wan() -> Self {
        Self {
            name: "WAN".into(),
            bandwidth_bits_per_sec: 4e8,
            latency_ms: 100.0,
        }
    }

    pub fn custom(name: &str, bandwidth_bits_per_sec: f64, latency_ms: f64) -> Result<Self> {
        if !(bandwidth_bits_per_sec > 0.0 && bandwidth_bits_per_sec.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth_bits_per_sec}"
            )));
        }
        if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "latency must be nonnegative, got {latency_ms}"
            )));
        }
        Ok(Self {
            name: name.into(),
            bandwidth_bits_per_sec,
            latency_ms,
        })
    }

    /// Seconds needed to deliver `bytes` over one link.
    pub fn transfer_seconds(&self, bytes: usize) -> f64 {
        self.latency_ms / 1000.0 + 8.0 * bytes as f64 / self.bandwidth_bits_per_sec
    }
}

impl std::str::FromStr for NetworkProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lan" => Ok(Self::lan()),
            "wan" => Ok(Self::wan()),
            other => Err(Error::InvalidArgument(format!(
                "unknown network profile {other:?}, expected lan or wan"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCounters {
    pub secure_aggregation_calls: u64,
    pub bytes_sent: u64,
    pub messages_sent: u64,
    pub simulated_elapsed_seconds: f64,
}

impl PhaseCounters {
    fn add(&mut self, other: &PhaseCounters) {
        self.secure_aggregation_calls += other.secure_aggregation_calls;
        self.bytes_sent += other.bytes_sent;
        self.messages_sent += other.messages_sent;
        self.simulated_elapsed_seconds += other.simulated_elapsed_seconds;
    }
}

/// Traffic counters split by protocol phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLedger {
    current: String,
    phases: BTreeMap<String, PhaseCounters>,
}

impl Default for TrafficLedger {
    fn default() -> Self {
        Self {
            current: "default".into(),
            phases: BTreeMap::new(),
        }
    }
}

impl TrafficLedger {
    /// Subsequent traffic is booked under `phase`.
    pub fn set_phase(&mut self, phase: &str) {
        self.current = phase.into();
    }

    pub fn current_phase(&self) -> &str {
        &self.current
    }

    pub fn record_message(&mut self, bytes: usize, seconds: f64) {
        let c = self.phases.entry(self.current.clone()).or_default();
        c.messages_sent += 1;
        c.bytes_sent += bytes as u64;
        c.simulated_elapsed_seconds += seconds;
    }

    pub fn record_aggregations(&mut self, calls: u64) {
        self.phases
            .entry(self.current.clone())
            .or_default()
            .secure_aggregation_calls += calls;
    }

    pub fn phase(&self, phase: &str) -> PhaseCounters {
        self.phases.get(phase).copied().unwrap_or_default()
    }

    pub fn phases(&self) -> &BTreeMap<String, PhaseCounters> {
        &self.phases
    }

    pub fn total(&self) -> PhaseCounters {
        let mut t = PhaseCounters::default();
        for c in self.phases.values() {
            t.add(c);
        }
        t
    }

    pub fn reset(&mut self) {
        self.phases.clear();
    }

    /// Adds another ledger's counters phase by phase.
    pub fn merge(&mut self, other: &TrafficLedger) {
        for (name, c) in &other.phases {
            self.phases.entry(name.clone()).or_default().add(c);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Sim,
    Socket,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(Self::Sim),
            "socket" => Ok(Self::Socket),
            other => Err(Error::InvalidArgument(format!(
                "unknown backend {other:?}, expected sim or socket"
            ))),
        }
    }
}

enum Wires {
    Sim(BTreeMap<(usize, usize), VecDeque<Vec<u8>>>),
    Socket(SocketWires),
}

/// Endpoints `0..n` connected by simulated or TCP links.
pub struct Network {
    endpoints: usize,
    profile: NetworkProfile,
    ledger: TrafficLedger,
    trace: Sha256,
    wires: Wires,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("endpoints", &self.endpoints)
            .field("profile", &self.profile)
            .field("ledger", &self.ledger)
            .finish_non_exhaustive()
    }
}

impl Network {
    /// In-memory network with ordered queues.
    pub fn simulated(endpoints: usize, profile: NetworkProfile) -> Self {
        Self {
            endpoints,
            profile,
            ledger: TrafficLedger::default(),
            trace: Sha256::new(),
            wires: Wires::Sim(BTreeMap::new()),
        }
    }

    /// TCP network on loopback with ephemeral ports.
    pub fn sockets(endpoints: usize, profile: NetworkProfile) -> Result<Self> {
        let addrs = vec!["127.0.0.1:0".parse().expect("literal address"); endpoints];
        Self::sockets_at(&addrs, profile)
    }

    /// TCP network where endpoint `i` listens on `addrs[i]`.
    pub fn sockets_at(addrs: &[SocketAddr], profile: NetworkProfile) -> Result<Self> {
        Ok(Self {
            endpoints: addrs.len(),
            profile,
            ledger: TrafficLedger::default(),
            trace: Sha256::new(),
            wires: Wires::Socket(SocketWires::connect(addrs)?),
        })
    }

    pub fn new(backend: Backend, endpoints: usize, profile: NetworkProfile) -> Result<Self> {
        match backend {
            Backend::Sim => Ok(Self::simulated(endpoints, profile)),
            Backend::Socket => Self::sockets(endpoints, profile),
        }
    }

    pub fn endpoints(&self) -> usize {
        self.endpoints
    }

    pub fn profile(&self) -> &NetworkProfile {
        &self.profile
    }

    fn check(&self, id: usize) -> Result<()> {
        if id < self.endpoints {
            Ok(())
        } else {
            Err(Error::UnknownEndpoint(id))
        }
    }

    pub fn send(&mut self, from: usize, to: usize, payload: Vec<u8>) -> Result<()> {
        self.check(from)?;
        self.check(to)?;
        if from == to {
            return Err(Error::Transport(format!("endpoint {from} cannot send to itself")));
        }
        let seconds = self.profile.transfer_seconds(payload.len());
        self.ledger.record_message(payload.len(), seconds);
        self.trace.update((from as u64).to_le_bytes());
        self.trace.update((to as u64).to_le_bytes());
        self.trace.update((payload.len() as u64).to_le_bytes());
        self.trace.update(&payload);
        match &mut self.wires {
            Wires::Sim(queues) => {
                queues.entry((from, to)).or_default().push_back(payload);
                Ok(())
            }
            Wires::Socket(s) => s.send(from, to, &payload),
        }
    }

    /// Sends `payload` to every other endpoint, in index order.
    pub fn broadcast(&mut self, from: usize, payload: &[u8]) -> Result<()> {
        for to in 0..self.endpoints {
            if to != from {
                self.send(from, to, payload.to_vec())?;
            }
        }
        Ok(())
    }

    /// Next payload on the `(from, to)` channel.
    pub fn recv(&mut self, to: usize, from: usize) -> Result<Vec<u8>> {
        self.check(from)?;
        self.check(to)?;
        match &mut self.wires {
            Wires::Sim(queues) => queues
                .get_mut(&(from, to))
                .and_then(VecDeque::pop_front)
                .ok_or_else(|| Error::Transport(format!("no message from {from} to {to}"))),
            Wires::Socket(s) => s.recv(from, to),
        }
    }

    pub fn record_aggregations(&mut self, calls: u64) {
        self.ledger.record_aggregations(calls);
    }

    pub fn set_phase(&mut self, phase: &str) {
        self.ledger.set_phase(phase);
    }

    pub fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    /// Snapshot of the counters.
    pub fn ledger_report(&self) -> TrafficLedger {
        self.ledger.clone()
    }

    pub fn reset_ledger(&mut self) {
        self.ledger.reset();
    }

    /// SHA-256 over every `(from, to, payload)` sent so far.
    pub fn trace_digest(&self) -> [u8; 32] {
        self.trace.clone().finalize().into()
    }
}

const RECV_TIMEOUT: Duration = Duration::from_secs(120);
const MAX_FRAME: usize = 1 << 30;

/// Full mesh of TCP connections; one reader thread per incoming stream.
struct SocketWires {
    writers: BTreeMap<(usize, usize), TcpStream>,
    inboxes: BTreeMap<(usize, usize), Receiver<Result<Vec<u8>>>>,
    readers: Vec<JoinHandle<()>>,
}

impl SocketWires {
    fn connect(addrs: &[SocketAddr]) -> Result<Self> {
        let listeners = addrs
            .iter()
            .map(TcpListener::bind)
            .collect::<std::io::Result<Vec<_>>>()?;
        let bound = listeners
            .iter()
            .map(TcpListener::local_addr)
            .collect::<std::io::Result<Vec<_>>>()?;
        let mut writers = BTreeMap::new();
        let mut inboxes = BTreeMap::new();
        let mut readers = Vec::new();
        let n = addrs.len();
        for from in 0..n {
            for to in 0..n {
                if from == to {
                    continue;
                }
                // One connection per direction keeps reader threads simple.
                let mut out = TcpStream::connect(bound[to])?;
                out.set_nodelay(true)?;
                out.write_all(&(from as u32).to_be_bytes())?;
                let (mut incoming, _) = listeners[to].accept()?;
                let mut hello = [0u8; 4];
                incoming.read_exact(&mut hello)?;
                if u32::from_be_bytes(hello) as usize != from {
                    return Err(Error::Transport("connection handshake mismatch".into()));
                }
                let (tx, rx) = mpsc::channel();
                readers.push(thread::spawn(move || loop {
                    match read_frame(&mut incoming) {
                        Ok(Some(frame)) => {
                            if tx.send(Ok(frame)).is_err() {
                                return;
                            }
                        }
                        Ok(None) => return,
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            return;
                        }
                    }
                }));
                writers.insert((from, to), out);
                inboxes.insert((from, to), rx);
            }
        }
        Ok(Self {
            writers,
            inboxes,
            readers,
        })
    }

    fn send(&mut self, from: usize, to: usize, payload: &[u8]) -> Result<()> {
        let len = u32::try_from(payload.len())
            .map_err(|_| Error::Transport("payload exceeds u32 frame length".into()))?;
        let w = self.writers.get_mut(&(from, to)).ok_or(Error::UnknownEndpoint(to))?;
        w.write_all(&len.to_be_bytes())?;
        w.write_all(payload)?;
        Ok(())
    }

    fn recv(&mut self, from: usize, to: usize) -> Result<Vec<u8>> {
        let rx = self.inboxes.get(&(from, to)).ok_or(Error::UnknownEndpoint(from))?;
        rx.recv_timeout(RECV_TIMEOUT)
            .map_err(|e| Error::Transport(format!("receive from {from} to {to}: {e}")))?
    }
}

impl Drop for SocketWires {
    fn drop(&mut self) {
        for w in self.writers.values() {
            let _ = w.shutdown(std::net::Shutdown::Both);
        }
        for r in self.readers.drain(..) {
            let _ = r.join();
        }
    }
}

/// Reads one length-prefixed frame; `None` on a clean end of stream.
fn read_frame(stream: &mut TcpStream) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(Error::Transport(format!("frame of {len} bytes exceeds the limit")));
    }
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(Some(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lan_kilobyte_costs_serialization_only() {
        let mut net = Network::simulated(2, NetworkProfile::lan());
        net.send(0, 1, vec![0; 1000]).unwrap();
        let t = net.ledger().total();
        assert_eq!(t.simulated_elapsed_seconds, 8e3 / 1e9);
        assert_eq!((t.bytes_sent, t.messages_sent), (1000, 1));
    }

    #[test]
    fn wan_empty_message_costs_latency() {
        let mut net = Network::simulated(2, NetworkProfile::wan());
        net.send(1, 0, Vec::new()).unwrap();
        assert_eq!(net.ledger().total().simulated_elapsed_seconds, 0.1);
    }

    #[test]
    fn delivery_is_ordered_and_checked() {
        let mut net = Network::simulated(3, NetworkProfile::lan());
        net.send(0, 2, vec![1]).unwrap();
        net.send(0, 2, vec![2]).unwrap();
        assert_eq!(net.recv(2, 0).unwrap(), vec![1]);
        assert_eq!(net.recv(2, 0).unwrap(), vec![2]);
        assert!(net.recv(2, 0).is_err());
        assert!(matches!(net.send(0, 3, vec![]), Err(Error::UnknownEndpoint(3))));
    }

    #[test]
    fn ledger_phases_and_reset() {
        let mut net = Network::simulated(3, NetworkProfile::lan());
        assert_eq!(net.ledger().total(), PhaseCounters::default());
        net.set_phase("setup");
        net.broadcast(2, &[0; 10]).unwrap();
        net.set_phase("lloyd");
        net.record_aggregations(1);
        assert_eq!(net.ledger().phase("setup").messages_sent, 2);
        assert_eq!(net.ledger().phase("lloyd").secure_aggregation_calls, 1);
        net.reset_ledger();
        assert_eq!(net.ledger().total(), PhaseCounters::default());
    }

    #[test]
    fn profiles_validate() {
        assert!(NetworkProfile::custom("x", 0.0, 1.0).is_err());
        assert!(NetworkProfile::custom("x", 1.0, -1.0).is_err());
        assert_eq!("WAN".parse::<NetworkProfile>().unwrap(), NetworkProfile::wan());
    }

    #[test]
    fn socket_backend_matches_simulation() {
        let mut sim = Network::simulated(3, NetworkProfile::wan());
        let mut tcp = Network::sockets(3, NetworkProfile::wan()).unwrap();
        for net in [&mut sim, &mut tcp] {
            net.send(0, 2, b"hello".to_vec()).unwrap();
            net.send(2, 1, vec![7; 100_000]).unwrap();
            net.broadcast(1, b"all").unwrap();
        }
        for net in [&mut sim, &mut tcp] {
            assert_eq!(net.recv(2, 0).unwrap(), b"hello");
            assert_eq!(net.recv(1, 2).unwrap().len(), 100_000);
            assert_eq!(net.recv(0, 1).unwrap(), b"all");
            assert_eq!(net.recv(2, 1).unwrap(), b"all");
        }
        assert_eq!(sim.ledger(), tcp.ledger());
        assert_eq!(sim.trace_digest(), tcp.trace_digest());
    }
}
