//! Point-to-point byte transports with per-peer FIFO delivery.
//!
//! Parties are addressed by their global roster index. Both transports carry
//! whole encoded frames; [`Endpoint`] layers session checks and abort handling
//! on top.

use std::collections::HashMap;
use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::wire::{read_frame, Frame, MessageType, SessionId};

pub trait Transport: Send {
    fn me(&self) -> usize;
    fn send(&mut self, to: usize, bytes: Vec<u8>) -> Result<()>;
    fn recv(&mut self, from: usize, timeout: Duration) -> Result<Vec<u8>>;
}

fn recv_from(rx: Option<&Receiver<Result<Vec<u8>>>>, me: usize, from: usize, timeout: Duration) -> Result<Vec<u8>> {
    let rx = rx.ok_or_else(|| Error::Transport(format!("party {me} has no link from {from}")))?;
    match rx.recv_timeout(timeout) {
        Ok(msg) => msg,
        Err(RecvTimeoutError::Timeout) => {
            Err(Error::Transport(format!("party {me}: timed out after {timeout:?} waiting for {from}")))
        }
        Err(RecvTimeoutError::Disconnected) => Err(Error::Transport(format!("party {me}: link from {from} closed"))),
    }
}

/// Channel-backed transport for parties hosted in one process.
pub struct InProcessTransport {
    me: usize,
    outgoing: HashMap<usize, Sender<Result<Vec<u8>>>>,
    incoming: HashMap<usize, Receiver<Result<Vec<u8>>>>,
}

impl InProcessTransport {
    /// A full mesh among `parties` endpoints, indexed by party.
    pub fn mesh(parties: usize) -> Vec<InProcessTransport> {
        let mut nodes: Vec<InProcessTransport> = (0..parties)
            .map(|me| InProcessTransport { me, outgoing: HashMap::new(), incoming: HashMap::new() })
            .collect();
        for from in 0..parties {
            for to in 0..parties {
                if from == to {
                    continue;
                }
                let (tx, rx) = mpsc::channel();
                nodes[from].outgoing.insert(to, tx);
                nodes[to].incoming.insert(from, rx);
            }
        }
        nodes
    }
}

impl Transport for InProcessTransport {
    fn me(&self) -> usize {
        self.me
    }

    fn send(&mut self, to: usize, bytes: Vec<u8>) -> Result<()> {
        let tx = self
            .outgoing
            .get(&to)
            .ok_or_else(|| Error::Transport(format!("party {} has no link to {to}", self.me)))?;
        tx.send(Ok(bytes))
            .map_err(|_| Error::Transport(format!("party {}: link to {to} closed", self.me)))
    }

    fn recv(&mut self, from: usize, timeout: Duration) -> Result<Vec<u8>> {
        recv_from(self.incoming.get(&from), self.me, from, timeout)
    }
}

/// TCP transport: one connection per peer, with a reader thread per
/// connection feeding a FIFO queue.
pub struct TcpTransport {
    me: usize,
    writers: HashMap<usize, TcpStream>,
    incoming: HashMap<usize, Receiver<Result<Vec<u8>>>>,
}

impl TcpTransport {
    /// Listens on `addrs[me]`, connects to every lower-indexed peer in
    /// `peers` and accepts every higher-indexed one. Each connection starts
    /// with the connecting party's index as a 4-byte big-endian preamble.
    pub fn establish(me: usize, addrs: &[SocketAddr], peers: &[usize], timeout: Duration) -> Result<TcpTransport> {
        let listen_addr = *addrs
            .get(me)
            .ok_or_else(|| Error::Config(format!("no address for party {me}")))?;
        let listener = TcpListener::bind(listen_addr)
            .map_err(|e| Error::Transport(format!("party {me}: cannot listen on {listen_addr}: {e}")))?;
        let expect_inbound: Vec<usize> = peers.iter().copied().filter(|&p| p > me).collect();
        let deadline = Instant::now() + timeout;

        let acceptor = {
            let expect = expect_inbound.clone();
            thread::spawn(move || -> Result<Vec<(usize, TcpStream)>> {
                listener.set_nonblocking(true)?;
                let mut got = Vec::new();
                while got.len() < expect.len() {
                    match listener.accept() {
                        Ok((mut stream, _)) => {
                            stream.set_nonblocking(false)?;
                            stream.set_read_timeout(Some(timeout))?;
                            let mut pre = [0u8; 4];
                            std::io::Read::read_exact(&mut stream, &mut pre)?;
                            stream.set_read_timeout(None)?;
                            let who = u32::from_be_bytes(pre) as usize;
                            if !expect.contains(&who) || got.iter().any(|(w, _)| *w == who) {
                                return Err(Error::Transport(format!("unexpected connection from party {who}")));
                            }
                            got.push((who, stream));
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            if Instant::now() > deadline {
                                let missing: Vec<usize> =
                                    expect.iter().copied().filter(|p| got.iter().all(|(w, _)| w != p)).collect();
                                return Err(Error::Transport(format!("timed out waiting for parties {missing:?} to connect")));
                            }
                            thread::sleep(Duration::from_millis(5));
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                Ok(got)
            })
        };

        let mut streams: Vec<(usize, TcpStream)> = Vec::new();
        for &peer in peers.iter().filter(|&&p| p < me) {
            let addr = *addrs
                .get(peer)
                .ok_or_else(|| Error::Config(format!("no address for party {peer}")))?;
            let mut stream = loop {
                match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() > deadline => {
                        return Err(Error::Transport(format!("party {me}: cannot reach party {peer} at {addr}: {e}")))
                    }
                    Err(_) => thread::sleep(Duration::from_millis(20)),
                }
            };
            stream.write_all(&(me as u32).to_be_bytes())?;
            streams.push((peer, stream));
        }
        let accepted = acceptor
            .join()
            .map_err(|_| Error::Transport("acceptor thread panicked".into()))??;
        streams.extend(accepted);

        let mut writers = HashMap::new();
        let mut incoming = HashMap::new();
        for (peer, stream) in streams {
            stream.set_nodelay(true)?;
            let mut reader = stream.try_clone()?;
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || loop {
                let frame = read_frame(&mut reader);
                let failed = frame.is_err();
                if tx.send(frame).is_err() || failed {
                    break;
                }
            });
            writers.insert(peer, stream);
            incoming.insert(peer, rx);
        }
        Ok(TcpTransport { me, writers, incoming })
    }
}

impl Transport for TcpTransport {
    fn me(&self) -> usize {
        self.me
    }

    fn send(&mut self, to: usize, bytes: Vec<u8>) -> Result<()> {
        let stream = self
            .writers
            .get_mut(&to)
            .ok_or_else(|| Error::Transport(format!("party {} has no connection to {to}", self.me)))?;
        stream
            .write_all(&bytes)
            .map_err(|e| Error::Transport(format!("party {}: send to {to} failed: {e}", self.me)))
    }

    fn recv(&mut self, from: usize, timeout: Duration) -> Result<Vec<u8>> {
        recv_from(self.incoming.get(&from), self.me, from, timeout)
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for stream in self.writers.values() {
            let _ = stream.shutdown(std::net::Shutdown::Both);
        }
    }
}

/// Per-peer traffic log entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrafficRecord {
    pub peer: usize,
    pub kind: MessageType,
    pub payload_len: usize,
}

/// Session-aware wrapper around a transport.
pub struct Endpoint {
    transport: Box<dyn Transport>,
    session: SessionId,
    timeout: Duration,
    inbound: Vec<TrafficRecord>,
    log_inbound: bool,
}

impl Endpoint {
    pub fn new(transport: Box<dyn Transport>, session: SessionId, timeout: Duration) -> Endpoint {
        Endpoint { transport, session, timeout, inbound: Vec::new(), log_inbound: false }
    }

    pub fn me(&self) -> usize {
        self.transport.me()
    }

    pub fn session(&self) -> SessionId {
        self.session
    }

    /// Keeps a record of every inbound frame.
    pub fn log_inbound(&mut self, on: bool) {
        self.log_inbound = on;
    }

    pub fn inbound(&self) -> &[TrafficRecord] {
        &self.inbound
    }

    pub fn send(&mut self, to: usize, kind: MessageType, round: u32, gadget: u32, payload: Vec<u8>) -> Result<()> {
        let frame = Frame { kind, session: self.session, round, gadget, payload };
        self.transport.send(to, frame.encode())
    }

    /// Next frame from `from`, whatever its type. Abort frames become errors.
    pub fn recv_any(&mut self, from: usize) -> Result<Frame> {
        let bytes = self.transport.recv(from, self.timeout)?;
        let frame = Frame::decode(&bytes)?;
        if frame.session != self.session {
            return Err(Error::Protocol(format!(
                "frame from party {from} belongs to session {}, expected {}",
                frame.session.to_hex(),
                self.session.to_hex()
            )));
        }
        if self.log_inbound {
            self.inbound.push(TrafficRecord { peer: from, kind: frame.kind, payload_len: frame.payload.len() });
        }
        if frame.kind == MessageType::Abort {
            return Err(Error::Aborted {
                party: format!("party {from}"),
                reason: String::from_utf8_lossy(&frame.payload).into_owned(),
            });
        }
        Ok(frame)
    }

    /// Next frame from `from`, which must have type `kind`.
    pub fn recv(&mut self, from: usize, kind: MessageType) -> Result<Frame> {
        let frame = self.recv_any(from)?;
        if frame.kind != kind {
            return Err(Error::Protocol(format!(
                "expected {kind:?} from party {from}, got {:?}",
                frame.kind
            )));
        }
        Ok(frame)
    }

    /// Best-effort abort notification.
    pub fn abort(&mut self, peers: &[usize], reason: &str) {
        for &p in peers {
            let _ = self.send(p, MessageType::Abort, 0, 0, reason.as_bytes().to_vec());
        }
    }

    /// Raw access for tests that inject malformed bytes.
    pub fn send_raw(&mut self, to: usize, bytes: Vec<u8>) -> Result<()> {
        self.transport.send(to, bytes)
    }
}
