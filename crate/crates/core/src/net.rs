//! Framed, metered transports: in-process loopback, TCP and TLS.
//!
//! A frame is a 4-byte big-endian payload length, a 1-byte type tag, and the
//! payload. Every transport shares the same framing code, so loopback and
//! socket sessions produce identical frame sequences.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, ServerName};
use rustls::server::WebPkiClientVerifier;
use rustls::{ClientConfig, ClientConnection, RootCertStore, ServerConfig, ServerConnection, StreamOwned};
use serde::Serialize;
use thiserror::Error;

use crate::role::{Direction, Role};

pub const HEADER_LEN: usize = 5;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("channel closed")]
    Closed,
    #[error("stream ended inside a frame ({got} of {expected} bytes)")]
    Truncated { expected: u64, got: u64 },
    #[error("payload of {0} bytes does not fit a frame")]
    TooLarge(usize),
    #[error("TLS setup failed: {0}")]
    Tls(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub tag: u8,
    pub payload: Vec<u8>,
}

pub trait Channel: Send {
    fn send_frame(&mut self, tag: u8, payload: &[u8]) -> Result<(), NetError>;
    fn recv_frame(&mut self) -> Result<Frame, NetError>;
    fn close(&mut self);
}

impl<C: Channel + ?Sized> Channel for Box<C> {
    fn send_frame(&mut self, tag: u8, payload: &[u8]) -> Result<(), NetError> {
        (**self).send_frame(tag, payload)
    }
    fn recv_frame(&mut self) -> Result<Frame, NetError> {
        (**self).recv_frame()
    }
    fn close(&mut self) {
        (**self).close()
    }
}

impl<C: Channel + ?Sized> Channel for &mut C {
    fn send_frame(&mut self, tag: u8, payload: &[u8]) -> Result<(), NetError> {
        (**self).send_frame(tag, payload)
    }
    fn recv_frame(&mut self) -> Result<Frame, NetError> {
        (**self).recv_frame()
    }
    fn close(&mut self) {
        (**self).close()
    }
}

/// Frames over any ordered byte stream.
pub struct StreamChannel<S> {
    stream: Option<S>,
}

impl<S: Read + Write + Send> StreamChannel<S> {
    pub fn new(stream: S) -> Self {
        Self { stream: Some(stream) }
    }

    pub fn get_ref(&self) -> Option<&S> {
        self.stream.as_ref()
    }
}

pub fn encode_frame(tag: u8, payload: &[u8]) -> Result<Vec<u8>, NetError> {
    let len = u32::try_from(payload.len()).map_err(|_| NetError::TooLarge(payload.len()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + payload.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.push(tag);
    buf.extend_from_slice(payload);
    Ok(buf)
}

/// Reads one frame; a clean end of stream before the header is `Closed`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, NetError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(NetError::Closed),
            Ok(0) => {
                return Err(NetError::Truncated {
                    expected: HEADER_LEN as u64,
                    got: got as u64,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof && got == 0 => return Err(NetError::Closed),
            Err(e) => return Err(e.into()),
        }
    }
    let len = u64::from(u32::from_be_bytes(header[..4].try_into().expect("4 bytes")));
    let mut payload = Vec::new();
    let read = r.take(len).read_to_end(&mut payload)? as u64;
    if read != len {
        return Err(NetError::Truncated { expected: len, got: read });
    }
    Ok(Frame {
        tag: header[4],
        payload,
    })
}

impl<S: Read + Write + Send> Channel for StreamChannel<S> {
    fn send_frame(&mut self, tag: u8, payload: &[u8]) -> Result<(), NetError> {
        let stream = self.stream.as_mut().ok_or(NetError::Closed)?;
        let buf = encode_frame(tag, payload)?;
        stream.write_all(&buf)?;
        stream.flush()?;
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Frame, NetError> {
        read_frame(self.stream.as_mut().ok_or(NetError::Closed)?)
    }

    fn close(&mut self) {
        if let Some(mut s) = self.stream.take() {
            let _ = s.flush();
        }
    }
}

/// One end of an in-memory full-duplex byte pipe.
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

impl Read for PipeEnd {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        if data.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(data.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub type LoopbackChannel = StreamChannel<PipeEnd>;

pub fn loopback_pair() -> (LoopbackChannel, LoopbackChannel) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    let end = |tx, rx| PipeEnd {
        tx,
        rx,
        buf: Vec::new(),
        pos: 0,
    };
    (
        StreamChannel::new(end(tx_a, rx_a)),
        StreamChannel::new(end(tx_b, rx_b)),
    )
}

pub type TcpChannel = StreamChannel<TcpStream>;

pub fn connect_tcp(addr: impl ToSocketAddrs) -> Result<TcpChannel, NetError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    Ok(StreamChannel::new(stream))
}

pub fn accept_tcp(listener: &TcpListener) -> Result<TcpChannel, NetError> {
    let (stream, _) = listener.accept()?;
    stream.set_nodelay(true)?;
    Ok(StreamChannel::new(stream))
}

fn tls_err(e: impl std::fmt::Display) -> NetError {
    NetError::Tls(e.to_string())
}

fn provider() -> Arc<rustls::crypto::CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

fn certs(pem: &[u8]) -> Result<Vec<CertificateDer<'static>>, NetError> {
    let certs = CertificateDer::pem_slice_iter(pem)
        .collect::<Result<Vec<_>, _>>()
        .map_err(tls_err)?;
    if certs.is_empty() {
        return Err(NetError::Tls("no certificate in PEM input".into()));
    }
    Ok(certs)
}

fn roots(pem: &[u8]) -> Result<RootCertStore, NetError> {
    let mut store = RootCertStore::empty();
    for cert in certs(pem)? {
        store.add(cert).map_err(tls_err)?;
    }
    Ok(store)
}

/// Server configuration; client certificates are required when
/// `client_ca_pem` is given.
pub fn tls_server_config(
    cert_pem: &[u8],
    key_pem: &[u8],
    client_ca_pem: Option<&[u8]>,
) -> Result<Arc<ServerConfig>, NetError> {
    let key = PrivateKeyDer::from_pem_slice(key_pem).map_err(tls_err)?;
    let builder = ServerConfig::builder_with_provider(provider())
        .with_safe_default_protocol_versions()
        .map_err(tls_err)?;
    let builder = match client_ca_pem {
        Some(ca) => {
            let verifier = WebPkiClientVerifier::builder_with_provider(Arc::new(roots(ca)?), provider())
                .build()
                .map_err(tls_err)?;
            builder.with_client_cert_verifier(verifier)
        }
        None => builder.with_no_client_auth(),
    };
    Ok(Arc::new(builder.with_single_cert(certs(cert_pem)?, key).map_err(tls_err)?))
}

/// Client configuration trusting `ca_pem`, optionally presenting a client
/// certificate given as `(cert_pem, key_pem)`.
pub fn tls_client_config(ca_pem: &[u8], identity: Option<(&[u8], &[u8])>) -> Result<Arc<ClientConfig>, NetError> {
    let builder = ClientConfig::builder_with_provider(provider())
        .with_safe_default_protocol_versions()
        .map_err(tls_err)?
        .with_root_certificates(roots(ca_pem)?);
    let config = match identity {
        Some((cert, key)) => builder
            .with_client_auth_cert(certs(cert)?, PrivateKeyDer::from_pem_slice(key).map_err(tls_err)?)
            .map_err(tls_err)?,
        None => builder.with_no_client_auth(),
    };
    Ok(Arc::new(config))
}

pub type TlsServerChannel = StreamChannel<StreamOwned<ServerConnection, TcpStream>>;
pub type TlsClientChannel = StreamChannel<StreamOwned<ClientConnection, TcpStream>>;

pub fn accept_tls(listener: &TcpListener, config: Arc<ServerConfig>) -> Result<TlsServerChannel, NetError> {
    let (mut sock, _) = listener.accept()?;
    sock.set_nodelay(true)?;
    let mut conn = ServerConnection::new(config).map_err(tls_err)?;
    while conn.is_handshaking() {
        conn.complete_io(&mut sock)?;
    }
    Ok(StreamChannel::new(StreamOwned::new(conn, sock)))
}

pub fn connect_tls(
    addr: impl ToSocketAddrs,
    server_name: &str,
    config: Arc<ClientConfig>,
) -> Result<TlsClientChannel, NetError> {
    let mut sock = TcpStream::connect(addr)?;
    sock.set_nodelay(true)?;
    let name = ServerName::try_from(server_name.to_string()).map_err(tls_err)?;
    let mut conn = ClientConnection::new(config, name).map_err(tls_err)?;
    while conn.is_handshaking() {
        conn.complete_io(&mut sock)?;
    }
    Ok(StreamChannel::new(StreamOwned::new(conn, sock)))
}

/// Payload bytes per (step, direction). Frame headers and lower layers are
/// not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficMeter {
    bytes: BTreeMap<(u8, Direction), u64>,
    frames: u64,
}

impl TrafficMeter {
    pub fn add(&mut self, step: u8, direction: Direction, bytes: u64) {
        *self.bytes.entry((step, direction)).or_default() += bytes;
        self.frames += 1;
    }

    pub fn get(&self, step: u8, direction: Direction) -> u64 {
        self.bytes.get(&(step, direction)).copied().unwrap_or(0)
    }

    pub fn total(&self, direction: Direction) -> u64 {
        self.bytes
            .iter()
            .filter(|((_, d), _)| *d == direction)
            .map(|(_, b)| b)
            .sum()
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, Direction, u64)> + '_ {
        self.bytes.iter().map(|((s, d), b)| (*s, *d, *b))
    }
}

impl Serialize for TrafficMeter {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(None)?;
        for d in Direction::BOTH {
            let per_step: BTreeMap<String, u64> = self
                .iter()
                .filter(|(_, dir, _)| *dir == d)
                .map(|(s, _, b)| (format!("step{s}"), b))
                .collect();
            map.serialize_entry(d.as_str(), &per_step)?;
        }
        map.end()
    }
}

/// Maps a frame to the protocol step it belongs to.
pub type StepClassifier = fn(tag: u8, payload: &[u8]) -> u8;

/// Counts every frame's payload under the step chosen by `classify`.
pub struct MeteredChannel<C> {
    inner: C,
    role: Role,
    classify: StepClassifier,
    meter: TrafficMeter,
}

impl<C: Channel> MeteredChannel<C> {
    pub fn new(inner: C, role: Role, classify: StepClassifier) -> Self {
        Self {
            inner,
            role,
            classify,
            meter: TrafficMeter::default(),
        }
    }

    pub fn meter(&self) -> &TrafficMeter {
        &self.meter
    }

    pub fn into_inner(self) -> (C, TrafficMeter) {
        (self.inner, self.meter)
    }
}

impl<C: Channel> Channel for MeteredChannel<C> {
    fn send_frame(&mut self, tag: u8, payload: &[u8]) -> Result<(), NetError> {
        self.inner.send_frame(tag, payload)?;
        let step = (self.classify)(tag, payload);
        self.meter.add(step, self.role.outbound(), payload.len() as u64);
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Frame, NetError> {
        let frame = self.inner.recv_frame()?;
        let step = (self.classify)(frame.tag, &frame.payload);
        self.meter.add(step, self.role.inbound(), frame.payload.len() as u64);
        Ok(frame)
    }

    fn close(&mut self) {
        self.inner.close()
    }
}
