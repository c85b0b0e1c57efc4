//! Edge side: a blocking client and the simulator that replays a recording
//! through the gate and ships escalated windows to the service.

use std::collections::VecDeque;
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use fedt_core::gate::gate_stream;
use fedt_core::signal::ActivityClass;
use fedt_core::{Fingerprint, Recording, Threshold, Window};
use thiserror::Error;

use crate::wire::{
    encode_frame, ErrorPayload, FrameReader, HelloPayload, Message, ReadError, VerdictPayload, WindowPayload,
    DEFAULT_MAX_PAYLOAD,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("reading from service: {0}")]
    Read(#[from] ReadError),
    #[error("service closed the connection")]
    Closed,
    #[error("service error {:?}: {}", .0.code, .0.message)]
    Rejected(ErrorPayload),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl ClientError {
    /// Errors worth a reconnect: the transport failed, the service did not refuse us.
    pub fn is_connection_loss(&self) -> bool {
        matches!(self, ClientError::Io(_) | ClientError::Closed | ClientError::Read(ReadError::Io(_) | ReadError::Truncated(_)))
    }
}

/// One session with the service.
pub struct Client {
    reader: FrameReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    pub server_hello: HelloPayload,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, fingerprint: Fingerprint, model_id: &str) -> Result<Self, ClientError> {
        Self::connect_timeout(addr, fingerprint, model_id, Duration::from_secs(10))
    }

    pub fn connect_timeout(
        addr: impl ToSocketAddrs,
        fingerprint: Fingerprint,
        model_id: &str,
        timeout: Duration,
    ) -> Result<Self, ClientError> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        let mut last = io::Error::new(io::ErrorKind::InvalidInput, "no address to connect to");
        let mut stream = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last = e,
            }
        }
        let stream = stream.ok_or(last)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(60)))?;
        let mut client = Self {
            reader: FrameReader::new(stream.try_clone()?, DEFAULT_MAX_PAYLOAD),
            writer: BufWriter::new(stream),
            server_hello: HelloPayload::new(Fingerprint::default(), ""),
        };
        client.send(&Message::Hello(HelloPayload::new(fingerprint, model_id)))?;
        client.flush()?;
        match client.recv()? {
            Message::Hello(h) => client.server_hello = h,
            other => return Err(ClientError::Protocol(format!("expected HELLO, got {other:?}"))),
        }
        Ok(client)
    }

    fn send(&mut self, msg: &Message) -> Result<(), ClientError> {
        self.writer.write_all(&encode_frame(&msg.to_frame()))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), ClientError> {
        self.writer.flush()?;
        Ok(())
    }

    /// Queues a window; call [`flush`](Self::flush) or [`recv_verdict`](Self::recv_verdict) to push it out.
    pub fn send_window(&mut self, id: u64, window: &Window) -> Result<(), ClientError> {
        self.send(&Message::Window(WindowPayload::from_window(id, window)))
    }

    fn recv(&mut self) -> Result<Message, ClientError> {
        let frame = self.reader.read_frame()?.ok_or(ClientError::Closed)?;
        match Message::from_frame(&frame).map_err(|e| ClientError::Protocol(e.to_string()))? {
            Message::Error(e) => Err(ClientError::Rejected(e)),
            m => Ok(m),
        }
    }

    pub fn recv_verdict(&mut self) -> Result<VerdictPayload, ClientError> {
        self.flush()?;
        match self.recv()? {
            Message::Verdict(v) => Ok(v),
            other => Err(ClientError::Protocol(format!("expected VERDICT, got {other:?}"))),
        }
    }

    /// Sends one window and waits for its verdict.
    pub fn classify(&mut self, id: u64, window: &Window) -> Result<VerdictPayload, ClientError> {
        self.send_window(id, window)?;
        let v = self.recv_verdict()?;
        if v.id != id {
            return Err(ClientError::Protocol(format!("verdict for {} while waiting for {id}", v.id)));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct EdgeConfig {
    pub window_size: usize,
    /// Samples kept before the peak; defaults to half a window.
    pub lookback: usize,
    pub max_in_flight: usize,
    /// Windows kept for the retry after a connection loss.
    pub buffer_cap: usize,
    /// Sleep so windows leave no earlier than they would on a real device.
    pub pace: bool,
    pub fingerprint: Fingerprint,
    pub model_id: String,
    pub connect_timeout: Duration,
}

impl EdgeConfig {
    pub fn new(window_size: usize, fingerprint: Fingerprint) -> Self {
        Self {
            window_size,
            lookback: window_size / 2,
            max_in_flight: 16,
            buffer_cap: 64,
            pace: false,
            fingerprint,
            model_id: "edge".into(),
            connect_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowLog {
    pub id: u64,
    pub trigger: usize,
    pub start: usize,
    pub verdict: Option<VerdictPayload>,
    /// Round trip measured on the edge.
    pub round_trip: Option<Duration>,
}

impl WindowLog {
    pub fn label(&self) -> Option<ActivityClass> {
        self.verdict.map(|v| v.label)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionLog {
    pub recording: String,
    pub entries: Vec<WindowLog>,
    /// Window frames written to the socket, counting resends.
    pub frames_sent: usize,
    /// Trigger indices whose window ran past the end of the recording.
    pub partial_triggers: Vec<usize>,
    pub reconnects: usize,
}

impl SessionLog {
    pub fn delivered(&self) -> usize {
        self.entries.iter().filter(|e| e.verdict.is_some()).count()
    }

    pub fn undelivered(&self) -> impl Iterator<Item = &WindowLog> {
        self.entries.iter().filter(|e| e.verdict.is_none())
    }

    pub fn any_fall(&self) -> bool {
        self.entries.iter().any(|e| e.label() == Some(ActivityClass::Fall))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# recording {}\n# trigger\tstart\tid\tverdict\tprobability\tround_trip_us\tservice_us\n", self.recording);
        for e in &self.entries {
            match (&e.verdict, e.round_trip) {
                (Some(v), Some(rt)) => s.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\n",
                    e.trigger,
                    e.start,
                    e.id,
                    v.label.as_str(),
                    v.probability,
                    rt.as_micros(),
                    v.latency_us
                )),
                _ => s.push_str(&format!("{}\t{}\t{}\tundelivered\t-\t-\t-\n", e.trigger, e.start, e.id)),
            }
        }
        s
    }
}

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error(transparent)]
    Gate(#[from] fedt_core::gate::GateError),
    #[error(transparent)]
    Client(ClientError),
}

/// Replays `recording` through the gate and sends every escalated window.
///
/// Up to `max_in_flight` windows are outstanding at once. After a
/// connection loss the unacknowledged windows (at most `buffer_cap`, the
/// rest are logged undelivered) are resent once over a new connection; a
/// second loss leaves them undelivered.
pub fn edge_sim(
    recording: &Recording,
    threshold: &Threshold,
    cfg: &EdgeConfig,
    addr: impl ToSocketAddrs,
) -> Result<SessionLog, EdgeError> {
    let addrs: Vec<SocketAddr> = addr
        .to_socket_addrs()
        .map_err(|e| EdgeError::Client(e.into()))?
        .collect();
    let stream = gate_stream(recording, threshold, cfg.window_size, cfg.lookback)?;
    let mut log = SessionLog {
        recording: recording.meta.id.clone(),
        partial_triggers: stream.partial.clone(),
        ..Default::default()
    };
    let windows: Vec<(usize, Window)> = stream.escalations.into_iter().map(|e| (e.trigger, e.window)).collect();
    for (i, (trigger, w)) in windows.iter().enumerate() {
        log.entries.push(WindowLog {
            id: i as u64,
            trigger: *trigger,
            start: w.origin.start,
            verdict: None,
            round_trip: None,
        });
    }
    if windows.is_empty() {
        return Ok(log);
    }

    let origin = Instant::now();
    let rate = recording.sample_rate_hz();
    let mut pending: VecDeque<usize> = (0..windows.len()).collect();
    let mut retried = false;
    loop {
        match attempt(&windows, &mut pending, &mut log, cfg, &addrs, origin, rate) {
            Ok(()) => break,
            Err(e) if e.is_connection_loss() && !retried => {
                retried = true;
                log.reconnects += 1;
                if pending.len() > cfg.buffer_cap {
                    let dropped = pending.split_off(cfg.buffer_cap);
                    log::warn!("connection lost; {} windows beyond the buffer cap are undelivered", dropped.len());
                }
                log::warn!("connection lost ({e}); retrying {} windows once", pending.len());
            }
            Err(e) if e.is_connection_loss() => {
                log::warn!("connection lost again ({e}); {} windows undelivered", pending.len());
                break;
            }
            Err(e) => return Err(EdgeError::Client(e)),
        }
    }
    Ok(log)
}

fn attempt(
    windows: &[(usize, Window)],
    pending: &mut VecDeque<usize>,
    log: &mut SessionLog,
    cfg: &EdgeConfig,
    addrs: &[SocketAddr],
    origin: Instant,
    rate: f64,
) -> Result<(), ClientError> {
    let mut client = Client::connect_timeout(addrs, cfg.fingerprint, &cfg.model_id, cfg.connect_timeout)?;
    let mut in_flight: VecDeque<(usize, Instant)> = VecDeque::new();
    let mut next = 0;
    while next < pending.len() || !in_flight.is_empty() {
        if next < pending.len() && in_flight.len() < cfg.max_in_flight.max(1) {
            let idx = pending[next];
            let (_, w) = &windows[idx];
            if cfg.pace {
                let due = origin + Duration::from_secs_f64((w.origin.start + w.len()) as f64 / rate);
                let now = Instant::now();
                if due > now {
                    client.flush()?;
                    std::thread::sleep(due - now);
                }
            }
            client.send_window(idx as u64, w)?;
            log.frames_sent += 1;
            in_flight.push_back((idx, Instant::now()));
            next += 1;
            continue;
        }
        let v = client.recv_verdict()?;
        let (idx, sent) = in_flight.pop_front().expect("in flight");
        if v.id != idx as u64 {
            return Err(ClientError::Protocol(format!("verdict for window {} arrived while {idx} was due", v.id)));
        }
        let entry = &mut log.entries[idx];
        entry.verdict = Some(v);
        entry.round_trip = Some(sent.elapsed());
        pending.pop_front();
        next -= 1;
    }
    Ok(())
}
