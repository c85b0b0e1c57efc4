//! Cloud inference service: HELLO handshake, then WINDOW → VERDICT.
//!
//! One thread per connection. All handlers share the immutable model and
//! registry; the only shared mutable state is the atomic counters.

use std::io::{self, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use fedt_core::features::extract_features;
use fedt_core::fedt::classify;
use fedt_core::{FeatureRegistry, FedtModel};
use thiserror::Error;

use crate::wire::{
    write_message, DecodeError, ErrorCode, ErrorPayload, FrameReader, HelloPayload, Message, MsgType, ReadError,
    VerdictPayload, WindowPayload, DEFAULT_MAX_PAYLOAD, VERSION,
};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: String,
    pub max_payload: usize,
    pub session_limit: usize,
    pub model_id: String,
    /// Idle connections are dropped after this long without a frame.
    pub read_timeout: Option<Duration>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:7878".into(),
            max_payload: DEFAULT_MAX_PAYLOAD,
            session_limit: 256,
            model_id: "fedt".into(),
            read_timeout: Some(Duration::from_secs(120)),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("model fingerprint {model} does not match registry fingerprint {registry}")]
    FingerprintMismatch { model: String, registry: String },
    #[error("model expects {model} features, registry produces {registry}")]
    Arity { model: usize, registry: usize },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Default)]
pub struct ServiceStats {
    pub sessions_total: AtomicU64,
    pub sessions_active: AtomicUsize,
    pub sessions_rejected: AtomicU64,
    pub windows: AtomicU64,
    pub errors_sent: AtomicU64,
}

impl ServiceStats {
    pub fn windows(&self) -> u64 {
        self.windows.load(Ordering::Relaxed)
    }

    pub fn active(&self) -> usize {
        self.sessions_active.load(Ordering::Relaxed)
    }
}

struct Shared {
    model: FedtModel,
    registry: FeatureRegistry,
    cfg: ServiceConfig,
    stats: Arc<ServiceStats>,
}

/// Running service. Dropping the handle does not stop it; call
/// [`shutdown`](ServiceHandle::shutdown).
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<ServiceStats>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServiceStats {
        &self.stats
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    /// Sessions already running finish on their own.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `cfg.addr` and serves on a background thread.
pub fn serve(cfg: ServiceConfig, model: FedtModel, registry: FeatureRegistry) -> Result<ServiceHandle, ServiceError> {
    if model.fingerprint != registry.fingerprint() {
        return Err(ServiceError::FingerprintMismatch {
            model: model.fingerprint.to_hex(),
            registry: registry.fingerprint().to_hex(),
        });
    }
    if model.n_features != registry.arity() {
        return Err(ServiceError::Arity {
            model: model.n_features,
            registry: registry.arity(),
        });
    }
    let listener = cfg
        .addr
        .to_socket_addrs()
        .and_then(|mut a| a.next().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address")))
        .and_then(TcpListener::bind)
        .map_err(|source| ServiceError::Bind {
            addr: cfg.addr.clone(),
            source,
        })?;
    let addr = listener.local_addr()?;
    let stats = Arc::new(ServiceStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(Shared {
        model,
        registry,
        cfg,
        stats: stats.clone(),
    });
    log::info!("serving on {addr} (model {})", shared.model.fingerprint.short());
    let stop_flag = stop.clone();
    let thread = std::thread::Builder::new()
        .name("fedt-accept".into())
        .spawn(move || accept_loop(listener, shared, stop_flag))?;
    Ok(ServiceHandle {
        addr,
        stop,
        stats,
        thread: Some(thread),
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let stats = shared.stats.clone();
        let shared = shared.clone();
        stats.sessions_total.fetch_add(1, Ordering::Relaxed);
        let active = stats.sessions_active.fetch_add(1, Ordering::SeqCst) + 1;
        let spawned = std::thread::Builder::new().name("fedt-session".into()).spawn(move || {
            let peer = stream.peer_addr().ok();
            if active > shared.cfg.session_limit {
                shared.stats.sessions_rejected.fetch_add(1, Ordering::Relaxed);
                let mut s = &stream;
                send_error(&shared, &mut s, ErrorCode::Busy, "session limit reached");
            } else if let Err(e) = handle_session(&shared, &stream) {
                log::debug!("session {peer:?} ended: {e}");
            }
            let _ = stream.shutdown(Shutdown::Both);
            shared.stats.sessions_active.fetch_sub(1, Ordering::SeqCst);
        });
        if let Err(e) = spawned {
            stats.sessions_active.fetch_sub(1, Ordering::SeqCst);
            log::error!("cannot spawn session thread: {e}");
        }
    }
}

fn send_error(shared: &Shared, w: &mut impl io::Write, code: ErrorCode, message: &str) {
    shared.stats.errors_sent.fetch_add(1, Ordering::Relaxed);
    let msg = Message::Error(ErrorPayload {
        code,
        message: message.into(),
    });
    let _ = write_message(w, &msg);
}

fn read_error_code(e: &ReadError) -> Option<(ErrorCode, String)> {
    match e {
        ReadError::Decode(DecodeError::Oversized { .. }) => Some((ErrorCode::Oversized, e.to_string())),
        ReadError::Decode(d) => Some((ErrorCode::MalformedFrame, d.to_string())),
        ReadError::Truncated(_) | ReadError::Io(_) => None,
    }
}

fn handle_session(shared: &Shared, stream: &TcpStream) -> Result<(), String> {
    stream.set_read_timeout(shared.cfg.read_timeout).map_err(|e| e.to_string())?;
    let _ = stream.set_nodelay(true);
    let mut reader = FrameReader::new(stream, shared.cfg.max_payload);
    let mut writer = BufWriter::new(stream);

    let next = |reader: &mut FrameReader<&TcpStream>, writer: &mut BufWriter<&TcpStream>| match reader.read_frame() {
        Ok(Some(f)) => Ok(Some(f)),
        Ok(None) => Ok(None),
        Err(e) => {
            if let Some((code, msg)) = read_error_code(&e) {
                send_error(shared, writer, code, &msg);
            }
            Err(e.to_string())
        }
    };

    let Some(first) = next(&mut reader, &mut writer)? else {
        return Ok(());
    };
    let hello = match Message::from_frame(&first) {
        Ok(Message::Hello(h)) => h,
        Ok(_) => {
            send_error(shared, &mut writer, ErrorCode::Protocol, "expected HELLO");
            return Err("no HELLO".into());
        }
        Err(e) => {
            send_error(shared, &mut writer, ErrorCode::MalformedFrame, &e.to_string());
            return Err(e.to_string());
        }
    };
    if hello.version != VERSION {
        let m = format!("protocol version {} not supported", hello.version);
        send_error(shared, &mut writer, ErrorCode::Protocol, &m);
        return Err(m);
    }
    if hello.fingerprint != shared.model.fingerprint {
        let m = format!(
            "client registry {} does not match model registry {}",
            hello.fingerprint.short(),
            shared.model.fingerprint.short()
        );
        send_error(shared, &mut writer, ErrorCode::FingerprintMismatch, &m);
        return Err(m);
    }
    write_message(
        &mut writer,
        &Message::Hello(HelloPayload::new(shared.model.fingerprint, shared.cfg.model_id.clone())),
    )
    .map_err(|e| e.to_string())?;

    while let Some(frame) = next(&mut reader, &mut writer)? {
        let started = Instant::now();
        if frame.msg_type != MsgType::Window {
            send_error(shared, &mut writer, ErrorCode::Protocol, "expected WINDOW");
            return Err(format!("unexpected {:?}", frame.msg_type));
        }
        let payload = match WindowPayload::decode(&frame.payload) {
            Ok(p) => p,
            Err(e) => {
                send_error(shared, &mut writer, ErrorCode::MalformedFrame, &e.to_string());
                return Err(e.to_string());
            }
        };
        let verdict = classify_payload(shared, &payload).map(|p| VerdictPayload {
            id: payload.id,
            label: p.label,
            probability: p.probability,
            latency_us: started.elapsed().as_micros() as u64,
        });
        match verdict {
            Ok(v) => {
                shared.stats.windows.fetch_add(1, Ordering::Relaxed);
                write_message(&mut writer, &Message::Verdict(v)).map_err(|e| e.to_string())?;
            }
            Err(m) => {
                send_error(shared, &mut writer, ErrorCode::Processing, &m);
                return Err(m);
            }
        }
    }
    Ok(())
}

fn classify_payload(shared: &Shared, payload: &WindowPayload) -> Result<fedt_core::fedt::Prediction<f64>, String> {
    let window = payload.to_window();
    if window.samples.iter().any(|s| !s.is_finite()) {
        return Err(format!("window {} has non-finite samples", payload.id));
    }
    let min = shared.registry.min_window_len();
    if window.len() < min {
        return Err(format!("window {} has {} samples, registry needs {min}", payload.id, window.len()));
    }
    let features = extract_features(&window, &shared.registry).map_err(|e| e.to_string())?;
    classify(&shared.model, &features).map_err(|e| e.to_string())
}
