//! Frame layout (all integers big-endian):
//!
//! ```text
//! "FEDT" | version u8 = 1 | type u8 | payload_len u32 | payload | crc32(payload) u32
//! ```
//!
//! Types: 0x01 WINDOW, 0x02 VERDICT, 0x03 HELLO, 0x04 ERROR.

use std::io::{self, Read, Write};

use fedt_core::codec::{ByteReader, ByteWriter};
use fedt_core::signal::{ActivityClass, TriaxialSample};
use fedt_core::{Fingerprint, Window};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"FEDT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const TRAILER_LEN: usize = 4;
/// Default cap on a single payload: 1 MiB.
pub const DEFAULT_MAX_PAYLOAD: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Window = 0x01,
    Verdict = 0x02,
    Hello = 0x03,
    Error = 0x04,
}

impl MsgType {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => MsgType::Window,
            0x02 => MsgType::Verdict,
            0x03 => MsgType::Hello,
            0x04 => MsgType::Error,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    /// The buffer holds a valid prefix; at least `needed` more bytes are required.
    #[error("incomplete frame: need {needed} more bytes")]
    NeedMore { needed: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("payload of {len} bytes exceeds the {max}-byte limit")]
    Oversized { len: usize, max: usize },
    #[error("payload checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
}

impl DecodeError {
    pub fn is_need_more(&self) -> bool {
        matches!(self, DecodeError::NeedMore { .. })
    }
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frame.payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    out.extend_from_slice(&crc32fast::hash(&frame.payload).to_be_bytes());
    out
}

/// Decodes the frame at the start of `buf`, returning it with the number of
/// bytes consumed. Header fields are checked as soon as they are available,
/// so a corrupt prefix is reported without waiting for the rest.
pub fn decode_frame(buf: &[u8], max_payload: usize) -> Result<(Frame, usize), DecodeError> {
    let have_magic = buf.len().min(4);
    if buf[..have_magic] != MAGIC[..have_magic] {
        let mut m = [0; 4];
        m[..have_magic].copy_from_slice(&buf[..have_magic]);
        return Err(DecodeError::BadMagic(m));
    }
    if let Some(&v) = buf.get(4) {
        if v != VERSION {
            return Err(DecodeError::UnsupportedVersion(v));
        }
    }
    let msg_type = match buf.get(5) {
        Some(&t) => Some(MsgType::from_u8(t).ok_or(DecodeError::UnknownType(t))?),
        None => None,
    };
    if buf.len() < HEADER_LEN {
        return Err(DecodeError::NeedMore {
            needed: HEADER_LEN - buf.len(),
        });
    }
    let len = u32::from_be_bytes(buf[6..10].try_into().expect("4 bytes")) as usize;
    if len > max_payload {
        return Err(DecodeError::Oversized { len, max: max_payload });
    }
    let total = HEADER_LEN + len + TRAILER_LEN;
    if buf.len() < total {
        return Err(DecodeError::NeedMore {
            needed: total - buf.len(),
        });
    }
    let payload = &buf[HEADER_LEN..HEADER_LEN + len];
    let stored = u32::from_be_bytes(buf[HEADER_LEN + len..total].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(DecodeError::Checksum { stored, computed });
    }
    Ok((
        Frame {
            msg_type: msg_type.expect("header complete"),
            payload: payload.to_vec(),
        },
        total,
    ))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("{kind:?} payload: expected {expected} bytes, found {found}")]
    Length { kind: MsgType, expected: usize, found: usize },
    #[error("{0:?} payload is malformed: {1}")]
    Malformed(MsgType, String),
    #[error("expected a {expected:?} frame, got {found:?}")]
    UnexpectedType { expected: MsgType, found: MsgType },
}

/// Window as carried on the wire: f32 samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPayload {
    pub id: u64,
    pub samples: Vec<[f32; 3]>,
}

impl WindowPayload {
    pub fn from_window(id: u64, window: &Window) -> Self {
        Self {
            id,
            samples: window
                .samples
                .iter()
                .map(|s| [s.x as f32, s.y as f32, s.z as f32])
                .collect(),
        }
    }

    /// The window the service reconstructs (f32 values widened to f64).
    pub fn to_window(&self) -> Window {
        Window::new(
            self.samples
                .iter()
                .map(|s| TriaxialSample::new(s[0] as f64, s[1] as f64, s[2] as f64))
                .collect(),
            None,
        )
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u64(self.id);
        w.u32(self.samples.len() as u32);
        for s in &self.samples {
            for v in s {
                w.bytes(&v.to_be_bytes());
            }
        }
        w.into_inner()
    }

    pub fn decode(payload: &[u8]) -> Result<Self, PayloadError> {
        if payload.len() < 12 {
            return Err(PayloadError::Length {
                kind: MsgType::Window,
                expected: 12,
                found: payload.len(),
            });
        }
        let id = u64::from_be_bytes(payload[..8].try_into().expect("8 bytes"));
        let count = u32::from_be_bytes(payload[8..12].try_into().expect("4 bytes")) as usize;
        let expected = count.checked_mul(12).and_then(|b| b.checked_add(12));
        if expected != Some(payload.len()) {
            return Err(PayloadError::Length {
                kind: MsgType::Window,
                expected: expected.unwrap_or(usize::MAX),
                found: payload.len(),
            });
        }
        let samples = payload[12..]
            .chunks_exact(12)
            .map(|c| {
                let f = |i: usize| f32::from_be_bytes(c[i..i + 4].try_into().expect("4 bytes"));
                [f(0), f(4), f(8)]
            })
            .collect();
        Ok(Self { id, samples })
    }
}

/// The same quantization the wire applies, for in-process comparisons.
pub fn quantize(window: &Window) -> Window {
    let mut w = WindowPayload::from_window(0, window).to_window();
    w.label = window.label;
    w.origin = window.origin.clone();
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerdictPayload {
    pub id: u64,
    pub label: ActivityClass,
    pub probability: f64,
    /// Service-side processing time.
    pub latency_us: u64,
}

const VERDICT_LEN: usize = 8 + 1 + 8 + 8;

impl VerdictPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u64(self.id);
        w.u8(u8::from(self.label.is_fall()));
        w.f64(self.probability);
        w.u64(self.latency_us);
        w.into_inner()
    }

    pub fn decode(payload: &[u8]) -> Result<Self, PayloadError> {
        if payload.len() != VERDICT_LEN {
            return Err(PayloadError::Length {
                kind: MsgType::Verdict,
                expected: VERDICT_LEN,
                found: payload.len(),
            });
        }
        let mut r = ByteReader::new(payload);
        let bad = |m: String| PayloadError::Malformed(MsgType::Verdict, m);
        let id = r.u64().map_err(|e| bad(e.to_string()))?;
        let label = match r.u8().map_err(|e| bad(e.to_string()))? {
            0 => ActivityClass::Adl,
            1 => ActivityClass::Fall,
            other => return Err(bad(format!("label byte {other}"))),
        };
        let probability = r.f64().map_err(|e| bad(e.to_string()))?;
        if !(0.0..=1.0).contains(&probability) {
            return Err(bad(format!("probability {probability} outside [0, 1]")));
        }
        let latency_us = r.u64().map_err(|e| bad(e.to_string()))?;
        Ok(Self {
            id,
            label,
            probability,
            latency_us,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloPayload {
    pub version: u8,
    pub fingerprint: Fingerprint,
    pub model_id: String,
}

impl HelloPayload {
    pub fn new(fingerprint: Fingerprint, model_id: impl Into<String>) -> Self {
        Self {
            version: VERSION,
            fingerprint,
            model_id: model_id.into(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let id = self.model_id.as_bytes();
        let id = &id[..id.len().min(u16::MAX as usize)];
        let mut w = ByteWriter::new();
        w.u8(self.version);
        w.bytes(&self.fingerprint.0);
        w.u16(id.len() as u16);
        w.bytes(id);
        w.into_inner()
    }

    pub fn decode(payload: &[u8]) -> Result<Self, PayloadError> {
        let bad = |m: String| PayloadError::Malformed(MsgType::Hello, m);
        let mut r = ByteReader::new(payload);
        let version = r.u8().map_err(|e| bad(e.to_string()))?;
        let fingerprint = Fingerprint(r.fixed::<32>().map_err(|e| bad(e.to_string()))?);
        let n = r.u16().map_err(|e| bad(e.to_string()))? as usize;
        let id = r.take(n).map_err(|e| bad(e.to_string()))?;
        if r.remaining() != 0 {
            return Err(bad(format!("{} trailing bytes", r.remaining())));
        }
        let model_id = String::from_utf8(id.to_vec()).map_err(|_| bad("model id is not UTF-8".into()))?;
        Ok(Self {
            version,
            fingerprint,
            model_id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    MalformedFrame = 1,
    FingerprintMismatch = 2,
    Oversized = 3,
    Protocol = 4,
    Processing = 5,
    Busy = 6,
}

impl ErrorCode {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => ErrorCode::MalformedFrame,
            2 => ErrorCode::FingerprintMismatch,
            3 => ErrorCode::Oversized,
            4 => ErrorCode::Protocol,
            5 => ErrorCode::Processing,
            6 => ErrorCode::Busy,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
}

impl ErrorPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = vec![self.code as u8];
        v.extend_from_slice(self.message.as_bytes());
        v
    }

    pub fn decode(payload: &[u8]) -> Result<Self, PayloadError> {
        let bad = |m: &str| PayloadError::Malformed(MsgType::Error, m.into());
        let (&code, rest) = payload.split_first().ok_or_else(|| bad("empty"))?;
        Ok(Self {
            code: ErrorCode::from_u8(code).ok_or_else(|| bad("unknown error code"))?,
            message: String::from_utf8_lossy(rest).into_owned(),
        })
    }
}

/// A decoded frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Window(WindowPayload),
    Verdict(VerdictPayload),
    Hello(HelloPayload),
    Error(ErrorPayload),
}

impl Message {
    pub fn to_frame(&self) -> Frame {
        let (msg_type, payload) = match self {
            Message::Window(p) => (MsgType::Window, p.encode()),
            Message::Verdict(p) => (MsgType::Verdict, p.encode()),
            Message::Hello(p) => (MsgType::Hello, p.encode()),
            Message::Error(p) => (MsgType::Error, p.encode()),
        };
        Frame { msg_type, payload }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, PayloadError> {
        Ok(match frame.msg_type {
            MsgType::Window => Message::Window(WindowPayload::decode(&frame.payload)?),
            MsgType::Verdict => Message::Verdict(VerdictPayload::decode(&frame.payload)?),
            MsgType::Hello => Message::Hello(HelloPayload::decode(&frame.payload)?),
            MsgType::Error => Message::Error(ErrorPayload::decode(&frame.payload)?),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_frame(&self.to_frame())
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(DecodeError),
    #[error("connection closed mid-frame ({0} bytes buffered)")]
    Truncated(usize),
}

/// Buffered frame reader over a byte stream.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
    max_payload: usize,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R, max_payload: usize) -> Self {
        Self {
            inner,
            buf: Vec::with_capacity(4096),
            max_payload,
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// Next frame, or `None` on a clean end of stream between frames.
    pub fn read_frame(&mut self) -> Result<Option<Frame>, ReadError> {
        loop {
            if !self.buf.is_empty() {
                match decode_frame(&self.buf, self.max_payload) {
                    Ok((frame, used)) => {
                        self.buf.drain(..used);
                        return Ok(Some(frame));
                    }
                    Err(DecodeError::NeedMore { .. }) => {}
                    Err(e) => return Err(ReadError::Decode(e)),
                }
            }
            let mut chunk = [0u8; 8192];
            let n = match self.inner.read(&mut chunk) {
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            };
            if n == 0 {
                return if self.buf.is_empty() {
                    Ok(None)
                } else {
                    Err(ReadError::Truncated(self.buf.len()))
                };
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> io::Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()
}
