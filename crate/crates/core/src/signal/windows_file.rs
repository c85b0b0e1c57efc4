//! Versioned container for segmented windows.
//!
//! Layout (big-endian):
//!
//! ```text
//! magic    8 bytes  "FEDTWNDS"
//! version  u16      1
//! window_size u32, stride u32, adapter str, provenance str
//! count    u64
//! count × { label u8 (0 ADL, 1 FALL, 255 unlabeled),
//!           recording str, subject str, device str, start u64,
//!           n u32, n × (x f64, y f64, z f64) }
//! crc32    u32 over everything above
//! ```
//! `str` is a u32 byte length followed by UTF-8.

use thiserror::Error;

use super::{ActivityClass, DatasetConfig, TriaxialSample, Window, WindowOrigin};
use crate::codec::{split_crc, ByteReader, ByteWriter, CodecError};

pub const MAGIC: &[u8; 8] = b"FEDTWNDS";
pub const VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowsFileError {
    #[error("not a windows file (bad magic)")]
    BadMagic,
    #[error("unsupported windows file version {0}")]
    UnsupportedVersion(u16),
    #[error("windows file checksum mismatch")]
    Checksum,
    #[error("windows file truncated")]
    Truncated,
    #[error("malformed windows file: {0}")]
    Malformed(String),
}

impl From<CodecError> for WindowsFileError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Truncated { .. } => WindowsFileError::Truncated,
            other => WindowsFileError::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowsFile {
    pub config: DatasetConfig,
    /// Free-form run description (command line, seed); stored verbatim.
    pub provenance: String,
    pub windows: Vec<Window<f64>>,
}

impl WindowsFile {
    pub fn fall_count(&self) -> usize {
        self.windows.iter().filter(|w| w.is_fall()).count()
    }

    pub fn adl_count(&self) -> usize {
        self.windows
            .iter()
            .filter(|w| w.label == Some(ActivityClass::Adl))
            .count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(self.config.window_size as u32);
        w.u32(self.config.stride as u32);
        w.str(&self.config.adapter);
        w.str(&self.provenance);
        w.u64(self.windows.len() as u64);
        for win in &self.windows {
            w.u8(match win.label {
                Some(ActivityClass::Adl) => 0,
                Some(ActivityClass::Fall) => 1,
                None => 255,
            });
            w.str(&win.origin.recording);
            w.str(&win.origin.subject);
            w.str(&win.origin.device);
            w.u64(win.origin.start as u64);
            w.u32(win.samples.len() as u32);
            for s in &win.samples {
                w.f64(s.x);
                w.f64(s.y);
                w.f64(s.z);
            }
        }
        w.finish_with_crc()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, WindowsFileError> {
        if data.len() < MAGIC.len() {
            return Err(if MAGIC.starts_with(data) {
                WindowsFileError::Truncated
            } else {
                WindowsFileError::BadMagic
            });
        }
        if &data[..MAGIC.len()] != MAGIC {
            return Err(WindowsFileError::BadMagic);
        }
        let mut header = ByteReader::new(&data[MAGIC.len()..]);
        let version = header.u16()?;
        if version != VERSION {
            return Err(WindowsFileError::UnsupportedVersion(version));
        }
        let (body, stored, computed) = split_crc(data).ok_or(WindowsFileError::Truncated)?;
        if stored != computed {
            return Err(WindowsFileError::Checksum);
        }
        let mut r = ByteReader::new(&body[MAGIC.len() + 2..]);
        let window_size = r.u32()? as usize;
        let stride = r.u32()? as usize;
        let adapter = r.str()?;
        let config = DatasetConfig::new(window_size, stride, adapter)
            .map_err(|e| WindowsFileError::Malformed(e.to_string()))?;
        let provenance = r.str()?;
        let count = r.u64()? as usize;
        let mut windows = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let label = match r.u8()? {
                0 => Some(ActivityClass::Adl),
                1 => Some(ActivityClass::Fall),
                255 => None,
                other => return Err(WindowsFileError::Malformed(format!("bad label byte {other}"))),
            };
            let origin = WindowOrigin {
                recording: r.str()?,
                subject: r.str()?,
                device: r.str()?,
                start: r.u64()? as usize,
            };
            let n = r.u32()? as usize;
            let mut samples = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                samples.push(TriaxialSample::new(r.f64()?, r.f64()?, r.f64()?));
            }
            windows.push(Window { samples, label, origin });
        }
        if r.remaining() != 0 {
            return Err(WindowsFileError::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            config,
            provenance,
            windows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_file() -> WindowsFile {
        let mut w = Window::new(
            vec![TriaxialSample::new(1.0, 2.0, 3.0), TriaxialSample::new(-0.5, 0.25, 1e-9)],
            Some(ActivityClass::Fall),
        );
        w.origin = WindowOrigin {
            recording: "rec".into(),
            subject: "S1".into(),
            device: "watch".into(),
            start: 17,
        };
        let mut a = w.clone();
        a.label = Some(ActivityClass::Adl);
        WindowsFile {
            config: DatasetConfig::new(2, 1, "generic").unwrap(),
            provenance: "seed=1".into(),
            windows: vec![w, a],
        }
    }

    #[test]
    fn round_trip() {
        let f = sample_file();
        let back = WindowsFile::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.fall_count(), 1);
        assert_eq!(back.adl_count(), 1);
    }

    #[test]
    fn errors_are_distinguished() {
        let bytes = sample_file().to_bytes();
        assert_eq!(WindowsFile::from_bytes(b"NOPE0000"), Err(WindowsFileError::BadMagic));
        let mut v2 = bytes.clone();
        v2[9] = 2;
        assert_eq!(WindowsFile::from_bytes(&v2), Err(WindowsFileError::UnsupportedVersion(2)));
        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert_eq!(WindowsFile::from_bytes(&flipped), Err(WindowsFileError::Checksum));
        assert_eq!(WindowsFile::from_bytes(&bytes[..4]), Err(WindowsFileError::Truncated));
    }
}
