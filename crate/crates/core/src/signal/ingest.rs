//! Dataset adapters. Each adapter maps one on-disk layout to recordings;
//! samples keep their native unit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;
use walkdir::WalkDir;

use super::synthetic::SyntheticConfig;
use super::{ActivityClass, RecordingMeta, SignalError, TriaxialRecording, TriaxialSample};

type Recording = TriaxialRecording<f64>;
type Sample = TriaxialSample<f64>;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unknown adapter '{0}' (expected generic, sisfall, mobiact, mmsys or synthetic)")]
    UnknownAdapter(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: no samples")]
    Empty { path: PathBuf },
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    ColumnCount {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    Signal { path: PathBuf, source: SignalError },
    #[error("{path}: invalid synthetic config: {msg}")]
    SyntheticConfig { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adapter {
    /// Delimited text: x,y,z optionally preceded by a timestamp column.
    Generic,
    SisFall,
    MobiAct,
    MmSys,
    /// TOML file describing a seeded synthetic generator run.
    Synthetic,
}

impl FromStr for Adapter {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "generic" | "practical" => Adapter::Generic,
            "sisfall" => Adapter::SisFall,
            "mobiact" => Adapter::MobiAct,
            "mmsys" => Adapter::MmSys,
            "synthetic" => Adapter::Synthetic,
            other => return Err(IngestError::UnknownAdapter(other.to_string())),
        })
    }
}

impl Adapter {
    fn accepts(self, path: &Path) -> bool {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with('.') {
            return false;
        }
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        match self {
            Adapter::Generic => matches!(ext, "csv" | "txt" | "tsv"),
            Adapter::SisFall => ext == "txt",
            Adapter::MobiAct => ext == "txt" && name.contains("_acc_"),
            Adapter::MmSys => ext == "csv",
            Adapter::Synthetic => ext == "toml",
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub adapter: Adapter,
    /// Field delimiter for the generic adapter.
    pub delimiter: char,
    /// Used when a file carries neither a rate header nor timestamps.
    pub default_sample_rate_hz: f64,
}

impl IngestOptions {
    pub fn new(adapter: Adapter) -> Self {
        Self {
            adapter,
            delimiter: ',',
            default_sample_rate_hz: 50.0,
        }
    }
}

/// Reads every recording under `path` (a file or a directory) with the named adapter.
pub fn ingest(path: &Path, adapter: &str) -> Result<Vec<Recording>, IngestError> {
    ingest_with(path, &IngestOptions::new(adapter.parse()?))
}

/// Files are visited in sorted path order and parsed in parallel; the
/// output order is deterministic.
pub fn ingest_with(path: &Path, opts: &IngestOptions) -> Result<Vec<Recording>, IngestError> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files = Vec::new();
        for entry in WalkDir::new(path).sort_by_file_name() {
            let entry = entry.map_err(|e| IngestError::Io {
                path: path.to_path_buf(),
                source: e.into(),
            })?;
            if entry.file_type().is_file() && opts.adapter.accepts(entry.path()) {
                files.push(entry.into_path());
            }
        }
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };

    let per_file: Vec<Vec<Recording>> = files
        .par_iter()
        .map(|f| ingest_file(f, opts))
        .collect::<Result<_, _>>()?;
    Ok(per_file.into_iter().flatten().collect())
}

fn read(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ingest_file(path: &Path, opts: &IngestOptions) -> Result<Vec<Recording>, IngestError> {
    match opts.adapter {
        Adapter::Generic => parse_generic(path, &read(path)?, opts).map(|r| vec![r]),
        Adapter::SisFall => parse_sisfall(path, &read(path)?).map(|r| vec![r]),
        Adapter::MobiAct => parse_mobiact(path, &read(path)?).map(|r| vec![r]),
        Adapter::MmSys => parse_mmsys(path, &read(path)?).map(|r| vec![r]),
        Adapter::Synthetic => {
            let text = read(path)?;
            let cfg: SyntheticConfig = toml::from_str(&text).map_err(|e| IngestError::SyntheticConfig {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
            cfg.generate().map_err(|e| IngestError::SyntheticConfig {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

fn parse_num(path: &Path, line: usize, field: &str) -> Result<f64, IngestError> {
    let v: f64 = field.trim().parse().map_err(|_| IngestError::Malformed {
        path: path.to_path_buf(),
        line,
        msg: format!("not a number: '{}'", field.trim()),
    })?;
    if !v.is_finite() {
        return Err(IngestError::Malformed {
            path: path.to_path_buf(),
            line,
            msg: format!("non-finite value '{}'", field.trim()),
        });
    }
    Ok(v)
}

fn build(path: &Path, samples: Vec<Sample>, rate: f64, meta: RecordingMeta) -> Result<Recording, IngestError> {
    if samples.is_empty() {
        return Err(IngestError::Empty {
            path: path.to_path_buf(),
        });
    }
    TriaxialRecording::new(samples, rate, meta).map_err(|source| IngestError::Signal {
        path: path.to_path_buf(),
        source,
    })
}

/// Rate implied by a monotone timestamp column, in the column's own time
/// unit scaled by `per_second`.
fn rate_from_timestamps(ts: &[f64], per_second: f64) -> Option<f64> {
    if ts.len() < 2 {
        return None;
    }
    let span = ts[ts.len() - 1] - ts[0];
    (span > 0.0).then(|| (ts.len() - 1) as f64 * per_second / span)
}

fn parse_generic(path: &Path, text: &str, opts: &IngestOptions) -> Result<Recording, IngestError> {
    let mut meta = RecordingMeta {
        id: path.display().to_string(),
        dataset: "generic".into(),
        subject: String::new(),
        device: String::new(),
        activity: file_stem(path),
        class: None,
        unit: "g".into(),
    };
    let mut rate: Option<f64> = None;
    let mut samples = Vec::new();
    let mut timestamps = Vec::new();
    let mut columns: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once(':') {
                let value = value.trim();
                match key.trim() {
                    "id" => meta.id = value.into(),
                    "dataset" => meta.dataset = value.into(),
                    "subject" => meta.subject = value.into(),
                    "device" => meta.device = value.into(),
                    "activity" => meta.activity = value.into(),
                    "unit" => meta.unit = value.into(),
                    "class" => meta.class = ActivityClass::parse(value),
                    "sample_rate_hz" => rate = Some(parse_num(path, lineno, value)?),
                    _ => {}
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(opts.delimiter).collect();
        if columns.is_none() {
            if fields.len() != 3 && fields.len() != 4 {
                return Err(IngestError::Malformed {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: format!("expected 3 or 4 columns, found {}", fields.len()),
                });
            }
            columns = Some(fields.len());
            // header row
            if fields.iter().any(|f| f.trim().parse::<f64>().is_err()) {
                continue;
            }
        }
        let expected = columns.unwrap_or(3);
        if fields.len() != expected {
            return Err(IngestError::ColumnCount {
                path: path.to_path_buf(),
                line: lineno,
                expected,
                found: fields.len(),
            });
        }
        let off = expected - 3;
        if off == 1 {
            timestamps.push(parse_num(path, lineno, fields[0])?);
        }
        samples.push(TriaxialSample::new(
            parse_num(path, lineno, fields[off])?,
            parse_num(path, lineno, fields[off + 1])?,
            parse_num(path, lineno, fields[off + 2])?,
        ));
    }
    if meta.class.is_none() {
        meta.class = class_from_name(&file_stem(path));
    }
    let rate = rate
        .or_else(|| rate_from_timestamps(&timestamps, 1.0))
        .unwrap_or(opts.default_sample_rate_hz);
    build(path, samples, rate, meta)
}

fn class_from_name(stem: &str) -> Option<ActivityClass> {
    let lower = stem.to_ascii_lowercase();
    if lower.starts_with("fall") {
        Some(ActivityClass::Fall)
    } else if lower.starts_with("adl") {
        Some(ActivityClass::Adl)
    } else {
        None
    }
}

/// Serializes a recording in the generic layout. Values use the shortest
/// representation that parses back to the same `f64`, so
/// `ingest(write_generic(r))` reproduces the samples bit for bit.
pub fn write_generic(rec: &Recording) -> String {
    let mut out = String::new();
    let m = &rec.meta;
    let _ = writeln!(out, "# id: {}", m.id);
    let _ = writeln!(out, "# dataset: {}", m.dataset);
    let _ = writeln!(out, "# subject: {}", m.subject);
    let _ = writeln!(out, "# device: {}", m.device);
    let _ = writeln!(out, "# activity: {}", m.activity);
    if let Some(c) = m.class {
        let _ = writeln!(out, "# class: {}", c.as_str());
    }
    let _ = writeln!(out, "# unit: {}", m.unit);
    let _ = writeln!(out, "# sample_rate_hz: {:?}", rec.sample_rate_hz());
    out.push_str("x,y,z\n");
    for s in rec.samples() {
        let _ = writeln!(out, "{:?},{:?},{:?}", s.x, s.y, s.z);
    }
    out
}

// SisFall: `D01_SA01_R01.txt`, 200 Hz, nine comma-separated columns per
// row terminated by ';'. Columns 1-3 are the ADXL345 accelerometer in raw
// counts.
fn parse_sisfall(path: &Path, text: &str) -> Result<Recording, IngestError> {
    let stem = file_stem(path);
    let mut parts = stem.split('_');
    let activity = parts.next().unwrap_or_default().to_string();
    let subject = parts.next().unwrap_or_default().to_string();
    let class = match activity.chars().next() {
        Some('F') => Some(ActivityClass::Fall),
        Some('D') => Some(ActivityClass::Adl),
        _ => None,
    };
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim().trim_end_matches(';').trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(IngestError::ColumnCount {
                path: path.to_path_buf(),
                line: idx + 1,
                expected: 9,
                found: fields.len(),
            });
        }
        samples.push(TriaxialSample::new(
            parse_num(path, idx + 1, fields[0])?,
            parse_num(path, idx + 1, fields[1])?,
            parse_num(path, idx + 1, fields[2])?,
        ));
    }
    let meta = RecordingMeta {
        id: path.display().to_string(),
        dataset: "sisfall".into(),
        subject,
        device: "sisfall-adxl345".into(),
        activity,
        class,
        unit: "adxl345_counts".into(),
    };
    build(path, samples, 200.0, meta)
}

const MOBIACT_FALLS: [&str; 4] = ["FOL", "FKL", "BSC", "SDL"];

// MobiAct raw files: `FOL_acc_1_1.txt`, optional header block ending in
// `@DATA`, then `timestamp_ns,x,y,z` rows in m/s².
fn parse_mobiact(path: &Path, text: &str) -> Result<Recording, IngestError> {
    let stem = file_stem(path);
    let parts: Vec<&str> = stem.split('_').collect();
    let activity = parts.first().copied().unwrap_or_default().to_string();
    let subject = parts.get(2).copied().unwrap_or_default().to_string();
    let class = Some(if MOBIACT_FALLS.contains(&activity.as_str()) {
        ActivityClass::Fall
    } else {
        ActivityClass::Adl
    });
    let has_data_marker = text.lines().any(|l| l.trim() == "@DATA");
    let mut in_data = !has_data_marker;
    let mut samples = Vec::new();
    let mut ts = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if !in_data {
            in_data = line == "@DATA";
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(IngestError::ColumnCount {
                path: path.to_path_buf(),
                line: idx + 1,
                expected: 4,
                found: fields.len(),
            });
        }
        if samples.is_empty() && fields[0].trim().parse::<f64>().is_err() {
            continue; // header row
        }
        ts.push(parse_num(path, idx + 1, fields[0])?);
        samples.push(TriaxialSample::new(
            parse_num(path, idx + 1, fields[1])?,
            parse_num(path, idx + 1, fields[2])?,
            parse_num(path, idx + 1, fields[3])?,
        ));
    }
    let rate = rate_from_timestamps(&ts, 1e9).unwrap_or(200.0);
    let meta = RecordingMeta {
        id: path.display().to_string(),
        dataset: "mobiact".into(),
        subject,
        device: "mobiact-phone".into(),
        activity,
        class,
        unit: "m/s^2".into(),
    };
    build(path, samples, rate, meta)
}

// MMsys: header-named CSV; the first columns whose names mention an
// acceleration axis are used. Class comes from the path.
fn parse_mmsys(path: &Path, text: &str) -> Result<Recording, IngestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| IngestError::Empty {
        path: path.to_path_buf(),
    })?;
    let names: Vec<String> = header.split(',').map(|h| h.trim().to_ascii_lowercase()).collect();
    let find = |axis: char| {
        names.iter().position(|n| {
            n.contains("acc") && n.trim_end_matches(|c: char| !c.is_alphanumeric()).ends_with(axis)
        })
    };
    let (Some(ix), Some(iy), Some(iz)) = (find('x'), find('y'), find('z')) else {
        return Err(IngestError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            msg: "header has no acceleration x/y/z columns".into(),
        });
    };
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(IngestError::ColumnCount {
                path: path.to_path_buf(),
                line: idx + 1,
                expected: names.len(),
                found: fields.len(),
            });
        }
        samples.push(TriaxialSample::new(
            parse_num(path, idx + 1, fields[ix])?,
            parse_num(path, idx + 1, fields[iy])?,
            parse_num(path, idx + 1, fields[iz])?,
        ));
    }
    let lower = path.display().to_string().to_ascii_lowercase();
    let class = Some(if lower.contains("fall") {
        ActivityClass::Fall
    } else {
        ActivityClass::Adl
    });
    let meta = RecordingMeta {
        id: path.display().to_string(),
        dataset: "mmsys".into(),
        subject: path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string(),
        device: "mmsys-node".into(),
        activity: file_stem(path),
        class,
        unit: "g".into(),
    };
    build(path, samples, 100.0, meta)
}
