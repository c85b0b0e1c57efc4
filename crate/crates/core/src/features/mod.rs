//! Cloud-side feature extraction.
//!
//! A [`FeatureRegistry`] is an ordered list of single-series features, each
//! applied to a list of channels (x, y, z and the RMS series). The registry
//! has a canonical text form; its SHA-256 is the [`Fingerprint`] stamped
//! on every [`FeatureVector`], model file and wire handshake. Output order
//! is feature-major, then channel, then the feature's own outputs.

pub mod series;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::signal::Window;
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("empty input")]
    EmptyInput,
    #[error("parameter error: {0}")]
    Param(String),
    #[error("feature {name}: {source}")]
    InFeature {
        name: String,
        #[source]
        source: Box<FeatureError>,
    },
    #[error("registry: {0}")]
    Registry(String),
    #[error("feature vector fingerprint {found} does not match {expected}")]
    FingerprintMismatch { expected: Fingerprint, found: Fingerprint },
}

/// SHA-256 of a registry's canonical text.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn of_text(text: &str) -> Self {
        Self(Sha256::digest(text.as_bytes()).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// First 12 hex digits, for logs.
    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", self.short())
    }
}

impl FromStr for Fingerprint {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim()).map_err(|e| FeatureError::Registry(format!("bad fingerprint: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| FeatureError::Registry("fingerprint must be 32 bytes".into()))?;
        Ok(Self(arr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    X,
    Y,
    Z,
    Rms,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::X, Channel::Y, Channel::Z, Channel::Rms];

    pub fn name(self) -> &'static str {
        match self {
            Channel::X => "x",
            Channel::Y => "y",
            Channel::Z => "z",
            Channel::Rms => "rms",
        }
    }

    fn parse(s: &str) -> Result<Self, FeatureError> {
        Ok(match s {
            "x" => Channel::X,
            "y" => Channel::Y,
            "z" => Channel::Z,
            "rms" => Channel::Rms,
            other => return Err(FeatureError::Registry(format!("unknown channel '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FftPart {
    Real,
    Imag,
    Abs,
}

impl FftPart {
    fn name(self) -> &'static str {
        match self {
            FftPart::Real => "real",
            FftPart::Imag => "imag",
            FftPart::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    FftCoefficient { k: usize, part: FftPart },
    AbsEnergy,
    AbsoluteChanges,
    EnergyRatioByChunks { num_chunks: usize },
    FirstLocationOfMaximum,
    // baseline statistics
    Mean,
    StdDev,
    Min,
    Max,
    Median,
}

impl FeatureKind {
    pub fn name(&self) -> String {
        match self {
            FeatureKind::FftCoefficient { k, part } => format!("fft_coefficient k={k} part={}", part.name()),
            FeatureKind::AbsEnergy => "abs_energy".into(),
            FeatureKind::AbsoluteChanges => "absolute_changes".into(),
            FeatureKind::EnergyRatioByChunks { num_chunks } => format!("energy_ratio_by_chunks num_chunks={num_chunks}"),
            FeatureKind::FirstLocationOfMaximum => "first_location_of_maximum".into(),
            FeatureKind::Mean => "baseline:mean".into(),
            FeatureKind::StdDev => "baseline:std".into(),
            FeatureKind::Min => "baseline:min".into(),
            FeatureKind::Max => "baseline:max".into(),
            FeatureKind::Median => "baseline:median".into(),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            FeatureKind::EnergyRatioByChunks { num_chunks } => *num_chunks,
            _ => 1,
        }
    }

    /// Shortest series the feature is defined on.
    pub fn min_len(&self) -> usize {
        match self {
            FeatureKind::FftCoefficient { k, .. } => k + 1,
            FeatureKind::AbsoluteChanges => 2,
            _ => 1,
        }
    }

    /// Returns the outputs and whether the zero-energy fallback was used.
    pub fn compute<T: Scalar>(&self, series: &[T]) -> Result<(Vec<T>, bool), FeatureError> {
        use crate::features::series as s;
        let one = |v: T| (vec![v], false);
        Ok(match *self {
            FeatureKind::FftCoefficient { k, part } => {
                let c = s::fft_coefficient(series, k)?;
                one(match part {
                    FftPart::Real => c.re,
                    FftPart::Imag => c.im,
                    FftPart::Abs => c.abs,
                })
            }
            FeatureKind::AbsEnergy => one(s::abs_energy(series)?),
            FeatureKind::AbsoluteChanges => one(s::absolute_changes(series)?),
            FeatureKind::EnergyRatioByChunks { num_chunks } => {
                let r = s::energy_ratio_by_chunks(series, num_chunks)?;
                (r.ratios, r.degenerate)
            }
            FeatureKind::FirstLocationOfMaximum => one(s::first_location_of_maximum(series)?),
            FeatureKind::Mean => one(s::mean(series)?),
            FeatureKind::StdDev => one(s::std_dev(series)?),
            FeatureKind::Min => one(s::min(series)?),
            FeatureKind::Max => one(s::max(series)?),
            FeatureKind::Median => one(s::median(series)?),
        })
    }

    fn parse(name: &str, params: &[(&str, &str)]) -> Result<Self, FeatureError> {
        let get = |key: &str| -> Result<&str, FeatureError> {
            params
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| FeatureError::Registry(format!("{name}: missing parameter '{key}'")))
        };
        let num = |key: &str| -> Result<usize, FeatureError> {
            get(key)?
                .parse()
                .map_err(|_| FeatureError::Registry(format!("{name}: '{key}' must be an integer")))
        };
        Ok(match name {
            "fft_coefficient" => FeatureKind::FftCoefficient {
                k: num("k")?,
                part: match get("part")? {
                    "real" => FftPart::Real,
                    "imag" => FftPart::Imag,
                    "abs" => FftPart::Abs,
                    other => return Err(FeatureError::Registry(format!("unknown fft part '{other}'"))),
                },
            },
            "abs_energy" => FeatureKind::AbsEnergy,
            "absolute_changes" => FeatureKind::AbsoluteChanges,
            "energy_ratio_by_chunks" => FeatureKind::EnergyRatioByChunks {
                num_chunks: num("num_chunks")?,
            },
            "first_location_of_maximum" => FeatureKind::FirstLocationOfMaximum,
            "baseline:mean" => FeatureKind::Mean,
            "baseline:std" => FeatureKind::StdDev,
            "baseline:min" => FeatureKind::Min,
            "baseline:max" => FeatureKind::Max,
            "baseline:median" => FeatureKind::Median,
            other => return Err(FeatureError::Registry(format!("unknown feature '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub channels: Vec<Channel>,
}

impl FeatureSpec {
    pub fn new(kind: FeatureKind, channels: &[Channel]) -> Self {
        Self {
            kind,
            channels: channels.to_vec(),
        }
    }
}

/// Ordered, immutable feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRegistry {
    specs: Vec<FeatureSpec>,
    canonical: String,
    fingerprint: Fingerprint,
}

const REGISTRY_HEADER: &str = "fedt-feature-registry v1";

impl FeatureRegistry {
    pub fn new(specs: Vec<FeatureSpec>) -> Result<Self, FeatureError> {
        if specs.is_empty() {
            return Err(FeatureError::Registry("registry is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for spec in &specs {
            let name = spec.kind.name();
            if !seen.insert(name.clone()) {
                return Err(FeatureError::Registry(format!("duplicate feature '{name}'")));
            }
            if spec.channels.is_empty() {
                return Err(FeatureError::Registry(format!("feature '{name}' has no channels")));
            }
            if let FeatureKind::EnergyRatioByChunks { num_chunks: 0 } = spec.kind {
                return Err(FeatureError::Registry("num_chunks must be >= 1".into()));
            }
        }
        let mut canonical = String::from(REGISTRY_HEADER);
        canonical.push('\n');
        for spec in &specs {
            let chans: Vec<&str> = spec.channels.iter().map(|c| c.name()).collect();
            canonical.push_str(&format!("{} channels={}\n", spec.kind.name(), chans.join(",")));
        }
        let fingerprint = Fingerprint::of_text(&canonical);
        Ok(Self {
            specs,
            canonical,
            fingerprint,
        })
    }

    /// Frequency, energy and shape features (fft modulus k = 0..9, abs_energy, absolute_changes,
    /// energy ratio over 10 chunks, first location of maximum) followed by
    /// the baseline statistics, each on x, y, z and RMS.
    pub fn default_registry() -> Self {
        let all = &Channel::ALL;
        let mut specs: Vec<FeatureSpec> = (0..10)
            .map(|k| FeatureSpec::new(FeatureKind::FftCoefficient { k, part: FftPart::Abs }, all))
            .collect();
        specs.extend(
            [
                FeatureKind::AbsEnergy,
                FeatureKind::AbsoluteChanges,
                FeatureKind::EnergyRatioByChunks { num_chunks: 10 },
                FeatureKind::FirstLocationOfMaximum,
                FeatureKind::Mean,
                FeatureKind::StdDev,
                FeatureKind::Min,
                FeatureKind::Max,
                FeatureKind::Median,
            ]
            .into_iter()
            .map(|k| FeatureSpec::new(k, all)),
        );
        Self::new(specs).expect("default registry is valid")
    }

    /// Parses the canonical text produced by [`canonical_text`](Self::canonical_text).
    pub fn from_canonical(text: &str) -> Result<Self, FeatureError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(REGISTRY_HEADER) {
            return Err(FeatureError::Registry("missing registry header".into()));
        }
        let mut specs = Vec::new();
        for line in lines {
            let mut tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let name = tokens.remove(0);
            let mut params = Vec::new();
            let mut channels = None;
            for tok in tokens {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| FeatureError::Registry(format!("bad token '{tok}'")))?;
                if k == "channels" {
                    channels = Some(v.split(',').map(Channel::parse).collect::<Result<Vec<_>, _>>()?);
                } else {
                    params.push((k, v));
                }
            }
            let channels = channels.ok_or_else(|| FeatureError::Registry(format!("{name}: missing channels")))?;
            specs.push(FeatureSpec {
                kind: FeatureKind::parse(name, &params)?,
                channels,
            });
        }
        Self::new(specs)
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn canonical_text(&self) -> &str {
        &self.canonical
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    /// Length of the vectors this registry produces.
    pub fn arity(&self) -> usize {
        self.specs.iter().map(|s| s.kind.arity() * s.channels.len()).sum()
    }

    pub fn min_window_len(&self) -> usize {
        self.specs.iter().map(|s| s.kind.min_len()).max().unwrap_or(1)
    }

    /// Column names in output order, e.g. `rms:abs_energy`.
    pub fn output_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.arity());
        for spec in &self.specs {
            for ch in &spec.channels {
                let base = format!("{}:{}", ch.name(), spec.kind.name().replace(' ', ","));
                if spec.kind.arity() == 1 {
                    out.push(base);
                } else {
                    out.extend((0..spec.kind.arity()).map(|i| format!("{base}[{i}]")));
                }
            }
        }
        out
    }
}

/// Registry output for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub values: Vec<T>,
    pub fingerprint: Fingerprint,
    /// Set when a non-finite output was replaced by 0 or a degenerate
    /// fallback (zero-energy chunk ratios) was used.
    pub flagged: bool,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>, fingerprint: Fingerprint) -> Self {
        Self {
            values,
            fingerprint,
            flagged: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

struct Channels<T> {
    x: Vec<T>,
    y: Vec<T>,
    z: Vec<T>,
    rms: Vec<T>,
}

impl<T: Scalar> Channels<T> {
    fn of(window: &Window<T>) -> Self {
        Self {
            x: window.samples.iter().map(|s| s.x).collect(),
            y: window.samples.iter().map(|s| s.y).collect(),
            z: window.samples.iter().map(|s| s.z).collect(),
            rms: window.rms_series(),
        }
    }

    fn get(&self, c: Channel) -> &[T] {
        match c {
            Channel::X => &self.x,
            Channel::Y => &self.y,
            Channel::Z => &self.z,
            Channel::Rms => &self.rms,
        }
    }
}

fn compute_one<T: Scalar>(spec: &FeatureSpec, ch: Channel, chans: &Channels<T>) -> Result<(Vec<T>, bool), FeatureError> {
    let (mut vals, mut flagged) = spec.kind.compute(chans.get(ch)).map_err(|e| FeatureError::InFeature {
        name: format!("{}:{}", ch.name(), spec.kind.name()),
        source: Box::new(e),
    })?;
    for v in vals.iter_mut() {
        if !v.is_finite() {
            *v = T::zero();
            flagged = true;
        }
    }
    Ok((vals, flagged))
}

fn assemble<T: Scalar>(
    parts: impl IntoIterator<Item = Result<(Vec<T>, bool), FeatureError>>,
    registry: &FeatureRegistry,
) -> Result<FeatureVector<T>, FeatureError> {
    let mut out = FeatureVector {
        values: Vec::with_capacity(registry.arity()),
        fingerprint: registry.fingerprint(),
        flagged: false,
    };
    for part in parts {
        let (vals, flagged) = part?;
        out.values.extend(vals);
        out.flagged |= flagged;
    }
    Ok(out)
}

fn tasks(registry: &FeatureRegistry) -> Vec<(&FeatureSpec, Channel)> {
    registry
        .specs()
        .iter()
        .flat_map(|s| s.channels.iter().map(move |&c| (s, c)))
        .collect()
}

/// Applies every registry feature to its channels, single-threaded.
pub fn extract_features<T: Scalar>(window: &Window<T>, registry: &FeatureRegistry) -> Result<FeatureVector<T>, FeatureError> {
    let chans = Channels::of(window);
    assemble(tasks(registry).into_iter().map(|(s, c)| compute_one(s, c, &chans)), registry)
}

/// Same result as [`extract_features`], computed with `threads` worker threads.
pub fn extract_features_parallel<T: Scalar>(
    window: &Window<T>,
    registry: &FeatureRegistry,
    threads: usize,
) -> Result<FeatureVector<T>, FeatureError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| FeatureError::Param(format!("thread pool: {e}")))?;
    let chans = Channels::of(window);
    let t = tasks(registry);
    let parts: Vec<_> = pool.install(|| t.par_iter().map(|(s, c)| compute_one(s, *c, &chans)).collect());
    assemble(parts, registry)
}

/// Extracts many windows on the global rayon pool; output order follows input order.
pub fn extract_batch<T: Scalar>(windows: &[Window<T>], registry: &FeatureRegistry) -> Result<Vec<FeatureVector<T>>, FeatureError> {
    windows.par_iter().map(|w| extract_features(w, registry)).collect()
}
