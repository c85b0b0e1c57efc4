//! Accelerometer data model, RMS and fall/ADL segmentation.

mod ingest;
pub mod synthetic;
mod windows_file;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub use ingest::{ingest, ingest_with, write_generic, Adapter, IngestError, IngestOptions};
pub use windows_file::{WindowsFile, WindowsFileError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid sample: components must be finite")]
    InvalidSample,
    #[error("empty input")]
    EmptyInput,
    #[error("recording of {len} samples is shorter than window size {window}")]
    TooShort { len: usize, window: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// One tri-axial accelerometer reading in the recording's native unit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TriaxialSample<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> TriaxialSample<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Magnitude of the acceleration vector, √(x²+y²+z²).
    pub fn rms(&self) -> Result<T, SignalError> {
        if !self.is_finite() {
            return Err(SignalError::InvalidSample);
        }
        Ok(self.magnitude())
    }

    /// Same as [`rms`](Self::rms) without the finiteness check.
    #[inline]
    pub fn magnitude(&self) -> T {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> TriaxialSample<U> {
        let c = |v: T| U::from_f64_lossy(v.to_f64_lossless());
        TriaxialSample::new(c(self.x), c(self.y), c(self.z))
    }
}

/// Free function form of [`TriaxialSample::rms`].
pub fn rms<T: Scalar>(sample: &TriaxialSample<T>) -> Result<T, SignalError> {
    sample.rms()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityClass {
    Fall,
    Adl,
}

impl ActivityClass {
    pub fn is_fall(self) -> bool {
        self == ActivityClass::Fall
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActivityClass::Fall => "fall",
            ActivityClass::Adl => "adl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fall" | "f" | "1" => Some(ActivityClass::Fall),
            "adl" | "d" | "0" => Some(ActivityClass::Adl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecordingMeta {
    /// Identifier unique within an ingest run (usually the file path).
    pub id: String,
    pub dataset: String,
    pub subject: String,
    pub device: String,
    pub activity: String,
    pub class: Option<ActivityClass>,
    /// Unit of the raw values, e.g. "g" or "m/s^2". Never converted.
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriaxialRecording<T> {
    samples: Vec<TriaxialSample<T>>,
    sample_rate_hz: f64,
    pub meta: RecordingMeta,
}

impl<T: Scalar> TriaxialRecording<T> {
    pub fn new(
        samples: Vec<TriaxialSample<T>>,
        sample_rate_hz: f64,
        meta: RecordingMeta,
    ) -> Result<Self, SignalError> {
        if samples.is_empty() {
            return Err(SignalError::EmptyInput);
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(SignalError::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(SignalError::InvalidSample);
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            meta,
        })
    }

    pub fn samples(&self) -> &[TriaxialSample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn rms_series(&self) -> Vec<T> {
        self.samples.iter().map(TriaxialSample::magnitude).collect()
    }
}

/// RMS of every sample, in order.
pub fn rms_series<T: Scalar>(recording: &TriaxialRecording<T>) -> Result<Vec<T>, SignalError> {
    rms_of(recording.samples())
}

pub fn rms_of<T: Scalar>(samples: &[TriaxialSample<T>]) -> Result<Vec<T>, SignalError> {
    if samples.is_empty() {
        return Err(SignalError::EmptyInput);
    }
    samples.iter().map(TriaxialSample::rms).collect()
}

/// Where a window was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub recording: String,
    pub subject: String,
    pub device: String,
    pub start: usize,
}

/// Fixed-length segment of a recording; the unit of classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    pub samples: Vec<TriaxialSample<T>>,
    pub label: Option<ActivityClass>,
    pub origin: WindowOrigin,
}

impl<T: Scalar> Window<T> {
    pub fn new(samples: Vec<TriaxialSample<T>>, label: Option<ActivityClass>) -> Self {
        Self {
            samples,
            label,
            origin: WindowOrigin::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms_series(&self) -> Vec<T> {
        self.samples.iter().map(TriaxialSample::magnitude).collect()
    }

    /// Largest RMS in the window; zero for an empty window.
    pub fn peak_rms(&self) -> T {
        self.samples
            .iter()
            .map(TriaxialSample::magnitude)
            .fold(T::zero(), T::max)
    }

    pub fn is_fall(&self) -> bool {
        self.label == Some(ActivityClass::Fall)
    }

    fn cut(
        recording: &TriaxialRecording<T>,
        start: usize,
        len: usize,
        label: ActivityClass,
    ) -> Self {
        Self {
            samples: recording.samples[start..start + len].to_vec(),
            label: Some(label),
            origin: WindowOrigin {
                recording: recording.meta.id.clone(),
                subject: recording.meta.subject.clone(),
                device: recording.meta.device.clone(),
                start,
            },
        }
    }
}

/// Segmentation parameters for one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub window_size: usize,
    pub stride: usize,
    pub adapter: String,
}

impl DatasetConfig {
    pub fn new(window_size: usize, stride: usize, adapter: impl Into<String>) -> Result<Self, SignalError> {
        let cfg = Self {
            window_size,
            stride,
            adapter: adapter.into(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Window sizes used for the public datasets; stride defaults to half a window.
    pub fn for_adapter(adapter: &str) -> Self {
        let window_size = match adapter {
            "sisfall" => 200,
            "mmsys" => 100,
            "mobiact" => 600,
            "practical" => 300,
            _ => 100,
        };
        Self {
            window_size,
            stride: (window_size / 2).max(1),
            adapter: adapter.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.window_size == 0 {
            return Err(SignalError::InvalidConfig("window_size must be > 0".into()));
        }
        if self.stride == 0 || self.stride > self.window_size {
            return Err(SignalError::InvalidConfig(format!(
                "stride must be in 1..={}, got {}",
                self.window_size, self.stride
            )));
        }
        Ok(())
    }
}

/// Index of the first maximum; `None` for an empty slice.
pub(crate) fn first_argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Start index of a `window`-long span centred on `peak` with `left` samples
/// before it, shifted inward to stay within `len`.
pub(crate) fn centred_start(peak: usize, left: usize, window: usize, len: usize) -> usize {
    debug_assert!(window <= len);
    peak.saturating_sub(left).min(len - window)
}

/// Cuts the fall window around the first RMS maximum of the recording.
///
/// The window holds `⌊w/2⌋` samples before the peak and the rest from the
/// peak onward. Near either end it is shifted inward instead of padded.
pub fn segment_fall<T: Scalar>(
    recording: &TriaxialRecording<T>,
    window_size: usize,
) -> Result<Window<T>, SignalError> {
    if window_size == 0 {
        return Err(SignalError::InvalidConfig("window_size must be > 0".into()));
    }
    let len = recording.len();
    if len < window_size {
        return Err(SignalError::TooShort {
            len,
            window: window_size,
        });
    }
    let rms = recording.rms_series();
    let peak = first_argmax(&rms).ok_or(SignalError::EmptyInput)?;
    let start = centred_start(peak, window_size / 2, window_size, len);
    Ok(Window::cut(recording, start, window_size, ActivityClass::Fall))
}

/// Sliding-window segmentation of an ADL recording.
///
/// Recordings shorter than one window yield no windows (logged, not an error).
pub fn segment_adl<T: Scalar>(
    recording: &TriaxialRecording<T>,
    cfg: &DatasetConfig,
) -> Result<Vec<Window<T>>, SignalError> {
    cfg.validate()?;
    let len = recording.len();
    if len < cfg.window_size {
        log::warn!(
            "recording {} has {} samples, shorter than window {}; skipped",
            recording.meta.id,
            len,
            cfg.window_size
        );
        return Ok(Vec::new());
    }
    let count = (len - cfg.window_size) / cfg.stride + 1;
    Ok((0..count)
        .map(|i| Window::cut(recording, i * cfg.stride, cfg.window_size, ActivityClass::Adl))
        .collect())
}

/// Segments each recording by its class: one peak-centred window per fall
/// recording, sliding windows for ADL recordings.
pub fn segment_all<T: Scalar>(
    recordings: &[TriaxialRecording<T>],
    cfg: &DatasetConfig,
) -> Result<Vec<Window<T>>, SignalError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for rec in recordings {
        match rec.meta.class {
            Some(ActivityClass::Fall) => match segment_fall(rec, cfg.window_size) {
                Ok(w) => out.push(w),
                Err(SignalError::TooShort { len, window }) => {
                    log::warn!("fall recording {} too short ({len} < {window}); skipped", rec.meta.id)
                }
                Err(e) => return Err(e),
            },
            Some(ActivityClass::Adl) => out.extend(segment_adl(rec, cfg)?),
            None => {
                return Err(SignalError::InvalidConfig(format!(
                    "recording {} has no fall/ADL class",
                    rec.meta.id
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(x: f64, y: f64, z: f64) -> TriaxialSample<f64> {
        TriaxialSample::new(x, y, z)
    }

    fn rec(samples: Vec<TriaxialSample<f64>>) -> TriaxialRecording<f64> {
        TriaxialRecording::new(samples, 50.0, RecordingMeta::default()).unwrap()
    }

    /// Recording whose RMS equals the given magnitudes (placed on x).
    fn rec_from_rms(values: &[f64]) -> TriaxialRecording<f64> {
        rec(values.iter().map(|&v| s(v, 0.0, 0.0)).collect())
    }

    #[test]
    fn rms_examples() {
        assert_eq!(s(3.0, 4.0, 0.0).rms().unwrap(), 5.0);
        assert_eq!(s(0.0, 0.0, 0.0).rms().unwrap(), 0.0);
        assert!((s(1.0, 1.0, 1.0).rms().unwrap() - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(rms(&s(f64::NAN, 0.0, 0.0)), Err(SignalError::InvalidSample));
        assert_eq!(s(f64::INFINITY, 0.0, 0.0).rms(), Err(SignalError::InvalidSample));
    }

    #[test]
    fn rms_generic_f32() {
        let v = TriaxialSample::<f32>::new(3.0, 4.0, 0.0);
        assert_eq!(v.rms().unwrap(), 5.0f32);
    }

    #[test]
    fn rms_series_examples() {
        let r = rec(vec![s(3.0, 4.0, 0.0), s(0.0, 0.0, 0.0)]);
        assert_eq!(rms_series(&r).unwrap(), vec![5.0, 0.0]);
        let r = rec(vec![s(1.0, 0.0, 0.0)]);
        assert_eq!(rms_series(&r).unwrap(), vec![1.0]);
        assert_eq!(rms_of::<f64>(&[]), Err(SignalError::EmptyInput));
    }

    #[test]
    fn recording_rejects_empty_and_bad_rate() {
        assert_eq!(
            TriaxialRecording::<f64>::new(vec![], 50.0, RecordingMeta::default()),
            Err(SignalError::EmptyInput)
        );
        assert!(TriaxialRecording::new(vec![s(0.0, 0.0, 0.0)], 0.0, RecordingMeta::default()).is_err());
        assert_eq!(
            TriaxialRecording::new(vec![s(f64::NAN, 0.0, 0.0)], 1.0, RecordingMeta::default()),
            Err(SignalError::InvalidSample)
        );
    }

    #[test]
    fn segment_fall_centres_on_peak() {
        let mut v = vec![1.0; 10];
        v[5] = 9.0;
        let w = segment_fall(&rec_from_rms(&v), 4).unwrap();
        assert_eq!(w.origin.start, 3);
        assert_eq!(w.len(), 4);
        assert_eq!(w.label, Some(ActivityClass::Fall));
    }

    #[test]
    fn segment_fall_shifts_inward_at_boundaries() {
        let mut v = vec![1.0; 10];
        v[0] = 9.0;
        assert_eq!(segment_fall(&rec_from_rms(&v), 4).unwrap().origin.start, 0);
        let mut v = vec![1.0; 10];
        v[9] = 9.0;
        assert_eq!(segment_fall(&rec_from_rms(&v), 4).unwrap().origin.start, 6);
    }

    #[test]
    fn segment_fall_tie_breaks_on_first_maximum() {
        let mut v = vec![1.0; 10];
        v[4] = 9.0;
        v[7] = 9.0;
        // centred on 4: starts at 2
        assert_eq!(segment_fall(&rec_from_rms(&v), 4).unwrap().origin.start, 2);
    }

    #[test]
    fn segment_fall_too_short() {
        assert_eq!(
            segment_fall(&rec_from_rms(&[1.0; 3]), 4),
            Err(SignalError::TooShort { len: 3, window: 4 })
        );
    }

    #[test]
    fn segment_adl_examples() {
        let cfg = DatasetConfig::new(4, 2, "generic").unwrap();
        let ws = segment_adl(&rec_from_rms(&[1.0; 10]), &cfg).unwrap();
        assert_eq!(ws.iter().map(|w| w.origin.start).collect::<Vec<_>>(), vec![0, 2, 4, 6]);
        assert!(ws.iter().all(|w| w.label == Some(ActivityClass::Adl)));

        let cfg = DatasetConfig::new(4, 1, "generic").unwrap();
        assert_eq!(segment_adl(&rec_from_rms(&[1.0; 4]), &cfg).unwrap().len(), 1);
        assert!(segment_adl(&rec_from_rms(&[1.0; 3]), &cfg).unwrap().is_empty());
    }

    #[test]
    fn dataset_config_validation() {
        assert!(DatasetConfig::new(0, 1, "g").is_err());
        assert!(DatasetConfig::new(4, 0, "g").is_err());
        assert!(DatasetConfig::new(4, 5, "g").is_err());
        assert_eq!(DatasetConfig::for_adapter("sisfall").window_size, 200);
        assert_eq!(DatasetConfig::for_adapter("mmsys").window_size, 100);
        assert_eq!(DatasetConfig::for_adapter("mobiact").window_size, 600);
        assert_eq!(DatasetConfig::for_adapter("practical").window_size, 300);
        assert_eq!(DatasetConfig::for_adapter("sisfall").stride, 100);
    }

    proptest! {
        #[test]
        fn rms_scale_homogeneous(x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3, c in -1e2f64..1e2) {
            let a = s(c * x, c * y, c * z).rms().unwrap();
            let b = c.abs() * s(x, y, z).rms().unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b));
        }

        #[test]
        fn fall_window_contains_argmax(values in prop::collection::vec(0.0f64..100.0, 1..200), w in 1usize..50) {
            prop_assume!(values.len() >= w);
            let r = rec_from_rms(&values);
            let win = segment_fall(&r, w).unwrap();
            let peak = first_argmax(&values).unwrap();
            prop_assert!(win.origin.start <= peak && peak < win.origin.start + w);
            prop_assert_eq!(win.len(), w);
        }

        #[test]
        fn adl_windows_tile(len in 1usize..300, w in 1usize..40, stride_frac in 0.01f64..1.0) {
            let stride = ((w as f64 * stride_frac).ceil() as usize).clamp(1, w);
            let cfg = DatasetConfig::new(w, stride, "g").unwrap();
            let ws = segment_adl(&rec_from_rms(&vec![1.0; len]), &cfg).unwrap();
            if len < w {
                prop_assert!(ws.is_empty());
            } else {
                prop_assert_eq!(ws.len(), (len - w) / stride + 1);
                for pair in ws.windows(2) {
                    let overlap = (pair[0].origin.start + w).saturating_sub(pair[1].origin.start);
                    prop_assert_eq!(overlap, w - stride);
                }
            }
        }
    }
}
