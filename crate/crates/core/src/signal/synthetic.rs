//! Seeded synthetic recordings: ADL background motion with optional fall
//! impacts on top. Values are in g.
//!
//! ADL background is gravity along a slightly tilted axis plus a periodic
//! gait component and gaussian noise; its RMS stays under roughly 1.9 g.
//! A fall adds a short near-free-fall dip, an impact burst whose peak
//! magnitude is drawn from `[fall_peak_min, fall_peak_max]`, and a change of
//! orientation afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ActivityClass, RecordingMeta, SignalError, TriaxialRecording, TriaxialSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub falls: usize,
    pub adls: usize,
    pub recording_len: usize,
    pub sample_rate_hz: f64,
    pub fall_peak_min: f64,
    pub fall_peak_max: f64,
    /// Upper bound of the per-axis gait amplitude.
    pub gait_amplitude_max: f64,
    pub noise_std: f64,
    pub subjects: usize,
    /// Added to subject numbers so two configs can describe disjoint cohorts.
    pub subject_offset: usize,
    pub device: String,
    pub dataset: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            falls: 220,
            adls: 300,
            recording_len: 400,
            sample_rate_hz: 50.0,
            fall_peak_min: 4.0,
            fall_peak_max: 8.0,
            gait_amplitude_max: 0.35,
            noise_std: 0.05,
            subjects: 10,
            subject_offset: 0,
            device: "synthetic".into(),
            dataset: "synthetic".into(),
        }
    }
}

type Rec = TriaxialRecording<f64>;

impl SyntheticConfig {
    fn check(&self) -> Result<(), SignalError> {
        let bad = |m: &str| Err(SignalError::InvalidConfig(m.to_string()));
        if self.recording_len < 2 {
            return bad("recording_len must be >= 2");
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad("sample_rate_hz must be positive");
        }
        if !(self.fall_peak_min > 0.0 && self.fall_peak_min <= self.fall_peak_max) {
            return bad("need 0 < fall_peak_min <= fall_peak_max");
        }
        if !(self.noise_std >= 0.0 && self.gait_amplitude_max >= 0.0) {
            return bad("noise_std and gait_amplitude_max must be non-negative");
        }
        if self.subjects == 0 {
            return bad("subjects must be >= 1");
        }
        Ok(())
    }

    /// All fall recordings first, then all ADL recordings.
    pub fn generate(&self) -> Result<Vec<Rec>, SignalError> {
        self.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.falls + self.adls);
        for i in 0..self.falls {
            let len = self.recording_len;
            let mut samples = background(&mut rng, len, self);
            let lo = len / 4;
            let hi = (3 * len / 4).max(lo + 1);
            let pos = rng.random_range(lo..hi);
            let peak = rng.random_range(self.fall_peak_min..=self.fall_peak_max);
            add_impact(&mut rng, &mut samples, pos, peak, self.sample_rate_hz);
            out.push(self.recording(samples, i, ActivityClass::Fall)?);
        }
        for i in 0..self.adls {
            let samples = background(&mut rng, self.recording_len, self);
            out.push(self.recording(samples, i, ActivityClass::Adl)?);
        }
        Ok(out)
    }

    /// One recording of `len` samples with impacts of peak `peak` at each
    /// position in `impacts`. Labelled FALL when `impacts` is non-empty.
    pub fn recording_with_impacts(&self, len: usize, impacts: &[usize], peak: f64) -> Result<Rec, SignalError> {
        self.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut samples = background(&mut rng, len, self);
        for &pos in impacts {
            add_impact(&mut rng, &mut samples, pos, peak, self.sample_rate_hz);
        }
        let class = if impacts.is_empty() {
            ActivityClass::Adl
        } else {
            ActivityClass::Fall
        };
        self.recording(samples, 0, class)
    }

    fn recording(&self, samples: Vec<TriaxialSample<f64>>, index: usize, class: ActivityClass) -> Result<Rec, SignalError> {
        let meta = RecordingMeta {
            id: format!("{}/{}/{}/{:05}", self.dataset, self.seed, class.as_str(), index),
            dataset: self.dataset.clone(),
            subject: format!("S{:03}", self.subject_offset + index % self.subjects),
            device: self.device.clone(),
            activity: match class {
                ActivityClass::Fall => "synthetic_fall".into(),
                ActivityClass::Adl => "synthetic_adl".into(),
            },
            class: Some(class),
            unit: "g".into(),
        };
        TriaxialRecording::new(samples, self.sample_rate_hz, meta)
    }
}

fn background(rng: &mut ChaCha8Rng, len: usize, cfg: &SyntheticConfig) -> Vec<TriaxialSample<f64>> {
    let tilt_x: f64 = rng.random_range(-0.2..0.2);
    let tilt_y: f64 = rng.random_range(-0.2..0.2);
    let norm = (1.0 + tilt_x * tilt_x + tilt_y * tilt_y).sqrt();
    let gravity = [tilt_x / norm, tilt_y / norm, 1.0 / norm];
    let amp_lo = cfg.gait_amplitude_max.min(0.05);
    let amp: f64 = if cfg.gait_amplitude_max > amp_lo {
        rng.random_range(amp_lo..cfg.gait_amplitude_max)
    } else {
        cfg.gait_amplitude_max
    };
    let freq: f64 = rng.random_range(0.8..2.5);
    let phase: [f64; 3] = [
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
        rng.random_range(0.0..std::f64::consts::TAU),
    ];
    let noise = Normal::new(0.0, cfg.noise_std).expect("noise_std checked non-negative");
    (0..len)
        .map(|i| {
            let t = i as f64 / cfg.sample_rate_hz;
            let mut v = [0.0; 3];
            for a in 0..3 {
                let gait = amp * (std::f64::consts::TAU * freq * t + phase[a]).sin();
                v[a] = gravity[a] + gait + noise.sample(rng);
            }
            TriaxialSample::new(v[0], v[1], v[2])
        })
        .collect()
}

fn add_impact(rng: &mut ChaCha8Rng, samples: &mut [TriaxialSample<f64>], pos: usize, peak: f64, rate: f64) {
    let len = samples.len();
    if len == 0 {
        return;
    }
    let pos = pos.min(len - 1);
    // ~0.3 s of near free fall before the impact
    let dip = ((0.3 * rate) as usize).max(1);
    for i in pos.saturating_sub(dip)..pos {
        let s = &mut samples[i];
        s.x *= 0.25;
        s.y *= 0.25;
        s.z *= 0.25;
    }
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
    // decay constant scales with the sample rate (0.06 s)
    let tau = (0.06 * rate).max(1.0);
    let reach = (6.0 * tau) as usize;
    for i in pos.saturating_sub(reach)..(pos + reach + 1).min(len) {
        let k = (i as f64 - pos as f64).abs();
        let m = peak * (-k / tau).exp();
        let s = &mut samples[i];
        s.x += m * dir[0];
        s.y += m * dir[1];
        s.z += m * dir[2];
    }
    // lying on the side afterwards: gravity moves from z to x
    for s in samples.iter_mut().skip(pos + reach + 1) {
        let (x, z) = (s.x, s.z);
        s.x = z;
        s.z = x;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_labels() {
        let cfg = SyntheticConfig {
            falls: 4,
            adls: 6,
            ..Default::default()
        };
        let recs = cfg.generate().unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(recs.iter().filter(|r| r.meta.class == Some(ActivityClass::Fall)).count(), 4);
        assert!(recs.iter().all(|r| r.len() == cfg.recording_len));
    }

    #[test]
    fn seeded_and_repeatable() {
        let cfg = SyntheticConfig {
            seed: 42,
            falls: 2,
            adls: 2,
            ..Default::default()
        };
        assert_eq!(cfg.generate().unwrap(), cfg.generate().unwrap());
        let other = SyntheticConfig { seed: 43, ..cfg.clone() };
        assert_ne!(cfg.generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn fall_peaks_exceed_adl_peaks() {
        let cfg = SyntheticConfig {
            falls: 50,
            adls: 50,
            ..Default::default()
        };
        let recs = cfg.generate().unwrap();
        let peak = |r: &Rec| r.rms_series().into_iter().fold(0.0, f64::max);
        let min_fall = recs.iter().filter(|r| r.meta.class == Some(ActivityClass::Fall)).map(peak).fold(f64::INFINITY, f64::min);
        let max_adl = recs.iter().filter(|r| r.meta.class == Some(ActivityClass::Adl)).map(peak).fold(0.0, f64::max);
        assert!(min_fall > 3.0, "{min_fall}");
        assert!(max_adl < 2.0, "{max_adl}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SyntheticConfig {
            fall_peak_min: 5.0,
            fall_peak_max: 1.0,
            ..Default::default()
        };
        assert!(cfg.generate().is_err());
    }
}
