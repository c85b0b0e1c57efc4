//! Feature extraction against a straight-line reference implementation.

use std::f64::consts::PI;
use std::path::PathBuf;

use fedt_core::features::{extract_features, series, FeatureRegistry};
use fedt_core::signal::{ingest, synthetic::SyntheticConfig, segment_fall, write_generic, TriaxialRecording, Window};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// Reference implementations: plain loops, no shared helpers with the crate.

fn dft(a: &[f64], k: usize) -> (f64, f64) {
    let n = a.len() as f64;
    let mut re = 0.0;
    let mut im = 0.0;
    for (m, v) in a.iter().enumerate() {
        let ang = -2.0 * PI * (m as f64) * (k as f64) / n;
        re += v * ang.cos();
        im += v * ang.sin();
    }
    (re, im)
}

fn oracle_vector(samples: &[(f64, f64, f64)]) -> Vec<f64> {
    let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let z: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let r: Vec<f64> = samples.iter().map(|s| (s.0 * s.0 + s.1 * s.1 + s.2 * s.2).sqrt()).collect();
    let chans = [&x, &y, &z, &r];
    let mut out = Vec::new();
    for k in 0..10 {
        for c in chans {
            let (re, im) = dft(c, k);
            out.push((re * re + im * im).sqrt());
        }
    }
    for c in chans {
        let mut e = 0.0;
        for v in c.iter() {
            e += v * v;
        }
        out.push(e);
    }
    for c in chans {
        let mut s = 0.0;
        for i in 1..c.len() {
            s += (c[i] - c[i - 1]).abs();
        }
        out.push(s);
    }
    for c in chans {
        let total: f64 = c.iter().map(|v| v * v).sum();
        let n = c.len();
        let mut bounds = vec![0];
        for i in 0..10 {
            let len = n / 10 + if i < n % 10 { 1 } else { 0 };
            bounds.push(bounds[i] + len);
        }
        for i in 0..10 {
            let part: f64 = c[bounds[i]..bounds[i + 1]].iter().map(|v| v * v).sum();
            out.push(part / total);
        }
    }
    for c in chans {
        let mut best = 0;
        for i in 0..c.len() {
            if c[i] > c[best] {
                best = i;
            }
        }
        out.push(best as f64 / c.len() as f64);
    }
    for c in chans {
        out.push(c.iter().sum::<f64>() / c.len() as f64);
    }
    for c in chans {
        let m = c.iter().sum::<f64>() / c.len() as f64;
        out.push((c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64).sqrt());
    }
    for c in chans {
        out.push(c.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    for c in chans {
        out.push(c.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    for c in chans {
        let mut v = c.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        out.push(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 });
    }
    out
}

fn load_fixture_window() -> Window<f64> {
    let recs = ingest(&fixtures().join("fall_window.csv"), "generic").expect("fixture parses");
    let rec: &TriaxialRecording<f64> = &recs[0];
    Window::new(rec.samples().to_vec(), rec.meta.class)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Regenerates the fixture window and golden vector when `FEDT_BLESS=1`.
fn bless() {
    let cfg = SyntheticConfig {
        seed: 2024,
        falls: 1,
        adls: 0,
        ..Default::default()
    };
    let rec = &cfg.generate().unwrap()[0];
    let w = segment_fall(rec, 100).unwrap();
    let cut = TriaxialRecording::new(w.samples.clone(), rec.sample_rate_hz(), rec.meta.clone()).unwrap();
    std::fs::write(fixtures().join("fall_window.csv"), write_generic(&cut)).unwrap();
    let win = load_fixture_window();
    let s: Vec<(f64, f64, f64)> = win.samples.iter().map(|s| (s.x, s.y, s.z)).collect();
    let golden: Vec<String> = oracle_vector(&s).iter().map(|v| format!("{v:?}")).collect();
    std::fs::write(fixtures().join("fall_window.golden"), golden.join("\n") + "\n").unwrap();
}

#[test]
fn default_registry_matches_golden_vector() {
    if std::env::var("FEDT_BLESS").as_deref() == Ok("1") {
        bless();
    }
    let golden: Vec<f64> = std::fs::read_to_string(fixtures().join("fall_window.golden"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let w = load_fixture_window();
    let reg = FeatureRegistry::default_registry();
    assert_eq!(golden.len(), reg.arity());

    let s: Vec<(f64, f64, f64)> = w.samples.iter().map(|s| (s.x, s.y, s.z)).collect();
    let oracle = oracle_vector(&s);
    let got = extract_features(&w, &reg).unwrap();
    assert!(!got.flagged);
    let names = reg.output_names();
    for i in 0..golden.len() {
        assert!(close(oracle[i], golden[i]), "oracle drifted at {}: {} vs {}", names[i], oracle[i], golden[i]);
        assert!(close(got.values[i], golden[i]), "{}: {} vs golden {}", names[i], got.values[i], golden[i]);
    }
}

#[test]
fn alternating_series_k2() {
    let c = series::fft_coefficient(&[1.0f64, -1.0, 1.0, -1.0], 2).unwrap();
    let (re, im) = dft(&[1.0, -1.0, 1.0, -1.0], 2);
    assert!((c.re - 4.0).abs() < 1e-12 && c.im.abs() < 1e-12 && (c.abs - 4.0).abs() < 1e-12);
    assert!((re - 4.0).abs() < 1e-12 && im.abs() < 1e-12);
}

#[test]
fn thousand_random_series_agree_with_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(2..160);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let k = rng.random_range(0..n);
        let c = series::fft_coefficient(&s, k).unwrap();
        let (re, im) = dft(&s, k);
        assert!((c.re - re).abs() < 1e-8 && (c.im - im).abs() < 1e-8, "n={n} k={k}");

        let e: f64 = s.iter().map(|v| v * v).sum();
        assert!(close(series::abs_energy(&s).unwrap(), e));
        let ch: f64 = s.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        assert!(close(series::absolute_changes(&s).unwrap(), ch));

        let chunks = rng.random_range(1..=n.min(12));
        let r = series::energy_ratio_by_chunks(&s, chunks).unwrap();
        assert_eq!(r.ratios.len(), chunks);
        assert!((r.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut best = 0;
        for i in 0..n {
            if s[i] > s[best] {
                best = i;
            }
        }
        assert_eq!(series::first_location_of_maximum(&s).unwrap(), best as f64 / n as f64);
    }
}

#[test]
fn abs_energy_of_rms_channel_is_sum_of_squared_magnitudes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<_> = (0..64)
        .map(|_| fedt_core::Sample::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
        .collect();
    let w = Window::new(samples.clone(), None);
    let e = series::abs_energy(&w.rms_series()).unwrap();
    let oracle: f64 = samples.iter().map(|s| s.x * s.x + s.y * s.y + s.z * s.z).sum();
    assert!(close(e, oracle));
}

proptest! {
    #[test]
    fn fft_conjugate_symmetry(s in prop::collection::vec(-50.0f64..50.0, 2..100), k in 1usize..100) {
        let n = s.len();
        let k = k % n;
        prop_assume!(k != 0);
        let a = series::fft_coefficient(&s, k).unwrap();
        let b = series::fft_coefficient(&s, n - k).unwrap();
        prop_assert!((a.re - b.re).abs() < 1e-9 * (1.0 + a.abs));
        prop_assert!((a.im + b.im).abs() < 1e-9 * (1.0 + a.abs));
    }

    #[test]
    fn reversal_invariants(s in prop::collection::vec(-50.0f64..50.0, 2..100)) {
        let r: Vec<f64> = s.iter().rev().copied().collect();
        prop_assert!(close(series::abs_energy(&s).unwrap(), series::abs_energy(&r).unwrap()));
        prop_assert!(close(series::absolute_changes(&s).unwrap(), series::absolute_changes(&r).unwrap()));
    }

    #[test]
    fn reversed_unique_max_location(mut s in prop::collection::vec(-50.0f64..50.0, 1..100), at in 0usize..100) {
        let n = s.len();
        let at = at % n;
        s[at] = 1000.0;
        let r: Vec<f64> = s.iter().rev().copied().collect();
        prop_assert_eq!(series::first_location_of_maximum(&r).unwrap(), (n - 1 - at) as f64 / n as f64);
    }

    #[test]
    fn chunk_ratios_sum_to_one(s in prop::collection::vec(-50.0f64..50.0, 1..200), chunks in 1usize..20) {
        let r = series::energy_ratio_by_chunks(&s, chunks).unwrap();
        if !r.degenerate {
            prop_assert!((r.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert!(r.ratios.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
