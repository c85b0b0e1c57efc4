mod common;

use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{fixture, start, synthetic, WINDOW};
use fedt_core::features::extract_features;
use fedt_core::fedt::classify;
use fedt_core::signal::ActivityClass;
use fedt_core::signal::synthetic::SyntheticConfig;
use fedt_core::Threshold;
use fedt_edgecloud::wire::{quantize, write_message, FrameReader, Message, ReadError, VerdictPayload};
use fedt_edgecloud::{edge_sim, EdgeConfig};

#[test]
fn quiet_recording_sends_nothing() {
    let f = fixture();
    let adl = synthetic(5, 0, 3);
    // nothing listens on this port; no connection must be attempted
    let cfg = EdgeConfig::new(WINDOW, f.model.fingerprint);
    for rec in &adl {
        let log = edge_sim(rec, &f.threshold, &cfg, "127.0.0.1:9").unwrap();
        assert_eq!(log.frames_sent, 0);
        assert!(log.entries.is_empty());
    }
}

#[test]
fn fall_recording_is_escalated_and_classified_fall() {
    let f = fixture();
    let svc = start(&f, |_| {});
    let cfg = EdgeConfig::new(WINDOW, f.model.fingerprint);
    for rec in synthetic(6, 5, 0) {
        let log = edge_sim(&rec, &f.threshold, &cfg, svc.local_addr()).unwrap();
        assert!(log.frames_sent >= 1);
        assert!(log.any_fall(), "{}", log.to_text());
    }
    svc.shutdown();
}

#[test]
fn networked_verdicts_equal_local_classification() {
    let f = fixture();
    let svc = start(&f, |_| {});
    let cfg = EdgeConfig::new(WINDOW, f.model.fingerprint);
    let gen = SyntheticConfig {
        seed: 9,
        recording_len: 300,
        ..Default::default()
    };
    let rec = gen.recording_with_impacts(2000, &[200, 600, 1000, 1400, 1800], 6.0).unwrap();
    let log = edge_sim(&rec, &f.threshold, &cfg, svc.local_addr()).unwrap();
    let stream = fedt_core::gate::gate_stream(&rec, &f.threshold, WINDOW, WINDOW / 2).unwrap();
    assert_eq!(log.entries.len(), stream.escalations.len());
    assert!(log.entries.len() >= 5);
    for (e, esc) in log.entries.iter().zip(&stream.escalations) {
        let v = e.verdict.expect("delivered");
        let local = classify(&f.model, &extract_features(&quantize(&esc.window), &f.registry).unwrap()).unwrap();
        assert_eq!(e.trigger, esc.trigger);
        assert_eq!(v.label, local.label);
        assert_eq!(v.probability.to_bits(), local.probability.to_bits());
    }
    svc.shutdown();
}

/// Minimal protocol peer used to script connection failures.
fn fake_service(
    listener: TcpListener,
    script: impl Fn(usize, &mut FrameReader<TcpStream>, &mut TcpStream) + Send + 'static,
) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        for (n, conn) in listener.incoming().enumerate() {
            let mut s = conn.unwrap();
            let mut r = FrameReader::new(s.try_clone().unwrap(), 1 << 20);
            let hello = match r.read_frame() {
                Ok(Some(f)) => f,
                _ => continue,
            };
            let Message::Hello(h) = Message::from_frame(&hello).unwrap() else { panic!() };
            write_message(&mut s, &Message::Hello(h)).unwrap();
            script(n, &mut r, &mut s);
            if n >= 1 {
                break;
            }
        }
    })
}

fn reply(s: &mut TcpStream, id: u64) {
    let v = VerdictPayload {
        id,
        label: ActivityClass::Fall,
        probability: 0.9,
        latency_us: 1,
    };
    write_message(s, &Message::Verdict(v)).unwrap();
}

fn window_id(frame: &fedt_edgecloud::wire::Frame) -> u64 {
    match Message::from_frame(frame).unwrap() {
        Message::Window(w) => w.id,
        other => panic!("{other:?}"),
    }
}

fn many_impacts(n: usize) -> fedt_core::Recording {
    let gen = SyntheticConfig {
        seed: 1,
        ..Default::default()
    };
    let impacts: Vec<usize> = (0..n).map(|i| 60 + i * 120).collect();
    gen.recording_with_impacts(120 * n + 120, &impacts, 6.0).unwrap()
}

#[test]
fn lost_connection_is_retried_once() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = fake_service(listener, |n, r, s| {
        if n == 0 {
            // answer two windows, then drop the connection
            for _ in 0..2 {
                let f = r.read_frame().unwrap().unwrap();
                reply(s, window_id(&f));
            }
            return;
        }
        while let Ok(Some(f)) = r.read_frame() {
            reply(s, window_id(&f));
        }
    });
    let rec = many_impacts(6);
    let th = Threshold::fixed(3.0);
    let cfg = EdgeConfig::new(WINDOW, fedt_core::Fingerprint::default());
    let log = edge_sim(&rec, &th, &cfg, addr).unwrap();
    server.join().unwrap();
    assert_eq!(log.entries.len(), 6);
    assert_eq!(log.reconnects, 1);
    assert_eq!(log.delivered(), 6, "{}", log.to_text());
    let ids: Vec<u64> = log.entries.iter().map(|e| e.verdict.unwrap().id).collect();
    assert_eq!(ids, (0..6).collect::<Vec<_>>());
}

#[test]
fn windows_beyond_buffer_cap_are_undelivered() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = fake_service(listener, |n, r, s| {
        if n == 0 {
            let f = r.read_frame().unwrap().unwrap();
            reply(s, window_id(&f));
            return;
        }
        while let Ok(Some(f)) = r.read_frame() {
            reply(s, window_id(&f));
        }
    });
    let rec = many_impacts(8);
    let cfg = EdgeConfig {
        buffer_cap: 3,
        ..EdgeConfig::new(WINDOW, fedt_core::Fingerprint::default())
    };
    let log = edge_sim(&rec, &Threshold::fixed(3.0), &cfg, addr).unwrap();
    server.join().unwrap();
    assert_eq!(log.entries.len(), 8);
    assert_eq!(log.delivered(), 4);
    assert_eq!(log.undelivered().count(), 4);
}

#[test]
fn second_loss_leaves_windows_undelivered() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = fake_service(listener, |_, r, _| {
        let _ = r.read_frame();
    });
    let rec = many_impacts(3);
    let cfg = EdgeConfig::new(WINDOW, fedt_core::Fingerprint::default());
    let log = edge_sim(&rec, &Threshold::fixed(3.0), &cfg, addr).unwrap();
    server.join().unwrap();
    assert_eq!(log.reconnects, 1);
    assert_eq!(log.delivered(), 0);
    assert_eq!(log.undelivered().count(), 3);
}

#[test]
fn at_most_sixteen_windows_in_flight() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let peak = Arc::new(AtomicUsize::new(0));
    let seen = peak.clone();
    let server = std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut r = FrameReader::new(s.try_clone().unwrap(), 1 << 20);
        let Message::Hello(h) = Message::from_frame(&r.read_frame().unwrap().unwrap()).unwrap() else { panic!() };
        write_message(&mut s, &Message::Hello(h)).unwrap();
        s.set_read_timeout(Some(Duration::from_millis(400))).unwrap();
        let mut unanswered = Vec::new();
        loop {
            match r.read_frame() {
                Ok(Some(f)) => unanswered.push(window_id(&f)),
                Ok(None) => break,
                Err(ReadError::Io(_)) => {
                    // client stalled: it is waiting for verdicts
                    seen.fetch_max(unanswered.len(), Ordering::SeqCst);
                    if unanswered.is_empty() {
                        break;
                    }
                    for id in unanswered.drain(..) {
                        reply(&mut s, id);
                    }
                }
                Err(e) => panic!("{e}"),
            }
        }
    });
    let rec = many_impacts(40);
    let cfg = EdgeConfig::new(WINDOW, fedt_core::Fingerprint::default());
    let log = edge_sim(&rec, &Threshold::fixed(3.0), &cfg, addr).unwrap();
    server.join().unwrap();
    assert_eq!(log.delivered(), 40);
    assert_eq!(peak.load(Ordering::SeqCst), 16);
}

#[test]
fn paced_replay_takes_recording_time() {
    let f = fixture();
    let svc = start(&f, |_| {});
    let cfg = EdgeConfig {
        pace: true,
        ..EdgeConfig::new(WINDOW, f.model.fingerprint)
    };
    let gen = SyntheticConfig {
        seed: 2,
        sample_rate_hz: 1000.0,
        ..Default::default()
    };
    let rec = gen.recording_with_impacts(400, &[150], 6.0).unwrap();
    let t = std::time::Instant::now();
    let log = edge_sim(&rec, &f.threshold, &cfg, svc.local_addr()).unwrap();
    let start = log.entries[0].start;
    assert!(t.elapsed() >= Duration::from_millis((start + WINDOW) as u64));
    svc.shutdown();
}
