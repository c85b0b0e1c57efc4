#![allow(dead_code)]

use fedt_core::eval::{FittedPipeline, PipelineConfig};
use fedt_core::signal::{segment_all, synthetic::SyntheticConfig};
use fedt_core::{DatasetConfig, FeatureRegistry, FedtModel, Hyperparameters, Recording, Threshold, Window};
use fedt_edgecloud::{serve, ServiceConfig, ServiceHandle};

pub const WINDOW: usize = 100;

pub struct Fixture {
    pub model: FedtModel,
    pub threshold: Threshold,
    pub registry: FeatureRegistry,
    pub windows: Vec<Window>,
}

pub fn synthetic(seed: u64, falls: usize, adls: usize) -> Vec<Recording> {
    SyntheticConfig {
        seed,
        falls,
        adls,
        recording_len: 300,
        ..Default::default()
    }
    .generate()
    .unwrap()
}

pub fn fixture() -> Fixture {
    let recs = synthetic(77, 40, 30);
    let windows = segment_all(&recs, &DatasetConfig::new(WINDOW, 50, "synthetic").unwrap()).unwrap();
    let cfg = PipelineConfig {
        hyper: Hyperparameters {
            rounds: 20,
            ..Default::default()
        },
        ..Default::default()
    };
    let fitted = FittedPipeline::fit(&windows, &cfg).unwrap();
    Fixture {
        model: fitted.model,
        threshold: fitted.threshold.unwrap(),
        registry: cfg.registry,
        windows,
    }
}

pub fn start(f: &Fixture, tweak: impl FnOnce(&mut ServiceConfig)) -> ServiceHandle {
    let mut cfg = ServiceConfig {
        addr: "127.0.0.1:0".into(),
        ..Default::default()
    };
    tweak(&mut cfg);
    serve(cfg, f.model.clone(), f.registry.clone()).unwrap()
}
