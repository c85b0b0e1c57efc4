//! `fedt`: ingestion, segmentation, training, evaluation, the cloud service
//! and the edge simulator behind one binary.
//!
//! Exit codes: 0 success, 1 contract or data error, 2 usage error.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fedt_core::eval::{
    cross_device_eval_sets, kfold_evaluate_set, pca_ablation_features, pca_ablation_set, EvalSet, FoldScheme,
    PipelineConfig,
};
use fedt_core::fedt::{load_model, save_model, train_with_log};
use fedt_core::gate::fit_threshold;
use fedt_core::signal::synthetic::SyntheticConfig;
use fedt_core::signal::{ingest, segment_all, write_generic, WindowsFile};
use fedt_core::{DatasetConfig, FeatureRegistry, Fingerprint, Hyperparameters, MetricsReport, Threshold, TrainingSet};
use fedt_edgecloud::{edge_sim, serve, EdgeConfig, ServiceConfig};

/// Reference window counts (fall, ADL) for the public datasets.
const REFERENCE_COUNTS: &[(&str, usize, usize)] = &[
    ("sisfall", 1798, 52066),
    ("mmsys", 416, 43866),
    ("mobiact", 767, 50857),
];

/// Reference 10-fold sensitivity and specificity in percent.
const REFERENCE_METRICS: &[(&str, f64, f64)] = &[
    ("sisfall", 98.11, 99.98),
    ("mmsys", 97.33, 99.97),
    ("mobiact", 98.05, 99.95),
];

/// Reference sensitivity in percent with and without a 95% PCA step.
const REFERENCE_PCA: &[(&str, f64, f64)] = &[("sisfall", 73.30, 98.11)];

#[derive(Parser)]
#[command(name = "fedt", version, about = "Fall detection: threshold gate + boosted trees")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write seeded synthetic recordings (generic CSV) plus the generator config.
    Generate(GenerateArgs),
    /// Segment recordings into a windows file.
    Segment(SegmentArgs),
    /// Fit the gate threshold on the fall windows of a windows file.
    FitThreshold(FitThresholdArgs),
    /// Train a model on a windows file.
    Train(TrainArgs),
    /// k-fold cross-validation report.
    Eval(EvalArgs),
    /// Paired evaluation with and without a PCA step.
    Pca(PcaArgs),
    /// Train on one windows file, test on another.
    Robustness(RobustnessArgs),
    /// Run the classification service.
    Serve(ServeArgs),
    /// Replay a recording through the edge simulator against a service.
    Replay(ReplayArgs),
}

fn existing_path(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.exists() {
        Ok(p)
    } else {
        Err(format!("{s}: no such file or directory"))
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 220)]
    falls: usize,
    #[arg(long, default_value_t = 300)]
    adls: usize,
    #[arg(long, default_value_t = 400)]
    recording_len: usize,
    #[arg(long, default_value_t = 50.0)]
    sample_rate_hz: f64,
}

#[derive(Args)]
struct SegmentArgs {
    /// Recording file or directory.
    #[arg(long, value_parser = existing_path)]
    input: PathBuf,
    /// generic, sisfall, mobiact, mmsys or synthetic.
    #[arg(long, default_value = "generic")]
    adapter: String,
    /// Samples per window; defaults to the adapter's standard size.
    #[arg(long)]
    window_size: Option<usize>,
    /// Defaults to half a window.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitThresholdArgs {
    #[arg(long, value_parser = existing_path)]
    windows: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    safety: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct HyperArgs {
    #[arg(long, default_value_t = 100)]
    rounds: usize,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 6)]
    max_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    min_child_hessian: f64,
    /// Defaults to N_adl / N_fall of the training data.
    #[arg(long)]
    pos_weight: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    cutoff: f64,
    /// Canonical registry text; defaults to the built-in 112-feature registry.
    #[arg(long, value_parser = existing_path)]
    registry: Option<PathBuf>,
}

impl HyperArgs {
    fn hyper(&self) -> Hyperparameters {
        Hyperparameters {
            rounds: self.rounds,
            alpha: self.alpha,
            beta: self.beta,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth,
            min_child_hessian: self.min_child_hessian,
            pos_weight: self.pos_weight,
            cutoff: self.cutoff,
        }
    }

    fn pipeline(&self, safety: f64, gate: bool) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            safety_factor: safety,
            gate,
            registry: load_registry(self.registry.as_deref())?,
            hyper: self.hyper(),
            ..Default::default()
        };
        cfg.hyper.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = existing_path)]
    windows: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-round log; defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_parser = existing_path)]
    windows: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.9)]
    safety: f64,
    /// Let the model see every window instead of only escalated ones.
    #[arg(long)]
    no_gate: bool,
    /// Split folds by subject instead of stratified by window.
    #[arg(long)]
    by_subject: bool,
    /// Retained-variance fraction of a PCA step.
    #[arg(long)]
    pca: Option<f64>,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct PcaArgs {
    /// Windows file; omit and pass --fixture for the synthetic low-variance fixture.
    #[arg(long, value_parser = existing_path, required_unless_present = "fixture")]
    windows: Option<PathBuf>,
    #[arg(long, conflicts_with = "windows")]
    fixture: bool,
    #[arg(long, default_value_t = 0.95)]
    fraction: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.9)]
    safety: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long, value_parser = existing_path)]
    train: PathBuf,
    #[arg(long, value_parser = existing_path)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    safety: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "FEDT_ADDR", default_value = "127.0.0.1:7878")]
    addr: String,
    #[arg(long, env = "FEDT_MODEL", value_parser = existing_path)]
    model: PathBuf,
    #[arg(long, env = "FEDT_MAX_PAYLOAD", default_value_t = fedt_edgecloud::wire::DEFAULT_MAX_PAYLOAD)]
    max_payload: usize,
    #[arg(long, default_value_t = 256)]
    session_limit: usize,
    #[arg(long, value_parser = existing_path)]
    registry: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, value_parser = existing_path)]
    recording: PathBuf,
    #[arg(long, default_value = "generic")]
    adapter: String,
    #[arg(long, value_parser = existing_path)]
    threshold: PathBuf,
    #[arg(long, env = "FEDT_ADDR", default_value = "127.0.0.1:7878")]
    addr: String,
    /// Model file whose fingerprint is announced; defaults to the built-in registry.
    #[arg(long, value_parser = existing_path)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    window_size: usize,
    /// Sleep between samples to replay at the recording's sample rate.
    #[arg(long)]
    pace: bool,
    /// Session log; stdout only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Segment(a) => cmd_segment(a),
        Cmd::FitThreshold(a) => cmd_fit_threshold(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Pca(a) => cmd_pca(a),
        Cmd::Robustness(a) => cmd_robustness(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Replay(a) => cmd_replay(a),
    }
}

/// Writes to a temp file in the target directory, then renames over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_registry(path: Option<&Path>) -> Result<FeatureRegistry> {
    match path {
        None => Ok(FeatureRegistry::default_registry()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            FeatureRegistry::from_canonical(&text).with_context(|| format!("parsing registry {}", p.display()))
        }
    }
}

fn load_windows(path: &Path) -> Result<WindowsFile> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    WindowsFile::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        seed: a.seed,
        falls: a.falls,
        adls: a.adls,
        recording_len: a.recording_len,
        sample_rate_hz: a.sample_rate_hz,
        ..Default::default()
    };
    let recs = cfg.generate()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for rec in &recs {
        write_atomic(&a.out.join(format!("{}.csv", rec.meta.id.replace('/', "_"))), write_generic(rec).as_bytes())?;
    }
    write_atomic(&a.out.join("synthetic.toml"), toml::to_string(&cfg)?.as_bytes())?;
    println!(
        "generated {} fall + {} ADL recordings (seed {}) in {}",
        a.falls,
        a.adls,
        a.seed,
        a.out.display()
    );
    Ok(())
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let mut cfg = DatasetConfig::for_adapter(&a.adapter);
    if let Some(w) = a.window_size {
        cfg.window_size = w;
        cfg.stride = (w / 2).max(1);
    }
    if let Some(s) = a.stride {
        cfg.stride = s;
    }
    cfg.validate()?;
    let recs = ingest(&a.input, &a.adapter)?;
    let windows = segment_all(&recs, &cfg)?;
    let file = WindowsFile {
        provenance: format!(
            "fedt segment adapter={} window_size={} stride={} input={}",
            cfg.adapter,
            cfg.window_size,
            cfg.stride,
            file_name(&a.input)
        ),
        config: cfg,
        windows,
    };
    write_atomic(&a.out, &file.to_bytes())?;
    print!("{}", segment_summary(&file, recs.len()));
    Ok(())
}

fn segment_summary(file: &WindowsFile, recordings: usize) -> String {
    let c = &file.config;
    let mut s = String::new();
    let _ = writeln!(s, "recordings   {recordings}");
    let _ = writeln!(s, "window_size  {}", c.window_size);
    let _ = writeln!(s, "stride       {}", c.stride);
    let _ = writeln!(s, "fall windows {}", file.fall_count());
    let _ = writeln!(s, "adl windows  {}", file.adl_count());
    if let Some(&(_, f, d)) = REFERENCE_COUNTS.iter().find(|r| r.0 == c.adapter) {
        let _ = writeln!(
            s,
            "reference    {f} fall / {d} adl (stride of the reference is unknown; this run used {})",
            c.stride
        );
    }
    s
}

fn cmd_fit_threshold(a: FitThresholdArgs) -> Result<()> {
    let file = load_windows(&a.windows)?;
    let mut th = fit_threshold(&file.windows, a.safety)?;
    if th.provenance.datasets.is_empty() {
        th.provenance.datasets.push(file.config.adapter.clone());
    }
    write_atomic(&a.out, th.to_text().as_bytes())?;
    println!("tau {} (safety {}, {} fall windows)", th.tau, th.safety_factor, file.fall_count());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = load_windows(&a.windows)?;
    let cfg = a.hyper.pipeline(0.9, false)?;
    let set = EvalSet::from_windows(&file.windows, &cfg.registry)?;
    let data = TrainingSet::new(&set.features, &set.labels)?;
    let (model, log) = train_with_log(&data, &cfg.hyper)?;
    let mut text = String::from("round\tobjective\tleaves\n");
    for r in &log {
        let _ = writeln!(text, "{}\t{:.10}\t{}", r.round, r.objective, r.leaves);
    }
    let log_path = a.log.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        p.into()
    });
    write_atomic(&a.out, &save_model(&model))?;
    write_atomic(&log_path, text.as_bytes())?;
    print!("{text}");
    println!(
        "model {} trees, {} leaves, fingerprint {}",
        model.trees.len(),
        model.total_leaves(),
        model.fingerprint.short()
    );
    Ok(())
}

fn print_reference_delta(adapter: &str, report: &MetricsReport) {
    if let Some(&(_, sens, spec)) = REFERENCE_METRICS.iter().find(|r| r.0 == adapter) {
        let m = &report.metrics;
        println!(
            "reference    sensitivity {sens:.2} (delta {:+.2} pp), specificity {spec:.2} (delta {:+.2} pp)",
            100.0 * m.sensitivity - sens,
            100.0 * m.specificity - spec
        );
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let file = load_windows(&a.windows)?;
    let mut cfg = a.hyper.pipeline(a.safety, !a.no_gate)?;
    cfg.pca = a.pca;
    if a.by_subject {
        cfg.folds = FoldScheme::BySubject;
    }
    let set = EvalSet::from_windows(&file.windows, &cfg.registry)?;
    let report = kfold_evaluate_set(&set, a.k, &cfg, a.seed)?;
    write_atomic(&a.out.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&a.out.join("report.txt"), report.to_table().as_bytes())?;
    print!("{}", report.to_table());
    print_reference_delta(&file.config.adapter, &report);
    Ok(())
}

fn cmd_pca(a: PcaArgs) -> Result<()> {
    let mut cfg = a.hyper.pipeline(a.safety, true)?;
    cfg.pca = Some(a.fraction);
    let (set, adapter) = match &a.windows {
        Some(p) => {
            let file = load_windows(p)?;
            (EvalSet::from_windows(&file.windows, &cfg.registry)?, file.config.adapter)
        }
        None => (pca_ablation_features(60, 240, a.seed), "fixture".to_string()),
    };
    let ab = pca_ablation_set(&set, a.k, &cfg, a.seed)?;
    let doc = serde_json::json!({
        "seed": a.seed,
        "fraction": a.fraction,
        "without_pca": ab.without_pca,
        "with_pca": ab.with_pca,
    });
    write_atomic(&a.out, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    let (w, p) = (ab.without_pca.metrics.sensitivity, ab.with_pca.metrics.sensitivity);
    println!("sensitivity without pca {:.4}", w);
    println!("sensitivity with pca    {:.4} ({:.0}% variance)", p, 100.0 * a.fraction);
    if let Some(&(_, with, without)) = REFERENCE_PCA.iter().find(|r| r.0 == adapter) {
        println!("reference    {with:.2} with pca vs {without:.2} without");
    }
    Ok(())
}

fn cmd_robustness(a: RobustnessArgs) -> Result<()> {
    let cfg = a.hyper.pipeline(a.safety, true)?;
    let train = load_windows(&a.train)?;
    let test = load_windows(&a.test)?;
    let train_set = EvalSet::from_windows(&train.windows, &cfg.registry)?;
    let test_set = EvalSet::from_windows(&test.windows, &cfg.registry)?;
    let report = cross_device_eval_sets(&train_set, &test_set, &cfg)?;
    write_atomic(&a.out, report.to_json().as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let bytes = std::fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let model = load_model::<f64>(&bytes).with_context(|| format!("loading {}", a.model.display()))?;
    let registry = load_registry(a.registry.as_deref())?;
    let cfg = ServiceConfig {
        addr: a.addr,
        max_payload: a.max_payload,
        session_limit: a.session_limit,
        model_id: file_name(&a.model),
        ..Default::default()
    };
    let handle = serve(cfg, model, registry)?;
    println!("listening on {}", handle.local_addr());
    std::io::stdout().flush()?;
    handle.join();
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.threshold).with_context(|| format!("reading {}", a.threshold.display()))?;
    let th = Threshold::from_text(&text)?;
    let fingerprint: Fingerprint = match &a.model {
        Some(p) => load_model::<f64>(&std::fs::read(p)?)?.fingerprint,
        None => FeatureRegistry::default_registry().fingerprint(),
    };
    let recs = ingest(&a.recording, &a.adapter)?;
    if recs.is_empty() {
        bail!("{}: no recordings found", a.recording.display());
    }
    let cfg = EdgeConfig {
        pace: a.pace,
        ..EdgeConfig::new(a.window_size, fingerprint)
    };
    let mut out = String::new();
    for rec in &recs {
        let log = edge_sim(rec, &th, &cfg, a.addr.as_str())?;
        out.push_str(&log.to_text());
    }
    if let Some(p) = &a.out {
        write_atomic(p, out.as_bytes())?;
    }
    print!("{out}");
    Ok(())
}
