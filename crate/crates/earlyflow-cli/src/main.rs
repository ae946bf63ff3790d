//! Command-line workflow around the earlyflow library: generate or ingest
//! captures, augment/split datasets, train and evaluate models, replay
//! traffic, and repeat whole experiments.
//!
//! Every run prints one JSON envelope to stdout that echoes the effective
//! configuration; runs that produce a file also write a
//! `<file>.manifest.json` config echo next to it, so identical manifests
//! imply identical outputs. Human-readable tables go to stderr. Exit
//! codes: 0 success, 2 configuration error, 1 runtime error.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use earlyflow::capture::{FilterSpec, Protocol};
use earlyflow::classifier::PredictionMode;
use earlyflow::dataset::{
    augment, class_weights, load_dataset, load_labeled_dataset, save_dataset, stratified_split,
    synth_generate, AugmentConfig, ClassSynth, FlowDataset, LabelMatchOptions, PayloadPattern,
    SplitConfig, SynthSpec,
};
use earlyflow::evaluate::{evaluate_dataset, EvalReport};
use earlyflow::flowtable::FlowTableConfig;
use earlyflow::monitor::{replay, throughput_check, udp_send, udp_serve, ReplayConfig};
use earlyflow::nn::{
    load_model, save_model, thread_count, Model, ModelConfig, ShapeMismatch, TrainConfig,
    TrainSample,
};
use earlyflow::preprocess::VectorizerConfig;

/// A flag combination we can reject before touching any data; exits 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "earlyflow",
    version,
    about = "Early classification of network flows from raw packet bytes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled capture (savefile + label CSV).
    Synth(SynthArgs),
    /// Reassemble a capture into a labeled flow dataset (.efds).
    Ingest(IngestArgs),
    /// Expand a dataset with prefix segments.
    Augment(AugmentArgs),
    /// Stratified train/test split.
    Split(SplitArgs),
    /// Train a classifier on a dataset.
    Train(TrainArgs),
    /// Score a model against a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Replay a capture through the live pipeline at scaled pacing.
    Replay(ReplayArgs),
    /// Run split -> augment -> train -> evaluate R times and aggregate.
    Experiment(ExperimentArgs),
}

#[derive(Args, Serialize, Clone)]
struct FilterArgs {
    /// Keep only packets touching these ports (either endpoint).
    #[arg(long, value_delimiter = ',')]
    ports: Vec<u16>,
    /// Keep only this transport protocol (`tcp`).
    #[arg(long)]
    protocol: Option<String>,
}

impl FilterArgs {
    fn build(&self) -> Result<FilterSpec> {
        let protocols = match self.protocol.as_deref() {
            None => Vec::new(),
            Some(p) if p.eq_ignore_ascii_case("tcp") => vec![Protocol::Tcp],
            Some(other) => {
                return Err(config(format!(
                    "--protocol {other} is not supported (only tcp is reassembled)"
                )))
            }
        };
        Ok(FilterSpec {
            ports: self.ports.clone(),
            protocols,
        })
    }
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Class spec `name:flows[:markerhex[@packet]]`; repeat per class.
    /// Without a marker the payload is random printable ASCII.
    #[arg(long = "class", required = true)]
    class: Vec<String>,
    /// Capture savefile to write.
    #[arg(long)]
    out: PathBuf,
    /// Label CSV to write.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    data_packets_min: usize,
    #[arg(long, default_value_t = 6)]
    data_packets_max: usize,
    #[arg(long, default_value_t = 16)]
    payload_min: usize,
    #[arg(long, default_value_t = 64)]
    payload_max: usize,
    /// Skip the SYN/SYN-ACK/ACK handshake.
    #[arg(long)]
    no_handshake: bool,
    /// Skip the FIN teardown (flows end by idle timeout instead).
    #[arg(long)]
    no_teardown: bool,
    #[arg(long, default_value_t = 5_000)]
    flow_spacing_micros: u64,
    #[arg(long, default_value_t = 200)]
    gap_min_micros: u64,
    #[arg(long, default_value_t = 900)]
    gap_max_micros: u64,
}

#[derive(Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    capture: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Dataset file to write (sidecar JSON is written alongside).
    #[arg(long)]
    out: PathBuf,
    /// Ordered class list; label rows must use these names.
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,
    #[command(flatten)]
    filter: FilterArgs,
    /// Class assigned to flows no label row matches; default is to drop them.
    #[arg(long)]
    default_class: Option<String>,
    /// Match labels on the 5-tuple only, ignoring time windows.
    #[arg(long)]
    exact_key_only: bool,
    #[arg(long, default_value_t = 120.0)]
    timeout_secs: f64,
    #[arg(long)]
    max_flows: Option<usize>,
    #[arg(long, default_value_t = 48)]
    header_budget: usize,
    #[arg(long, default_value_t = 400)]
    payload_budget: usize,
}

#[derive(Args, Serialize)]
struct AugmentArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    segmentation_rate: f64,
}

#[derive(Args, Serialize)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    /// Seeds both parameter init and batch shuffling.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    threshold: f64,
    /// Also report the earliest prefix from which decisions stay correct.
    #[arg(long)]
    stable: bool,
    /// Report JSON destination; the table always goes to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ReplayArgs {
    #[arg(long)]
    capture: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    threshold: f64,
    /// 1 = original pacing, 0 = as fast as possible.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    time_scale: f64,
    /// NDJSON decision log destination.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long, default_value_t = 120.0)]
    timeout_secs: f64,
    /// `incremental` (cached per-packet embeddings) or `reference`.
    #[arg(long, default_value = "incremental")]
    mode: String,
    /// Transmit the capture's frames as UDP datagrams to this address
    /// instead of running the pipeline.
    #[arg(long)]
    udp_sink: Option<String>,
    /// Receive frames as UDP datagrams on this address instead of
    /// reading a capture.
    #[arg(long)]
    udp_source: Option<String>,
    /// Stop a --udp-source session after this much silence.
    #[arg(long, default_value_t = 1_000)]
    idle_ms: u64,
    #[arg(long, default_value_t = 48)]
    header_budget: usize,
}

#[derive(Args, Serialize)]
struct ExperimentArgs {
    #[arg(long)]
    data: PathBuf,
    /// Aggregate report JSON to write.
    #[arg(long)]
    out: PathBuf,
    /// Repetition r uses seed + r for its split and training.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.25)]
    segmentation_rate: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    threshold: f64,
    #[arg(long)]
    stable: bool,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    /// Save the first repetition's model here.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Save the first repetition's test split here.
    #[arg(long)]
    save_test: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Ingest(a) => cmd_ingest(a),
        Cmd::Augment(a) => cmd_augment(a),
        Cmd::Split(a) => cmd_split(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Replay(a) => cmd_replay(a),
        Cmd::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn emit(envelope: &impl Serialize) -> Result<()> {
    let mut stdout = io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, envelope)?;
    stdout.write_all(b"\n")?;
    Ok(())
}

fn manifest_path(anchor: &Path) -> PathBuf {
    let mut name = anchor.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest<A: Serialize>(anchor: &Path, command: &str, args: &A) -> Result<()> {
    let manifest = json!({
        "command": command,
        "threads": thread_count(),
        "args": args,
    });
    fs::write(manifest_path(anchor), serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing manifest for {}", anchor.display()))?;
    Ok(())
}

fn check_unit_open(flag: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(config(format!("--{flag} {v} must lie strictly inside (0, 1)")));
    }
    Ok(())
}

fn check_threshold(v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(config(format!("--threshold {v} must lie in [0, 1)")));
    }
    Ok(())
}

fn check_positive(flag: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(config(format!("--{flag} {v} must be a positive number")));
    }
    Ok(())
}

fn check_nonzero(flag: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(config(format!("--{flag} must be at least 1")));
    }
    Ok(())
}

fn decode_hex(hex: &str) -> Result<Vec<u8>> {
    if hex.is_empty() || !hex.len().is_multiple_of(2) || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(config(format!(
            "marker {hex:?} must be non-empty even-length hex"
        )));
    }
    Ok((0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).expect("validated hex"))
        .collect())
}

fn parse_class_spec(spec: &str) -> Result<ClassSynth> {
    let bad = || config(format!("--class {spec:?}: expected name:flows[:markerhex[@packet]]"));
    let mut parts = spec.splitn(3, ':');
    let name = parts.next().unwrap_or_default().to_string();
    let flows: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    if name.is_empty() || flows == 0 {
        return Err(bad());
    }
    let pattern = match parts.next() {
        None => PayloadPattern::RandomAscii,
        Some(marker) => {
            let (hex, at_packet) = match marker.split_once('@') {
                Some((hex, k)) => {
                    let k: usize = k.parse().map_err(|_| bad())?;
                    if k == 0 {
                        return Err(config(format!(
                            "--class {spec:?}: marker packet positions are 1-based"
                        )));
                    }
                    (hex, Some(k))
                }
                None => (marker, None),
            };
            PayloadPattern::Marker {
                bytes: decode_hex(hex)?,
                at_packet,
            }
        }
    };
    Ok(ClassSynth {
        name,
        flows,
        pattern,
        data_packets: (0, 0), // ranges are filled in from the shared flags
        payload_len: (0, 0),
    })
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.data_packets_min == 0 || a.data_packets_min > a.data_packets_max {
        return Err(config(format!(
            "--data-packets range {}..{} is empty or starts at zero",
            a.data_packets_min, a.data_packets_max
        )));
    }
    if a.payload_min > a.payload_max {
        return Err(config(format!(
            "--payload range {}..{} is empty",
            a.payload_min, a.payload_max
        )));
    }
    if a.gap_min_micros > a.gap_max_micros {
        return Err(config(format!(
            "--gap range {}..{} is empty",
            a.gap_min_micros, a.gap_max_micros
        )));
    }
    let mut classes: Vec<ClassSynth> = a
        .class
        .iter()
        .map(|s| parse_class_spec(s))
        .collect::<Result<_>>()?;
    if classes.len() < 2 {
        return Err(config("need at least two --class entries"));
    }
    for c in &mut classes {
        c.data_packets = (a.data_packets_min, a.data_packets_max);
        c.payload_len = (a.payload_min, a.payload_max);
    }
    let spec = SynthSpec {
        classes,
        handshake: !a.no_handshake,
        teardown: !a.no_teardown,
        flow_spacing_micros: a.flow_spacing_micros,
        packet_gap_micros: (a.gap_min_micros, a.gap_max_micros),
    };
    let summary = synth_generate(&spec, a.seed, &a.out, &a.labels)?;
    write_manifest(&a.out, "synth", &a)?;
    emit(&json!({ "command": "synth", "config": &a, "summary": summary }))
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    check_positive("timeout-secs", a.timeout_secs)?;
    if a.header_budget + a.payload_budget == 0 {
        return Err(config("header and payload budgets cannot both be zero"));
    }
    if let Some(d) = &a.default_class {
        if !a.classes.contains(d) {
            return Err(config(format!(
                "--default-class {d} is not among --classes"
            )));
        }
    }
    let filter = a.filter.build()?;
    let vectorizer = VectorizerConfig {
        header_budget: a.header_budget,
        payload_budget: a.payload_budget,
    };
    let flow_cfg = FlowTableConfig {
        timeout_secs: a.timeout_secs,
        max_flows: a.max_flows,
        vectorizer,
    };
    let opts = LabelMatchOptions {
        exact_key_only: a.exact_key_only,
        default_class: a.default_class.clone(),
    };
    let (ds, summary) =
        load_labeled_dataset(&a.capture, &a.labels, &a.classes, &filter, &vectorizer, flow_cfg, &opts)
            .with_context(|| format!("ingesting {}", a.capture.display()))?;
    if ds.is_empty() {
        bail!("no labeled flows were produced; nothing to write");
    }
    save_dataset(&ds, &a.out)?;
    write_manifest(&a.out, "ingest", &a)?;
    emit(&json!({
        "command": "ingest",
        "config": &a,
        "summary": summary,
        "flow_count": ds.len(),
        "counts_per_class": ds.counts_per_class(),
        "dim": ds.dim,
    }))
}

fn cmd_augment(a: AugmentArgs) -> Result<()> {
    check_unit_open("segmentation-rate", a.segmentation_rate)?;
    let ds = load_dataset(&a.data)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;
    let out = augment(&ds, &AugmentConfig { segmentation_rate: a.segmentation_rate })?;
    save_dataset(&out, &a.out)?;
    write_manifest(&a.out, "augment", &a)?;
    emit(&json!({
        "command": "augment",
        "config": &a,
        "flows_before": ds.len(),
        "flows_after": out.len(),
        "counts_per_class": out.counts_per_class(),
    }))
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    check_unit_open("train-fraction", a.train_fraction)?;
    let ds = load_dataset(&a.data)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;
    let (train_ds, test_ds) = stratified_split(
        &ds,
        &SplitConfig {
            train_fraction: a.train_fraction,
            seed: a.seed,
        },
    )?;
    save_dataset(&train_ds, &a.train_out)?;
    save_dataset(&test_ds, &a.test_out)?;
    write_manifest(&a.train_out, "split", &a)?;
    emit(&json!({
        "command": "split",
        "config": &a,
        "train_counts": train_ds.counts_per_class(),
        "test_counts": test_ds.counts_per_class(),
    }))
}

/// Builds a fresh model for the dataset and trains it with inverse-
/// frequency class weights; returns the model and per-epoch loss history.
fn fit(
    ds: &FlowDataset,
    channels: usize,
    hidden: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<(Model, Vec<f64>)> {
    if ds.is_empty() {
        bail!("dataset has no flows");
    }
    if ds.class_count() < 2 {
        bail!("training needs at least two classes");
    }
    let weights = class_weights(ds)?;
    let cfg = ModelConfig {
        channels,
        hidden,
        ..ModelConfig::new(ds.dim, ds.classes.clone())
    };
    let mut model = Model::new(cfg, seed);
    let samples = ds
        .flows
        .iter()
        .map(|f| {
            Ok(TrainSample {
                input: model.input_matrix(&f.packets)?,
                label: f.label,
                weight: weights[f.label],
            })
        })
        .collect::<Result<Vec<_>, ShapeMismatch>>()?;
    let train_cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        seed,
        ..TrainConfig::default()
    };
    let history = earlyflow::nn::train(&mut model, &samples, &train_cfg);
    Ok((model, history))
}

fn check_fit_flags(
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    channels: usize,
    hidden: usize,
) -> Result<()> {
    check_nonzero("epochs", epochs)?;
    check_nonzero("batch-size", batch_size)?;
    check_positive("learning-rate", learning_rate)?;
    check_nonzero("channels", channels)?;
    check_nonzero("hidden", hidden)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    check_fit_flags(a.epochs, a.batch_size, a.learning_rate, a.channels, a.hidden)?;
    let ds = load_dataset(&a.data)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;
    let (model, history) = fit(
        &ds,
        a.channels,
        a.hidden,
        a.epochs,
        a.batch_size,
        a.learning_rate,
        a.seed,
    )?;
    save_model(&model, &a.model_out)?;
    write_manifest(&a.model_out, "train", &a)?;
    emit(&json!({
        "command": "train",
        "config": &a,
        "parameter_count": model.parameter_count(),
        "classes": model.cfg.classes,
        "loss_history": history,
    }))
}

fn load_pair(model_path: &Path, data_path: &Path) -> Result<(Model, FlowDataset)> {
    let model = load_model(model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    let ds = load_dataset(data_path)
        .with_context(|| format!("loading dataset {}", data_path.display()))?;
    if ds.is_empty() {
        bail!("dataset {} has no flows", data_path.display());
    }
    if model.cfg.classes != ds.classes {
        bail!(
            "model classes {:?} do not match dataset classes {:?}",
            model.cfg.classes,
            ds.classes
        );
    }
    if model.cfg.input_dim != ds.dim {
        bail!(
            "model expects {}-dim packet vectors but the dataset holds {}-dim",
            model.cfg.input_dim,
            ds.dim
        );
    }
    Ok((model, ds))
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    let (model, ds) = load_pair(&a.model, &a.data)?;
    let report = evaluate_dataset(&model, &ds, a.threshold, a.stable)?;
    eprint!("{}", report.render_table());
    let envelope = json!({ "command": "evaluate", "config": &a, "report": report });
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&envelope)?)?;
        write_manifest(out, "evaluate", &a)?;
    }
    emit(&envelope)
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    check_threshold(a.threshold)?;
    if !(a.time_scale.is_finite() && a.time_scale >= 0.0) {
        return Err(config(format!(
            "--time-scale {} must be finite and >= 0",
            a.time_scale
        )));
    }
    check_positive("timeout-secs", a.timeout_secs)?;
    let mode = match a.mode.as_str() {
        "incremental" => PredictionMode::Incremental,
        "reference" => PredictionMode::Reference,
        other => return Err(config(format!("--mode {other} is not incremental|reference"))),
    };
    if a.udp_sink.is_some() && a.udp_source.is_some() {
        return Err(config("--udp-sink and --udp-source are mutually exclusive"));
    }

    if let Some(target) = &a.udp_sink {
        let capture = a
            .capture
            .as_ref()
            .ok_or_else(|| config("--udp-sink needs --capture"))?;
        let sent = udp_send(capture, target, a.time_scale)?;
        return emit(&json!({ "command": "replay", "config": &a, "frames_sent": sent }));
    }

    let model_path = a.model.as_ref().ok_or_else(|| config("--model is required"))?;
    let model = load_model(model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    if model.cfg.input_dim < a.header_budget {
        bail!(
            "--header-budget {} exceeds the model's {}-dim input",
            a.header_budget,
            model.cfg.input_dim
        );
    }
    let cfg = ReplayConfig {
        threshold: a.threshold,
        time_scale: a.time_scale,
        filter: a.filter.build()?,
        flow: FlowTableConfig {
            timeout_secs: a.timeout_secs,
            max_flows: None,
            vectorizer: VectorizerConfig {
                header_budget: a.header_budget,
                payload_budget: model.cfg.input_dim - a.header_budget,
            },
        },
        mode,
    };
    let mut log: Box<dyn Write> = match &a.log {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::sink()),
    };
    let outcome = match &a.udp_source {
        Some(bind) => {
            let socket = UdpSocket::bind(bind).with_context(|| format!("binding {bind}"))?;
            udp_serve(&socket, &model, &cfg, Duration::from_millis(a.idle_ms), &mut log)?
        }
        None => {
            let capture = a
                .capture
                .as_ref()
                .ok_or_else(|| config("--capture is required unless --udp-source is used"))?;
            replay(capture, &model, &cfg, &mut log)
                .with_context(|| format!("replaying {}", capture.display()))?
        }
    };
    log.flush()?;
    if let Some(path) = &a.log {
        write_manifest(path, "replay", &a)?;
    }
    emit(&json!({
        "command": "replay",
        "config": &a,
        "stats": outcome.stats,
        "throughput_ok": throughput_check(&outcome.stats),
    }))
}

fn cmd_experiment(a: ExperimentArgs) -> Result<()> {
    check_nonzero("repetitions", a.repetitions)?;
    check_unit_open("train-fraction", a.train_fraction)?;
    check_unit_open("segmentation-rate", a.segmentation_rate)?;
    check_threshold(a.threshold)?;
    check_fit_flags(a.epochs, a.batch_size, a.learning_rate, a.channels, a.hidden)?;

    let full = load_dataset(&a.data)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;
    let mut runs: Vec<EvalReport> = Vec::new();
    for r in 0..a.repetitions {
        let rep_seed = a.seed.wrapping_add(r as u64);
        let (train_ds, test_ds) = stratified_split(
            &full,
            &SplitConfig {
                train_fraction: a.train_fraction,
                seed: rep_seed,
            },
        )?;
        if test_ds.is_empty() {
            bail!("repetition {r}: test split is empty");
        }
        // Only the training side is augmented; held-out flows stay whole
        // so earliness and MNP are measured against real flow lengths.
        let augmented = augment(
            &train_ds,
            &AugmentConfig {
                segmentation_rate: a.segmentation_rate,
            },
        )?;
        let (model, _) = fit(
            &augmented,
            a.channels,
            a.hidden,
            a.epochs,
            a.batch_size,
            a.learning_rate,
            rep_seed,
        )?;
        let report = evaluate_dataset(&model, &test_ds, a.threshold, a.stable)?;
        eprintln!("repetition {r} (seed {rep_seed}):");
        eprint!("{}", report.render_table());
        if r == 0 {
            if let Some(path) = &a.save_model {
                save_model(&model, path)?;
            }
            if let Some(path) = &a.save_test {
                save_dataset(&test_ds, path)?;
            }
        }
        runs.push(report);
    }

    let bas: Vec<f64> = runs.iter().filter_map(|r| r.ba).collect();
    let ba_mean = (!bas.is_empty()).then(|| bas.iter().sum::<f64>() / bas.len() as f64);
    let ba_stddev = (bas.len() >= 2).then(|| {
        let m = bas.iter().sum::<f64>() / bas.len() as f64;
        (bas.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (bas.len() - 1) as f64).sqrt()
    });
    let envelope = json!({
        "command": "experiment",
        "config": &a,
        "repetitions": a.repetitions,
        "ba_mean": ba_mean,
        "ba_stddev": ba_stddev,
        "runs": runs,
    });
    fs::write(&a.out, serde_json::to_string_pretty(&envelope)?)?;
    write_manifest(&a.out, "experiment", &a)?;
    emit(&envelope)
}
