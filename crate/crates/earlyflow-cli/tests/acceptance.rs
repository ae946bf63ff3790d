//! Acceptance gate: nine end-to-end criteria covering augmentation
//! arithmetic, architecture size, gradient correctness, metric math,
//! the synthetic end-to-end experiment, early-vs-complete consistency,
//! replay throughput, pipeline conservation, and serialization.
//!
//! Each test prints one `ACCEPTANCE <n> <name>: PASS` line (visible with
//! `--nocapture`) and enforces its own runtime budget.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

use earlyflow::capture::{
    read_capture, FilterSpec, PacketSource, ParsedPacket, Protocol, SavefileReader,
    SavefileWriter, Timestamp,
};
use earlyflow::classifier::Decided;
use earlyflow::dataset::{
    load_dataset, save_dataset, segments_of, synth_generate, ClassSynth, DatasetFormatError,
    FlowSample, PayloadPattern, SynthSpec,
};
use earlyflow::evaluate::{
    balanced_accuracy, earliness, evaluate_dataset, mnp, mnp_stable, per_class_metrics,
    prefix_decisions, ConfusionTable,
};
use earlyflow::flowtable::{assemble_flows, FlowTableConfig};
use earlyflow::monitor::{replay, throughput_check, ReplayConfig};
use earlyflow::nn::{load_model, loss, save_model, Matrix, Model, ModelConfig, ModelFormatError};
use earlyflow::preprocess::PacketVector;

fn pass(n: u32, name: &str, detail: &str, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed < budget,
        "criterion {n} took {elapsed:?}, budget {budget:?}"
    );
    println!("ACCEPTANCE {n} {name}: PASS ({detail}; {elapsed:.2?} < {budget:?})");
}

// ---- shared synthetic corpus (criteria 5, 6, 7, 9) -------------------------

/// One 4-class corpus at 100:10:5:1 imbalance plus the artifacts of a
/// fixed-seed experiment over it, built once through the actual binary.
struct Corpus {
    _dir: TempDir,
    capture: PathBuf,
    report: Value,
    model: PathBuf,
    test_split: PathBuf,
    build_time: Duration,
}

fn cli(dir: &Path, args: &[&str]) -> Value {
    let out = Command::new(env!("CARGO_BIN_EXE_earlyflow"))
        .current_dir(dir)
        .env("EARLYFLOW_THREADS", "4")
        .args(args)
        .output()
        .expect("binary spawns");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout envelope")
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let started = Instant::now();
        let dir = tempfile::tempdir().expect("tempdir");
        let d = dir.path();
        // Three attack classes carry distinct constant markers in every
        // data packet; the handshake is skipped so class evidence starts
        // at packet 1. Flow starts are spaced 5 ms apart, which keeps the
        // paced time-scale-1 replay of criterion 7 near ten seconds.
        cli(
            d,
            &[
                "synth",
                "--class",
                "normal:1725",
                "--class",
                "exfil:172:f0e1d2c3b4a5968778695a4b3c2d1e0f",
                "--class",
                "probe:86:cccccccccccccccccccc",
                "--class",
                "beacon:17:9999999999999999999999999999",
                "--no-handshake",
                "--out",
                "cap.pcap",
                "--labels",
                "labels.csv",
                "--seed",
                "1009",
            ],
        );
        let ingest = cli(
            d,
            &[
                "ingest",
                "--capture",
                "cap.pcap",
                "--labels",
                "labels.csv",
                "--out",
                "data.efds",
                "--classes",
                "normal,exfil,probe,beacon",
            ],
        );
        assert_eq!(ingest["flow_count"], 2000);
        assert_eq!(
            ingest["counts_per_class"],
            serde_json::json!([1725, 172, 86, 17]),
            "100:10:5:1 imbalance over 2000 flows"
        );
        let report = cli(
            d,
            &[
                "experiment",
                "--data",
                "data.efds",
                "--out",
                "exp.json",
                "--seed",
                "7",
                "--repetitions",
                "1",
                "--train-fraction",
                "0.7",
                "--segmentation-rate",
                "0.1",
                "--epochs",
                "20",
                "--threshold",
                "0.5",
                "--stable",
                "--save-model",
                "model.efnn",
                "--save-test",
                "test.efds",
            ],
        );
        Corpus {
            capture: d.join("cap.pcap"),
            report,
            model: d.join("model.efnn"),
            test_split: d.join("test.efds"),
            build_time: started.elapsed(),
            _dir: dir,
        }
    })
}

// ---- 1: augmentation fidelity ----------------------------------------------

#[test]
fn acceptance_1_augmentation_fidelity() {
    let started = Instant::now();
    let flow_of = |t: usize| FlowSample {
        packets: vec![
            PacketVector {
                values: vec![0.0; 8],
                header_len_kept: 0,
                payload_len_kept: 0,
            };
            t
        ],
        label: 0,
    };
    let expected: [(usize, &[usize]); 3] =
        [(6, &[2, 4]), (15, &[4, 8, 12]), (70, &[18, 36, 54])];
    let mut total = 0;
    for (t, lens) in expected {
        let segs = segments_of(&flow_of(t), 0.25).expect("valid rate");
        let got: Vec<usize> = segs.iter().map(|s| s.len()).collect();
        assert_eq!(got, lens, "segments of a length-{t} flow at s_r = 0.25");
        assert!(segs.iter().all(|s| s.label == 0));
        total += got.len();
    }
    assert_eq!(total, 8, "Table I lists exactly 8 segments");
    pass(
        1,
        "augmentation fidelity",
        "lengths {2,4} {4,8,12} {18,36,54}",
        started,
        Duration::from_secs(1),
    );
}

// ---- 2: architecture fidelity ----------------------------------------------

#[test]
fn acceptance_2_architecture_fidelity() {
    let started = Instant::now();
    let classes = |n: usize| (0..n).map(|i| format!("c{i}")).collect::<Vec<_>>();
    let at_448 = ModelConfig::new(448, classes(4)).parameter_count();
    let at_450 = ModelConfig::new(450, classes(4)).parameter_count();
    assert_eq!(at_448, 16_804);
    assert_eq!(at_450, 16_868);
    pass(
        2,
        "architecture fidelity",
        "16804 @ d=448, 16868 @ d=450",
        started,
        Duration::from_secs(1),
    );
}

// ---- 3: gradient correctness -----------------------------------------------

#[test]
fn acceptance_3_gradient_correctness() {
    let started = Instant::now();
    let cfg = ModelConfig {
        channels: 6,
        hidden: 10,
        ..ModelConfig::new(8, vec!["a".into(), "b".into(), "c".into()])
    };
    let mut model = Model::new(cfg, 42);
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    let h = 1e-4;
    let mut checked = 0usize;
    for (case, t) in [1usize, 2, 5, 7].into_iter().enumerate() {
        let rows: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..8).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows);
        let label = case % 3;
        let analytic = model.backward(&model.forward(x.clone()).unwrap(), label, 1.0);
        for block in 0..analytic.blocks().len() {
            for j in 0..analytic.blocks()[block].len() {
                let base = model.params.blocks()[block][j];
                model.params.blocks_mut()[block][j] = base + h;
                let up = loss(&model.forward(x.clone()).unwrap(), label, 1.0);
                model.params.blocks_mut()[block][j] = base - h;
                let down = loss(&model.forward(x.clone()).unwrap(), label, 1.0);
                model.params.blocks_mut()[block][j] = base;
                let fd = (up - down) / (2.0 * h);
                let a = analytic.blocks()[block][j];
                // Below the magnitude floor the relative quotient only
                // amplifies FD truncation noise; hold tiny coordinates to
                // an absolute tolerance instead.
                let denom = a.abs().max(fd.abs());
                if denom >= 1e-3 {
                    let rel = (a - fd).abs() / denom;
                    assert!(
                        rel < 1e-4,
                        "T={t} block {block} coord {j}: rel err {rel:.3e} ({a:.6e} vs {fd:.6e})"
                    );
                } else {
                    assert!(
                        (a - fd).abs() < 1e-7,
                        "T={t} block {block} coord {j}: tiny-coordinate gap"
                    );
                }
                checked += 1;
            }
        }
    }
    pass(
        3,
        "gradient correctness",
        &format!("{checked} coordinates over T in {{1,2,5,7}}"),
        started,
        Duration::from_secs(30),
    );
}

// ---- 4: metric arithmetic vs published tables -------------------------------

#[test]
fn acceptance_4_metric_arithmetic() {
    let started = Instant::now();
    // Published per-class rows (recall, fpr, bm) at 1000 flows per class.
    let rows: [(f64, f64, f64); 4] = [
        (0.944, 0.054, 0.891),
        (0.828, 0.051, 0.778),
        (0.911, 0.008, 0.904),
        (0.528, 0.003, 0.525),
    ];
    let mut ct = ConfusionTable::new((0..4).map(|i| format!("c{i}")).collect());
    for (c, (recall, _, _)) in rows.iter().enumerate() {
        let tp = (recall * 1000.0).round() as u64;
        for _ in 0..tp {
            ct.record(c, Decided::Class(c));
        }
    }
    // Distribute each class's errors so every column hits fpr * 3000
    // false positives exactly; the remainder lands in Unknown.
    let spill: [(usize, Option<usize>, u64); 8] = [
        (0, Some(1), 56),
        (1, Some(0), 162),
        (1, Some(2), 10),
        (2, Some(3), 9),
        (2, Some(1), 80),
        (3, Some(1), 17),
        (3, Some(2), 14),
        (3, None, 441),
    ];
    for (true_class, pred, count) in spill {
        let verdict = pred.map_or(Decided::Unknown, Decided::Class);
        for _ in 0..count {
            ct.record(true_class, verdict);
        }
    }
    for (c, &(recall, fpr, bm_published)) in rows.iter().enumerate() {
        assert_eq!(ct.row_sum(c), 1000);
        let m = per_class_metrics(&ct, c);
        assert_eq!(m.recall.unwrap(), recall, "class {c} recall is exact");
        assert_eq!(m.fpr.unwrap(), fpr, "class {c} fpr is exact");
        let bm = m.bm.unwrap();
        assert!(
            (bm - bm_published).abs() <= 0.002,
            "class {c}: bm {bm} vs published {bm_published} (rounding band)"
        );
    }
    let ba = balanced_accuracy(&ct).unwrap();
    assert!(
        (ba - 0.803).abs() <= 0.0005,
        "ba {ba} should equal 0.803 within 0.0005"
    );

    for t_len in 2..=100 {
        assert_eq!(earliness(1, t_len).unwrap(), 1.0);
        assert_eq!(earliness(t_len, t_len).unwrap(), 0.0);
    }
    pass(
        4,
        "metric arithmetic",
        &format!("ba {ba:.5}, bm within 0.002, earliness endpoints"),
        started,
        Duration::from_secs(1),
    );
}

// ---- 5: synthetic end-to-end ------------------------------------------------

#[test]
fn acceptance_5_synthetic_end_to_end() {
    let c = corpus();
    let started = Instant::now();
    let run = &c.report["runs"][0];
    let ba = run["ba"].as_f64().expect("held-out ba");
    assert!(ba >= 0.95, "held-out ba {ba} < 0.95");
    let mut mnp_means = Vec::new();
    for class in run["classes"].as_array().unwrap() {
        let name = class["class"].as_str().unwrap();
        let mean = class["mnp_mean"]
            .as_f64()
            .unwrap_or_else(|| panic!("class {name}: mnp undefined on every flow"));
        assert!(mean <= 3.0, "class {name}: mean mnp {mean} > 3");
        mnp_means.push(format!("{name} {mean:.2}"));
    }
    let elapsed = c.build_time + started.elapsed();
    assert!(
        elapsed < Duration::from_secs(300),
        "generate + experiment took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 5 synthetic end-to-end: PASS (ba {ba:.3}; mean mnp {}; {elapsed:.2?} < 300s)",
        mnp_means.join(", ")
    );
}

// ---- 6: early-vs-complete consistency ----------------------------------------

#[test]
fn acceptance_6_early_vs_complete_consistency() {
    let c = corpus();
    let started = Instant::now();
    let model = load_model(&c.model).expect("saved model");
    let ds = load_dataset(&c.test_split).expect("saved test split");
    let mut defined = 0usize;
    for flow in &ds.flows {
        let verdicts = prefix_decisions(&model, &flow.packets, 0.5).unwrap();
        let full_length = *verdicts.last().expect("non-empty flow");
        let first = mnp(&model, flow, 0.5).unwrap();
        let stable = mnp_stable(&model, flow, 0.5).unwrap();
        if first.is_some() || stable.is_some() {
            defined += 1;
            assert_eq!(
                full_length,
                Decided::Class(flow.label),
                "flow with defined MNP must stay correct at full length"
            );
        }
        if let (Some(f), Some(s)) = (first, stable) {
            assert!(f <= s, "first-correct cannot come after the stable point");
        }
    }
    assert!(
        defined * 100 >= ds.flows.len() * 95,
        "MNP defined on only {defined}/{} flows",
        ds.flows.len()
    );

    let mut previous = 0u64;
    let mut unknowns = Vec::new();
    for threshold in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let report = evaluate_dataset(&model, &ds, threshold, false).unwrap();
        assert!(
            report.unknown_count >= previous,
            "unknowns fell from {previous} to {} at threshold {threshold}",
            report.unknown_count
        );
        previous = report.unknown_count;
        unknowns.push(report.unknown_count);
    }
    pass(
        6,
        "early-vs-complete consistency",
        &format!("{defined} defined MNPs; unknowns {unknowns:?}"),
        started,
        Duration::from_secs(120),
    );
}

// ---- 7: throughput property ---------------------------------------------------

#[test]
fn acceptance_7_throughput_property() {
    let c = corpus();
    let started = Instant::now();
    let model = load_model(&c.model).expect("saved model");

    let cfg = ReplayConfig {
        threshold: 0.5,
        time_scale: 0.0,
        ..ReplayConfig::default()
    };
    let fast = replay(&c.capture, &model, &cfg, &mut std::io::sink()).unwrap();
    assert!(
        fast.flows.iter().all(|f| f.packets.len() <= 32),
        "every prefix stays within 32 packets"
    );
    let latency = fast
        .stats
        .prediction_latency
        .as_ref()
        .expect("latencies were measured");
    assert!(
        latency.mean_ms < 1.0,
        "mean prediction latency {} ms >= 1 ms",
        latency.mean_ms
    );

    let paced = ReplayConfig {
        threshold: 0.5,
        time_scale: 1.0,
        ..ReplayConfig::default()
    };
    let timed = replay(&c.capture, &model, &paced, &mut std::io::sink()).unwrap();
    assert!(
        throughput_check(&timed.stats),
        "throughput check failed at time scale 1"
    );
    pass(
        7,
        "throughput property",
        &format!(
            "latency mean {:.4} ms over {} packets; paced session {:.1}s keeps up",
            latency.mean_ms, fast.stats.packets_replayed, timed.stats.session_duration_secs
        ),
        started,
        Duration::from_secs(180),
    );
}

// ---- 8: pipeline conservation --------------------------------------------------

#[test]
fn acceptance_8_pipeline_conservation() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut totals = (0usize, 0usize); // (captures, packets)
    for trial in 0..8 {
        // Random small corpus: class shapes, marker placement, handshake
        // and teardown presence, pacing all vary per trial.
        let class_count = rng.gen_range(2..=4);
        let classes = (0..class_count)
            .map(|i| {
                let pattern = if rng.gen_bool(0.5) {
                    PayloadPattern::RandomAscii
                } else {
                    let len = rng.gen_range(4..=12);
                    let bytes = (0..len).map(|_| rng.gen()).collect();
                    let at_packet = rng.gen_bool(0.5).then(|| rng.gen_range(1..=2));
                    PayloadPattern::Marker { bytes, at_packet }
                };
                ClassSynth {
                    name: format!("c{i}"),
                    flows: rng.gen_range(4..=20),
                    pattern,
                    data_packets: (rng.gen_range(1..=3), rng.gen_range(3..=8)),
                    payload_len: (rng.gen_range(0..=8), rng.gen_range(8..=40)),
                }
            })
            .collect();
        let spec = SynthSpec {
            classes,
            handshake: rng.gen_bool(0.7),
            teardown: rng.gen_bool(0.7),
            flow_spacing_micros: rng.gen_range(500..5_000),
            packet_gap_micros: (rng.gen_range(50..200), rng.gen_range(200..1_000)),
        };
        let clean = dir.path().join(format!("clean{trial}.pcap"));
        let labels = dir.path().join(format!("labels{trial}.csv"));
        synth_generate(&spec, rng.gen(), &clean, &labels).unwrap();

        // Interleave junk frames the decoder must reject or ignore:
        // random bytes of random length, stamped with plausible times.
        let mixed = dir.path().join(format!("mixed{trial}.pcap"));
        {
            let mut reader = SavefileReader::open(&clean).unwrap();
            let mut writer = SavefileWriter::create(&mixed).unwrap();
            while let Some(record) = reader.next_record() {
                let record = record.unwrap();
                let micros = record.timestamp.as_secs_f64().max(0.0) as u64 * 1_000_000;
                writer.write_frame(record.timestamp, &record.data).unwrap();
                if rng.gen_bool(0.4) {
                    let len = rng.gen_range(10..120);
                    let junk: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                    writer
                        .write_frame(Timestamp::from_micros(micros + 1), &junk)
                        .unwrap();
                }
            }
            writer.finish().unwrap();
        }

        let filter = FilterSpec {
            ports: Vec::new(),
            protocols: vec![Protocol::Tcp],
        };
        let mut stream = read_capture(&mixed, filter).unwrap();
        let mut packets: Vec<ParsedPacket> = Vec::new();
        while let Some(pkt) = stream.next_packet() {
            packets.push(pkt.unwrap());
        }

        let fingerprint = |flows: &[earlyflow::flowtable::Flow]| -> Vec<(String, usize, String)> {
            flows
                .iter()
                .map(|f| (format!("{}", f.key), f.packets.len(), format!("{:?}", f.state)))
                .collect()
        };
        let first = assemble_flows(&packets, FlowTableConfig::default());
        let second = assemble_flows(&packets, FlowTableConfig::default());
        let total: usize = first.iter().map(|f| f.packets.len()).sum();
        assert_eq!(
            total,
            packets.len(),
            "trial {trial}: flow lengths must add up to the flowable packet count"
        );
        assert_eq!(
            fingerprint(&first),
            fingerprint(&second),
            "trial {trial}: assembly must be deterministic"
        );
        totals.0 += 1;
        totals.1 += packets.len();
    }
    pass(
        8,
        "pipeline conservation",
        &format!("{} fuzzed captures, {} flowable packets", totals.0, totals.1),
        started,
        Duration::from_secs(60),
    );
}

// ---- 9: serialization round-trips ----------------------------------------------

#[test]
fn acceptance_9_serialization_round_trips() {
    let c = corpus();
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let model = load_model(&c.model).unwrap();
    let model_copy = dir.path().join("model.efnn");
    save_model(&model, &model_copy).unwrap();
    assert_eq!(
        std::fs::read(&c.model).unwrap(),
        std::fs::read(&model_copy).unwrap(),
        "model reloads and re-saves bit-exact"
    );
    let reloaded = load_model(&model_copy).unwrap();
    for (a, b) in model.params.blocks().iter().zip(reloaded.params.blocks()) {
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let ds = load_dataset(&c.test_split).unwrap();
    let ds_copy = dir.path().join("test.efds");
    save_dataset(&ds, &ds_copy).unwrap();
    assert_eq!(
        std::fs::read(&c.test_split).unwrap(),
        std::fs::read(&ds_copy).unwrap(),
        "dataset reloads and re-saves bit-exact"
    );
    assert_eq!(load_dataset(&ds_copy).unwrap(), ds);

    let mut bad_model = std::fs::read(&c.model).unwrap();
    bad_model[0] ^= 0xff;
    let bad_model_path = dir.path().join("bad.efnn");
    std::fs::write(&bad_model_path, &bad_model).unwrap();
    assert!(matches!(
        load_model(&bad_model_path),
        Err(ModelFormatError::BadMagic)
    ));

    let mut bad_ds = std::fs::read(&c.test_split).unwrap();
    bad_ds[0] ^= 0xff;
    let bad_ds_path = dir.path().join("bad.efds");
    std::fs::write(&bad_ds_path, &bad_ds).unwrap();
    std::fs::copy(
        c.test_split.with_extension("efds.json"),
        bad_ds_path.with_extension("efds.json"),
    )
    .unwrap();
    assert!(matches!(
        load_dataset(&bad_ds_path),
        Err(DatasetFormatError::BadMagic)
    ));

    pass(
        9,
        "serialization round-trips",
        "model + dataset bit-exact, corrupted magics rejected",
        started,
        Duration::from_secs(10),
    );
}
