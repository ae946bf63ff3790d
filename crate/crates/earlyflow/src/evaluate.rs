//! Classification quality and earliness metrics.
//!
//! The confusion table keeps one extra column for Unknown verdicts: an
//! undecided flow counts against its true class's recall but is never a
//! false positive for anyone. All one-vs-rest metrics with an empty
//! denominator are reported as absent rather than 0, so an absent value
//! can never inflate an aggregate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{decide, Decided, PredictError};
use crate::dataset::{EmptyClass, FlowDataset, FlowSample};
use crate::nn::Model;
use crate::preprocess::PacketVector;

/// Earliness is (T − t)/(T − 1): undefined for single-packet flows and
/// for prefix lengths outside 1..=T.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("earliness undefined for t={t}, flow length {flow_len}: needs 1 <= t <= T and T >= 2")]
pub struct DomainError {
    pub t: usize,
    pub flow_len: usize,
}

pub fn earliness(t: usize, flow_len: usize) -> Result<f64, DomainError> {
    if t < 1 || flow_len < 2 || t > flow_len {
        return Err(DomainError { t, flow_len });
    }
    Ok((flow_len - t) as f64 / (flow_len - 1) as f64)
}

/// Counts of (true class, predicted verdict); the final column is Unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    classes: Vec<String>,
    /// `counts[true_class][pred]`, where `pred == classes.len()` is Unknown.
    counts: Vec<Vec<u64>>,
}

impl ConfusionTable {
    pub fn new(classes: Vec<String>) -> Self {
        assert!(!classes.is_empty(), "confusion table needs at least one class");
        let width = classes.len() + 1;
        let counts = vec![vec![0; width]; classes.len()];
        Self { classes, counts }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn record(&mut self, true_class: usize, verdict: Decided) {
        let col = match verdict {
            Decided::Class(c) => {
                assert!(c < self.classes.len(), "predicted class {c} out of range");
                c
            }
            Decided::Unknown => self.classes.len(),
        };
        self.counts[true_class][col] += 1;
    }

    /// `pred == None` reads the Unknown column.
    pub fn count(&self, true_class: usize, pred: Option<usize>) -> u64 {
        self.counts[true_class][pred.unwrap_or(self.classes.len())]
    }

    /// Evaluation flows whose true class is `c`.
    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn total(&self) -> u64 {
        (0..self.classes.len()).map(|c| self.row_sum(c)).sum()
    }

    pub fn unknown_count(&self) -> u64 {
        self.counts.iter().map(|row| row[self.classes.len()]).sum()
    }
}

/// One-vs-rest metrics for a single class; absent where the denominator
/// is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    /// Bookmaker informedness, recall − FPR.
    pub bm: Option<f64>,
}

pub fn per_class_metrics(ct: &ConfusionTable, c: usize) -> ClassMetrics {
    let tp = ct.count(c, Some(c));
    let fp: u64 = (0..ct.class_count())
        .filter(|&r| r != c)
        .map(|r| ct.count(r, Some(c)))
        .sum();
    let row = ct.row_sum(c);
    let fn_ = row - tp;
    let tn = ct.total() - tp - fp - fn_;

    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let recall = ratio(tp, tp + fn_);
    let fpr = ratio(fp, fp + tn);
    ClassMetrics {
        precision: ratio(tp, tp + fp),
        recall,
        fpr,
        bm: recall.zip(fpr).map(|(r, f)| r - f),
    }
}

/// Mean per-class recall; every class must have at least one flow.
pub fn balanced_accuracy(ct: &ConfusionTable) -> Result<f64, EmptyClass> {
    let mut sum = 0.0;
    for c in 0..ct.class_count() {
        let row = ct.row_sum(c);
        if row == 0 {
            return Err(EmptyClass(ct.classes[c].clone()));
        }
        sum += ct.count(c, Some(c)) as f64 / row as f64;
    }
    Ok(sum / ct.class_count() as f64)
}

/// Thresholded verdict after each prefix 1..=T, computed incrementally
/// (one embedding per packet, dense head per prefix).
pub fn prefix_decisions(
    model: &Model,
    packets: &[PacketVector],
    threshold: f64,
) -> Result<Vec<Decided>, PredictError> {
    let ch = model.cfg.channels;
    let mut pooled_sum = vec![0.0; ch];
    let mut pending: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(packets.len());
    for (i, packet) in packets.iter().enumerate() {
        let e = model.embed_packet(packet)?;
        match pending.take() {
            Some(prev) => {
                for k in 0..ch {
                    pooled_sum[k] += (prev[k] + e[k]) / 2.0;
                }
            }
            None => pending = Some(e),
        }
        let rows = (i + 2) / 2;
        let mut g = vec![0.0; ch];
        for k in 0..ch {
            let tail = pending.as_ref().map_or(0.0, |p| p[k]);
            g[k] = (pooled_sum[k] + tail) / rows as f64;
        }
        let probs = model.head_probabilities(&g);
        out.push(decide(&probs, threshold)?);
    }
    Ok(out)
}

fn first_correct(verdicts: &[Decided], label: usize) -> Option<usize> {
    verdicts
        .iter()
        .position(|&v| v == Decided::Class(label))
        .map(|i| i + 1)
}

/// Earliest prefix from which every later prefix stays correct; absent
/// when the complete flow is not decided correctly.
fn stable_from(verdicts: &[Decided], label: usize) -> Option<usize> {
    let correct_suffix = verdicts
        .iter()
        .rev()
        .take_while(|&&v| v == Decided::Class(label))
        .count();
    (correct_suffix > 0).then(|| verdicts.len() - correct_suffix + 1)
}

/// Minimum number of packets after which the thresholded decision equals
/// the true label; absent when no prefix decides correctly.
pub fn mnp(model: &Model, flow: &FlowSample, threshold: f64) -> Result<Option<usize>, PredictError> {
    let verdicts = prefix_decisions(model, &flow.packets, threshold)?;
    Ok(first_correct(&verdicts, flow.label))
}

/// Stability variant of [`mnp`]: earliest prefix from which the decision
/// never flips away from the truth again.
pub fn mnp_stable(
    model: &Model,
    flow: &FlowSample,
    threshold: f64,
) -> Result<Option<usize>, PredictError> {
    let verdicts = prefix_decisions(model, &flow.packets, threshold)?;
    Ok(stable_from(&verdicts, flow.label))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    /// Evaluation flows with this true class.
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub bm: Option<f64>,
    /// Mean (T − t)/(T − 1) over correctly classifiable flows with T ≥ 2.
    pub earliness_mean: Option<f64>,
    /// Correctly classifiable single-packet flows, excluded from the mean.
    pub earliness_excluded: u64,
    pub mnp_mean: Option<f64>,
    /// Present only when stability mode was requested.
    pub mnp_stable_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub stable: bool,
    pub flow_count: u64,
    pub unknown_count: u64,
    /// Absent when some class has no evaluation flows.
    pub ba: Option<f64>,
    pub classes: Vec<ClassReport>,
    pub confusion: ConfusionTable,
}

#[derive(Default, Clone, Copy)]
struct MeanAcc {
    sum: f64,
    n: u64,
}

impl MeanAcc {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Full-flow confusion metrics plus per-class earliness/MNP aggregates.
pub fn evaluate_dataset(
    model: &Model,
    ds: &FlowDataset,
    threshold: f64,
    stable: bool,
) -> Result<EvalReport, PredictError> {
    assert!(!ds.is_empty(), "cannot evaluate an empty dataset");
    assert_eq!(
        model.cfg.classes, ds.classes,
        "model and dataset class lists disagree"
    );

    let k = ds.class_count();
    let mut confusion = ConfusionTable::new(ds.classes.clone());
    let mut earliness_acc = vec![MeanAcc::default(); k];
    let mut excluded = vec![0u64; k];
    let mut mnp_acc = vec![MeanAcc::default(); k];
    let mut stable_acc = vec![MeanAcc::default(); k];

    for flow in &ds.flows {
        let verdicts = prefix_decisions(model, &flow.packets, threshold)?;
        confusion.record(flow.label, *verdicts.last().expect("validated flows are non-empty"));
        if let Some(t) = first_correct(&verdicts, flow.label) {
            mnp_acc[flow.label].push(t as f64);
            match earliness(t, flow.len()) {
                Ok(e) => earliness_acc[flow.label].push(e),
                Err(_) => excluded[flow.label] += 1,
            }
        }
        if stable {
            if let Some(t) = stable_from(&verdicts, flow.label) {
                stable_acc[flow.label].push(t as f64);
            }
        }
    }

    let classes = (0..k)
        .map(|c| {
            let m = per_class_metrics(&confusion, c);
            ClassReport {
                class: ds.classes[c].clone(),
                support: confusion.row_sum(c),
                precision: m.precision,
                recall: m.recall,
                fpr: m.fpr,
                bm: m.bm,
                earliness_mean: earliness_acc[c].mean(),
                earliness_excluded: excluded[c],
                mnp_mean: mnp_acc[c].mean(),
                mnp_stable_mean: if stable { stable_acc[c].mean() } else { None },
            }
        })
        .collect();

    Ok(EvalReport {
        threshold,
        stable,
        flow_count: confusion.total(),
        unknown_count: confusion.unknown_count(),
        ba: balanced_accuracy(&confusion).ok(),
        classes,
        confusion,
    })
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.3}"),
        None => "-".to_string(),
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned-column text table, one row per class.
    pub fn render_table(&self) -> String {
        let mut header = vec![
            "class", "support", "precision", "recall", "fpr", "bm", "earliness", "mnp",
        ];
        if self.stable {
            header.push("mnp_stable");
        }
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for c in &self.classes {
            let mut row = vec![
                c.class.clone(),
                c.support.to_string(),
                cell(c.precision),
                cell(c.recall),
                cell(c.fpr),
                cell(c.bm),
                cell(c.earliness_mean),
                cell(c.mnp_mean),
            ];
            if self.stable {
                row.push(cell(c.mnp_stable_mean));
            }
            rows.push(row);
        }

        let cols = rows[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            for (i, field) in row.iter().enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                let _ = write!(out, "{field:<width$}", width = widths[i]);
            }
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "ba {}  flows {}  unknown {}  threshold {}",
            cell(self.ba),
            self.flow_count,
            self.unknown_count,
            self.threshold
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{loss_from_probabilities, Model, ModelConfig, TrainConfig, TrainSample};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("c{c}")).collect()
    }

    fn pv(dim: usize, bytes: &[u8]) -> PacketVector {
        let mut values = vec![0.0; dim];
        for (i, &b) in bytes.iter().enumerate().take(dim) {
            values[i] = b as f32 / 255.0;
        }
        PacketVector {
            values,
            header_len_kept: 0,
            payload_len_kept: 0,
        }
    }

    /// Table IV of the source measurements: recall, FPR, published BM.
    const TABLE_ROWS: [(f64, f64, f64); 4] = [
        (0.944, 0.054, 0.891),
        (0.828, 0.051, 0.778),
        (0.911, 0.008, 0.904),
        (0.528, 0.003, 0.525),
    ];

    #[test]
    fn published_bm_values_are_recall_minus_fpr() {
        for (recall, fpr, bm) in TABLE_ROWS {
            assert!(
                ((recall - fpr) - bm).abs() <= 0.002 + 1e-12,
                "recall {recall} fpr {fpr} published bm {bm}"
            );
        }
    }

    #[test]
    fn balanced_accuracy_reproduces_published_mean() {
        // 1000 flows per class; the true-class column carries the recall
        // numerator and the rest of each row goes to Unknown, which cannot
        // disturb any other class's recall.
        let mut ct = ConfusionTable::new(names(4));
        for (c, (recall, _, _)) in TABLE_ROWS.into_iter().enumerate() {
            let correct = (recall * 1000.0).round() as u64;
            for _ in 0..correct {
                ct.record(c, Decided::Class(c));
            }
            for _ in correct..1000 {
                ct.record(c, Decided::Unknown);
            }
        }
        let ba = balanced_accuracy(&ct).unwrap();
        assert!((ba - 0.80275).abs() < 1e-12);
        assert!((ba - 0.803).abs() < 5e-4, "rounds to the published 0.803");
        for (c, (recall, _, _)) in TABLE_ROWS.into_iter().enumerate() {
            assert_eq!(per_class_metrics(&ct, c).recall, Some(recall));
        }
    }

    #[test]
    fn perfect_classifier_has_unit_metrics() {
        let mut ct = ConfusionTable::new(names(2));
        for c in 0..2 {
            for _ in 0..5 {
                ct.record(c, Decided::Class(c));
            }
        }
        for c in 0..2 {
            let m = per_class_metrics(&ct, c);
            assert_eq!(m.precision, Some(1.0));
            assert_eq!(m.recall, Some(1.0));
            assert_eq!(m.fpr, Some(0.0));
            assert_eq!(m.bm, Some(1.0));
        }
        assert_eq!(balanced_accuracy(&ct).unwrap(), 1.0);
    }

    #[test]
    fn all_unknown_zeroes_recall_without_faking_precision() {
        let mut ct = ConfusionTable::new(names(3));
        for c in 0..3 {
            for _ in 0..4 {
                ct.record(c, Decided::Unknown);
            }
        }
        for c in 0..3 {
            let m = per_class_metrics(&ct, c);
            assert_eq!(m.recall, Some(0.0));
            assert_eq!(m.fpr, Some(0.0));
            assert_eq!(m.precision, None, "no positive predictions were made");
            assert_eq!(m.bm, Some(0.0));
        }
        assert_eq!(ct.unknown_count(), 12);
        assert_eq!(balanced_accuracy(&ct).unwrap(), 0.0);
    }

    #[test]
    fn empty_class_blocks_balanced_accuracy() {
        let mut ct = ConfusionTable::new(names(2));
        ct.record(0, Decided::Class(0));
        match balanced_accuracy(&ct) {
            Err(EmptyClass(name)) => assert_eq!(name, "c1"),
            other => panic!("expected EmptyClass, got {other:?}"),
        }
    }

    #[test]
    fn random_predictor_scores_near_one_over_c() {
        let mut rng = StdRng::seed_from_u64(61);
        let k = 4;
        let mut ct = ConfusionTable::new(names(k));
        for _ in 0..10_000 {
            let truth = rng.gen_range(0..k);
            let pred = rng.gen_range(0..k);
            ct.record(truth, Decided::Class(pred));
        }
        let ba = balanced_accuracy(&ct).unwrap();
        assert!((ba - 0.25).abs() < 0.05, "ba {ba}");
    }

    #[test]
    fn earliness_formula_and_domain() {
        assert_eq!(earliness(1, 2).unwrap(), 1.0);
        assert_eq!(earliness(1, 9).unwrap(), 1.0);
        assert_eq!(earliness(5, 5).unwrap(), 0.0);
        assert_eq!(earliness(3, 5).unwrap(), 0.5);
        for (t, flow_len) in [(1, 1), (2, 1), (0, 5), (6, 5), (1, 0)] {
            assert_eq!(earliness(t, flow_len), Err(DomainError { t, flow_len }));
        }
        // Strictly decreasing in t for fixed T.
        for flow_len in 2..10 {
            let vals: Vec<f64> = (1..=flow_len).map(|t| earliness(t, flow_len).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[0] > w[1]));
            assert!(vals.iter().all(|&e| (0.0..=1.0).contains(&e)));
        }
    }

    /// Straight-line reimplementation: reference forward per prefix and an
    /// independent argmax/threshold rule.
    fn brute_force_mnp(model: &Model, flow: &FlowSample, threshold: f64) -> Option<usize> {
        for t in 1..=flow.len() {
            let probs = model.probabilities(&flow.packets[..t]).unwrap();
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            let unique = probs.iter().filter(|&&p| p == probs[best]).count() == 1;
            if unique && probs[best] > threshold && best == flow.label {
                return Some(t);
            }
        }
        None
    }

    #[test]
    fn mnp_matches_brute_force_reference() {
        let mut rng = StdRng::seed_from_u64(62);
        let cfg = ModelConfig {
            channels: 6,
            hidden: 5,
            ..ModelConfig::new(10, names(3))
        };
        for trial in 0..20 {
            let model = Model::new(cfg.clone(), 100 + trial);
            let t_len = rng.gen_range(1..8);
            let flow = FlowSample {
                packets: (0..t_len)
                    .map(|_| {
                        let b: Vec<u8> = (0..10).map(|_| rng.gen()).collect();
                        pv(10, &b)
                    })
                    .collect(),
                label: rng.gen_range(0..3),
            };
            for threshold in [0.0, 0.3, 0.34, 0.5, 0.9] {
                assert_eq!(
                    mnp(&model, &flow, threshold).unwrap(),
                    brute_force_mnp(&model, &flow, threshold),
                    "trial {trial} threshold {threshold}"
                );
            }
        }
    }

    #[test]
    fn stable_mnp_scans_for_a_correct_suffix() {
        use Decided::{Class, Unknown};
        let label = 1;
        let cases: [(&[Decided], Option<usize>, Option<usize>); 5] = [
            (&[Class(1), Class(1), Class(1)], Some(1), Some(1)),
            (&[Class(0), Class(1), Unknown, Class(1)], Some(2), Some(4)),
            (&[Class(1), Class(0)], Some(1), None),
            (&[Unknown, Unknown], None, None),
            (&[Unknown, Class(1), Class(1)], Some(2), Some(2)),
        ];
        for (verdicts, want_first, want_stable) in cases {
            assert_eq!(first_correct(verdicts, label), want_first);
            assert_eq!(stable_from(verdicts, label), want_stable);
        }
    }

    fn random_dataset(rng: &mut StdRng, k: usize, dim: usize, n: usize) -> FlowDataset {
        let mut ds = FlowDataset::new(names(k), dim);
        for _ in 0..n {
            let t = rng.gen_range(1..6);
            let packets = (0..t)
                .map(|_| {
                    let b: Vec<u8> = (0..dim).map(|_| rng.gen()).collect();
                    pv(dim, &b)
                })
                .collect();
            ds.flows.push(FlowSample {
                packets,
                label: rng.gen_range(0..k),
            });
        }
        ds
    }

    #[test]
    fn row_sums_are_threshold_invariant_and_unknowns_rise() {
        let mut rng = StdRng::seed_from_u64(63);
        let cfg = ModelConfig {
            channels: 6,
            hidden: 5,
            ..ModelConfig::new(8, names(3))
        };
        let model = Model::new(cfg, 7);
        let ds = random_dataset(&mut rng, 3, 8, 60);
        let mut last_unknown_cols = vec![0u64; 3];
        let mut last_total_unknown = 0;
        let mut first_rows: Option<Vec<u64>> = None;
        for threshold in [0.0, 0.3, 0.6, 0.9, 0.99] {
            let report = evaluate_dataset(&model, &ds, threshold, false).unwrap();
            let rows: Vec<u64> = (0..3).map(|c| report.confusion.row_sum(c)).collect();
            match &first_rows {
                None => first_rows = Some(rows),
                Some(expect) => assert_eq!(&rows, expect),
            }
            let unknown_cols: Vec<u64> = (0..3).map(|c| report.confusion.count(c, None)).collect();
            for (now, before) in unknown_cols.iter().zip(&last_unknown_cols) {
                assert!(now >= before, "unknown column must be monotone in threshold");
            }
            assert!(report.unknown_count >= last_total_unknown);
            last_unknown_cols = unknown_cols;
            last_total_unknown = report.unknown_count;
        }
    }

    #[test]
    fn duplicating_a_class_leaves_ba_unchanged() {
        let mut rng = StdRng::seed_from_u64(64);
        let cfg = ModelConfig {
            channels: 6,
            hidden: 5,
            ..ModelConfig::new(8, names(3))
        };
        let model = Model::new(cfg, 8);
        let ds = random_dataset(&mut rng, 3, 8, 45);
        let base = evaluate_dataset(&model, &ds, 0.3, false).unwrap();
        let mut doubled = ds.clone();
        for flow in &ds.flows {
            if flow.label == 0 {
                doubled.flows.push(flow.clone());
            }
        }
        let after = evaluate_dataset(&model, &doubled, 0.3, false).unwrap();
        assert_eq!(base.ba, after.ba);
    }

    #[test]
    fn memorized_fixture_reaches_perfect_report() {
        // Four highly separable one-per-class flows, fit to saturation.
        let k = 4;
        let dim = 12;
        let mut ds = FlowDataset::new(names(k), dim);
        for c in 0..k {
            let packets = (0..3)
                .map(|p| {
                    let mut bytes = vec![8 * (p as u8 + 1); dim];
                    for b in bytes.iter_mut().skip(3 * c).take(3) {
                        *b = 250;
                    }
                    pv(dim, &bytes)
                })
                .collect();
            ds.flows.push(FlowSample { packets, label: c });
        }
        let mut model = Model::new(ModelConfig::new(dim, names(k)), 3);
        let samples: Vec<TrainSample> = ds
            .flows
            .iter()
            .map(|f| TrainSample {
                input: model.input_matrix(&f.packets).unwrap(),
                label: f.label,
                weight: 1.0,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 120,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        crate::nn::train(&mut model, &samples, &cfg);
        for s in &samples {
            let probs = model.probabilities(&ds.flows[s.label].packets).unwrap();
            assert!(loss_from_probabilities(&probs, s.label, 1.0) < 0.2);
        }

        let report = evaluate_dataset(&model, &ds, 0.5, true).unwrap();
        assert_eq!(report.ba, Some(1.0));
        assert_eq!(report.unknown_count, 0);
        for c in &report.classes {
            assert_eq!(c.recall, Some(1.0));
            assert_eq!(c.fpr, Some(0.0));
            assert!(c.earliness_mean.is_some(), "3-packet flows always define earliness");
            assert_eq!(c.earliness_excluded, 0);
            assert!(c.mnp_mean.is_some());
            assert!(c.mnp_stable_mean.is_some());
            assert!(c.mnp_stable_mean >= c.mnp_mean);
        }
    }

    #[test]
    fn extreme_threshold_turns_everything_unknown() {
        let mut rng = StdRng::seed_from_u64(65);
        let cfg = ModelConfig {
            channels: 6,
            hidden: 5,
            ..ModelConfig::new(8, names(3))
        };
        let model = Model::new(cfg, 11);
        let ds = random_dataset(&mut rng, 3, 8, 30);
        let report = evaluate_dataset(&model, &ds, 0.999, false).unwrap();
        assert_eq!(report.unknown_count, report.flow_count);
        assert_eq!(report.ba, Some(0.0));
        for c in &report.classes {
            assert_eq!(c.recall, Some(0.0));
            assert_eq!(c.precision, None);
            assert_eq!(c.mnp_mean, None);
            assert_eq!(c.earliness_mean, None);
        }
    }

    #[test]
    fn single_packet_flows_are_counted_not_averaged() {
        // A model with zero parameters yields uniform probabilities, so
        // threshold 0.0 decides the argmax... which ties. Use a trained-free
        // random model and threshold 0 instead; every T=1 flow that happens
        // to decide correctly must land in earliness_excluded.
        let mut rng = StdRng::seed_from_u64(66);
        let cfg = ModelConfig {
            channels: 6,
            hidden: 5,
            ..ModelConfig::new(8, names(2))
        };
        let model = Model::new(cfg, 12);
        let mut ds = FlowDataset::new(names(2), 8);
        for _ in 0..40 {
            let b: Vec<u8> = (0..8).map(|_| rng.gen()).collect();
            ds.flows.push(FlowSample {
                packets: vec![pv(8, &b)],
                label: rng.gen_range(0..2),
            });
        }
        let report = evaluate_dataset(&model, &ds, 0.0, false).unwrap();
        let correct: u64 = (0..2).map(|c| report.confusion.count(c, Some(c))).sum();
        let excluded: u64 = report.classes.iter().map(|c| c.earliness_excluded).sum();
        assert_eq!(correct, excluded, "every correct single-packet flow is excluded");
        assert!(report.classes.iter().all(|c| c.earliness_mean.is_none()));
        // MNP is still defined for T=1 flows.
        let with_mnp = report.classes.iter().filter(|c| c.mnp_mean.is_some()).count();
        assert!(correct == 0 || with_mnp > 0);
    }

    #[test]
    fn report_serializes_and_renders() {
        let mut rng = StdRng::seed_from_u64(67);
        let cfg = ModelConfig {
            channels: 6,
            hidden: 5,
            ..ModelConfig::new(8, names(3))
        };
        let model = Model::new(cfg, 13);
        let ds = random_dataset(&mut rng, 3, 8, 25);
        let report = evaluate_dataset(&model, &ds, 0.9, true).unwrap();
        let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(back, report);

        let table = report.render_table();
        for class in report.confusion.classes() {
            assert!(table.contains(class));
        }
        assert!(table.contains("mnp_stable"));
        assert!(table.lines().count() >= 5);
        let plain = evaluate_dataset(&model, &ds, 0.9, false).unwrap().render_table();
        assert!(!plain.contains("mnp_stable"));
    }
}
