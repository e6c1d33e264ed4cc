//! Accuracy, overconfidence ratio and expected calibration error over
//! verbalized-confidence predictions, reliability-diagram bins, and
//! multi-arm comparison tables.
//!
//! Binning is equal-width over `[0, 1]`: bin `i` is `[i/B, (i+1)/B)` with the
//! last bin closed at `1.0`. Records without a confidence count toward ACC and
//! ROB (as incorrect-or-correct answers that cannot be overconfident) but are
//! left out of ECE and the bins.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Label, TaskItem};
use crate::parser::{ParseStatus, ParsedPrediction};

/// One scored prediction. Serialized form is the predictions-file row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub gold_label: Label,
    pub predicted_label: Option<Label>,
    /// Probability in `[0, 1]`.
    pub confidence: Option<f64>,
}

impl EvalRecord {
    pub fn correct(&self) -> bool {
        self.predicted_label == Some(self.gold_label)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no records to evaluate")]
    EmptyInput,
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("bin count must be positive")]
    BadBinCount,
    #[error("record {item_id}: confidence {value} outside [0, 1]")]
    BadConfidence { item_id: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    /// `confidence > threshold`
    #[default]
    Strict,
    /// `confidence >= threshold`
    Inclusive,
}

/// How replies that did not parse cleanly become records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnparseablePolicy {
    /// Keep the record as an incorrect answer with no confidence.
    #[default]
    Incorrect,
    /// Remove the record from the evaluation set.
    Drop,
}

/// Turns a parsed reply into an [`EvalRecord`], or `None` when the policy
/// drops it. A reply with a letter but no confidence keeps its letter.
pub fn to_eval_record(
    item: &TaskItem,
    parsed: &ParsedPrediction,
    policy: UnparseablePolicy,
) -> Option<EvalRecord> {
    let (predicted_label, confidence) = match parsed.status {
        ParseStatus::Ok => (parsed.answer_label, parsed.confidence()),
        _ if policy == UnparseablePolicy::Drop => return None,
        ParseStatus::NoConfidence => (parsed.answer_label, None),
        ParseStatus::NoAnswer | ParseStatus::Ambiguous => (None, None),
    };
    Some(EvalRecord {
        item_id: item.id.clone(),
        gold_label: item.gold_label,
        predicted_label,
        confidence,
    })
}

fn check_records(records: &[EvalRecord]) -> Result<(), MetricError> {
    if records.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    for r in records {
        if let Some(c) = r.confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(MetricError::BadConfidence {
                    item_id: r.item_id.clone(),
                    value: c,
                });
            }
        }
    }
    Ok(())
}

/// Fraction of records whose predicted label equals the gold label.
pub fn accuracy(records: &[EvalRecord]) -> Result<f64, MetricError> {
    check_records(records)?;
    let correct = records.iter().filter(|r| r.correct()).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Fraction of all records that are incorrect and stated a confidence above
/// `threshold`.
pub fn rob(
    records: &[EvalRecord],
    threshold: f64,
    comparator: Comparator,
) -> Result<f64, MetricError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricError::BadThreshold(threshold));
    }
    check_records(records)?;
    let over = records
        .iter()
        .filter(|r| !r.correct())
        .filter_map(|r| r.confidence)
        .filter(|&c| match comparator {
            Comparator::Strict => c > threshold,
            Comparator::Inclusive => c >= threshold,
        })
        .count();
    Ok(over as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn bin_bounds(index: usize, n_bins: usize) -> (f64, f64) {
    (
        index as f64 / n_bins as f64,
        (index + 1) as f64 / n_bins as f64,
    )
}

/// Bin index for `confidence`, agreeing exactly with [`bin_bounds`] even where
/// `confidence * n_bins` rounds across an integer.
pub fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let mut i = ((confidence * n_bins as f64).floor().max(0.0) as usize).min(n_bins - 1);
    while i > 0 && confidence < bin_bounds(i, n_bins).0 {
        i -= 1;
    }
    while i + 1 < n_bins && confidence >= bin_bounds(i, n_bins).1 {
        i += 1;
    }
    i
}

pub fn reliability_bins(
    records: &[EvalRecord],
    n_bins: usize,
) -> Result<Vec<BinStats>, MetricError> {
    if n_bins == 0 {
        return Err(MetricError::BadBinCount);
    }
    check_records(records)?;
    let mut sums = vec![(0usize, 0.0f64, 0usize); n_bins];
    let mut any = false;
    for r in records {
        if let Some(c) = r.confidence {
            any = true;
            let slot = &mut sums[bin_index(c, n_bins)];
            slot.0 += 1;
            slot.1 += c;
            slot.2 += usize::from(r.correct());
        }
    }
    if !any {
        return Err(MetricError::EmptyInput);
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, conf_sum, correct))| {
            let (lo, hi) = bin_bounds(i, n_bins);
            let (mean_confidence, accuracy) = if count > 0 {
                (
                    Some(conf_sum / count as f64),
                    Some(correct as f64 / count as f64),
                )
            } else {
                (None, None)
            };
            BinStats {
                lo,
                hi,
                count,
                mean_confidence,
                accuracy,
            }
        })
        .collect())
}

/// ECE from bin statistics: `Σ (count_b / N) · |accuracy_b − mean_confidence_b|`.
pub fn ece_from_bins(bins: &[BinStats]) -> f64 {
    let total: usize = bins.iter().map(|b| b.count).sum();
    if total == 0 {
        return 0.0;
    }
    bins.iter()
        .filter_map(|b| match (b.accuracy, b.mean_confidence) {
            (Some(acc), Some(conf)) => Some(b.count as f64 / total as f64 * (acc - conf).abs()),
            _ => None,
        })
        .sum()
}

pub fn ece(records: &[EvalRecord], n_bins: usize) -> Result<f64, MetricError> {
    reliability_bins(records, n_bins).map(|bins| ece_from_bins(&bins))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Vanilla,
    #[serde(rename = "QA")]
    Qa,
    #[serde(rename = "KT")]
    Kt,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "Vanilla",
            Method::Qa => "QA",
            Method::Kt => "KT",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Method::Vanilla),
            "qa" => Ok(Method::Qa),
            "kt" => Ok(Method::Kt),
            other => Err(format!(
                "unknown method {other:?} (expected Vanilla, QA or KT)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arm {
    pub model: String,
    pub method: Method,
    pub dataset: String,
}

impl Arm {
    pub fn new(model: impl Into<String>, method: Method, dataset: impl Into<String>) -> Arm {
        Arm {
            model: model.into(),
            method,
            dataset: dataset.into(),
        }
    }

    /// File-system friendly name, e.g. `vicuna-7b__sst2__KT`.
    pub fn slug(&self) -> String {
        let clean = |s: &str| {
            s.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') {
                        c
                    } else {
                        '_'
                    }
                })
                .collect::<String>()
        };
        format!(
            "{}__{}__{}",
            clean(&self.model),
            clean(&self.dataset),
            self.method
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricOptions {
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    #[serde(default = "default_threshold")]
    pub rob_threshold: f64,
    #[serde(default)]
    pub rob_comparator: Comparator,
    #[serde(default)]
    pub unparseable: UnparseablePolicy,
}

fn default_bins() -> usize {
    10
}

fn default_threshold() -> f64 {
    0.8
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            n_bins: default_bins(),
            rob_threshold: default_threshold(),
            rob_comparator: Comparator::Strict,
            unparseable: UnparseablePolicy::Incorrect,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub arm: Arm,
    pub n: usize,
    /// Records that carried a confidence (the ECE population).
    pub n_with_confidence: usize,
    pub acc: f64,
    pub rob: f64,
    /// `None` when no record carried a confidence.
    pub ece: Option<f64>,
    pub rob_threshold: f64,
    pub rob_comparator: Comparator,
    pub bins: Vec<BinStats>,
}

pub fn build_report(
    records: &[EvalRecord],
    arm: Arm,
    opts: &MetricOptions,
) -> Result<EvalReport, MetricError> {
    let acc = accuracy(records)?;
    let rob = rob(records, opts.rob_threshold, opts.rob_comparator)?;
    let n_with_confidence = records.iter().filter(|r| r.confidence.is_some()).count();
    let bins = if n_with_confidence > 0 {
        reliability_bins(records, opts.n_bins)?
    } else if opts.n_bins == 0 {
        return Err(MetricError::BadBinCount);
    } else {
        Vec::new()
    };
    let ece = (n_with_confidence > 0).then(|| ece_from_bins(&bins));
    Ok(EvalReport {
        arm,
        n: records.len(),
        n_with_confidence,
        acc,
        rob,
        ece,
        rob_threshold: opts.rob_threshold,
        rob_comparator: opts.rob_comparator,
        bins,
    })
}

/// Reliability CSV: `lo,hi,count,mean_confidence,accuracy`; empty bins leave
/// the last two fields blank. Floats use shortest round-trip formatting.
pub fn bins_to_csv(bins: &[BinStats]) -> String {
    let mut out = String::from("lo,hi,count,mean_confidence,accuracy\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in bins {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            b.lo,
            b.hi,
            b.count,
            opt(b.mean_confidence),
            opt(b.accuracy)
        );
    }
    out
}

pub fn bins_from_csv(csv_text: &str) -> Result<Vec<BinStats>, String> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let mut bins = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |i: usize| -> Result<f64, String> {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| format!("field {i}: {e}"))
        };
        let opt = |i: usize| -> Result<Option<f64>, String> {
            match rec.get(i).unwrap_or("") {
                "" => Ok(None),
                s => s
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| format!("field {i}: {e}")),
            }
        };
        bins.push(BinStats {
            lo: num(0)?,
            hi: num(1)?,
            count: rec
                .get(2)
                .unwrap_or("")
                .parse()
                .map_err(|e| format!("count: {e}"))?,
            mean_confidence: opt(3)?,
            accuracy: opt(4)?,
        });
    }
    Ok(bins)
}

/// Self-contained SVG reliability diagram: per-bin accuracy bars against the
/// diagonal of perfect calibration.
pub fn reliability_svg(report: &EvalReport) -> String {
    const SIZE: f64 = 360.0;
    const PAD: f64 = 48.0;
    let x = |v: f64| PAD + v * SIZE;
    let y = |v: f64| PAD + (1.0 - v) * SIZE;
    let mut svg = String::new();
    let total = SIZE + 2.0 * PAD;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{total}" height="{total}" fill="white"/>"#
    );
    let ece = report
        .ece
        .map_or_else(|| "n/a".to_string(), |e| format!("{e:.3}"));
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{} / {} / {}  (ECE {ece})</text>"#,
        total / 2.0,
        PAD / 2.0,
        xml_escape(&report.arm.model),
        xml_escape(&report.arm.dataset),
        report.arm.method
    );
    for b in &report.bins {
        if let (Some(acc), Some(conf)) = (b.accuracy, b.mean_confidence) {
            let w = (b.hi - b.lo) * SIZE;
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c72b0" stroke="#1f3d6b"/>"##,
                x(b.lo),
                y(acc),
                w,
                acc * SIZE
            );
            let (top, bottom) = if conf > acc { (conf, acc) } else { (acc, conf) };
            let _ = writeln!(
                svg,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#dd8452" fill-opacity="0.45"/>"##,
                x(b.lo),
                y(top),
                w,
                (top - bottom) * SIZE
            );
        }
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#555" stroke-dasharray="4 3"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    for t in 0..=5 {
        let v = t as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#,
            x(v),
            y(0.0) + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            x(0.0) - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">confidence</text>"#,
        total / 2.0,
        total - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">accuracy</text>"#,
        total / 2.0,
        total / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "ACC")]
    Acc,
    #[serde(rename = "ROB")]
    Rob,
    #[serde(rename = "ECE")]
    Ece,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Acc, Metric::Rob, Metric::Ece];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Acc => "ACC",
            Metric::Rob => "ROB",
            Metric::Ece => "ECE",
        }
    }

    fn higher_is_better(self) -> bool {
        matches!(self, Metric::Acc)
    }

    fn of(self, report: &EvalReport) -> Option<f64> {
        match self {
            Metric::Acc => Some(report.acc),
            Metric::Rob => Some(report.rob),
            Metric::Ece => report.ece,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: Metric,
    pub values: Vec<Option<f64>>,
    pub best: Vec<bool>,
}

/// Metrics as rows, arms as columns; the best arm within each (model,
/// dataset) group is flagged per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<Arm>,
    pub rows: Vec<ComparisonRow>,
}

pub fn compare_reports(reports: &[EvalReport]) -> ComparisonTable {
    let columns: Vec<Arm> = reports.iter().map(|r| r.arm.clone()).collect();
    let rows = Metric::ALL
        .iter()
        .map(|&metric| {
            let values: Vec<Option<f64>> = reports.iter().map(|r| metric.of(r)).collect();
            let best = columns
                .iter()
                .zip(&values)
                .map(|(arm, value)| {
                    let Some(v) = value else { return false };
                    columns
                        .iter()
                        .zip(&values)
                        .filter(|(other, _)| {
                            other.model == arm.model && other.dataset == arm.dataset
                        })
                        .filter_map(|(_, ov)| *ov)
                        .all(|ov| {
                            if metric.higher_is_better() {
                                *v >= ov
                            } else {
                                *v <= ov
                            }
                        })
                })
                .collect();
            ComparisonRow {
                metric,
                values,
                best,
            }
        })
        .collect();
    ComparisonTable { columns, rows }
}

impl ComparisonTable {
    fn header(&self) -> Vec<String> {
        std::iter::once("metric".to_string())
            .chain(
                self.columns
                    .iter()
                    .map(|a| format!("{}/{}/{}", a.model, a.dataset, a.method)),
            )
            .collect()
    }

    fn cells(&self, row: &ComparisonRow) -> Vec<String> {
        std::iter::once(row.metric.name().to_string())
            .chain(row.values.iter().zip(&row.best).map(|(v, best)| match v {
                Some(v) => format!("{v:.3}{}", if *best { "*" } else { "" }),
                None => "NA".to_string(),
            }))
            .collect()
    }

    /// CSV with values to three decimals; `*` marks the best arm.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for row in &self.rows {
            w.write_record(self.cells(row)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 input")
    }

    pub fn to_text(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.rows.iter().map(|r| self.cells(r)));
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| {
                lines
                    .iter()
                    .map(|l| l[c].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for line in &lines {
            let padded: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}
