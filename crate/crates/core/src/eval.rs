//! Confusion matrices, macro metrics, miss rate and length-bucket accuracy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::QeLabel;
use crate::subtitle::MAX_TOKENS;

pub const BUCKET_WIDTH: usize = 5;
pub const N_BUCKETS: usize = MAX_TOKENS / BUCKET_WIDTH;

/// Rows are true labels, columns predictions, both in `QeLabel::index` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn get(&self, truth: QeLabel, pred: QeLabel) -> u64 {
        self.counts[truth.index()][pred.index()]
    }

    pub fn scaled(&self, k: u64) -> Self {
        ConfusionMatrix {
            counts: self.counts.map(|row| row.map(|c| c * k)),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8}", "truth\\pred", "bad", "loose", "good");
        for l in QeLabel::ALL {
            let r = self.counts[l.index()];
            let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>8}", l.as_str(), r[0], r[1], r[2]);
        }
        out
    }
}

pub fn confusion(pred: &[QeLabel], truth: &[QeLabel]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(Error::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in pred.iter().zip(truth) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Per-class metrics in `QeLabel::index` order.
    pub per_class: [ClassMetrics; 3],
    /// Accuracy restricted to each true label (equal to per-class recall).
    pub per_label_accuracy: [f64; 3],
    /// Accuracy per target-length bucket; `None` for empty buckets.
    pub length_accuracy: [Option<f64>; N_BUCKETS],
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let per_class: [ClassMetrics; 3] = std::array::from_fn(|k| {
        let tp = cm.counts[k][k];
        let predicted: u64 = (0..3).map(|t| cm.counts[t][k]).sum();
        let actual: u64 = cm.counts[k].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics { precision, recall, f1 }
    });
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    Ok(MetricsReport {
        accuracy: ratio(cm.trace(), total),
        precision: mean(|c| c.precision),
        recall: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        per_label_accuracy: per_class.map(|c| c.recall),
        per_class,
        length_accuracy: [None; N_BUCKETS],
    })
}

/// Fraction of truly positive (Good or Loose) pairs predicted Bad.
pub fn miss_rate(pred: &[QeLabel], truth: &[QeLabel]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    let mut positives = 0u64;
    let mut missed = 0u64;
    for (p, t) in pred.iter().zip(truth) {
        if t.is_positive() {
            positives += 1;
            missed += u64::from(*p == QeLabel::Bad);
        }
    }
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    Ok(missed as f64 / positives as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketStat {
    pub lo: usize,
    pub hi: usize,
    pub correct: u64,
    pub total: u64,
}

impl BucketStat {
    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.total)
    }
}

/// Bucket index of a target length: 1-5 -> 0, ..., 21-25 -> 4.
pub fn bucket_of(len: usize) -> usize {
    (len.clamp(1, MAX_TOKENS) - 1) / BUCKET_WIDTH
}

/// Accuracy by target token count in buckets of five.
pub fn length_buckets(target_lengths: &[usize], pred: &[QeLabel], truth: &[QeLabel]) -> Result<[Option<BucketStat>; N_BUCKETS]> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if target_lengths.len() != truth.len() {
        return Err(Error::LengthMismatch(target_lengths.len(), truth.len()));
    }
    let mut out: [Option<BucketStat>; N_BUCKETS] = [None; N_BUCKETS];
    for ((&len, p), t) in target_lengths.iter().zip(pred).zip(truth) {
        let b = bucket_of(len);
        let stat = out[b].get_or_insert(BucketStat {
            lo: b * BUCKET_WIDTH + 1,
            hi: (b + 1) * BUCKET_WIDTH,
            correct: 0,
            total: 0,
        });
        stat.total += 1;
        stat.correct += u64::from(p == t);
    }
    Ok(out)
}

/// Confusion, macro metrics and length-bucket accuracies in one pass.
pub fn evaluate(pred: &[QeLabel], truth: &[QeLabel], target_lengths: &[usize]) -> Result<(ConfusionMatrix, MetricsReport)> {
    let cm = confusion(pred, truth)?;
    let mut report = metrics(&cm)?;
    let buckets = length_buckets(target_lengths, pred, truth)?;
    report.length_accuracy = buckets.map(|b| b.map(|s| s.accuracy()));
    Ok((cm, report))
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Aligned table of accuracy, precision, recall and F-score per named run.
pub fn render_metrics_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>9} {:>9} {:>9} {:>9}", "model", "accuracy", "precision", "recall", "f-score");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<24} {:>9} {:>9} {:>9} {:>9}",
            name,
            pct(m.accuracy),
            pct(m.precision),
            pct(m.recall),
            pct(m.f1)
        );
    }
    out
}

pub fn metrics_tsv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("model\taccuracy\tprecision\trecall\tf1\tacc_bad\tacc_loose\tacc_good\n");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            m.per_label_accuracy[0],
            m.per_label_accuracy[1],
            m.per_label_accuracy[2]
        );
    }
    out
}

/// Miss rate per named corpus, in percent.
pub fn render_fnr_table(rows: &[(String, f64)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>9}", "corpus", "fnr");
    for (name, fnr) in rows {
        let _ = writeln!(out, "{:<24} {:>9}", name, pct(*fnr));
    }
    out
}

pub fn render_length_table(buckets: &[Option<BucketStat>; N_BUCKETS]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>8} {:>9}", "length", "pairs", "accuracy");
    for b in buckets.iter().flatten() {
        let _ = writeln!(out, "{:<8} {:>8} {:>9}", format!("{}-{}", b.lo, b.hi), b.total, pct(b.accuracy()));
    }
    out
}
