//! Pixel-wise confusion counts, the derived percentage metrics and the
//! comparison tables built from them.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::arch::Variant;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction has {pred} pixels but truth has {truth}")]
    SizeMismatch { pred: usize, truth: usize },
    #[error("label {label} at pixel {index} is not 0 or 1")]
    InvalidLabel { index: usize, label: u8 },
}

/// Landslide is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Same counts with prediction and truth exchanged.
    pub fn transposed(&self) -> Self {
        Self {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::ops::AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Counts over two equally sized {0,1} label grids.
pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<ConfusionMatrix, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::SizeMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    // counts[2·truth + pred]
    let mut counts = [0u64; 4];
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p > 1 || t > 1 {
            return Err(EvalError::InvalidLabel {
                index: i,
                label: p.max(t),
            });
        }
        counts[(2 * t + p) as usize] += 1;
    }
    Ok(ConfusionMatrix {
        tn: counts[0],
        fp: counts[1],
        fn_: counts[2],
        tp: counts[3],
    })
}

/// A percentage, or the reason it has no value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Defined(f64),
    Undefined(&'static str),
}

impl Metric {
    fn ratio(num: u64, den: u64, degenerate: &'static str) -> Self {
        if den == 0 {
            Metric::Undefined(degenerate)
        } else {
            Metric::Defined(100.0 * num as f64 / den as f64)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Metric::Defined(v) => Some(v),
            Metric::Undefined(_) => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Defined(v) => write!(f, "{v:.2}"),
            Metric::Undefined(_) => f.write_str("undef"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    pub iou: Metric,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

/// IoU, precision, recall and F1 as percentages.
///
/// F1 is computed as `2tp / (2tp + fp + fn)`, which equals the harmonic mean
/// of precision and recall whenever both exist, and stays defined (at 0)
/// when there are errors but no predicted positives.
pub fn metrics(name: &str, cm: &ConfusionMatrix) -> MetricsRow {
    const EMPTY: &str = "no positives in prediction or truth (tp + fp + fn = 0)";
    MetricsRow {
        name: name.to_owned(),
        iou: Metric::ratio(cm.tp, cm.tp + cm.fp + cm.fn_, EMPTY),
        precision: Metric::ratio(cm.tp, cm.tp + cm.fp, "no predicted positives (tp + fp = 0)"),
        recall: Metric::ratio(cm.tp, cm.tp + cm.fn_, "no positives in truth (tp + fn = 0)"),
        f1: Metric::ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_, EMPTY),
    }
}

fn csv_field(m: &Metric) -> String {
    match m {
        Metric::Defined(v) => format!("{v:.4}"),
        Metric::Undefined(_) => String::new(),
    }
}

/// Per-scene rows plus the micro-averaged aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregate: MetricsRow,
}

impl MetricsReport {
    pub fn from_scenes(scenes: &[(String, ConfusionMatrix)]) -> Self {
        let total: ConfusionMatrix = scenes.iter().map(|(_, cm)| *cm).sum();
        Self {
            rows: scenes.iter().map(|(n, cm)| metrics(n, cm)).collect(),
            aggregate: metrics("aggregate", &total),
        }
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .chain([&self.aggregate])
            .map(|r| r.name.len())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = format!(
            "{:<width$}  {:>7}  {:>9}  {:>7}  {:>7}\n",
            "scene", "IoU", "Precision", "Recall", "F-Score"
        );
        let line = |out: &mut String, r: &MetricsRow| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>9}  {:>7}  {:>7}",
                r.name,
                r.iou.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string()
            );
        };
        for r in &self.rows {
            line(&mut out, r);
        }
        let _ = writeln!(out, "{}", "-".repeat(width + 42));
        line(&mut out, &self.aggregate);
        let undefined: Vec<String> = self
            .rows
            .iter()
            .chain([&self.aggregate])
            .flat_map(|r| {
                [("IoU", r.iou), ("precision", r.precision), ("recall", r.recall), ("F-score", r.f1)]
                    .into_iter()
                    .filter_map(move |(n, m)| match m {
                        Metric::Undefined(why) => Some(format!("{}: {n} undefined, {why}", r.name)),
                        Metric::Defined(_) => None,
                    })
            })
            .collect();
        for u in undefined {
            let _ = writeln!(out, "note: {u}");
        }
        out
    }

    /// `variant,iou,precision,recall,f1` rows; undefined values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,iou,precision,recall,f1\n");
        for r in self.rows.iter().chain([&self.aggregate]) {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.name,
                csv_field(&r.iou),
                csv_field(&r.precision),
                csv_field(&r.recall),
                csv_field(&r.f1)
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub metrics: MetricsRow,
    pub best: bool,
}

/// Variants in canonical order with the highest IoU flagged (every tied row).
#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

pub fn ablation_report(results: &[(Variant, ConfusionMatrix)]) -> AblationReport {
    let mut rows: Vec<AblationRow> = Variant::ALL
        .iter()
        .filter_map(|v| results.iter().find(|(r, _)| r == v))
        .map(|(v, cm)| AblationRow {
            variant: *v,
            metrics: metrics(v.name(), cm),
            best: false,
        })
        .collect();
    let best = rows
        .iter()
        .filter_map(|r| r.metrics.iou.value())
        .fold(f64::NEG_INFINITY, f64::max);
    for r in &mut rows {
        r.best = r.metrics.iou.value() == Some(best);
    }
    AblationReport { rows }
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mark = |b: bool| if b { "✓" } else { "×" };
        let mut out = format!(
            "{:<9}  {:^16}  {:^24}  {:>7}\n",
            "Method", "Attention Module", "Dilated Convolution+ASPP", "IoU"
        );
        for r in &self.rows {
            let iou = r.metrics.iou.to_string() + if r.best { "*" } else { " " };
            let _ = writeln!(
                out,
                "{:<9}  {:^16}  {:^24}  {:>7}",
                r.variant.name(),
                mark(r.variant.uses_attention()),
                mark(r.variant.uses_dilation()),
                iou
            );
        }
        out.push_str("* best IoU\n");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,attention,dilation_aspp,iou,precision,recall,f1,best\n");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.variant.name(),
                r.variant.uses_attention(),
                r.variant.uses_dilation(),
                csv_field(&m.iou),
                csv_field(&m.precision),
                csv_field(&m.recall),
                csv_field(&m.f1),
                r.best
            );
        }
        out
    }
}
