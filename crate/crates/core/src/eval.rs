//! Confusion matrices, per-class and averaged scores, and the side-by-side
//! comparison table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::Image;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Argument(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if k == 0 {
        return Err(EvalError::Argument("class count must be >= 1".into()));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= k || p >= k {
            return Err(EvalError::Argument(format!("label pair ({t}, {p}) outside 0..{k}")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let name = |i: usize| class_names.get(i).map_or_else(|| i.to_string(), |s| s.to_string());
        let mut out = String::from("true\\predicted");
        for j in 0..self.k {
            out.push(',');
            out.push_str(&name(j));
        }
        out.push('\n');
        for i in 0..self.k {
            out.push_str(&name(i));
            for c in &self.counts[i] {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap with one `cell x cell` block per entry; counts scale
    /// linearly so the largest maps to 255.
    pub fn heatmap(&self, cell: usize) -> Image {
        let max = self.counts.iter().flatten().copied().max().unwrap_or(0);
        let side = self.k * cell.max(1);
        Image::from_fn(side, side, |x, y| {
            let (i, j) = (y / cell.max(1), x / cell.max(1));
            ((self.counts[i][j] * 255 + max / 2).checked_div(max)).unwrap_or(0) as u8
        })
    }
}

fn round4<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e4).round() / 1e4)
}

fn round4_vec<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| (x * 1e4).round() / 1e4))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    #[serde(serialize_with = "round4")]
    pub precision: f64,
    #[serde(serialize_with = "round4")]
    pub recall: f64,
    #[serde(serialize_with = "round4")]
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Precision,
    Recall,
    F1,
}

/// A score whose denominator was zero and was reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Undefined {
    pub class: usize,
    pub metric: Metric,
}

/// Scores are kept at full precision and written with 4 decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    #[serde(serialize_with = "round4")]
    pub accuracy: f64,
    #[serde(serialize_with = "round4_vec")]
    pub precision: Vec<f64>,
    #[serde(serialize_with = "round4_vec")]
    pub recall: Vec<f64>,
    #[serde(serialize_with = "round4_vec")]
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub undefined: Vec<Undefined>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn score(cm: &ConfusionMatrix) -> Result<ScoreCard, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Argument("confusion matrix is empty".into()));
    }
    let k = cm.k;
    let mut card = ScoreCard {
        accuracy: cm.accuracy(),
        precision: Vec::with_capacity(k),
        recall: Vec::with_capacity(k),
        f1: Vec::with_capacity(k),
        support: Vec::with_capacity(k),
        macro_avg: Averages {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        },
        weighted: Averages {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        },
        undefined: Vec::new(),
    };
    for c in 0..k {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..k).map(|i| cm.counts[i][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        let (p, r) = (
            p.unwrap_or_else(|| {
                card.undefined.push(Undefined {
                    class: c,
                    metric: Metric::Precision,
                });
                0.0
            }),
            r.unwrap_or_else(|| {
                card.undefined.push(Undefined {
                    class: c,
                    metric: Metric::Recall,
                });
                0.0
            }),
        );
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            card.undefined.push(Undefined {
                class: c,
                metric: Metric::F1,
            });
            0.0
        };
        card.precision.push(p);
        card.recall.push(r);
        card.f1.push(f);
        card.support.push(actual);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    let wmean = |v: &[f64]| {
        v.iter()
            .zip(&card.support)
            .map(|(x, &s)| x * s as f64)
            .sum::<f64>()
            / total as f64
    };
    card.macro_avg = Averages {
        precision: mean(&card.precision),
        recall: mean(&card.recall),
        f1: mean(&card.f1),
    };
    card.weighted = Averages {
        precision: wmean(&card.precision),
        recall: wmean(&card.recall),
        f1: wmean(&card.f1),
    };
    Ok(card)
}

/// Micro-averaged `(precision, recall)`; both equal accuracy when every
/// sample carries exactly one label.
pub fn micro_averages(cm: &ConfusionMatrix) -> (f64, f64) {
    let tp = cm.trace() as f64;
    let fp: u64 = (0..cm.k)
        .map(|c| (0..cm.k).filter(|&i| i != c).map(|i| cm.counts[i][c]).sum::<u64>())
        .sum();
    let fn_: u64 = (0..cm.k)
        .map(|c| (0..cm.k).filter(|&j| j != c).map(|j| cm.counts[c][j]).sum::<u64>())
        .sum();
    (tp / (tp + fp as f64), tp / (tp + fn_ as f64))
}

/// Which average feeds the precision/recall/F1 columns of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Headline {
    #[default]
    Macro,
    Weighted,
}

/// One table row, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ReportRow {
    pub fn from_card(name: &str, card: &ScoreCard, headline: Headline) -> Self {
        let avg = match headline {
            Headline::Macro => card.macro_avg,
            Headline::Weighted => card.weighted,
        };
        Self {
            name: name.to_string(),
            accuracy: 100.0 * card.accuracy,
            precision: 100.0 * avg.precision,
            recall: 100.0 * avg.recall,
            f1: 100.0 * avg.f1,
        }
    }

    fn cells(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

/// Reference accuracy/precision/recall/F1 (percent) for the six
/// configurations, used as the reproduction target.
pub fn reference_rows() -> Vec<ReportRow> {
    [
        ("RF", 91.25, 92.0, 91.0, 91.0),
        ("WS+RF", 89.53, 90.0, 90.0, 89.0),
        ("SVM", 80.70, 81.0, 81.0, 80.0),
        ("WS+SVM", 96.25, 98.0, 97.0, 97.0),
        ("CNN", 93.98, 94.0, 94.0, 94.0),
        ("WS+CNN", 95.16, 95.0, 95.0, 95.0),
    ]
    .into_iter()
    .map(|(name, accuracy, precision, recall, f1)| ReportRow {
        name: name.to_string(),
        accuracy,
        precision,
        recall,
        f1,
    })
    .collect()
}

pub const REPORT_COLUMNS: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
    /// Per column, the rows holding the best value at 2 decimals.
    pub best: [Vec<usize>; 4],
}

fn cents(v: f64) -> i64 {
    (v * 100.0).round() as i64
}

pub fn comparison_report(rows: Vec<ReportRow>) -> ComparisonReport {
    let mut best: [Vec<usize>; 4] = Default::default();
    for (col, slot) in best.iter_mut().enumerate() {
        if let Some(top) = rows.iter().map(|r| cents(r.cells()[col])).max() {
            *slot = (0..rows.len()).filter(|&i| cents(rows[i].cells()[col]) == top).collect();
        }
    }
    ComparisonReport { rows, best }
}

pub fn comparison_from_cards(runs: &[(String, ScoreCard)], headline: Headline) -> ComparisonReport {
    comparison_report(
        runs.iter()
            .map(|(name, card)| ReportRow::from_card(name, card, headline))
            .collect(),
    )
}

impl ComparisonReport {
    fn is_best(&self, row: usize, col: usize) -> bool {
        self.best[col].contains(&row)
    }

    /// CSV with a `best` column listing the metrics the row leads.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,accuracy,precision,recall,f1,best\n");
        for (i, r) in self.rows.iter().enumerate() {
            let leads: Vec<&str> = (0..4)
                .filter(|&c| self.is_best(i, c))
                .map(|c| REPORT_COLUMNS[c])
                .collect();
            let _ = writeln!(
                out,
                "{},{:.2},{:.2},{:.2},{:.2},{}",
                r.name,
                r.accuracy,
                r.precision,
                r.recall,
                r.f1,
                leads.join(";")
            );
        }
        out
    }

    /// Fixed-width table; `*` marks the best value in each column.
    pub fn to_text(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<name_w$}", "Model");
        for h in ["Accuracy %", "Precision %", "Recall %", "F1 %"] {
            let _ = write!(out, "  {h:>12}");
        }
        out.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, "{:<name_w$}", r.name);
            for (c, v) in r.cells().iter().enumerate() {
                let mark = if self.is_best(i, c) { "*" } else { " " };
                let _ = write!(out, "  {:>11.2}{mark}", v);
            }
            out.push('\n');
        }
        out
    }
}
