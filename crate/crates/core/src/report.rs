//! Result tables in CSV (full precision) and aligned text (4 decimals).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::AttackReport;
use crate::crosstest::PairedResult;
use crate::data::Attribute;
use crate::error::Result;
use crate::fsutil;
use crate::metrics::MetricSet;
use crate::models::ModelKind;

pub const METRIC_COLUMNS: [&str; 8] = [
    "Recall",
    "Precision",
    "F1-Score",
    "Accuracy",
    "Specificity",
    "PPV",
    "NPV",
    "AUC",
];

/// Marker for a metric whose denominator was zero.
pub const MISSING: &str = "NA";

/// Row order used in model comparison tables.
pub const MODEL_ORDER: [ModelKind; 3] = [ModelKind::Base, ModelKind::AdvPer, ModelKind::Adv];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Text(String),
    Num(Option<f64>),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(Some(v)) => v.to_string(),
            Cell::Num(None) => MISSING.into(),
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(Some(v)) => format!("{v:.4}"),
            Cell::Num(None) => MISSING.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(title: impl Into<String>, header: &[&str]) -> Self {
        Self {
            title: title.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn header_line(&self) -> String {
        self.header.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        // Writing to a Vec cannot fail.
        w.write_record(&self.header).expect("in-memory csv");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::text).collect()).collect();
        let widths: Vec<usize> = (0..self.header.len())
            .map(|j| {
                cells
                    .iter()
                    .map(|r| r[j].len())
                    .chain([self.header[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |items: &[String]| {
            items
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (s, w))| if j == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n{}\n", self.title, line(&self.header));
        for r in &cells {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.txt` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fsutil::atomic_write(&dir.join(format!("{stem}.csv")), self.to_csv().as_bytes())?;
        fsutil::atomic_write(&dir.join(format!("{stem}.txt")), self.to_text().as_bytes())
    }
}

fn metric_cells(m: &MetricSet) -> impl Iterator<Item = Cell> + '_ {
    m.columns().into_iter().map(Cell::Num)
}

fn header(lead: &[&'static str], threshold: bool) -> Vec<&'static str> {
    let mut h = lead.to_vec();
    h.extend(METRIC_COLUMNS);
    if threshold {
        h.push("Threshold");
    }
    h
}

/// Main-task results, one row per model, with the calibrated threshold.
pub fn main_results_table(title: &str, rows: &[(ModelKind, MetricSet)]) -> Table {
    let mut t = Table::new(title, &header(&["Model"], true));
    for (kind, m) in rows {
        let mut r = vec![Cell::Text(kind.display().into())];
        r.extend(metric_cells(m));
        r.push(Cell::Num(Some(m.threshold)));
        t.rows.push(r);
    }
    t
}

/// External-holdout results: like the main table but without the threshold column, since
/// thresholds are carried over unchanged and recorded in the manifest.
pub fn external_table(title: &str, rows: &[(ModelKind, MetricSet)]) -> Table {
    let mut t = Table::new(title, &header(&["Model"], false));
    for (kind, m) in rows {
        let mut r = vec![Cell::Text(kind.display().into())];
        r.extend(metric_cells(m));
        t.rows.push(r);
    }
    t
}

/// One row per predicted attribute.
pub fn attack_table(title: &str, reports: &[AttackReport]) -> Table {
    let mut t = Table::new(title, &header(&["Predicted Attribute"], false));
    for rep in reports {
        let mut r = vec![Cell::Text(rep.attribute.name().into())];
        r.extend(metric_cells(&rep.metrics));
        t.rows.push(r);
    }
    t
}

/// Majority-class share per attribute in TRAIN and TEST.
pub fn baseline_table(title: &str, rows: &[(Attribute, f64, f64)]) -> Table {
    let mut t = Table::new(title, &["Protected attribute", "TRAIN", "TEST"]);
    for (a, tr, te) in rows {
        t.rows.push(vec![
            Cell::Text(a.name().into()),
            Cell::Num(Some(*tr)),
            Cell::Num(Some(*te)),
        ]);
    }
    t
}

/// Paired Base/ADV rows per cross-test case.
pub fn crosstest_table(title: &str, results: &[PairedResult]) -> Table {
    let mut t = Table::new(title, &header(&["Cross-test", "Model"], false));
    for res in results {
        for (kind, m) in [(ModelKind::Base, &res.base), (ModelKind::Adv, &res.adv)] {
            let mut r = vec![Cell::Text(res.label.clone()), Cell::Text(kind.display().into())];
            r.extend(metric_cells(m));
            t.rows.push(r);
        }
    }
    t
}
