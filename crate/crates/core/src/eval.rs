//! Classification metrics with illicit as the positive class, percentile
//! threshold sweeps and report rendering.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cae::{classify_all, fit_threshold};
use crate::error::{Error, Result};
use crate::features::WindowTensor;
use crate::gbdt;
use crate::ingest::Label;

pub const DEFAULT_PERCENTILES: [f64; 4] = [75.0, 80.0, 85.0, 90.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision_illicit: f64,
    pub recall_illicit: f64,
    pub f1_illicit: f64,
    pub precision_reputable: f64,
    pub recall_reputable: f64,
    pub f1_reputable: f64,
    pub log_loss: Option<f64>,
    /// Names of metrics whose denominator was zero; they are reported as 0.
    pub undefined: Vec<String>,
}

fn ratio(num: usize, den: usize, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `true` means illicit in both label slices.
pub fn compute_metrics(y_true: &[bool], y_pred: &[bool], y_prob: Option<&[f64]>) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            expected: format!("{} predictions", y_true.len()),
            actual: format!("{}", y_pred.len()),
        });
    }
    let mut c = [0usize; 4];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        c[match (t, p) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        }] += 1;
    }
    let [tp, fp, tn, fn_] = c;
    let mut undefined = Vec::new();
    let accuracy = ratio(tp + tn, y_true.len(), "accuracy", &mut undefined);
    let precision_illicit = ratio(tp, tp + fp, "precision_illicit", &mut undefined);
    let recall_illicit = ratio(tp, tp + fn_, "recall_illicit", &mut undefined);
    let precision_reputable = ratio(tn, tn + fn_, "precision_reputable", &mut undefined);
    let recall_reputable = ratio(tn, tn + fp, "recall_reputable", &mut undefined);
    let log_loss = match y_prob {
        Some(p) => Some(gbdt::log_loss(y_true, p)?),
        None => None,
    };
    Ok(MetricsReport {
        tp,
        fp,
        tn,
        fn_,
        accuracy,
        precision_illicit,
        recall_illicit,
        f1_illicit: f1(precision_illicit, recall_illicit),
        precision_reputable,
        recall_reputable,
        f1_reputable: f1(precision_reputable, recall_reputable),
        log_loss,
        undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: String,
    pub percentile: f64,
    pub accuracy: f64,
    pub precision_illicit: f64,
    pub recall_illicit: f64,
    pub f1_reputable: f64,
    pub f1_illicit: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Scores of one model variant: errors on its own training windows (for
/// fitting cutoffs) and on the evaluation windows.
pub struct VariantScores<'a> {
    pub variant: &'a str,
    pub training_errors: &'a [f64],
    pub eval_windows: &'a [WindowTensor],
    pub eval_errors: &'a [f64],
}

/// One row per (variant, percentile): refit the cutoff on training errors,
/// classify every evaluation contract and score against `truth`.
/// Contracts without a reputable/illicit label are skipped.
pub fn threshold_sweep(
    variants: &[VariantScores<'_>],
    percentiles: &[f64],
    truth: &HashMap<String, Label>,
) -> Result<SweepTable> {
    let mut rows = Vec::new();
    for v in variants {
        for &p in percentiles {
            let t = fit_threshold(v.training_errors, p, v.variant)?;
            let reports = classify_all(v.eval_windows, v.eval_errors, &t)?;
            let (mut y_true, mut y_pred) = (Vec::new(), Vec::new());
            for r in &reports {
                match truth.get(&r.contract_address) {
                    Some(Label::Illicit) => y_true.push(true),
                    Some(Label::Reputable) => y_true.push(false),
                    _ => continue,
                }
                y_pred.push(r.verdict == Label::Illicit);
            }
            let m = compute_metrics(&y_true, &y_pred, None)?;
            rows.push(SweepRow {
                variant: v.variant.to_string(),
                percentile: p,
                accuracy: m.accuracy,
                precision_illicit: m.precision_illicit,
                recall_illicit: m.recall_illicit,
                f1_reputable: m.f1_reputable,
                f1_illicit: m.f1_illicit,
            });
        }
    }
    Ok(SweepTable { rows })
}

const SWEEP_COLUMNS: [&str; 7] = [
    "variant",
    "percentile",
    "accuracy",
    "precision_illicit",
    "recall_illicit",
    "f1_reputable",
    "f1_illicit",
];

impl SweepTable {
    pub fn get(&self, variant: &str, percentile: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.percentile == percentile)
    }

    /// Floats use the shortest representation that parses back exactly.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(SWEEP_COLUMNS)?;
        for r in &self.rows {
            wtr.write_record([
                r.variant.clone(),
                r.percentile.to_string(),
                r.accuracy.to_string(),
                r.precision_illicit.to_string(),
                r.recall_illicit.to_string(),
                r.f1_reputable.to_string(),
                r.f1_illicit.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>()?;
        Ok(SweepTable { rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from(
            "| Variant | Percentile | Accuracy | Precision (Illicit) | Recall (Illicit) | F1 (Reputable) | F1 (Illicit) |\n\
             |---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
                r.variant, r.percentile, r.accuracy, r.precision_illicit, r.recall_illicit, r.f1_reputable, r.f1_illicit
            );
        }
        s
    }
}

/// `name,tp,fp,tn,fn,accuracy,...` rows for a set of named reports.
pub fn write_metrics_csv<W: Write>(w: W, reports: &[(String, MetricsReport)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "model",
        "tp",
        "fp",
        "tn",
        "fn",
        "accuracy",
        "precision_illicit",
        "recall_illicit",
        "f1_illicit",
        "precision_reputable",
        "recall_reputable",
        "f1_reputable",
        "log_loss",
        "undefined",
    ])?;
    for (name, m) in reports {
        wtr.write_record([
            name.clone(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.tn.to_string(),
            m.fn_.to_string(),
            m.accuracy.to_string(),
            m.precision_illicit.to_string(),
            m.recall_illicit.to_string(),
            m.f1_illicit.to_string(),
            m.precision_reputable.to_string(),
            m.recall_reputable.to_string(),
            m.f1_reputable.to_string(),
            m.log_loss.map_or(String::new(), |v| v.to_string()),
            m.undefined.join(";"),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn metrics_markdown(reports: &[(String, MetricsReport)]) -> String {
    let mut s = String::from(
        "| Model | Accuracy | Precision (Illicit) | Recall (Illicit) | F1 (Illicit) | F1 (Reputable) | Log loss |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for (name, m) in reports {
        let ll = m.log_loss.map_or("–".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "| {name} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {ll} |",
            m.accuracy, m.precision_illicit, m.recall_illicit, m.f1_illicit, m.f1_reputable
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion_matrix() {
        let m = compute_metrics(&[true, true, false, false], &[true, false, false, false], None).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 0, 2, 1));
        assert_eq!(m.recall_illicit, 0.5);
        assert!((m.f1_illicit - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.75);
    }

    #[test]
    fn perfect_and_degenerate() {
        let y = [true, false, true];
        let m = compute_metrics(&y, &y, None).unwrap();
        assert_eq!((m.accuracy, m.f1_illicit, m.f1_reputable), (1.0, 1.0, 1.0));

        // all-negative predictions on 94.1% majority data
        let y: Vec<bool> = (0..1000).map(|i| i < 59).collect();
        let m = compute_metrics(&y, &vec![false; 1000], None).unwrap();
        assert_eq!((m.recall_illicit, m.f1_illicit), (0.0, 0.0));
        assert!((m.accuracy - 0.941).abs() < 1e-12);
        assert!(m.undefined.contains(&"precision_illicit".to_string()));
        assert!(compute_metrics(&[true], &[], None).is_err());
    }

    #[test]
    fn rendering() {
        let empty = SweepTable::default();
        let mut buf = Vec::new();
        empty.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        assert_eq!(empty.to_markdown().lines().count(), 2);

        let t = SweepTable {
            rows: vec![SweepRow {
                variant: "multimodal".into(),
                percentile: 90.0,
                accuracy: 0.1 + 0.2,
                precision_illicit: 1.0 / 3.0,
                recall_illicit: 0.974,
                f1_reputable: 0.0,
                f1_illicit: 2.0f64.sqrt(),
            }],
        };
        let mut a = Vec::new();
        t.write_csv(&mut a).unwrap();
        assert_eq!(String::from_utf8(a.clone()).unwrap().lines().count(), 2);
        assert_eq!(SweepTable::read_csv(&a[..]).unwrap(), t);
        let mut b = Vec::new();
        t.write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.to_markdown(), t.to_markdown());
    }
}
