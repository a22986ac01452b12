use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{emd_1d, roc_auc, MetricError};
use crate::data::DatasetKind;
use crate::models::StudentId;
use crate::pipeline::{log_transform, Regime, ScoreSpace};

/// Column order of the per-run CSV row.
pub const CSV_HEADER: [&str; 10] = [
    "dataset",
    "inlier_class",
    "regime",
    "student_id",
    "seed",
    "auc_teacher",
    "auc_student",
    "auc_ratio",
    "emd_inlier",
    "emd_outlier",
];

/// Outcome of one run. Serialized field order matches [`CSV_HEADER`], with
/// the configuration fingerprint appended in JSON only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: DatasetKind,
    pub inlier_class: u8,
    pub regime: Regime,
    pub student_id: StudentId,
    pub seed: u64,
    pub auc_teacher: f64,
    pub auc_student: f64,
    pub auc_ratio: f64,
    pub emd_inlier: f64,
    pub emd_outlier: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub config_fingerprint: String,
}

/// Scores of one model pair on a labelled test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub auc_teacher: f64,
    pub auc_student: f64,
    pub auc_ratio: f64,
    pub emd_inlier: f64,
    pub emd_outlier: f64,
}

fn partition(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let mut inl = Vec::new();
    let mut out = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 0 {
            inl.push(s);
        } else {
            out.push(s);
        }
    }
    (inl, out)
}

/// Metrics from teacher raw scores and student outputs (which live in log
/// space). `labels` are 0 for inliers and 1 for anomalies.
pub fn evaluate_scores(
    teacher_raw: &[f64],
    student: &[f64],
    labels: &[u8],
    delta: f64,
    space: ScoreSpace,
) -> Result<Scores, MetricError> {
    for (what, n) in [("teacher scores", teacher_raw.len()), ("student scores", student.len())] {
        if n != labels.len() {
            return Err(MetricError::LengthMismatch {
                what,
                left: n,
                right: labels.len(),
            });
        }
    }
    let teacher_log: Vec<f64> = teacher_raw.iter().map(|&r| log_transform(r, delta)).collect();
    let (t_in, t_out) = partition(&teacher_log, labels);
    let (s_in, s_out) = partition(student, labels);
    if t_in.is_empty() || t_out.is_empty() {
        return Err(MetricError::SingleClass);
    }
    let auc_teacher = roc_auc(&t_out, &t_in)?;
    let auc_student = roc_auc(&s_out, &s_in)?;
    let (emd_inlier, emd_outlier) = match space {
        ScoreSpace::Log => (emd_1d(&t_in, &s_in)?, emd_1d(&t_out, &s_out)?),
        ScoreSpace::Raw => {
            let (r_in, r_out) = partition(teacher_raw, labels);
            let back = |v: &[f64]| v.iter().map(|s| s.exp() - delta).collect::<Vec<_>>();
            (emd_1d(&r_in, &back(&s_in))?, emd_1d(&r_out, &back(&s_out))?)
        }
    };
    Ok(Scores {
        auc_teacher,
        auc_student,
        auc_ratio: auc_student / auc_teacher,
        emd_inlier,
        emd_outlier,
    })
}

/// Scores both models on a test set and computes their metrics.
pub fn evaluate(
    teacher: &crate::models::TeacherModel,
    student: &crate::models::StudentModel,
    test_set: &crate::data::ImageSet,
    labels: &[u8],
    delta: f64,
    space: ScoreSpace,
) -> Result<Scores, crate::pipeline::PipelineError> {
    let raw = crate::pipeline::teacher_scores(teacher, test_set)?;
    let pred = crate::pipeline::student_scores(student, test_set)?;
    Ok(evaluate_scores(&raw, &pred, labels, delta, space)?)
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("unexpected header {found:?}; expected {expected:?}")]
    Header { found: Vec<String>, expected: Vec<String> },
    #[error("no data rows")]
    Empty,
}

fn row(r: &MetricsReport) -> [String; 10] {
    [
        r.dataset.to_string(),
        r.inlier_class.to_string(),
        r.regime.to_string(),
        r.student_id.to_string(),
        r.seed.to_string(),
        r.auc_teacher.to_string(),
        r.auc_student.to_string(),
        r.auc_ratio.to_string(),
        r.emd_inlier.to_string(),
        r.emd_outlier.to_string(),
    ]
}

/// Header plus one row per report, in the given order.
pub fn write_reports_csv<W: std::io::Write>(out: W, reports: &[MetricsReport]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record(row(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut buf = Vec::new();
    write_reports_csv(&mut buf, reports).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Parses CSV written by [`write_reports_csv`]; at least one row is required.
pub fn read_reports_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsReport>, CsvError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(CsvError::Header {
            found: header,
            expected: CSV_HEADER.iter().map(|s| s.to_string()).collect(),
        });
    }
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    if out.is_empty() {
        return Err(CsvError::Empty);
    }
    Ok(out)
}

/// Column order of the aggregate summary CSV.
pub const SUMMARY_HEADER: [&str; 10] = [
    "dataset",
    "regime",
    "student_id",
    "runs",
    "auc_ratio_mean",
    "auc_ratio_std",
    "emd_inlier_mean",
    "emd_inlier_std",
    "emd_outlier_mean",
    "emd_outlier_std",
];

pub fn summary_to_csv(summary: &[GroupSummary]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("writing to memory");
    for g in summary {
        w.write_record([
            g.dataset.to_string(),
            g.regime.to_string(),
            g.student_id.to_string(),
            g.runs.to_string(),
            g.auc_ratio.mean.to_string(),
            g.auc_ratio.std.to_string(),
            g.emd_inlier.mean.to_string(),
            g.emd_inlier.std.to_string(),
            g.emd_outlier.mean.to_string(),
            g.emd_outlier.std.to_string(),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub dataset: DatasetKind,
    pub regime: Regime,
    pub student_id: StudentId,
    pub runs: usize,
    pub auc_ratio: Summary,
    pub emd_inlier: Summary,
    pub emd_outlier: Summary,
}

/// Mean and spread per (dataset, regime, student), sorted by that key.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(DatasetKind, Regime, StudentId), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.dataset, r.regime, r.student_id)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, regime, student_id), rs)| {
            // fixed summation order regardless of input order
            let col = |f: fn(&MetricsReport) -> f64| {
                let mut v: Vec<f64> = rs.iter().map(|r| f(r)).collect();
                v.sort_by(f64::total_cmp);
                Summary::of(&v)
            };
            GroupSummary {
                dataset,
                regime,
                student_id,
                runs: rs.len(),
                auc_ratio: col(|r| r.auc_ratio),
                emd_inlier: col(|r| r.emd_inlier),
                emd_outlier: col(|r| r.emd_outlier),
            }
        })
        .collect()
}
