//! Behavioural metrics over trajectory corpora with known ground truth.
//!
//! Every ratio carries its numerator and denominator; a zero denominator
//! gives an undefined value (`null` on disk), never 0.

use crate::env::{Problem, LEVELS};
use crate::jsonl::{self, IoError};
use crate::trajectory::{Step, Trajectory, Verdict};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
    pub value: Option<f64>,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Self {
        Self {
            num,
            den,
            value: (den > 0).then(|| num as f64 / den as f64),
        }
    }
}

pub type Corpus<'a> = [(&'a Problem, &'a Trajectory)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationMetrics {
    pub verification_accuracy: Ratio,
    pub error_recall: Ratio,
    /// Verdicts matching the truth when the judged answer was right.
    pub accuracy_on_right: Ratio,
}

/// Verify events as (judged answer was right, verdict).
fn verify_events<'a>(problem: &'a Problem, traj: &'a Trajectory) -> impl Iterator<Item = (bool, Verdict)> + 'a {
    let mut last = None;
    traj.steps.iter().filter_map(move |s| match s {
        Step::Verify { verdict, .. } => last.map(|a| (problem.is_correct(a), *verdict)),
        _ => {
            last = s.answer();
            None
        }
    })
}

pub fn verification_metrics(corpus: &Corpus<'_>) -> VerificationMetrics {
    let (mut total, mut matched) = (0, 0);
    let (mut wrong, mut flagged) = (0, 0);
    let (mut right, mut confirmed) = (0, 0);
    for (p, y) in corpus {
        for (truth, verdict) in verify_events(p, y) {
            total += 1;
            if (verdict == Verdict::Correct) == truth {
                matched += 1;
            }
            if truth {
                right += 1;
                confirmed += usize::from(verdict == Verdict::Correct);
            } else {
                wrong += 1;
                flagged += usize::from(verdict == Verdict::Incorrect);
            }
        }
    }
    VerificationMetrics {
        verification_accuracy: Ratio::new(matched, total),
        error_recall: Ratio::new(flagged, wrong),
        accuracy_on_right: Ratio::new(confirmed, right),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectificationMetrics {
    pub error_to_correct: Ratio,
    pub correct_to_error: Ratio,
}

pub fn rectification_metrics(corpus: &Corpus<'_>) -> RectificationMetrics {
    let (mut from_wrong, mut fixed) = (0, 0);
    let (mut from_right, mut broke) = (0, 0);
    for (p, y) in corpus {
        let mut prev = None;
        for s in &y.steps {
            if let Step::Rectify { answer, .. } = s {
                if let Some(a) = prev {
                    if p.is_correct(a) {
                        from_right += 1;
                        broke += usize::from(!p.is_correct(*answer));
                    } else {
                        from_wrong += 1;
                        fixed += usize::from(p.is_correct(*answer));
                    }
                }
            }
            if let Some(a) = s.answer() {
                prev = Some(a);
            }
        }
    }
    RectificationMetrics {
        error_to_correct: Ratio::new(fixed, from_wrong),
        correct_to_error: Ratio::new(broke, from_right),
    }
}

/// Per-level accuracy and effort. Attempts count the first solve plus
/// every correction loop; `mean_loops` is the raw loop count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: u8,
    pub trajectories: usize,
    pub answer_accuracy: Ratio,
    pub total_attempts: usize,
    pub mean_attempts: f64,
    pub mean_loops: f64,
}

/// One row per populated level, in level order. Accuracy is per
/// trajectory, so repeated samples of a problem each count.
pub fn difficulty_profile(corpus: &Corpus<'_>) -> Vec<LevelRow> {
    let mut n = [0usize; LEVELS];
    let mut right = [0usize; LEVELS];
    let mut loops = [0usize; LEVELS];
    for (p, y) in corpus {
        let l = p.level_index();
        n[l] += 1;
        right[l] += usize::from(y.final_answer().is_some_and(|a| p.is_correct(a)));
        loops[l] += y.k();
    }
    (0..LEVELS)
        .filter(|&l| n[l] > 0)
        .map(|l| LevelRow {
            level: l as u8 + 1,
            trajectories: n[l],
            answer_accuracy: Ratio::new(right[l], n[l]),
            total_attempts: loops[l] + n[l],
            mean_attempts: (loops[l] + n[l]) as f64 / n[l] as f64,
            mean_loops: loops[l] as f64 / n[l] as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorReport {
    pub trajectories: usize,
    pub verification: VerificationMetrics,
    pub rectification: RectificationMetrics,
    pub answer_accuracy: Ratio,
    pub mean_attempts: Option<f64>,
    pub levels: Vec<LevelRow>,
}

pub fn behavior_report(corpus: &Corpus<'_>) -> BehaviorReport {
    let levels = difficulty_profile(corpus);
    let n: usize = levels.iter().map(|r| r.trajectories).sum();
    let right: usize = levels.iter().map(|r| r.answer_accuracy.num).sum();
    let attempts: usize = levels.iter().map(|r| r.total_attempts).sum();
    BehaviorReport {
        trajectories: n,
        verification: verification_metrics(corpus),
        rectification: rectification_metrics(corpus),
        answer_accuracy: Ratio::new(right, n),
        mean_attempts: (n > 0).then(|| attempts as f64 / n as f64),
        levels,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

const CSV_HEADER: [&str; 14] = [
    "row",
    "trajectories",
    "answer_accuracy",
    "correct_finals",
    "mean_attempts",
    "mean_loops",
    "verification_accuracy",
    "verify_matched",
    "verify_total",
    "error_recall",
    "errors_flagged",
    "errors_seen",
    "error_to_correct",
    "correct_to_error",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| x.to_string())
}

fn csv_rows(report: &BehaviorReport) -> Vec<Vec<String>> {
    let blank = || String::new();
    let mut rows: Vec<Vec<String>> = report
        .levels
        .iter()
        .map(|r| {
            let mut row = vec![
                format!("level_{}", r.level),
                r.trajectories.to_string(),
                cell(r.answer_accuracy.value),
                r.answer_accuracy.num.to_string(),
                cell(Some(r.mean_attempts)),
                cell(Some(r.mean_loops)),
            ];
            row.resize(CSV_HEADER.len(), blank());
            row
        })
        .collect();
    let v = &report.verification;
    let rc = &report.rectification;
    let loops = report.mean_attempts.map(|a| a - 1.0);
    rows.push(vec![
        "summary".into(),
        report.trajectories.to_string(),
        cell(report.answer_accuracy.value),
        report.answer_accuracy.num.to_string(),
        cell(report.mean_attempts),
        cell(loops),
        cell(v.verification_accuracy.value),
        v.verification_accuracy.num.to_string(),
        v.verification_accuracy.den.to_string(),
        cell(v.error_recall.value),
        v.error_recall.num.to_string(),
        v.error_recall.den.to_string(),
        cell(rc.error_to_correct.value),
        cell(rc.correct_to_error.value),
    ]);
    rows
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), IoError> {
    jsonl::write_atomic(path, |out| {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()
    })
}

pub fn emit_report(report: &BehaviorReport, path: &Path, format: ReportFormat) -> Result<(), IoError> {
    match format {
        ReportFormat::Json => jsonl::write_json(path, report),
        ReportFormat::Csv => write_csv(path, &CSV_HEADER, &csv_rows(report)),
    }
}

/// One row of the level-vs-behaviour table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub level: u8,
    pub answer_accuracy: Option<f64>,
    pub mean_attempts: f64,
    pub expected_accuracy: f64,
    pub expected_attempts: f64,
}

pub fn emit_plot_data(rows: &[PlotRow], path: &Path) -> Result<(), IoError> {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.level.to_string(),
                cell(r.answer_accuracy),
                cell(Some(r.mean_attempts)),
                cell(Some(r.expected_accuracy)),
                cell(Some(r.expected_attempts)),
            ]
        })
        .collect();
    write_csv(
        path,
        &["level", "answer_accuracy", "mean_attempts", "expected_accuracy", "expected_attempts"],
        &body,
    )
}
