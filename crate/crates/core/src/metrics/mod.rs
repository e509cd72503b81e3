//! Annotation rubric, agreement, and per-strategy scoring.
//!
//! Every aggregate is computed per annotator first and then averaged with
//! equal weight. Fractions are of all judged subtopics, so for a complete
//! annotation set `accuracy + Σ error_by_category = 1`.
//!
//! Judged subtopics are the parsed subtopics of records whose status is
//! `ok`.

mod kappa;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::PromptStrategy;
use crate::run::{GenerationRecord, RecordStatus};

pub use kappa::cohen_kappa;
pub use report::{
    build_run_report, display_percent, emit_report, ReportDocument, ReportFormat, RunReport,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown label {0:?} (expected Good, Repetitive, TooSpecific, TooGeneral, Tangential or Unrelated)")]
    UnknownLabel(String),
    #[error("annotation set is incomplete: {} label(s) missing", .missing.len())]
    IncompleteAnnotation { missing: Vec<MissingLabel> },
    #[error("annotation refers to unknown record {0}")]
    UnknownRecord(String),
    #[error("annotation for record {record_id} index {index} does not address a judged subtopic ({available} available)")]
    BadSubtopicIndex {
        record_id: String,
        index: usize,
        available: usize,
    },
    #[error("duplicate annotation for record {record_id} index {index} by {annotator_id}")]
    DuplicateAnnotation {
        record_id: String,
        index: usize,
        annotator_id: String,
    },
    #[error("strategy {0} has no judged subtopics")]
    NoItems(PromptStrategy),
    #[error("no annotators in the annotation set")]
    NoAnnotators,
    #[error("annotation csv, line {line}: {message}")]
    Csv { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MissingLabel {
    pub record_id: String,
    pub subtopic_index: usize,
    pub annotator_id: String,
}

/// One rubric outcome. `Good` means properly scoped; the rest are errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "&'static str")]
pub enum AnnotationLabel {
    Good,
    Repetitive,
    TooSpecific,
    TooGeneral,
    Tangential,
    Unrelated,
}

impl AnnotationLabel {
    pub const ALL: [AnnotationLabel; 6] = [
        AnnotationLabel::Good,
        AnnotationLabel::Repetitive,
        AnnotationLabel::TooSpecific,
        AnnotationLabel::TooGeneral,
        AnnotationLabel::Tangential,
        AnnotationLabel::Unrelated,
    ];

    /// Error categories in report column order.
    pub const ERRORS: [AnnotationLabel; 5] = [
        AnnotationLabel::TooGeneral,
        AnnotationLabel::TooSpecific,
        AnnotationLabel::Unrelated,
        AnnotationLabel::Tangential,
        AnnotationLabel::Repetitive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationLabel::Good => "Good",
            AnnotationLabel::Repetitive => "Repetitive",
            AnnotationLabel::TooSpecific => "TooSpecific",
            AnnotationLabel::TooGeneral => "TooGeneral",
            AnnotationLabel::Tangential => "Tangential",
            AnnotationLabel::Unrelated => "Unrelated",
        }
    }

    /// Column heading used in reports.
    pub fn heading(self) -> &'static str {
        match self {
            AnnotationLabel::Good => "Properly Scoped",
            AnnotationLabel::Repetitive => "Repetitive",
            AnnotationLabel::TooSpecific => "Too Specific",
            AnnotationLabel::TooGeneral => "Too General",
            AnnotationLabel::Tangential => "Tangential",
            AnnotationLabel::Unrelated => "Unrelated",
        }
    }

    pub fn is_error(self) -> bool {
        self != AnnotationLabel::Good
    }
}

impl fmt::Display for AnnotationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotationLabel {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnnotationLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| MetricsError::UnknownLabel(s.to_string()))
    }
}

impl TryFrom<String> for AnnotationLabel {
    type Error = MetricsError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AnnotationLabel> for &'static str {
    fn from(l: AnnotationLabel) -> Self {
        l.as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub record_id: String,
    pub subtopic_index: usize,
    pub annotator_id: String,
    pub label: AnnotationLabel,
}

impl AnnotationRecord {
    fn key(&self) -> (&str, usize, &str) {
        (&self.record_id, self.subtopic_index, &self.annotator_id)
    }
}

pub const ANNOTATION_CSV_HEADER: [&str; 4] =
    ["record_id", "subtopic_index", "annotator_id", "label"];

/// Reads `record_id,subtopic_index,annotator_id,label` rows.
pub fn read_annotations_csv<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ANNOTATION_CSV_HEADER {
        return Err(MetricsError::Csv {
            line: 1,
            message: format!(
                "expected header {}, got {}",
                ANNOTATION_CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(i).unwrap_or_default().to_string();
        let subtopic_index = field(1).parse().map_err(|_| MetricsError::Csv {
            line,
            message: format!("bad subtopic_index {:?}", field(1)),
        })?;
        let label = field(3).parse()?;
        out.push(AnnotationRecord {
            record_id: field(0),
            subtopic_index,
            annotator_id: field(2),
            label,
        });
    }
    Ok(out)
}

pub fn write_annotations_csv<W: Write>(
    writer: W,
    annotations: &[AnnotationRecord],
) -> Result<(), MetricsError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(ANNOTATION_CSV_HEADER).map_err(csv_err)?;
    for a in annotations {
        wtr.write_record([
            a.record_id.as_str(),
            &a.subtopic_index.to_string(),
            a.annotator_id.as_str(),
            a.label.as_str(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| MetricsError::Csv {
        line: 0,
        message: e.to_string(),
    })
}

fn csv_err(e: csv::Error) -> MetricsError {
    MetricsError::Csv {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    }
}

/// Replaces or inserts each of `incoming` by its (record, index, annotator)
/// key. Returns how many rows were applied.
pub fn upsert_annotations(
    existing: &mut Vec<AnnotationRecord>,
    incoming: &[AnnotationRecord],
) -> usize {
    let mut position: HashMap<(String, usize, String), usize> = existing
        .iter()
        .enumerate()
        .map(|(i, a)| {
            (
                (
                    a.record_id.clone(),
                    a.subtopic_index,
                    a.annotator_id.clone(),
                ),
                i,
            )
        })
        .collect();
    for a in incoming {
        let key = (
            a.record_id.clone(),
            a.subtopic_index,
            a.annotator_id.clone(),
        );
        match position.get(&key) {
            Some(i) => existing[*i] = a.clone(),
            None => {
                position.insert(key, existing.len());
                existing.push(a.clone());
            }
        }
    }
    incoming.len()
}

/// Checks every annotation against the records: the record exists, the
/// index addresses a judged subtopic, and no key repeats.
pub fn check_annotations(
    records: &[GenerationRecord],
    annotations: &[AnnotationRecord],
) -> Result<(), MetricsError> {
    let by_id: HashMap<&str, &GenerationRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    let mut seen = HashSet::new();
    for a in annotations {
        let record = by_id
            .get(a.record_id.as_str())
            .ok_or_else(|| MetricsError::UnknownRecord(a.record_id.clone()))?;
        let available = judged_count(record);
        if a.subtopic_index >= available {
            return Err(MetricsError::BadSubtopicIndex {
                record_id: a.record_id.clone(),
                index: a.subtopic_index,
                available,
            });
        }
        if !seen.insert(a.key()) {
            return Err(MetricsError::DuplicateAnnotation {
                record_id: a.record_id.clone(),
                index: a.subtopic_index,
                annotator_id: a.annotator_id.clone(),
            });
        }
    }
    Ok(())
}

fn judged_count(record: &GenerationRecord) -> usize {
    if record.status == RecordStatus::Ok {
        record.subtopics.len()
    } else {
        0
    }
}

/// Every annotator's label for every judged subtopic of one strategy.
#[derive(Debug, Clone)]
pub struct LabelMatrix {
    pub strategy: PromptStrategy,
    pub annotators: Vec<String>,
    /// (record id, subtopic index, output level) per judged subtopic.
    pub items: Vec<(String, usize, usize)>,
    /// `labels[annotator][item]`.
    pub labels: Vec<Vec<AnnotationLabel>>,
}

impl LabelMatrix {
    pub fn build(
        records: &[GenerationRecord],
        annotations: &[AnnotationRecord],
        strategy: PromptStrategy,
    ) -> Result<Self, MetricsError> {
        check_annotations(records, annotations)?;
        let annotators: Vec<String> = annotations
            .iter()
            .map(|a| a.annotator_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let items: Vec<(String, usize, usize)> = records
            .iter()
            .filter(|r| r.strategy == strategy)
            .flat_map(|r| {
                (0..judged_count(r)).map(move |i| (r.record_id.clone(), i, r.output_level()))
            })
            .collect();
        if items.is_empty() {
            return Err(MetricsError::NoItems(strategy));
        }
        if annotators.is_empty() {
            return Err(MetricsError::NoAnnotators);
        }
        let lookup: HashMap<(&str, usize, &str), AnnotationLabel> =
            annotations.iter().map(|a| (a.key(), a.label)).collect();
        let mut missing = Vec::new();
        let mut labels = Vec::with_capacity(annotators.len());
        for annotator in &annotators {
            let mut row = Vec::with_capacity(items.len());
            for (record_id, index, _) in &items {
                match lookup.get(&(record_id.as_str(), *index, annotator.as_str())) {
                    Some(label) => row.push(*label),
                    None => missing.push(MissingLabel {
                        record_id: record_id.clone(),
                        subtopic_index: *index,
                        annotator_id: annotator.clone(),
                    }),
                }
            }
            labels.push(row);
        }
        if !missing.is_empty() {
            return Err(MetricsError::IncompleteAnnotation { missing });
        }
        Ok(LabelMatrix {
            strategy,
            annotators,
            items,
            labels,
        })
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Mean over annotators of the fraction of items matching `pred`.
    fn mean_fraction(&self, pred: impl Fn(usize, AnnotationLabel) -> bool) -> f64 {
        let n = self.items.len() as f64;
        let per_annotator: Vec<f64> = self
            .labels
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(i, l)| pred(*i, **l))
                    .count() as f64
                    / n
            })
            .collect();
        per_annotator.iter().sum::<f64>() / per_annotator.len() as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.mean_fraction(|_, l| l == AnnotationLabel::Good)
    }

    pub fn error_by_category(&self) -> BTreeMap<AnnotationLabel, f64> {
        AnnotationLabel::ERRORS
            .into_iter()
            .map(|c| (c, self.mean_fraction(|_, l| l == c)))
            .collect()
    }

    /// Error fractions for output levels `2..=max_depth` (plus any deeper
    /// level that actually occurs).
    pub fn error_by_level(&self, max_depth: usize) -> BTreeMap<usize, f64> {
        let mut levels: BTreeSet<usize> = (2..=max_depth).collect();
        levels.extend(self.items.iter().map(|(_, _, level)| *level));
        levels
            .into_iter()
            .map(|level| {
                let frac = self.mean_fraction(|i, l| l.is_error() && self.items[i].2 == level);
                (level, frac)
            })
            .collect()
    }
}

pub fn accuracy(
    records: &[GenerationRecord],
    annotations: &[AnnotationRecord],
    strategy: PromptStrategy,
) -> Result<f64, MetricsError> {
    Ok(LabelMatrix::build(records, annotations, strategy)?.accuracy())
}

pub fn error_distribution(
    records: &[GenerationRecord],
    annotations: &[AnnotationRecord],
    strategy: PromptStrategy,
) -> Result<BTreeMap<AnnotationLabel, f64>, MetricsError> {
    Ok(LabelMatrix::build(records, annotations, strategy)?.error_by_category())
}

pub fn errors_by_level(
    records: &[GenerationRecord],
    annotations: &[AnnotationRecord],
    strategy: PromptStrategy,
    max_depth: usize,
) -> Result<BTreeMap<usize, f64>, MetricsError> {
    Ok(LabelMatrix::build(records, annotations, strategy)?.error_by_level(max_depth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: PromptStrategy,
    pub accuracy: f64,
    pub error_by_category: BTreeMap<AnnotationLabel, f64>,
    pub error_by_level: BTreeMap<usize, f64>,
    pub n_subtopics: usize,
    pub n_annotators: usize,
}

pub fn strategy_report(
    records: &[GenerationRecord],
    annotations: &[AnnotationRecord],
    strategy: PromptStrategy,
    max_depth: usize,
) -> Result<StrategyReport, MetricsError> {
    let m = LabelMatrix::build(records, annotations, strategy)?;
    Ok(StrategyReport {
        strategy,
        accuracy: m.accuracy(),
        error_by_category: m.error_by_category(),
        error_by_level: m.error_by_level(max_depth),
        n_subtopics: m.n_items(),
        n_annotators: m.annotators.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub strategy: PromptStrategy,
    pub annotator_a: String,
    pub annotator_b: String,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub pairs: Vec<PairKappa>,
    /// Mean pairwise kappa within each strategy.
    pub per_strategy: BTreeMap<PromptStrategy, f64>,
    /// Unweighted mean of the per-strategy values.
    pub average_kappa: f64,
}

/// Pairwise kappa for every annotator pair within each strategy.
pub fn agreement_report(
    records: &[GenerationRecord],
    annotations: &[AnnotationRecord],
    strategies: &[PromptStrategy],
) -> Result<AgreementReport, MetricsError> {
    if strategies.is_empty() {
        return Err(MetricsError::InvalidArgument("no strategies given".into()));
    }
    let mut pairs = Vec::new();
    let mut per_strategy = BTreeMap::new();
    for &strategy in strategies {
        let m = LabelMatrix::build(records, annotations, strategy)?;
        if m.annotators.len() < 2 {
            return Err(MetricsError::InvalidArgument(format!(
                "agreement needs at least 2 annotators, found {}",
                m.annotators.len()
            )));
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for a in 0..m.annotators.len() {
            for b in a + 1..m.annotators.len() {
                let kappa = cohen_kappa(&m.labels[a], &m.labels[b])?;
                sum += kappa;
                count += 1;
                pairs.push(PairKappa {
                    strategy,
                    annotator_a: m.annotators[a].clone(),
                    annotator_b: m.annotators[b].clone(),
                    kappa,
                });
            }
        }
        per_strategy.insert(strategy, sum / count as f64);
    }
    let average_kappa = per_strategy.values().sum::<f64>() / per_strategy.len() as f64;
    Ok(AgreementReport {
        pairs,
        per_strategy,
        average_kappa,
    })
}
