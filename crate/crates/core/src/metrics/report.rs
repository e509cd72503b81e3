//! Markdown and CSV renderings of strategy reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    agreement_report, strategy_report, AgreementReport, AnnotationLabel, AnnotationRecord,
    MetricsError, StrategyReport,
};
use crate::hierarchy::DEFAULT_MAX_DEPTH;
use crate::run::{GenerationRecord, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub file_name: String,
    pub content: String,
}

/// Everything the report endpoint and `report` command show for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub strategies: Vec<StrategyReport>,
    /// Absent when fewer than two annotators labeled the run.
    pub agreement: Option<AgreementReport>,
}

pub fn build_run_report(
    manifest: &RunManifest,
    records: &[GenerationRecord],
    annotations: &[AnnotationRecord],
) -> Result<RunReport, MetricsError> {
    let mut strategies = Vec::new();
    let mut missing = Vec::new();
    for s in &manifest.strategies {
        match strategy_report(records, annotations, *s, manifest.max_depth) {
            Ok(r) => strategies.push(r),
            // Gather the gaps of every strategy, not just the first.
            Err(MetricsError::IncompleteAnnotation { missing: m }) => missing.extend(m),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(MetricsError::IncompleteAnnotation { missing });
    }
    let agreement = if strategies.iter().all(|s| s.n_annotators >= 2) && !strategies.is_empty() {
        Some(agreement_report(
            records,
            annotations,
            &manifest.strategies,
        )?)
    } else {
        None
    };
    Ok(RunReport {
        run_id: manifest.run_id.clone(),
        strategies,
        agreement,
    })
}

/// Integer percent, rounding halves up.
pub fn display_percent(fraction: f64) -> i64 {
    // Snap away binary noise so 0.775 counts as exactly 77.5.
    let pct = (fraction * 100.0 * 1e9).round() / 1e9;
    (pct + 0.5).floor() as i64
}

fn pct(fraction: f64) -> String {
    format!("{}%", display_percent(fraction))
}

fn level_columns(reports: &[StrategyReport]) -> Vec<usize> {
    let levels: BTreeSet<usize> = reports
        .iter()
        .flat_map(|r| r.error_by_level.keys().copied())
        .collect();
    if levels.is_empty() {
        (2..=DEFAULT_MAX_DEPTH).collect()
    } else {
        levels.into_iter().collect()
    }
}

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn md_rule(n: usize) -> String {
    format!("|{}\n", "---|".repeat(n))
}

pub fn emit_report(
    reports: &[StrategyReport],
    agreement: Option<&AgreementReport>,
    format: ReportFormat,
) -> Vec<ReportDocument> {
    match format {
        ReportFormat::Markdown => vec![ReportDocument {
            file_name: "report.md".into(),
            content: markdown(reports, agreement),
        }],
        ReportFormat::Csv => csv_documents(reports, agreement),
    }
}

fn markdown(reports: &[StrategyReport], agreement: Option<&AgreementReport>) -> String {
    let mut out = String::new();
    out.push_str("## Properly scoped subtopics\n\n");
    out.push_str(&md_row(&["Strategy".into(), "Properly Scoped".into()]));
    out.push_str(&md_rule(2));
    for r in reports {
        out.push_str(&md_row(&[
            r.strategy.display_name().into(),
            pct(r.accuracy),
        ]));
    }

    out.push_str("\n## Error categories\n\n");
    let mut header = vec!["Strategy".to_string()];
    header.extend(
        AnnotationLabel::ERRORS
            .iter()
            .map(|c| c.heading().to_string()),
    );
    out.push_str(&md_row(&header));
    out.push_str(&md_rule(header.len()));
    for r in reports {
        let mut row = vec![r.strategy.display_name().to_string()];
        row.extend(
            AnnotationLabel::ERRORS
                .iter()
                .map(|c| pct(r.error_by_category.get(c).copied().unwrap_or(0.0))),
        );
        out.push_str(&md_row(&row));
    }

    out.push_str("\n## Errors by level\n\n");
    let levels = level_columns(reports);
    let mut header = vec!["Strategy".to_string()];
    header.extend(levels.iter().map(|l| format!("Level {l}")));
    out.push_str(&md_row(&header));
    out.push_str(&md_rule(header.len()));
    for r in reports {
        let mut row = vec![r.strategy.display_name().to_string()];
        row.extend(
            levels
                .iter()
                .map(|l| pct(r.error_by_level.get(l).copied().unwrap_or(0.0))),
        );
        out.push_str(&md_row(&row));
    }

    if let Some(a) = agreement {
        out.push_str("\n## Inter-rater agreement\n\n");
        out.push_str(&md_row(&[
            "Strategy".into(),
            "Annotators".into(),
            "Cohen's kappa".into(),
        ]));
        out.push_str(&md_rule(3));
        for p in &a.pairs {
            out.push_str(&md_row(&[
                p.strategy.display_name().into(),
                format!("{} / {}", p.annotator_a, p.annotator_b),
                format!("{:.2}", p.kappa),
            ]));
        }
        let _ = writeln!(out, "\nAverage kappa: {:.2}", a.average_kappa);
    }
    out
}

fn csv_documents(
    reports: &[StrategyReport],
    agreement: Option<&AgreementReport>,
) -> Vec<ReportDocument> {
    let mut accuracy = String::from("strategy,percent,fraction,n_subtopics,n_annotators\n");
    for r in reports {
        let _ = writeln!(
            accuracy,
            "{},{},{},{},{}",
            r.strategy.short_name(),
            display_percent(r.accuracy),
            r.accuracy,
            r.n_subtopics,
            r.n_annotators
        );
    }
    let mut category = String::from("strategy,category,percent,fraction\n");
    for r in reports {
        for c in AnnotationLabel::ERRORS {
            let f = r.error_by_category.get(&c).copied().unwrap_or(0.0);
            let _ = writeln!(
                category,
                "{},{},{},{}",
                r.strategy.short_name(),
                c.as_str(),
                display_percent(f),
                f
            );
        }
    }
    let levels = level_columns(reports);
    let mut by_level = String::from("strategy,level,percent,fraction\n");
    for r in reports {
        for l in &levels {
            let f = r.error_by_level.get(l).copied().unwrap_or(0.0);
            let _ = writeln!(
                by_level,
                "{},{},{},{}",
                r.strategy.short_name(),
                l,
                display_percent(f),
                f
            );
        }
    }
    let mut docs = vec![
        ReportDocument {
            file_name: "accuracy.csv".into(),
            content: accuracy,
        },
        ReportDocument {
            file_name: "error_by_category.csv".into(),
            content: category,
        },
        ReportDocument {
            file_name: "error_by_level.csv".into(),
            content: by_level,
        },
    ];
    if let Some(a) = agreement {
        let mut text = String::from("strategy,annotator_a,annotator_b,kappa\n");
        for p in &a.pairs {
            let _ = writeln!(
                text,
                "{},{},{},{}",
                p.strategy.short_name(),
                p.annotator_a,
                p.annotator_b,
                p.kappa
            );
        }
        let _ = writeln!(text, "average,,,{}", a.average_kappa);
        docs.push(ReportDocument {
            file_name: "agreement.csv".into(),
            content: text,
        });
    }
    docs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptStrategy;
    use std::collections::BTreeMap;

    #[test]
    fn half_rounds_up() {
        assert_eq!(display_percent(0.775), 78);
        assert_eq!(display_percent(0.27), 27);
        assert_eq!(display_percent(0.004), 0);
        assert_eq!(display_percent(0.005), 1);
        assert_eq!(display_percent(0.0), 0);
        assert_eq!(display_percent(1.0), 100);
    }

    #[test]
    fn empty_reports_still_have_headers() {
        let docs = emit_report(&[], None, ReportFormat::Markdown);
        let md = &docs[0].content;
        assert!(md.contains("| Strategy | Properly Scoped |"));
        assert!(md.contains(
            "| Strategy | Too General | Too Specific | Unrelated | Tangential | Repetitive |"
        ));
        assert!(md.contains("| Strategy | Level 2 | Level 3 | Level 4 | Level 5 |"));
        let csv = emit_report(&[], None, ReportFormat::Csv);
        assert_eq!(csv.len(), 3);
        assert!(csv.iter().all(|d| d.content.lines().count() == 1));
    }

    #[test]
    fn csv_keeps_raw_fractions() {
        let report = StrategyReport {
            strategy: PromptStrategy::FullPathPlusCurrent,
            accuracy: 0.775,
            error_by_category: AnnotationLabel::ERRORS
                .iter()
                .map(|c| (*c, 0.045))
                .collect(),
            error_by_level: BTreeMap::from([(2, 0.0), (3, 0.225)]),
            n_subtopics: 40,
            n_annotators: 2,
        };
        let docs = emit_report(&[report], None, ReportFormat::Csv);
        assert!(docs[0].content.contains("full,78,0.775,40,2"));
        assert!(docs[1].content.contains("full,TooGeneral,5,0.045"));
        assert!(docs[2].content.contains("full,3,23,0.225"));
    }
}
