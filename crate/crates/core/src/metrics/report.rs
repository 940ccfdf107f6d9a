//! Evaluation report with text and JSON renderings.

use super::eval::{CalibrationBin, ConfusionMatrix, CoveragePoint, GroupSummary};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One metric for one household series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMetric {
    pub household: u32,
    pub group: u8,
    pub level: String,
    pub node: String,
    pub variant: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: u8,
    pub level: String,
    pub variant: String,
    pub metric: String,
    pub summary: GroupSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub label: String,
    pub bins: Vec<CalibrationBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageTable {
    pub label: String,
    pub points: Vec<CoveragePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub label: String,
    pub matrix: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub title: String,
    pub series: Vec<SeriesMetric>,
    pub summaries: Vec<SummaryRow>,
    pub calibration: Vec<CalibrationTable>,
    pub coverage: Vec<CoverageTable>,
    pub confusion: Vec<ConfusionTable>,
    pub scores: BTreeMap<String, f64>,
}

impl EvaluationReport {
    pub fn new(title: impl Into<String>) -> Self {
        EvaluationReport {
            schema_version: REPORT_SCHEMA_VERSION,
            title: title.into(),
            series: vec![],
            summaries: vec![],
            calibration: vec![],
            coverage: vec![],
            confusion: vec![],
            scores: BTreeMap::new(),
        }
    }

    /// Recompute `summaries` from `series`, keyed by group, level, variant and metric.
    pub fn summarize(&mut self) {
        let mut by: BTreeMap<(u8, String, String, String), Vec<f64>> = BTreeMap::new();
        for s in &self.series {
            by.entry((s.group, s.level.clone(), s.variant.clone(), s.metric.clone())).or_default().push(s.value);
        }
        self.summaries = by
            .into_iter()
            .map(|((group, level, variant, metric), v)| SummaryRow {
                group,
                level,
                variant,
                metric,
                summary: super::eval::summarize_group(&v),
            })
            .collect();
    }

    pub fn summary(&self, group: u8, level: &str, variant: &str, metric: &str) -> Option<&GroupSummary> {
        self.summaries
            .iter()
            .find(|r| r.group == group && r.level == level && r.variant == variant && r.metric == metric)
            .map(|r| &r.summary)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: EvaluationReport = serde_json::from_str(s)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "report schema version {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                r.schema_version
            )));
        }
        Ok(r)
    }

    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "# {} (report schema v{})", self.title, self.schema_version);
        if !self.summaries.is_empty() {
            let _ = writeln!(o, "\n## Summaries: median (p25, p75)");
            let _ = writeln!(
                o,
                "{:<6} {:<14} {:<10} {:<8} {:>26} {:>6}",
                "group", "level", "variant", "metric", "median (p25, p75)", "n"
            );
            for r in &self.summaries {
                let s = &r.summary;
                let _ = writeln!(
                    o,
                    "{:<6} {:<14} {:<10} {:<8} {:>26} {:>6}",
                    r.group,
                    r.level,
                    r.variant,
                    r.metric,
                    format!("{:.3} ({:.3}, {:.3})", s.median, s.p25, s.p75),
                    s.n
                );
            }
        }
        if !self.scores.is_empty() {
            let _ = writeln!(o, "\n## Scores");
            for (k, v) in &self.scores {
                let _ = writeln!(o, "{k:<40} {v:>10.4}");
            }
        }
        for c in &self.calibration {
            let _ = writeln!(o, "\n## Calibration: {}", c.label);
            let _ = writeln!(o, "{:<12} {:>10} {:>10} {:>8}", "bin", "predicted", "observed", "count");
            for b in &c.bins {
                let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    o,
                    "{:<12} {:>10} {:>10} {:>8}",
                    format!("[{:.2},{:.2})", b.lower, b.upper),
                    fmt(b.mean_predicted),
                    fmt(b.frequency),
                    b.count
                );
            }
        }
        for c in &self.coverage {
            let _ = writeln!(o, "\n## Coverage: {}", c.label);
            let _ = writeln!(o, "{:<8} {:>10} {:>8}", "level", "coverage", "count");
            for p in &c.points {
                let _ = writeln!(o, "{:<8.2} {:>10.4} {:>8}", p.level, p.coverage, p.count);
            }
        }
        for c in &self.confusion {
            let m = &c.matrix;
            let _ = writeln!(o, "\n## Confusion: {} (n = {})", c.label, m.count);
            let _ = writeln!(o, "{:<8} {:>8} {:>8}", "", "f>0", "f=0");
            let _ = writeln!(o, "{:<8} {:>8.4} {:>8.4}", "y>0", m.pos_pos, m.pos_zero);
            let _ = writeln!(o, "{:<8} {:>8.4} {:>8.4}", "y=0", m.zero_pos, m.zero_zero);
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_version_check() {
        let mut r = EvaluationReport::new("t");
        r.series.push(SeriesMetric {
            household: 1,
            group: 1,
            level: "item".into(),
            node: "a".into(),
            variant: "M1".into(),
            metric: "MAD".into(),
            value: 0.5,
            n: 10,
        });
        r.summarize();
        let s = r.to_json().unwrap();
        assert_eq!(EvaluationReport::from_json(&s).unwrap(), r);
        let bad = s.replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(EvaluationReport::from_json(&bad).is_err());
        assert!(r.to_text().contains("0.500 (0.500, 0.500)"));
    }
}
