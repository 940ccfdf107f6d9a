//! Flat CSV tables behind every report and plot.

use crate::CliResult;
use hhcast::data::ItemRanking;
use hhcast::experiment::{ExperimentOutput, FanPoint};
use hhcast::metrics::EvaluationReport;
use hhcast::Error;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::Path;

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> CliResult {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    for r in rows {
        w.serialize(r).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a table written by `write_rows`; a missing file is a usage error.
pub fn read_rows<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    if !path.is_file() {
        return Err(crate::config_error(format!("missing table {}", path.display())));
    }
    let mut r = csv::Reader::from_path(path).map_err(Error::from)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>().map_err(Error::from)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_predicted: Option<f64>,
    pub frequency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub label: String,
    pub level: f64,
    pub coverage: f64,
    pub count: usize,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    group: u8,
    level: &'a str,
    variant: &'a str,
    metric: &'a str,
    median: f64,
    p25: f64,
    p75: f64,
    n: usize,
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    key: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct ConfusionRow<'a> {
    label: &'a str,
    pos_pos: f64,
    pos_zero: f64,
    zero_pos: f64,
    zero_zero: f64,
    count: usize,
}

#[derive(Serialize)]
struct SensitivityRow<'a> {
    household: u32,
    group: u8,
    variant: &'a str,
    item: &'a str,
    week: u32,
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub household: u32,
    pub variant: String,
    pub item: String,
    pub week: u32,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub variant: String,
    pub household: u32,
    pub week: u32,
    pub horizon: usize,
    pub prob: f64,
    pub returned: bool,
}

#[derive(Serialize)]
pub struct ProfileRow {
    pub household: u32,
    pub group: u8,
    pub item: String,
    pub dop: f64,
    pub dpp: f64,
    pub rpp: f64,
    pub category: u8,
}

#[derive(Serialize)]
pub struct RankingRow {
    item: String,
    households: usize,
    loyal: usize,
    sensitive: usize,
    no_promotions: usize,
    disinterested: usize,
    share_sensitive: f64,
}

impl From<&ItemRanking> for RankingRow {
    fn from(r: &ItemRanking) -> Self {
        let [loyal, sensitive, no_promotions, disinterested] = r.category_counts;
        RankingRow {
            item: r.name.clone(),
            households: r.households,
            loyal,
            sensitive,
            no_promotions,
            disinterested,
            share_sensitive: r.share_sensitive,
        }
    }
}

pub fn calibration_rows(rep: &EvaluationReport) -> Vec<CalibrationRow> {
    rep.calibration
        .iter()
        .flat_map(|t| {
            t.bins.iter().map(|b| CalibrationRow {
                label: t.label.clone(),
                lower: b.lower,
                upper: b.upper,
                count: b.count,
                mean_predicted: b.mean_predicted,
                frequency: b.frequency,
            })
        })
        .collect()
}

pub fn coverage_rows(rep: &EvaluationReport) -> Vec<CoverageRow> {
    rep.coverage
        .iter()
        .flat_map(|t| {
            t.points.iter().map(|p| CoverageRow {
                label: t.label.clone(),
                level: p.level,
                coverage: p.coverage,
                count: p.count,
            })
        })
        .collect()
}

/// Tables derived from the report alone: summaries, scores, calibration,
/// coverage and confusion matrices.
pub fn write_summary_tables(dir: &Path, rep: &EvaluationReport) -> CliResult {
    std::fs::create_dir_all(dir)?;
    let summaries: Vec<SummaryRow> = rep
        .summaries
        .iter()
        .map(|r| SummaryRow {
            group: r.group,
            level: &r.level,
            variant: &r.variant,
            metric: &r.metric,
            median: r.summary.median,
            p25: r.summary.p25,
            p75: r.summary.p75,
            n: r.summary.n,
        })
        .collect();
    write_rows(&dir.join("summaries.csv"), &summaries)?;
    let scores: Vec<ScoreRow> = rep.scores.iter().map(|(k, v)| ScoreRow { key: k, value: *v }).collect();
    write_rows(&dir.join("scores.csv"), &scores)?;
    write_rows(&dir.join("calibration.csv"), &calibration_rows(rep))?;
    write_rows(&dir.join("coverage.csv"), &coverage_rows(rep))?;
    let confusion: Vec<ConfusionRow> = rep
        .confusion
        .iter()
        .map(|c| ConfusionRow {
            label: &c.label,
            pos_pos: c.matrix.pos_pos,
            pos_zero: c.matrix.pos_zero,
            zero_pos: c.matrix.zero_pos,
            zero_zero: c.matrix.zero_zero,
            count: c.matrix.count,
        })
        .collect();
    write_rows(&dir.join("confusion.csv"), &confusion)
}

/// Every table of a finished run.
pub fn write_run_tables(dir: &Path, out: &ExperimentOutput) -> CliResult {
    write_summary_tables(dir, &out.report)?;
    write_rows(&dir.join("series.csv"), &out.report.series)?;
    let sens: Vec<SensitivityRow> = out
        .sensitivity
        .iter()
        .map(|s| SensitivityRow {
            household: s.household,
            group: s.group,
            variant: &s.variant,
            item: &s.item,
            week: s.point.week,
            mean: s.point.mean,
            sd: s.point.sd,
            lower: s.point.lower,
            upper: s.point.upper,
        })
        .collect();
    write_rows(&dir.join("sensitivity.csv"), &sens)?;
    let traj: Vec<TrajectoryRow> = out
        .trajectories
        .iter()
        .flat_map(|t| {
            t.points.iter().map(|p| TrajectoryRow {
                household: t.household,
                variant: t.variant.clone(),
                item: t.item.clone(),
                week: p.week,
                mean: p.mean,
                sd: p.sd,
                lower: p.lower,
                upper: p.upper,
            })
        })
        .collect();
    write_rows(&dir.join("trajectories.csv"), &traj)?;
    write_rows(&dir.join("fans.csv"), &out.fans)?;
    let returns: Vec<ReturnRow> = out
        .return_predictions
        .iter()
        .flat_map(|(v, ps)| {
            ps.iter().map(|p| ReturnRow {
                variant: v.clone(),
                household: p.household,
                week: p.week,
                horizon: p.horizon,
                prob: p.prob,
                returned: p.returned,
            })
        })
        .collect();
    write_rows(&dir.join("return_predictions.csv"), &returns)
}

pub fn read_trajectories(path: &Path) -> CliResult<Vec<TrajectoryRow>> {
    read_rows(path)
}

pub fn read_fans(path: &Path) -> CliResult<Vec<FanPoint>> {
    read_rows(path)
}
