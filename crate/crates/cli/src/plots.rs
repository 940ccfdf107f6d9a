//! Static SVG views of a run. Each plot is written next to a CSV holding
//! exactly the numbers drawn.

use crate::tables::{calibration_rows, coverage_rows, write_rows, CalibrationRow, TrajectoryRow};
use crate::{CliResult, Failure};
use hhcast::data::LatentTruth;
use hhcast::experiment::FanPoint;
use hhcast::metrics::EvaluationReport;
use hhcast::HierarchySpec;
use plotters::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure { code: 1, message: format!("plotting failed: {e}") }
}

/// File-name-safe form of a label.
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn padded(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad)..(hi + pad)
}

/// Context for the optional truth overlay on sensitivity plots.
pub struct Truth<'a> {
    pub latent: &'a LatentTruth,
    pub hierarchy: &'a HierarchySpec,
}

impl Truth<'_> {
    fn sensitivity(&self, household: u32, item: &str) -> Option<f64> {
        let i = self.hierarchy.item_index(item)?;
        self.latent.household(household).map(|h| h.items[i].sensitivity)
    }
}

pub fn render_all(
    dir: &Path,
    rep: &EvaluationReport,
    traj: &[TrajectoryRow],
    fans: &[FanPoint],
    truth: Option<&Truth>,
) -> CliResult<usize> {
    let mut n = 0;
    let mut by_label: BTreeMap<String, Vec<CalibrationRow>> = BTreeMap::new();
    for r in calibration_rows(rep) {
        by_label.entry(r.label.clone()).or_default().push(r);
    }
    for (label, rows) in &by_label {
        let name = format!("calibration_{}", slug(label));
        write_rows(&dir.join(format!("{name}.csv")), rows)?;
        calibration(&dir.join(format!("{name}.svg")), label, rows)?;
        n += 1;
    }
    if !rep.coverage.is_empty() {
        write_rows(&dir.join("coverage_plot.csv"), &coverage_rows(rep))?;
        coverage(&dir.join("coverage.svg"), rep)?;
        n += 1;
    }
    let mut groups: BTreeMap<(u32, String), Vec<&TrajectoryRow>> = BTreeMap::new();
    for t in traj {
        groups.entry((t.household, t.variant.clone())).or_default().push(t);
    }
    for ((hh, v), rows) in &groups {
        let name = format!("sensitivity_{hh}_{}", slug(v));
        sensitivity(dir, &name, *hh, v, rows, truth)?;
        n += 1;
    }
    let mut fan_groups: BTreeMap<(u32, String), Vec<FanPoint>> = BTreeMap::new();
    for f in fans {
        fan_groups.entry((f.household, f.variant.clone())).or_default().push(f.clone());
    }
    for ((hh, v), rows) in &fan_groups {
        let name = format!("fan_{hh}_{}", slug(v));
        write_rows(&dir.join(format!("{name}.csv")), rows)?;
        fan(&dir.join(format!("{name}.svg")), *hh, v, rows)?;
        n += 1;
    }
    Ok(n)
}

fn calibration(path: &Path, label: &str, rows: &[CalibrationRow]) -> CliResult {
    let root = SVGBackend::new(path, (640, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("Calibration: {label}"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..1.0, 0.0..1.0)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("forecast probability").y_desc("observed frequency").draw().map_err(plot_err)?;
    chart.draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.4))).map_err(plot_err)?;
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| Some((r.mean_predicted?, r.frequency?))).collect();
    chart.draw_series(LineSeries::new(pts.clone(), PALETTE[0].stroke_width(2))).map_err(plot_err)?;
    chart.draw_series(pts.iter().map(|&p| Circle::new(p, 4, PALETTE[0].filled()))).map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn coverage(path: &Path, rep: &EvaluationReport) -> CliResult {
    let root = SVGBackend::new(path, (720, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let levels: Vec<f64> = rep.coverage.iter().flat_map(|t| t.points.iter().map(|p| p.level)).collect();
    let lo = levels.iter().copied().fold(1.0, f64::min).min(0.5);
    let mut chart = ChartBuilder::on(&root)
        .caption("Interval coverage", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(lo..1.0, lo..1.0)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("nominal level").y_desc("empirical coverage").draw().map_err(plot_err)?;
    chart.draw_series(LineSeries::new([(lo, lo), (1.0, 1.0)], BLACK.mix(0.4))).map_err(plot_err)?;
    for (k, t) in rep.coverage.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = t.points.iter().map(|p| (p.level, p.coverage)).collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(t.label.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[derive(Serialize)]
struct SensitivityPlotRow<'a> {
    household: u32,
    variant: &'a str,
    item: &'a str,
    week: u32,
    mean: f64,
    lower: f64,
    upper: f64,
    truth: Option<f64>,
}

/// Filtered household-discount coefficient with its 90% band, one panel per item.
fn sensitivity(
    dir: &Path,
    name: &str,
    hh: u32,
    variant: &str,
    rows: &[&TrajectoryRow],
    truth: Option<&Truth>,
) -> CliResult {
    let mut items: Vec<&str> = vec![];
    for r in rows {
        if !items.contains(&r.item.as_str()) {
            items.push(&r.item);
        }
    }
    let truth_of = |item: &str| truth.and_then(|t| t.sensitivity(hh, item));
    let table: Vec<SensitivityPlotRow> = rows
        .iter()
        .map(|r| SensitivityPlotRow {
            household: hh,
            variant,
            item: &r.item,
            week: r.week,
            mean: r.mean,
            lower: r.lower,
            upper: r.upper,
            truth: truth_of(&r.item),
        })
        .collect();
    write_rows(&dir.join(format!("{name}.csv")), &table)?;

    let cols = 4usize;
    let nrows = items.len().div_ceil(cols).max(1);
    let path = dir.join(format!("{name}.svg"));
    let root = SVGBackend::new(&path, (1200, 260 * nrows as u32 + 40)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root
        .titled(&format!("Promotion sensitivity, household {hh}, {variant}"), ("sans-serif", 20))
        .map_err(plot_err)?;
    let panels = root.split_evenly((nrows, cols));
    for (panel, item) in panels.iter().zip(&items) {
        let pts: Vec<&&TrajectoryRow> = rows.iter().filter(|r| r.item == *item).collect();
        let w0 = pts.iter().map(|r| r.week).min().unwrap_or(0) as f64;
        let w1 = pts.iter().map(|r| r.week).max().unwrap_or(1) as f64;
        let t = truth_of(item);
        let lo = pts.iter().map(|r| r.lower).chain(t).fold(0.0, f64::min);
        let hi = pts.iter().map(|r| r.upper).chain(t).fold(0.0, f64::max);
        let mut chart = ChartBuilder::on(panel)
            .caption(*item, ("sans-serif", 14))
            .margin(6)
            .x_label_area_size(24)
            .y_label_area_size(36)
            .build_cartesian_2d(w0..w1.max(w0 + 1.0), padded(lo, hi))
            .map_err(plot_err)?;
        chart.configure_mesh().x_labels(5).y_labels(5).draw().map_err(plot_err)?;
        let band: Vec<(f64, f64)> = pts
            .iter()
            .map(|r| (r.week as f64, r.upper))
            .chain(pts.iter().rev().map(|r| (r.week as f64, r.lower)))
            .collect();
        chart.draw_series(std::iter::once(Polygon::new(band, PALETTE[0].mix(0.25)))).map_err(plot_err)?;
        chart
            .draw_series(LineSeries::new(pts.iter().map(|r| (r.week as f64, r.mean)), PALETTE[0].stroke_width(2)))
            .map_err(plot_err)?;
        chart.draw_series(LineSeries::new([(w0, 0.0), (w1, 0.0)], BLACK.mix(0.5))).map_err(plot_err)?;
        if let Some(t) = t {
            chart.draw_series(LineSeries::new([(w0, t), (w1, t)], PALETTE[1].stroke_width(1))).map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)
}

/// Dollar global-spend forecasts: 50% and 90% bands, median and outcome.
fn fan(path: &Path, hh: u32, variant: &str, rows: &[FanPoint]) -> CliResult {
    let root = SVGBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let w0 = rows.iter().map(|r| r.week).min().unwrap_or(0) as f64;
    let w1 = rows.iter().map(|r| r.week).max().unwrap_or(1) as f64;
    let hi = rows.iter().map(|r| r.q95.max(r.actual)).fold(1.0, f64::max);
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("Global spend forecasts, household {hh}, {variant}"), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(w0..w1.max(w0 + 1.0), 0.0..hi * 1.05)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("week").y_desc("spend ($)").draw().map_err(plot_err)?;
    let band = |lo: fn(&FanPoint) -> f64, up: fn(&FanPoint) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.week as f64, up(r))).chain(rows.iter().rev().map(|r| (r.week as f64, lo(r)))).collect()
    };
    chart
        .draw_series(std::iter::once(Polygon::new(band(|r| r.q05, |r| r.q95), PALETTE[0].mix(0.15))))
        .map_err(plot_err)?;
    chart
        .draw_series(std::iter::once(Polygon::new(band(|r| r.q25, |r| r.q75), PALETTE[0].mix(0.3))))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(rows.iter().map(|r| (r.week as f64, r.q50)), PALETTE[0].stroke_width(2)))
        .map_err(plot_err)?;
    chart
        .draw_series(rows.iter().map(|r| Circle::new((r.week as f64, r.actual), 3, BLACK.filled())))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
