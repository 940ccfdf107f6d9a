//! Rolling one-step-ahead evaluation of cascade variants over a corpus.
//!
//! Every household is filtered week by week: forecast, score, update.
//! Households run in parallel and results are merged in household order, so
//! output is independent of the thread count.

use crate::cascade::{
    CascadeInstance, CovariateSpec, Level, ModelConfig, ProjectionMode, SensitivityPoint, WeekCovariates,
};
use crate::data::{Corpus, DiscountTable, Group, WeeklyRecord};
use crate::distribution::{ForecastDistribution as FD, DEFAULT_LOWER, DEFAULT_UPPER};
use crate::error::{Error, Result};
use crate::metrics::{
    add_hits, auc, brier, calibration_bins, coverage_from_hits, f1_score, optimal_points, realized_loss,
    CalibrationTable, ConfusionMatrix, ConfusionTable, CoverageTable, EvaluationReport, LossKind, LossSpec,
    SeriesMetric,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// A model variant: a preset name (`M1`, `M2`, `M3`) or a named custom spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantDef {
    Preset(String),
    Custom { name: String, covariates: CovariateSpec },
}

impl VariantDef {
    pub fn resolve(&self) -> Result<(String, CovariateSpec)> {
        match self {
            VariantDef::Preset(n) => CovariateSpec::preset(n)
                .map(|s| (n.to_ascii_uppercase(), s))
                .ok_or_else(|| Error::Config(format!("unknown model variant '{n}'"))),
            VariantDef::Custom { name, covariates } => {
                covariates.validate()?;
                Ok((name.clone(), covariates.clone()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub title: String,
    pub variants: Vec<VariantDef>,
    pub model: ModelConfig,
    pub projection: ProjectionMode,
    /// Weeks `1..=burn_in` are filtered but not scored.
    pub burn_in: u32,
    /// Return-forecast horizons for classification scores.
    pub horizons: Vec<usize>,
    /// Items are scored for households buying them in more than this many weeks.
    pub min_item_weeks: usize,
    pub calibration_bins: usize,
    pub coverage_levels: Vec<f64>,
    /// Truncation of dollar-scale spend forecasts.
    pub spend_lower: f64,
    pub spend_upper: f64,
    /// Items to score; empty means all.
    pub items: Vec<String>,
    /// Number of leading households with stored trajectories and forecast fans.
    pub trajectory_households: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            title: "household cascade evaluation".into(),
            variants: ["M1", "M2", "M3"].iter().map(|s| VariantDef::Preset(s.to_string())).collect(),
            model: ModelConfig::default(),
            projection: ProjectionMode::Known,
            burn_in: 12,
            horizons: vec![1, 4, 8],
            min_item_weeks: 10,
            calibration_bins: 10,
            coverage_levels: (1..=19).map(|k| k as f64 * 0.05).collect(),
            spend_lower: DEFAULT_LOWER,
            spend_upper: DEFAULT_UPPER,
            items: vec![],
            trajectory_households: 3,
            seed: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_variants(&self) -> Result<Vec<(String, CovariateSpec)>> {
        if self.variants.is_empty() {
            return Err(Error::Config("no model variants".into()));
        }
        let v: Vec<_> = self.variants.iter().map(|v| v.resolve()).collect::<Result<_>>()?;
        for (k, (n, _)) in v.iter().enumerate() {
            if v[..k].iter().any(|(m, _)| m == n) {
                return Err(Error::Config(format!("variant '{n}' listed twice")));
            }
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_variants()?;
        self.model.validate()?;
        if let ProjectionMode::Ensemble { size: 0 } = self.projection {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        if self.horizons.contains(&0) {
            return Err(Error::Config("horizons must be at least 1".into()));
        }
        if self.calibration_bins == 0 {
            return Err(Error::Config("need at least one calibration bin".into()));
        }
        if self.coverage_levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::Config("coverage levels must lie in [0, 1]".into()));
        }
        if !(self.spend_lower > 0.0 && self.spend_lower < self.spend_upper && self.spend_upper.is_finite()) {
            return Err(Error::Config("spend truncation needs 0 < lower < upper < inf".into()));
        }
        Ok(())
    }
}

/// Final-week summary of one household-item sensitivity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub household: u32,
    pub group: Group,
    pub variant: String,
    pub item: String,
    pub point: SensitivityPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub household: u32,
    pub variant: String,
    pub item: String,
    pub points: Vec<SensitivityPoint>,
}

/// Dollar-scale global spend forecast quantiles for one week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanPoint {
    pub household: u32,
    pub variant: String,
    pub week: u32,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub actual: f64,
}

/// One-step return forecast paired with its outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnPrediction {
    pub household: u32,
    pub week: u32,
    pub horizon: usize,
    pub prob: f64,
    pub returned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub report: EvaluationReport,
    /// Return forecasts per variant, in household and week order.
    pub return_predictions: BTreeMap<String, Vec<ReturnPrediction>>,
    pub sensitivity: Vec<SensitivityRecord>,
    pub trajectories: Vec<Trajectory>,
    pub fans: Vec<FanPoint>,
}

#[derive(Default, Clone)]
struct LossAcc {
    sum: [f64; 3],
    n: [usize; 3],
}

#[derive(Default)]
struct VariantAcc {
    series: BTreeMap<(Level, usize), LossAcc>,
    returns: Vec<ReturnPrediction>,
    coverage: BTreeMap<Level, (Vec<usize>, usize)>,
    confusion: [[usize; 4]; 3],
}

struct HouseholdOut {
    per_variant: Vec<VariantAcc>,
    sensitivity: Vec<SensitivityRecord>,
    trajectories: Vec<Trajectory>,
    fans: Vec<FanPoint>,
}

fn level_nodes(level: Level) -> bool {
    matches!(level, Level::Global | Level::Category | Level::SubCategory | Level::Item)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    variants: &'a [(String, CovariateSpec)],
    corpus: &'a Corpus,
    tables: &'a BTreeMap<Group, DiscountTable>,
    scored_items: Vec<bool>,
}

impl Ctx<'_> {
    fn node_name(&self, level: Level, k: usize) -> String {
        let h = &self.corpus.hierarchy;
        match level {
            Level::Return => "return".into(),
            Level::Global => "total".into(),
            Level::Category => h.category_name(k).into(),
            Level::SubCategory => h.sub_category_name(k).into(),
            Level::Item => h.item_name(k).into(),
        }
    }

    fn score(&self, acc: &mut LossAcc, dist: &FD, y: f64) -> Result<()> {
        let (mad, mape, zape) = optimal_points(dist)?;
        for (k, f) in [Some(mad), mape, Some(zape)].into_iter().enumerate() {
            let Some(f) = f else { continue };
            if let Some(l) = realized_loss(y, f, LossSpec { kind: LossKind::ALL[k] }) {
                acc.sum[k] += l;
                acc.n[k] += 1;
            }
        }
        Ok(())
    }

    fn dollars(&self, d: &FD) -> Result<FD> {
        d.to_dollars(self.cfg.spend_lower, self.cfg.spend_upper)
    }

    fn household(&self, index: usize, id: u32, records: &[WeeklyRecord]) -> Result<HouseholdOut> {
        let cfg = self.cfg;
        let h = &self.corpus.hierarchy;
        let group = self.corpus.group_of(id);
        let table = &self.tables[&group];
        let item_ok: Vec<bool> = (0..h.n_items())
            .map(|i| {
                self.scored_items[i] && records.iter().filter(|r| r.items[i].quantity > 0).count() > cfg.min_item_weeks
            })
            .collect();
        let keep_traj = index < cfg.trajectory_households;
        let mut out = HouseholdOut { per_variant: vec![], sensitivity: vec![], trajectories: vec![], fans: vec![] };
        for (vname, spec) in self.variants {
            let mut acc = VariantAcc::default();
            let mut inst = CascadeInstance::new(id, h, spec, &cfg.model, cfg.seed)?;
            let mut pending: BTreeMap<(u32, usize), f64> = BTreeMap::new();
            for r in records {
                inst.advance_to(r.week)?;
                let cov = WeekCovariates::from_record(r, table);
                for &k in &cfg.horizons {
                    if k > 1 {
                        let target = inst.last_week() + k as u32;
                        pending.insert((target, k), inst.return_probability(k)?);
                    }
                }
                let scored = r.week > cfg.burn_in;
                let fc = inst.forecast_week(&cov, cfg.projection, Some(r), 1)?;
                if scored {
                    for &k in &cfg.horizons {
                        let p = if k == 1 { Some(fc.return_prob) } else { pending.remove(&(r.week, k)) };
                        if let Some(prob) = p {
                            acc.returns.push(ReturnPrediction {
                                household: id,
                                week: r.week,
                                horizon: k,
                                prob,
                                returned: r.returned,
                            });
                        }
                    }
                    self.score_week(&mut acc, r, &fc, &item_ok)?;
                }
                pending.retain(|&(w, _), _| w > r.week);
                if keep_traj {
                    let g = self.dollars(&fc.global)?;
                    out.fans.push(FanPoint {
                        household: id,
                        variant: vname.clone(),
                        week: r.week,
                        q05: g.quantile(0.05),
                        q25: g.quantile(0.25),
                        q50: g.quantile(0.5),
                        q75: g.quantile(0.75),
                        q95: g.quantile(0.95),
                        actual: r.total_spend,
                    });
                }
                inst.update_week(r, &cov)?;
            }
            if inst.price_sensitivity(0).is_ok() {
                for i in 0..h.n_items() {
                    let traj = inst.price_sensitivity(i)?;
                    if let Some(last) = traj.last() {
                        out.sensitivity.push(SensitivityRecord {
                            household: id,
                            group,
                            variant: vname.clone(),
                            item: h.item_name(i).into(),
                            point: *last,
                        });
                    }
                    if keep_traj {
                        out.trajectories.push(Trajectory {
                            household: id,
                            variant: vname.clone(),
                            item: h.item_name(i).into(),
                            points: traj.to_vec(),
                        });
                    }
                }
            }
            out.per_variant.push(acc);
        }
        Ok(out)
    }

    fn score_week(
        &self,
        acc: &mut VariantAcc,
        r: &WeeklyRecord,
        fc: &crate::cascade::WeekForecast,
        item_ok: &[bool],
    ) -> Result<()> {
        let h = &self.corpus.hierarchy;
        let levels = &self.cfg.coverage_levels;
        let cover = |acc: &mut VariantAcc, level: Level, d: &FD, y: f64| {
            let e = acc.coverage.entry(level).or_insert_with(|| (vec![0; levels.len()], 0));
            add_hits(d, y, levels, &mut e.0);
            e.1 += 1;
        };
        if r.returned {
            let d = self.dollars(&fc.global)?;
            self.score(acc.series.entry((Level::Global, 0)).or_default(), &d, r.total_spend)?;
            cover(acc, Level::Global, &fc.global, r.total_spend.ln());
            for c in 0..h.n_categories() {
                let d = self.dollars(&fc.category[c])?;
                self.score(acc.series.entry((Level::Category, c)).or_default(), &d, r.category_spend[c])?;
                cover(acc, Level::Category, &d, r.category_spend[c]);
            }
        }
        for j in 0..h.n_sub_categories() {
            if r.category_spend[h.parent_of_sub(j)] > 0.0 {
                let d = self.dollars(&fc.sub_category[j])?;
                self.score(acc.series.entry((Level::SubCategory, j)).or_default(), &d, r.sub_category_spend[j])?;
                cover(acc, Level::SubCategory, &d, r.sub_category_spend[j]);
            }
        }
        for i in 0..h.n_items() {
            if !item_ok[i] || r.sub_category_spend[h.parent_of_item(i)] <= 0.0 {
                continue;
            }
            let y = r.items[i].quantity as f64;
            let d = &fc.item[i];
            let (mad, mape, zape) = optimal_points(d)?;
            let s = acc.series.entry((Level::Item, i)).or_default();
            for (k, f) in [Some(mad), mape, Some(zape)].into_iter().enumerate() {
                let Some(f) = f else { continue };
                if let Some(l) = realized_loss(y, f, LossSpec { kind: LossKind::ALL[k] }) {
                    s.sum[k] += l;
                    s.n[k] += 1;
                }
                let cell = match (y > 0.0, f > 0.0) {
                    (true, true) => 0,
                    (true, false) => 1,
                    (false, true) => 2,
                    (false, false) => 3,
                };
                acc.confusion[k][cell] += 1;
            }
            cover(acc, Level::Item, d, y);
        }
        Ok(())
    }
}

/// Run every configured variant over every household of `corpus`.
pub fn run_experiment(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let variants = cfg.resolved_variants()?;
    let h = &corpus.hierarchy;
    let mut scored_items = vec![cfg.items.is_empty(); h.n_items()];
    for name in &cfg.items {
        let i = h.item_index(name).ok_or_else(|| Error::Config(format!("unknown item '{name}'")))?;
        scored_items[i] = true;
    }
    let mut tables = BTreeMap::new();
    for g in corpus.group_ids() {
        tables.insert(g, DiscountTable::build(&corpus.group_records(g), h.n_items()));
    }
    let ctx = Ctx { cfg, variants: &variants, corpus, tables: &tables, scored_items };
    let households = corpus.households();
    let outs: Vec<HouseholdOut> =
        households.par_iter().enumerate().map(|(k, (id, recs))| ctx.household(k, *id, recs)).collect::<Result<_>>()?;

    let mut report = EvaluationReport::new(cfg.title.clone());
    let mut return_predictions: BTreeMap<String, Vec<ReturnPrediction>> = BTreeMap::new();
    let mut coverage: Vec<BTreeMap<Level, (Vec<usize>, usize)>> = vec![BTreeMap::new(); variants.len()];
    let mut confusion = vec![[[0usize; 4]; 3]; variants.len()];
    let mut out = ExperimentOutput {
        report: EvaluationReport::new(""),
        return_predictions: BTreeMap::new(),
        sensitivity: vec![],
        trajectories: vec![],
        fans: vec![],
    };
    for ((id, _), ho) in households.iter().zip(outs) {
        let group = corpus.group_of(*id);
        for (v, acc) in ho.per_variant.into_iter().enumerate() {
            let vname = &variants[v].0;
            for ((level, k), la) in acc.series {
                if !level_nodes(level) {
                    continue;
                }
                for (m, kind) in LossKind::ALL.iter().enumerate() {
                    if la.n[m] == 0 {
                        continue;
                    }
                    report.series.push(SeriesMetric {
                        household: *id,
                        group,
                        level: level.name().into(),
                        node: ctx.node_name(level, k),
                        variant: vname.clone(),
                        metric: kind.name().into(),
                        value: la.sum[m] / la.n[m] as f64,
                        n: la.n[m],
                    });
                }
            }
            return_predictions.entry(vname.clone()).or_default().extend(acc.returns);
            for (level, (hits, n)) in acc.coverage {
                let e = coverage[v].entry(level).or_insert_with(|| (vec![0; hits.len()], 0));
                for (a, b) in e.0.iter_mut().zip(hits) {
                    *a += b;
                }
                e.1 += n;
            }
            for (m, cells) in acc.confusion.iter().enumerate() {
                for (c, n) in cells.iter().enumerate() {
                    confusion[v][m][c] += n;
                }
            }
        }
        out.sensitivity.extend(ho.sensitivity);
        out.trajectories.extend(ho.trajectories);
        out.fans.extend(ho.fans);
    }
    report.summarize();

    for (v, (vname, _)) in variants.iter().enumerate() {
        let preds = return_predictions.get(vname).map(Vec::as_slice).unwrap_or(&[]);
        let one: Vec<&ReturnPrediction> = preds.iter().filter(|p| p.horizon == 1).collect();
        let probs: Vec<f64> = one.iter().map(|p| p.prob).collect();
        let ys: Vec<bool> = one.iter().map(|p| p.returned).collect();
        report.calibration.push(CalibrationTable {
            label: format!("return/{vname}"),
            bins: calibration_bins(&probs, &ys, cfg.calibration_bins)?,
        });
        for &k in &cfg.horizons {
            let (p, y): (Vec<f64>, Vec<bool>) =
                preds.iter().filter(|p| p.horizon == k).map(|p| (p.prob, p.returned)).unzip();
            for (name, val) in [("auc", auc(&p, &y)), ("f1", f1_score(&p, &y, 0.5)), ("brier", brier(&p, &y))] {
                if let Some(x) = val {
                    report.scores.insert(format!("return/{vname}/k{k}/{name}"), x);
                }
            }
        }
        for (level, (hits, n)) in &coverage[v] {
            report.coverage.push(CoverageTable {
                label: format!("{}/{vname}", level.name()),
                points: coverage_from_hits(&cfg.coverage_levels, hits, *n),
            });
        }
        for (m, kind) in LossKind::ALL.iter().enumerate() {
            let c = confusion[v][m];
            let n: usize = c.iter().sum();
            if n == 0 {
                continue;
            }
            let p = |i: usize| c[i] as f64 / n as f64;
            report.confusion.push(ConfusionTable {
                label: format!("item/{vname}/{}", kind.name()),
                matrix: ConfusionMatrix { pos_pos: p(0), pos_zero: p(1), zero_pos: p(2), zero_zero: p(3), count: n },
            });
        }
    }
    out.report = report;
    out.return_predictions = return_predictions;
    Ok(out)
}
