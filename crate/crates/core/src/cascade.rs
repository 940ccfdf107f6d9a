//! Per-household cascade of models over the product hierarchy.
//!
//! One [`CascadeInstance`] holds a Bernoulli return model, a log global
//! spend DLM, a DLMM per category and sub-category and a DCMM per item.
//! Each week is forecast top-down: every level is conditioned on its parent
//! event and may use the parent's current value as a simultaneous
//! predictor. Updating follows the conditioning ladder, so a level only
//! sees a likelihood term when its parent event occurred.
//!
//! Spend levels work on log spend. A forecast of [`ForecastDistribution::PointMass`]
//! at 0 means no spend; zero-inflated forecasts carry the purchase
//! probability.

use crate::data::{DiscountTable, WeeklyRecord};
use crate::dglm::{
    evolve_k, predictor_moments, solve_conjugate, ConjugateParams, Dglm, DiscountBlock, Dlm, EvolutionSpec, Family,
    StateMoments, VolatilitySpec,
};
use crate::distribution::ForecastDistribution as FD;
use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;
use crate::mixture::{Dcmm, Dlmm};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Normal quantile at 0.95, for central 90% intervals.
pub const Z90: f64 = 1.6448536269514722;

/// Predictor variable of a model level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSource {
    Intercept,
    /// Own value at the last return; for the return model, last week's return.
    LaggedSelf,
    /// Parent value at the last return; for global spend, last week's return.
    LaggedParent,
    /// Log global spend at the last return.
    LaggedGlobal,
    /// Current-week parent value, known or projected.
    SimultaneousParent,
    /// Potential discount offered to this household (items only).
    HouseholdDiscount,
    /// Group mean potential discount (items only).
    AggregateDiscount,
}

/// Hierarchy level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Return,
    Global,
    Category,
    SubCategory,
    Item,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::Return, Level::Global, Level::Category, Level::SubCategory, Level::Item];

    pub fn name(&self) -> &'static str {
        match self {
            Level::Return => "return",
            Level::Global => "global",
            Level::Category => "category",
            Level::SubCategory => "sub_category",
            Level::Item => "item",
        }
    }
}

/// Predictor lists per level. Mixture levels share one list between the
/// gate and the level or count model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub return_model: Vec<CovariateSource>,
    pub global: Vec<CovariateSource>,
    pub category: Vec<CovariateSource>,
    pub sub_category: Vec<CovariateSource>,
    pub item: Vec<CovariateSource>,
}

impl CovariateSpec {
    fn with(category: CovariateSource, sub_category: CovariateSource, item: CovariateSource) -> Self {
        use CovariateSource::*;
        CovariateSpec {
            return_model: vec![Intercept, LaggedGlobal],
            global: vec![Intercept, LaggedSelf],
            category: vec![Intercept, category],
            sub_category: vec![Intercept, sub_category],
            item: vec![Intercept, item, HouseholdDiscount],
        }
    }

    /// Lagged local predictors: own category and sub-category spend, item
    /// model on lagged sub-category spend.
    pub fn m1() -> Self {
        use CovariateSource::*;
        Self::with(LaggedSelf, LaggedSelf, LaggedParent)
    }

    /// Lagged parent predictors: global spend for categories, category spend
    /// for sub-categories, own spend for items.
    pub fn m2() -> Self {
        use CovariateSource::*;
        Self::with(LaggedGlobal, LaggedParent, LaggedSelf)
    }

    /// Simultaneous parent predictors at every level below global.
    pub fn m3() -> Self {
        use CovariateSource::*;
        Self::with(SimultaneousParent, SimultaneousParent, SimultaneousParent)
    }

    /// Preset by name (`M1`, `M2`, `M3`, case-insensitive).
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "M1" => Some(Self::m1()),
            "M2" => Some(Self::m2()),
            "M3" => Some(Self::m3()),
            _ => None,
        }
    }

    pub fn level(&self, level: Level) -> &[CovariateSource] {
        match level {
            Level::Return => &self.return_model,
            Level::Global => &self.global,
            Level::Category => &self.category,
            Level::SubCategory => &self.sub_category,
            Level::Item => &self.item,
        }
    }

    pub fn validate(&self) -> Result<()> {
        use CovariateSource::*;
        for level in Level::ALL {
            let list = self.level(level);
            if list.is_empty() {
                return Err(Error::Config(format!("{} model has no predictors", level.name())));
            }
            for (k, s) in list.iter().enumerate() {
                if list[..k].contains(s) {
                    return Err(Error::Config(format!("{} model lists {s:?} twice", level.name())));
                }
                let ok = match s {
                    Intercept | LaggedSelf | LaggedGlobal => true,
                    LaggedParent | SimultaneousParent => level != Level::Return,
                    HouseholdDiscount | AggregateDiscount => level == Level::Item,
                };
                if !ok {
                    return Err(Error::Config(format!("{s:?} is not available to the {} model", level.name())));
                }
            }
        }
        Ok(())
    }
}

/// How the projected return enters the global spend model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnProjection {
    #[default]
    Probability,
    Indicator,
}

/// Source of simultaneous predictor values when forecasting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ProjectionMode {
    /// Realized values of the forecast week.
    #[default]
    Known,
    /// Parent forecast means; a parent projects to zero when its event
    /// probability is below 1/2.
    Mean,
    /// Parent forecast medians.
    Median,
    /// Equal-weight mixture over sampled top-down paths.
    Ensemble { size: usize },
}

/// Log-spend cold starts per level, used as intercept prior means and as
/// initial values of lagged registers and running means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColdStart {
    pub global: f64,
    pub category: f64,
    pub sub_category: f64,
    pub item: f64,
}

impl Default for ColdStart {
    fn default() -> Self {
        ColdStart { global: 20f64.ln(), category: 5f64.ln(), sub_category: 3f64.ln(), item: 3f64.ln() }
    }
}

/// Priors and discount factors shared by all models of a cascade.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Discount on intercept coordinates.
    pub trend_discount: f64,
    /// Discount on regression coordinates.
    pub regression_discount: f64,
    /// Volatility discount of the DLMs.
    pub volatility_discount: f64,
    /// Prior variance of every state coordinate.
    pub prior_variance: f64,
    /// Initial degrees of freedom of the DLM variance estimate.
    pub prior_dof: f64,
    /// Initial DLM variance estimate.
    pub prior_scale: f64,
    pub cold_start: ColdStart,
    pub return_projection: ReturnProjection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            trend_discount: 0.98,
            regression_discount: 0.98,
            volatility_discount: 0.99,
            prior_variance: 1.0,
            prior_dof: 1.0,
            prior_scale: 1.0,
            cold_start: ColdStart::default(),
            return_projection: ReturnProjection::Probability,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |d: f64| d > 0.0 && d <= 1.0;
        if !unit(self.trend_discount) || !unit(self.regression_discount) || !unit(self.volatility_discount) {
            return Err(Error::Config("discount factors must lie in (0, 1]".into()));
        }
        if !(self.prior_variance > 0.0) || !(self.prior_dof > 0.0) || !(self.prior_scale > 0.0) {
            return Err(Error::Config("prior variance, dof and scale must be positive".into()));
        }
        let c = &self.cold_start;
        if ![c.global, c.category, c.sub_category, c.item].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("cold-start values must be finite".into()));
        }
        Ok(())
    }
}

/// Covariates known before the week is observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekCovariates {
    pub week: u32,
    /// Potential discount per item for this household.
    pub household_discount: Vec<f64>,
    /// Group mean potential discount per item.
    pub aggregate_discount: Vec<f64>,
}

impl WeekCovariates {
    /// No discounts anywhere.
    pub fn none(week: u32, n_items: usize) -> Self {
        WeekCovariates { week, household_discount: vec![0.0; n_items], aggregate_discount: vec![0.0; n_items] }
    }

    /// Discounts for `record`'s household-week from the group table.
    pub fn from_record(record: &WeeklyRecord, table: &DiscountTable) -> Self {
        let n = record.items.len();
        WeekCovariates {
            week: record.week,
            household_discount: (0..n).map(|i| table.potential(record, i)).collect(),
            aggregate_discount: (0..n).map(|i| table.aggregate(i, record.week)).collect(),
        }
    }
}

/// Model node of a cascade.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Return,
    Global,
    Category(usize),
    SubCategory(usize),
    Item(usize),
}

/// Draws simultaneous predictor values for ensemble forecasts.
///
/// `dist` is the node's forecast given the path drawn so far: Bernoulli for
/// the return node and zero-inflated log spend (or Student-t for global
/// spend) otherwise. Return `None` for no return or no spend, else the
/// predictor value: the return covariate or the log spend.
pub trait PathSampler {
    fn draw(&mut self, node: Node, dist: &FD) -> Option<f64>;
}

/// Random paths.
pub struct RandomPathSampler<R: Rng> {
    pub rng: R,
}

impl<R: Rng> PathSampler for RandomPathSampler<R> {
    fn draw(&mut self, node: Node, dist: &FD) -> Option<f64> {
        match dist {
            FD::ZeroInflated { nonzero_prob, inner } => {
                let u: f64 = self.rng.random();
                (u < *nonzero_prob).then(|| inner.sample(&mut self.rng))
            }
            d => {
                let x = d.sample(&mut self.rng);
                if node == Node::Return {
                    (x > 0.0).then_some(1.0)
                } else {
                    Some(x)
                }
            }
        }
    }
}

/// The path used by [`ProjectionMode::Mean`].
pub struct MeanPathSampler {
    pub return_projection: ReturnProjection,
}

impl PathSampler for MeanPathSampler {
    fn draw(&mut self, node: Node, dist: &FD) -> Option<f64> {
        project(ProjectionMode::Mean, self.return_projection, node, dist)
    }
}

fn project(mode: ProjectionMode, rp: ReturnProjection, node: Node, dist: &FD) -> Option<f64> {
    match dist {
        FD::Bernoulli { alpha, beta } => {
            let p = alpha / (alpha + beta);
            if p < 0.5 {
                return None;
            }
            Some(match (mode, rp, node) {
                (ProjectionMode::Mean, ReturnProjection::Probability, Node::Return) => p,
                _ => 1.0,
            })
        }
        FD::ZeroInflated { nonzero_prob, inner } => {
            let pi = *nonzero_prob;
            if pi < 0.5 {
                return None;
            }
            match mode {
                ProjectionMode::Median => Some(inner.quantile((pi - 0.5) / pi)),
                _ => inner.mean().or(Some(inner.quantile(0.5))),
            }
        }
        FD::PointMass { value } if *value == 0.0 => None,
        d => match mode {
            ProjectionMode::Median => Some(d.quantile(0.5)),
            _ => d.mean().or(Some(d.quantile(0.5))),
        },
    }
}

/// One week's forecasts at every node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekForecast {
    pub week: u32,
    pub horizon: usize,
    pub return_prob: f64,
    pub return_dist: FD,
    /// Log global spend; point mass at 0 when conditioned out.
    pub global: FD,
    pub category: Vec<FD>,
    pub sub_category: Vec<FD>,
    /// Item quantity.
    pub item: Vec<FD>,
}

/// Likelihood updates per model component.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounts {
    pub return_model: u64,
    pub global: u64,
    pub category_gate: Vec<u64>,
    pub category_level: Vec<u64>,
    pub sub_category_gate: Vec<u64>,
    pub sub_category_level: Vec<u64>,
    pub item_gate: Vec<u64>,
    pub item_count: Vec<u64>,
}

/// Filtered discount coefficient after a week's update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub week: u32,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct RunningMean {
    init: f64,
    sum: f64,
    n: u64,
}

impl RunningMean {
    fn new(init: f64) -> Self {
        RunningMean { init, sum: 0.0, n: 0 }
    }
    fn mean(&self) -> f64 {
        if self.n == 0 {
            self.init
        } else {
            self.sum / self.n as f64
        }
    }
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }
}

struct MixPrior {
    gate: StateMoments,
    level: StateMoments,
    vol: VolatilitySpec,
}

struct Priors {
    ret: StateMoments,
    global: StateMoments,
    global_vol: VolatilitySpec,
    category: Vec<MixPrior>,
    sub_category: Vec<MixPrior>,
    item: Vec<(StateMoments, StateMoments)>,
}

fn vol_k(v: VolatilitySpec, k: usize) -> VolatilitySpec {
    (0..k).fold(v, |v, _| v.evolve())
}

fn conj(family: Family, prior: &StateMoments, f: &DVector<f64>) -> Result<ConjugateParams> {
    solve_conjugate(family, predictor_moments(prior, f)?)
}

fn student(prior: &StateMoments, vol: VolatilitySpec, f: &DVector<f64>) -> Result<FD> {
    let pm = predictor_moments(prior, f)?;
    Ok(FD::StudentT { dof: vol.dof, loc: pm.f, scale: (pm.q + vol.scale).sqrt() })
}

fn gate_prob(prior: &StateMoments, f: &DVector<f64>) -> Result<f64> {
    let c = conj(Family::Bernoulli, prior, f)?;
    Ok(c.alpha / (c.alpha + c.beta))
}

/// Tied stack of models for one household.
#[derive(Clone, Debug)]
pub struct CascadeInstance {
    pub household: u32,
    hierarchy: HierarchySpec,
    spec: CovariateSpec,
    config: ModelConfig,
    seed: u64,
    pub return_model: Dglm,
    pub global_spend: Dlm,
    pub category_spend: Vec<Dlmm>,
    pub subcat_spend: Vec<Dlmm>,
    pub item_qty: Vec<Dcmm>,
    return_updates: u64,
    global_updates: u64,
    last_week: u32,
    last_return: f64,
    registers: Vec<Option<f64>>,
    means: Vec<RunningMean>,
    discount_index: Option<usize>,
    sensitivity: Vec<Vec<SensitivityPoint>>,
}

fn evolution(list: &[CovariateSource], cfg: &ModelConfig) -> Result<EvolutionSpec> {
    let disc: Vec<f64> = list
        .iter()
        .map(|s| if *s == CovariateSource::Intercept { cfg.trend_discount } else { cfg.regression_discount })
        .collect();
    let mut blocks = vec![];
    let mut start = 0;
    for k in 1..=disc.len() {
        if k == disc.len() || disc[k] != disc[start] {
            blocks.push(DiscountBlock { start, len: k - start, discount: disc[start] });
            start = k;
        }
    }
    EvolutionSpec::random_walk(list.len(), blocks)
}

fn prior(list: &[CovariateSource], cfg: &ModelConfig, intercept: f64) -> Result<StateMoments> {
    let d = list.len();
    let mean =
        DVector::from_iterator(d, list.iter().map(|s| if *s == CovariateSource::Intercept { intercept } else { 0.0 }));
    StateMoments::new(mean, DMatrix::identity(d, d) * cfg.prior_variance)
}

impl CascadeInstance {
    pub fn new(
        household: u32,
        hierarchy: &HierarchySpec,
        spec: &CovariateSpec,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        let cs = &config.cold_start;
        let vol = VolatilitySpec::new(config.prior_dof, config.prior_scale, config.volatility_discount)?;
        let bern = |list: &[CovariateSource]| -> Result<Dglm> {
            Dglm::new(Family::Bernoulli, prior(list, config, 0.0)?, evolution(list, config)?)
        };
        let dlm = |list: &[CovariateSource], level: f64| -> Result<Dlm> {
            Dlm::new(prior(list, config, level)?, evolution(list, config)?, vol)
        };
        let dlmm = |list: &[CovariateSource], level: f64| -> Result<Dlmm> { Dlmm::new(bern(list)?, dlm(list, level)?) };
        let item_list = &spec.item;
        let count = Dglm::new(Family::Poisson, prior(item_list, config, 0.0)?, evolution(item_list, config)?)?;
        let n_nodes = 1 + hierarchy.n_categories() + hierarchy.n_sub_categories() + hierarchy.n_items();
        let mut registers = Vec::with_capacity(n_nodes);
        registers.push(cs.global);
        registers.extend(std::iter::repeat_n(cs.category, hierarchy.n_categories()));
        registers.extend(std::iter::repeat_n(cs.sub_category, hierarchy.n_sub_categories()));
        registers.extend(std::iter::repeat_n(cs.item, hierarchy.n_items()));
        let means = registers.iter().map(|&v| RunningMean::new(v)).collect();
        let discount_index = item_list
            .iter()
            .position(|s| *s == CovariateSource::HouseholdDiscount)
            .or_else(|| item_list.iter().position(|s| *s == CovariateSource::AggregateDiscount));
        Ok(CascadeInstance {
            household,
            hierarchy: hierarchy.clone(),
            spec: spec.clone(),
            config: config.clone(),
            seed,
            return_model: bern(&spec.return_model)?,
            global_spend: dlm(&spec.global, cs.global)?,
            category_spend: (0..hierarchy.n_categories())
                .map(|_| dlmm(&spec.category, cs.category))
                .collect::<Result<_>>()?,
            subcat_spend: (0..hierarchy.n_sub_categories())
                .map(|_| dlmm(&spec.sub_category, cs.sub_category))
                .collect::<Result<_>>()?,
            item_qty: (0..hierarchy.n_items())
                .map(|_| Dcmm::new(bern(item_list)?, count.clone()))
                .collect::<Result<_>>()?,
            return_updates: 0,
            global_updates: 0,
            last_week: 0,
            last_return: 0.0,
            registers: registers.into_iter().map(Some).collect(),
            means,
            discount_index,
            sensitivity: vec![vec![]; hierarchy.n_items()],
        })
    }

    pub fn hierarchy(&self) -> &HierarchySpec {
        &self.hierarchy
    }

    pub fn spec(&self) -> &CovariateSpec {
        &self.spec
    }

    /// Last processed week, 0 before the first.
    pub fn last_week(&self) -> u32 {
        self.last_week
    }

    fn flat(&self, node: Node) -> usize {
        let h = &self.hierarchy;
        match node {
            Node::Return | Node::Global => 0,
            Node::Category(c) => 1 + c,
            Node::SubCategory(j) => 1 + h.n_categories() + j,
            Node::Item(i) => 1 + h.n_categories() + h.n_sub_categories() + i,
        }
    }

    fn parent(&self, node: Node) -> Node {
        match node {
            Node::Return | Node::Global => Node::Return,
            Node::Category(_) => Node::Global,
            Node::SubCategory(j) => Node::Category(self.hierarchy.parent_of_sub(j)),
            Node::Item(i) => Node::SubCategory(self.hierarchy.parent_of_item(i)),
        }
    }

    fn lagged(&self, node: Node) -> f64 {
        if node == Node::Return {
            return self.last_return;
        }
        let k = self.flat(node);
        self.registers[k].map_or(0.0, |x| x - self.means[k].mean())
    }

    /// Covariate value of a projected or realized simultaneous parent value.
    fn simultaneous(&self, node: Node, parent_value: f64) -> f64 {
        match self.parent(node) {
            Node::Return => parent_value,
            p => parent_value - self.means[self.flat(p)].mean(),
        }
    }

    fn design(&self, level: Level, node: Node, parent_value: Option<f64>, cov: &WeekCovariates) -> DVector<f64> {
        use CovariateSource::*;
        let list = self.spec.level(level);
        DVector::from_iterator(
            list.len(),
            list.iter().map(|s| match s {
                Intercept => 1.0,
                LaggedSelf => self.lagged(node),
                LaggedParent => self.lagged(self.parent(node)),
                LaggedGlobal => self.lagged(Node::Global),
                SimultaneousParent => parent_value.map_or(0.0, |v| self.simultaneous(node, v)),
                HouseholdDiscount | AggregateDiscount => {
                    let Node::Item(i) = node else { return 0.0 };
                    let v = if *s == HouseholdDiscount { &cov.household_discount } else { &cov.aggregate_discount };
                    v.get(i).copied().unwrap_or(0.0)
                }
            }),
        )
    }

    fn label(&self, node: Node) -> String {
        let h = &self.hierarchy;
        match node {
            Node::Return => "return".into(),
            Node::Global => "global spend".into(),
            Node::Category(c) => format!("category '{}'", h.category_name(c)),
            Node::SubCategory(j) => format!("sub-category '{}'", h.sub_category_name(j)),
            Node::Item(i) => format!("item '{}'", h.item_name(i)),
        }
    }

    fn fail(&self, week: u32, node: Node, e: Error) -> Error {
        if e.is_numerical() {
            Error::Numerical(format!("household {} week {week} {}: {e}", self.household, self.label(node)))
        } else {
            e
        }
    }

    fn priors(&self, k: usize) -> Result<Priors> {
        let mix = |m: &Dlmm| -> Result<MixPrior> {
            Ok(MixPrior {
                gate: evolve_k(&m.gate.state, &m.gate.evolution, k)?,
                level: evolve_k(&m.level.state, &m.level.evolution, k)?,
                vol: vol_k(m.level.volatility, k),
            })
        };
        Ok(Priors {
            ret: evolve_k(&self.return_model.state, &self.return_model.evolution, k)?,
            global: evolve_k(&self.global_spend.state, &self.global_spend.evolution, k)?,
            global_vol: vol_k(self.global_spend.volatility, k),
            category: self.category_spend.iter().map(mix).collect::<Result<_>>()?,
            sub_category: self.subcat_spend.iter().map(mix).collect::<Result<_>>()?,
            item: self
                .item_qty
                .iter()
                .map(|m| {
                    Ok((
                        evolve_k(&m.gate.state, &m.gate.evolution, k)?,
                        evolve_k(&m.count.state, &m.count.evolution, k)?,
                    ))
                })
                .collect::<Result<_>>()?,
        })
    }

    /// Top-down pass: each node's forecast given its parent's chosen value.
    fn pass(
        &self,
        cov: &WeekCovariates,
        pr: &Priors,
        horizon: usize,
        choose: &mut dyn FnMut(Node, &FD) -> Option<f64>,
    ) -> Result<WeekForecast> {
        let h = &self.hierarchy;
        let w = cov.week;
        let ret_f = self.design(Level::Return, Node::Return, None, cov);
        let rc = conj(Family::Bernoulli, &pr.ret, &ret_f).map_err(|e| self.fail(w, Node::Return, e))?;
        let return_dist = FD::Bernoulli { alpha: rc.alpha, beta: rc.beta };
        let return_prob = rc.alpha / (rc.alpha + rc.beta);
        let r_val = choose(Node::Return, &return_dist);

        let (global, g_val) = match r_val {
            None => (FD::point(0.0), None),
            Some(r) => {
                let f = self.design(Level::Global, Node::Global, Some(r), cov);
                let d = student(&pr.global, pr.global_vol, &f).map_err(|e| self.fail(w, Node::Global, e))?;
                let v = choose(Node::Global, &d);
                (d, v)
            }
        };

        let spend_node = |node: Node, level: Level, mp: &MixPrior, parent: Option<f64>| -> Result<FD> {
            let f = self.design(level, node, parent, cov);
            let pi = gate_prob(&mp.gate, &f)?;
            Ok(FD::zero_inflated(pi, student(&mp.level, mp.vol, &f)?))
        };

        let mut category = Vec::with_capacity(h.n_categories());
        let mut c_val = Vec::with_capacity(h.n_categories());
        for c in 0..h.n_categories() {
            let node = Node::Category(c);
            match g_val {
                None => {
                    category.push(FD::point(0.0));
                    c_val.push(None);
                }
                Some(g) => {
                    let d = spend_node(node, Level::Category, &pr.category[c], Some(g))
                        .map_err(|e| self.fail(w, node, e))?;
                    c_val.push(choose(node, &d));
                    category.push(d);
                }
            }
        }
        let mut sub_category = Vec::with_capacity(h.n_sub_categories());
        let mut s_val = Vec::with_capacity(h.n_sub_categories());
        for j in 0..h.n_sub_categories() {
            let node = Node::SubCategory(j);
            match c_val[h.parent_of_sub(j)] {
                None => {
                    sub_category.push(FD::point(0.0));
                    s_val.push(None);
                }
                Some(v) => {
                    let d = spend_node(node, Level::SubCategory, &pr.sub_category[j], Some(v))
                        .map_err(|e| self.fail(w, node, e))?;
                    s_val.push(choose(node, &d));
                    sub_category.push(d);
                }
            }
        }
        let mut item = Vec::with_capacity(h.n_items());
        for i in 0..h.n_items() {
            let node = Node::Item(i);
            match s_val[h.parent_of_item(i)] {
                None => item.push(FD::point(0.0)),
                Some(v) => {
                    let f = self.design(Level::Item, node, Some(v), cov);
                    let (gp, cp) = &pr.item[i];
                    let d = (|| -> Result<FD> {
                        let pi = gate_prob(gp, &f)?;
                        let c = conj(Family::Poisson, cp, &f)?;
                        Ok(FD::zero_inflated(pi, FD::NegBinomial { alpha: c.alpha, beta: c.beta, shift: 1 }))
                    })()
                    .map_err(|e| self.fail(w, node, e))?;
                    item.push(d);
                }
            }
        }
        Ok(WeekForecast { week: w, horizon, return_prob, return_dist, global, category, sub_category, item })
    }

    fn realized(&self, record: &WeeklyRecord, node: Node) -> Option<f64> {
        let pos = |x: f64| (x > 0.0).then(|| x.ln());
        match node {
            Node::Return => record.returned.then_some(1.0),
            Node::Global => pos(record.total_spend),
            Node::Category(c) => pos(record.category_spend[c]),
            Node::SubCategory(j) => pos(record.sub_category_spend[j]),
            Node::Item(i) => pos(record.items[i].spend()),
        }
    }

    /// Forecast week `cov.week` from the current posterior, `horizon` steps
    /// ahead of the last processed week. Lagged predictors are carried
    /// forward. `known` supplies the realized week for [`ProjectionMode::Known`].
    pub fn forecast_week(
        &self,
        cov: &WeekCovariates,
        mode: ProjectionMode,
        known: Option<&WeeklyRecord>,
        horizon: usize,
    ) -> Result<WeekForecast> {
        if horizon == 0 {
            return Err(Error::Cascade("forecast horizon must be at least 1".into()));
        }
        self.check_shape(cov)?;
        let rp = self.config.return_projection;
        match mode {
            ProjectionMode::Known => {
                let rec = known.ok_or_else(|| Error::Cascade("known projection needs the realized record".into()))?;
                self.check_record(rec)?;
                let pr = self.priors(horizon)?;
                self.pass(cov, &pr, horizon, &mut |node, _| self.realized(rec, node))
            }
            ProjectionMode::Mean | ProjectionMode::Median => {
                let pr = self.priors(horizon)?;
                self.pass(cov, &pr, horizon, &mut |node, d| project(mode, rp, node, d))
            }
            ProjectionMode::Ensemble { size } => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    self.seed ^ (cov.week as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ horizon as u64,
                );
                rng.set_stream(self.household as u64);
                self.forecast_ensemble(cov, size, horizon, &mut RandomPathSampler { rng })
            }
        }
    }

    /// Ensemble forecast over `size` paths drawn by `sampler`.
    pub fn forecast_ensemble(
        &self,
        cov: &WeekCovariates,
        size: usize,
        horizon: usize,
        sampler: &mut dyn PathSampler,
    ) -> Result<WeekForecast> {
        if size == 0 || horizon == 0 {
            return Err(Error::Cascade("ensemble size and horizon must be at least 1".into()));
        }
        self.check_shape(cov)?;
        let pr = self.priors(horizon)?;
        let members: Vec<WeekForecast> = (0..size)
            .map(|_| self.pass(cov, &pr, horizon, &mut |node, d| sampler.draw(node, d)))
            .collect::<Result<_>>()?;
        if size == 1 {
            return Ok(members.into_iter().next().expect("one member"));
        }
        let mix = |get: &dyn Fn(&WeekForecast) -> &FD| FD::uniform_mixture(members.iter().map(get).cloned().collect());
        let h = &self.hierarchy;
        Ok(WeekForecast {
            week: cov.week,
            horizon,
            return_prob: members[0].return_prob,
            return_dist: members[0].return_dist.clone(),
            global: mix(&|m| &m.global),
            category: (0..h.n_categories()).map(|c| mix(&|m| &m.category[c])).collect(),
            sub_category: (0..h.n_sub_categories()).map(|j| mix(&|m| &m.sub_category[j])).collect(),
            item: (0..h.n_items()).map(|i| mix(&|m| &m.item[i])).collect(),
        })
    }

    /// Return probability `k` weeks after the last processed week, with
    /// lagged predictors carried forward.
    pub fn return_probability(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Cascade("forecast horizon must be at least 1".into()));
        }
        let prior = evolve_k(&self.return_model.state, &self.return_model.evolution, k)?;
        let cov = WeekCovariates::none(self.last_week + k as u32, self.hierarchy.n_items());
        let f = self.design(Level::Return, Node::Return, None, &cov);
        gate_prob(&prior, &f).map_err(|e| self.fail(cov.week, Node::Return, e))
    }

    fn check_shape(&self, cov: &WeekCovariates) -> Result<()> {
        let n = self.hierarchy.n_items();
        if cov.household_discount.len() != n || cov.aggregate_discount.len() != n {
            return Err(Error::Cascade(format!("week covariates must list {n} items")));
        }
        Ok(())
    }

    fn check_record(&self, r: &WeeklyRecord) -> Result<()> {
        let h = &self.hierarchy;
        if r.category_spend.len() != h.n_categories()
            || r.sub_category_spend.len() != h.n_sub_categories()
            || r.items.len() != h.n_items()
        {
            return Err(Error::Cascade("record does not match the cascade hierarchy".into()));
        }
        Ok(())
    }

    /// Evolve every model through weeks with no record up to `week - 1`.
    pub fn advance_to(&mut self, week: u32) -> Result<()> {
        while self.last_week + 1 < week {
            self.return_model.skip()?;
            self.global_spend.skip()?;
            for m in &mut self.category_spend {
                m.skip()?;
            }
            for m in &mut self.subcat_spend {
                m.skip()?;
            }
            for m in &mut self.item_qty {
                m.skip()?;
            }
            self.last_week += 1;
        }
        Ok(())
    }

    /// Process one observed week along the conditioning ladder.
    pub fn update_week(&mut self, record: &WeeklyRecord, cov: &WeekCovariates) -> Result<()> {
        if record.week <= self.last_week {
            return Err(Error::Cascade(format!(
                "household {} week {} is not after week {}",
                self.household, record.week, self.last_week
            )));
        }
        if record.household != self.household {
            return Err(Error::Cascade(format!(
                "record of household {} given to household {}",
                record.household, self.household
            )));
        }
        if cov.week != record.week {
            return Err(Error::Cascade("covariates and record are for different weeks".into()));
        }
        self.check_record(record)?;
        self.check_shape(cov)?;
        self.advance_to(record.week)?;
        let h = self.hierarchy.clone();
        let w = record.week;
        let real = |s: &Self, n: Node| s.realized(record, n);

        let f = self.design(Level::Return, Node::Return, None, cov);
        let y = record.returned as u8 as f64;
        self.return_model.update(&f, y).map_err(|e| self.fail(w, Node::Return, e))?;
        self.return_updates += 1;

        // Designs use pre-update registers, so build them all first.
        let gf = self.design(Level::Global, Node::Global, real(self, Node::Return), cov);
        let cf: Vec<_> = (0..h.n_categories())
            .map(|c| self.design(Level::Category, Node::Category(c), real(self, Node::Global), cov))
            .collect();
        let sf: Vec<_> = (0..h.n_sub_categories())
            .map(|j| {
                let p = real(self, Node::Category(h.parent_of_sub(j)));
                self.design(Level::SubCategory, Node::SubCategory(j), p, cov)
            })
            .collect();
        let itf: Vec<_> = (0..h.n_items())
            .map(|i| {
                let p = real(self, Node::SubCategory(h.parent_of_item(i)));
                self.design(Level::Item, Node::Item(i), p, cov)
            })
            .collect();

        if record.returned {
            self.global_spend.update(&gf, record.total_spend.ln()).map_err(|e| self.fail(w, Node::Global, e))?;
            self.global_updates += 1;
        } else {
            self.global_spend.skip()?;
        }
        for c in 0..h.n_categories() {
            let x = record.category_spend[c];
            let r = if record.returned {
                self.category_spend[c].update_outcome(&cf[c], &cf[c], x > 0.0, if x > 0.0 { x.ln() } else { 0.0 })
            } else {
                self.category_spend[c].skip()
            };
            r.map_err(|e| self.fail(w, Node::Category(c), e))?;
        }
        for j in 0..h.n_sub_categories() {
            let x = record.sub_category_spend[j];
            let r = if record.category_spend[h.parent_of_sub(j)] > 0.0 {
                self.subcat_spend[j].update_outcome(&sf[j], &sf[j], x > 0.0, if x > 0.0 { x.ln() } else { 0.0 })
            } else {
                self.subcat_spend[j].skip()
            };
            r.map_err(|e| self.fail(w, Node::SubCategory(j), e))?;
        }
        for i in 0..h.n_items() {
            let r = if record.sub_category_spend[h.parent_of_item(i)] > 0.0 {
                self.item_qty[i].update(&itf[i], &itf[i], record.items[i].quantity as u64)
            } else {
                self.item_qty[i].skip()
            };
            r.map_err(|e| self.fail(w, Node::Item(i), e))?;
        }

        self.last_return = y;
        if record.returned {
            let nodes = std::iter::once(Node::Global)
                .chain((0..h.n_categories()).map(Node::Category))
                .chain((0..h.n_sub_categories()).map(Node::SubCategory))
                .chain((0..h.n_items()).map(Node::Item));
            for node in nodes {
                let k = self.flat(node);
                let v = self.realized(record, node);
                if let Some(x) = v {
                    self.means[k].push(x);
                }
                self.registers[k] = v;
            }
        }
        if let Some(k) = self.discount_index {
            for (i, m) in self.item_qty.iter().enumerate() {
                let mean = m.count.state.mean[k];
                let sd = m.count.state.cov[(k, k)].max(0.0).sqrt();
                self.sensitivity[i].push(SensitivityPoint {
                    week: w,
                    mean,
                    sd,
                    lower: mean - Z90 * sd,
                    upper: mean + Z90 * sd,
                });
            }
        }
        self.last_week = w;
        Ok(())
    }

    /// Trajectory of the discount coefficient of the item's count model,
    /// one point per updated week, with central 90% intervals.
    pub fn price_sensitivity(&self, item: usize) -> Result<&[SensitivityPoint]> {
        if item >= self.hierarchy.n_items() {
            return Err(Error::Cascade(format!("unknown item index {item}")));
        }
        if self.discount_index.is_none() {
            return Err(Error::Cascade("item models have no discount predictor".into()));
        }
        Ok(&self.sensitivity[item])
    }

    pub fn update_counts(&self) -> UpdateCounts {
        UpdateCounts {
            return_model: self.return_updates,
            global: self.global_updates,
            category_gate: self.category_spend.iter().map(|m| m.gate_updates).collect(),
            category_level: self.category_spend.iter().map(|m| m.level_updates).collect(),
            sub_category_gate: self.subcat_spend.iter().map(|m| m.gate_updates).collect(),
            sub_category_level: self.subcat_spend.iter().map(|m| m.level_updates).collect(),
            item_gate: self.item_qty.iter().map(|m| m.gate_updates).collect(),
            item_count: self.item_qty.iter().map(|m| m.count_updates).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::{purchase, tiny_hierarchy};

    fn instance(spec: CovariateSpec) -> CascadeInstance {
        CascadeInstance::new(1, &tiny_hierarchy(), &spec, &ModelConfig::default(), 7).unwrap()
    }

    fn none(week: u32) -> WeekCovariates {
        WeekCovariates::none(week, 3)
    }

    #[test]
    fn spec_validation() {
        let mut s = CovariateSpec::m3();
        s.return_model.push(CovariateSource::SimultaneousParent);
        assert!(s.validate().is_err());
        let mut s = CovariateSpec::m1();
        s.category.push(CovariateSource::HouseholdDiscount);
        assert!(s.validate().is_err());
        let mut s = CovariateSpec::m2();
        s.item.push(CovariateSource::Intercept);
        assert!(s.validate().is_err());
        assert_eq!(CovariateSpec::preset("m3"), Some(CovariateSpec::m3()));
    }

    #[test]
    fn no_return_only_updates_return_model() {
        let h = tiny_hierarchy();
        let mut c = instance(CovariateSpec::m3());
        c.update_week(&WeeklyRecord::empty(1, 1, &h), &none(1)).unwrap();
        let n = c.update_counts();
        assert_eq!(n.return_model, 1);
        assert_eq!(n.global, 0);
        assert_eq!(n.category_gate, vec![0]);
        assert_eq!(n.item_gate, vec![0, 0, 0]);
    }

    #[test]
    fn empty_category_stops_ladder() {
        let h = tiny_hierarchy();
        let mut c = instance(CovariateSpec::m3());
        let mut r = WeeklyRecord::empty(1, 1, &h);
        r.returned = true;
        r.total_spend = 12.0;
        c.update_week(&r, &none(1)).unwrap();
        let n = c.update_counts();
        assert_eq!((n.global, n.category_gate[0], n.category_level[0]), (1, 1, 0));
        assert_eq!(n.sub_category_gate, vec![0, 0]);
        assert_eq!(n.item_gate, vec![0, 0, 0]);
    }

    #[test]
    fn full_purchase_updates_every_level() {
        let h = tiny_hierarchy();
        let mut c = instance(CovariateSpec::m1());
        c.update_week(&purchase(&h, 1, 1), &none(1)).unwrap();
        let n = c.update_counts();
        assert_eq!((n.return_model, n.global, n.category_level[0]), (1, 1, 1));
        assert_eq!(n.sub_category_level, vec![1, 1]);
        assert_eq!(n.item_gate, vec![1, 1, 1]);
        assert_eq!(n.item_count, vec![1, 0, 0]);
    }

    #[test]
    fn weeks_must_increase() {
        let h = tiny_hierarchy();
        let mut c = instance(CovariateSpec::m1());
        c.update_week(&purchase(&h, 1, 3), &none(3)).unwrap();
        assert!(c.update_week(&purchase(&h, 1, 3), &none(3)).is_err());
        assert!(c.update_week(&purchase(&h, 1, 2), &none(2)).is_err());
    }

    #[test]
    fn known_zero_parent_zeroes_children() {
        let h = tiny_hierarchy();
        let c = instance(CovariateSpec::m3());
        let f = c.forecast_week(&none(1), ProjectionMode::Known, Some(&WeeklyRecord::empty(1, 1, &h)), 1).unwrap();
        assert_eq!(f.global, FD::point(0.0));
        assert!(f.item.iter().all(|d| *d == FD::point(0.0)));
        let f = c.forecast_week(&none(1), ProjectionMode::Known, Some(&purchase(&h, 1, 1)), 1).unwrap();
        assert!(matches!(f.item[0], FD::ZeroInflated { .. }));
    }

    #[test]
    fn median_return_zero_zeroes_items() {
        let h = tiny_hierarchy();
        let mut c = instance(CovariateSpec::m3());
        for w in 1..=20 {
            c.update_week(&WeeklyRecord::empty(1, w, &h), &none(w)).unwrap();
        }
        assert!(c.return_probability(1).unwrap() < 0.5);
        for mode in [ProjectionMode::Median, ProjectionMode::Mean] {
            let f = c.forecast_week(&none(21), mode, None, 1).unwrap();
            assert!(f.item.iter().all(|d| *d == FD::point(0.0)));
        }
    }

    #[test]
    fn mean_path_ensemble_of_one_equals_mean_mode() {
        let h = tiny_hierarchy();
        let mut c = instance(CovariateSpec::m3());
        for w in 1..=6 {
            c.update_week(&purchase(&h, 1, w), &none(w)).unwrap();
        }
        let mean = c.forecast_week(&none(7), ProjectionMode::Mean, None, 1).unwrap();
        let mut s = MeanPathSampler { return_projection: ReturnProjection::Probability };
        let ens = c.forecast_ensemble(&none(7), 1, 1, &mut s).unwrap();
        assert_eq!(mean, ens);
    }

    #[test]
    fn zero_discount_keeps_sensitivity_at_prior() {
        let h = tiny_hierarchy();
        let mut c = instance(CovariateSpec::m3());
        for w in 1..=30 {
            let mut r = purchase(&h, 1, w);
            r.items[0].quantity = 1 + w % 3;
            c.update_week(&r, &none(w)).unwrap();
        }
        let traj = c.price_sensitivity(0).unwrap();
        assert_eq!(traj.len(), 30);
        assert!(traj.iter().all(|p| p.mean == 0.0));
        assert!(c.price_sensitivity(9).is_err());
    }

    #[test]
    fn gap_weeks_evolve_only() {
        let h = tiny_hierarchy();
        let mut a = instance(CovariateSpec::m1());
        let mut b = instance(CovariateSpec::m1());
        a.update_week(&purchase(&h, 1, 1), &none(1)).unwrap();
        b.update_week(&purchase(&h, 1, 1), &none(1)).unwrap();
        a.update_week(&purchase(&h, 1, 4), &none(4)).unwrap();
        b.advance_to(4).unwrap();
        assert_eq!(b.last_week(), 3);
        b.update_week(&purchase(&h, 1, 4), &none(4)).unwrap();
        assert_eq!(a.return_model.state, b.return_model.state);
        assert_eq!(a.update_counts().return_model, 2);
    }
}
