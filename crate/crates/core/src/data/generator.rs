//! Synthetic household panel with latent ground truth.
//!
//! Each household draws a return logit and a log spend level. The weekly
//! return logit drifts around its household value (a random walk by
//! default). On a return week, global spend is log-normal around the level
//! plus a slow random walk. Categories take log-normal shares of global
//! spend, sub-categories split category spend, and items are bought with a
//! logistic probability and a shifted-Poisson quantity. Both item parts
//! respond to the centered log sub-category spend and to the household's
//! discount through its price sensitivity.
//!
//! Households are generated in parallel; household `id` uses stream `id` of
//! a ChaCha8 generator seeded with the master seed, and stream 0 draws the
//! group promotion calendars, so output does not depend on thread count.

use super::{write_csv, Corpus, Group, ItemWeek, WeeklyRecord};
use crate::error::{Error, Result};
use crate::hierarchy::{CategoryDef, HierarchySpec, SubCategoryDef};
use rand::distr::weighted::WeightedIndex;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    /// Log-normal spends and shifted-Poisson quantities.
    Matched,
    /// Clipped Student-t(3) log-spend noise and gamma-mixed quantities.
    Misspecified,
}

/// Student-t dof and clip (in unit-variance units) of misspecified noise.
const MISSPEC_T_DOF: f64 = 3.0;
const MISSPEC_T_CLIP: f64 = 4.0;
/// Gamma shape of the quantity rate multiplier under misspecification.
const MISSPEC_NB_SHAPE: f64 = 2.0;
/// Upper bound on the summed category shares of global spend.
const MAX_SHARE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    /// Mean weekly return probability.
    pub return_prob: f64,
    /// Mean total spend over return weeks.
    pub mean_spend: f64,
    /// Sd of household return logits around the group center.
    #[serde(default = "default_return_logit_sd")]
    pub return_logit_sd: f64,
}

fn default_return_logit_sd() -> f64 {
    1.0
}

/// Weekly return logits follow an AR(1) around the household level; with
/// persistence 1 it is a random walk started at the level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReturnConfig {
    /// Sd of the weekly innovation.
    pub walk_sd: f64,
    /// AR coefficient, in `[0, 1]`.
    pub persistence: f64,
}

impl Default for ReturnConfig {
    fn default() -> Self {
        ReturnConfig { walk_sd: 0.1, persistence: 1.0 }
    }
}

impl ReturnConfig {
    /// Sd of the deviation before week 1: stationary when persistence < 1, else 0.
    fn initial_sd(&self) -> f64 {
        if self.persistence < 1.0 {
            self.walk_sd / (1.0 - self.persistence * self.persistence).sqrt()
        } else {
            0.0
        }
    }

    /// Variance of the deviation in each of weeks `1..=weeks`.
    fn variances(&self, weeks: u32) -> Vec<f64> {
        let (phi2, s2) = (self.persistence * self.persistence, self.walk_sd * self.walk_sd);
        let mut v = self.initial_sd().powi(2);
        (0..weeks)
            .map(|_| {
                v = phi2 * v + s2;
                v
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpendConfig {
    /// Sd of household log spend levels.
    pub household_sd: f64,
    /// Sd of weekly log global spend noise.
    pub noise_sd: f64,
    /// Sd of the weekly random-walk step of log global spend.
    pub walk_sd: f64,
    /// Sd of household effects on log shares.
    pub share_household_sd: f64,
    /// Sd of weekly log-share noise.
    pub share_noise_sd: f64,
    /// Sd of household effects on purchase logits.
    pub gate_household_sd: f64,
    /// Logit effect of centered log parent spend on purchase.
    pub parent_gate_effect: f64,
    /// Log-rate effect of centered log sub-category spend on item quantity.
    pub parent_quantity_effect: f64,
    /// Sd of household effects on item quantity log rates.
    pub quantity_household_sd: f64,
}

impl Default for SpendConfig {
    fn default() -> Self {
        SpendConfig {
            household_sd: 0.35,
            noise_sd: 0.42,
            walk_sd: 0.02,
            share_household_sd: 0.3,
            share_noise_sd: 0.25,
            gate_household_sd: 0.5,
            parent_gate_effect: 1.0,
            parent_quantity_effect: 0.6,
            quantity_household_sd: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromotionConfig {
    /// Probability an item runs a promotion in a given group-week.
    pub offer_prob: f64,
    /// Discount depths, drawn uniformly per promotion.
    pub depths: Vec<f64>,
    /// Probability a household receives a running promotion.
    pub reach: f64,
}

impl Default for PromotionConfig {
    fn default() -> Self {
        PromotionConfig { offer_prob: 0.3, depths: vec![0.1, 0.2, 0.3, 0.4, 0.5], reach: 0.8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Share of household-item pairs that respond to discounts.
    pub sensitive_fraction: f64,
    /// Mean quantity log-rate coefficient of sensitive pairs.
    pub mean: f64,
    pub sd: f64,
    /// Purchase logit coefficient on discount, as a multiple of sensitivity.
    pub gate_scale: f64,
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        SensitivityConfig { sensitive_fraction: 0.5, mean: 0.8, sd: 0.2, gate_scale: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemGen {
    pub name: String,
    pub unit_price: f64,
    /// Purchase probability given sub-category spend, at typical spend and no discount.
    pub purchase_prob: f64,
    /// Mean quantity given purchase, at typical spend and no discount.
    pub mean_quantity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubCategoryGen {
    pub name: String,
    /// Purchase probability given category spend, at typical spend.
    pub purchase_prob: f64,
    /// Relative share of category spend.
    pub weight: f64,
    pub items: Vec<ItemGen>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryGen {
    pub name: String,
    /// Purchase probability on a return week, at typical spend.
    pub purchase_prob: f64,
    /// Typical fraction of global spend.
    pub share: f64,
    pub sub_categories: Vec<SubCategoryGen>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub weeks: u32,
    pub households_per_group: u32,
    pub mechanism: Mechanism,
    pub groups: Vec<GroupConfig>,
    pub returns: ReturnConfig,
    pub spend: SpendConfig,
    pub promotions: PromotionConfig,
    pub sensitivity: SensitivityConfig,
    pub categories: Vec<CategoryGen>,
}

fn item(name: &str, unit_price: f64, purchase_prob: f64, mean_quantity: f64) -> ItemGen {
    ItemGen { name: name.into(), unit_price, purchase_prob, mean_quantity }
}

impl Default for GeneratorConfig {
    /// Three groups at the target return proportions and mean spends, 112
    /// weeks, and a 2 x 2 x 3 hierarchy.
    fn default() -> Self {
        let sub = |name: &str, purchase_prob: f64, weight: f64, items: Vec<ItemGen>| SubCategoryGen {
            name: name.into(),
            purchase_prob,
            weight,
            items,
        };
        GeneratorConfig {
            seed: 1,
            weeks: 112,
            households_per_group: 2000,
            mechanism: Mechanism::Matched,
            groups: vec![
                GroupConfig { return_prob: 0.96, mean_spend: 29.48, return_logit_sd: 1.0 },
                GroupConfig { return_prob: 0.94, mean_spend: 19.23, return_logit_sd: 1.0 },
                GroupConfig { return_prob: 0.84, mean_spend: 12.16, return_logit_sd: 1.0 },
            ],
            returns: ReturnConfig::default(),
            spend: SpendConfig::default(),
            promotions: PromotionConfig::default(),
            sensitivity: SensitivityConfig::default(),
            categories: vec![
                CategoryGen {
                    name: "dairy".into(),
                    purchase_prob: 0.7,
                    share: 0.2,
                    sub_categories: vec![
                        sub(
                            "milk",
                            0.7,
                            1.0,
                            vec![
                                item("milk_whole", 3.49, 0.5, 2.5),
                                item("milk_skim", 3.29, 0.3, 2.0),
                                item("milk_oat", 4.19, 0.2, 1.8),
                            ],
                        ),
                        sub(
                            "yogurt",
                            0.5,
                            0.6,
                            vec![
                                item("yogurt_plain", 1.19, 0.4, 4.0),
                                item("yogurt_greek", 1.49, 0.35, 3.5),
                                item("yogurt_drink", 2.49, 0.2, 2.2),
                            ],
                        ),
                    ],
                },
                CategoryGen {
                    name: "snacks".into(),
                    purchase_prob: 0.55,
                    share: 0.12,
                    sub_categories: vec![
                        sub(
                            "chips",
                            0.6,
                            1.0,
                            vec![
                                item("chips_potato", 2.99, 0.45, 2.0),
                                item("chips_tortilla", 3.49, 0.3, 1.8),
                                item("chips_pretzel", 2.79, 0.2, 1.6),
                            ],
                        ),
                        sub(
                            "cookies",
                            0.5,
                            0.8,
                            vec![
                                item("cookies_choc", 3.99, 0.4, 2.2),
                                item("cookies_oat", 3.49, 0.25, 1.8),
                                item("cookies_sandwich", 2.99, 0.3, 2.0),
                            ],
                        ),
                    ],
                },
            ],
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn is_prob(p: f64) -> bool {
    p > 0.0 && p < 1.0
}

impl GeneratorConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: GeneratorConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        check(self.weeks > 0, || "weeks must be positive".into())?;
        check(!self.groups.is_empty() && self.groups.len() <= 255, || "need 1 to 255 groups".into())?;
        for (g, gc) in self.groups.iter().enumerate() {
            check(is_prob(gc.return_prob), || format!("group {}: return_prob must be in (0, 1)", g + 1))?;
            check(gc.mean_spend > 0.0 && gc.mean_spend.is_finite(), || {
                format!("group {}: mean_spend must be positive", g + 1)
            })?;
            check(gc.return_logit_sd >= 0.0 && gc.return_logit_sd.is_finite(), || {
                format!("group {}: return_logit_sd must be finite and non-negative", g + 1)
            })?;
        }
        let r = &self.returns;
        check(r.walk_sd >= 0.0 && r.walk_sd.is_finite() && (0.0..=1.0).contains(&r.persistence), || {
            "returns.walk_sd must be non-negative and returns.persistence in [0, 1]".into()
        })?;
        let s = &self.spend;
        for (name, v) in [
            ("household_sd", s.household_sd),
            ("noise_sd", s.noise_sd),
            ("walk_sd", s.walk_sd),
            ("share_household_sd", s.share_household_sd),
            ("share_noise_sd", s.share_noise_sd),
            ("gate_household_sd", s.gate_household_sd),
            ("quantity_household_sd", s.quantity_household_sd),
        ] {
            check(v >= 0.0 && v.is_finite(), || format!("spend.{name} must be non-negative"))?;
        }
        check(s.parent_gate_effect.is_finite() && s.parent_quantity_effect.is_finite(), || {
            "spend effects must be finite".into()
        })?;
        let p = &self.promotions;
        check((0.0..=1.0).contains(&p.offer_prob) && (0.0..=1.0).contains(&p.reach), || {
            "promotion probabilities must be in [0, 1]".into()
        })?;
        check(!p.depths.is_empty() && p.depths.iter().all(|d| *d > 0.0 && *d <= 1.0), || {
            "promotion depths must be non-empty and in (0, 1]".into()
        })?;
        let t = &self.sensitivity;
        check((0.0..=1.0).contains(&t.sensitive_fraction) && t.sd >= 0.0, || "invalid sensitivity settings".into())?;
        check(t.mean.is_finite() && t.gate_scale.is_finite(), || "invalid sensitivity settings".into())?;
        let share: f64 = self.categories.iter().map(|c| c.share).sum();
        check(share < 1.0, || "category shares must sum to less than 1".into())?;
        for c in &self.categories {
            check(is_prob(c.purchase_prob) && c.share > 0.0, || format!("category '{}': invalid settings", c.name))?;
            for sc in &c.sub_categories {
                check(is_prob(sc.purchase_prob) && sc.weight > 0.0, || {
                    format!("sub-category '{}': invalid settings", sc.name)
                })?;
                for it in &sc.items {
                    check(is_prob(it.purchase_prob) && it.mean_quantity >= 1.0 && it.unit_price > 0.0, || {
                        format!("item '{}': invalid settings", it.name)
                    })?;
                }
            }
        }
        self.hierarchy().map(|_| ())
    }

    pub fn hierarchy(&self) -> Result<HierarchySpec> {
        HierarchySpec::new(
            self.categories
                .iter()
                .map(|c| CategoryDef {
                    name: c.name.clone(),
                    sub_categories: c
                        .sub_categories
                        .iter()
                        .map(|s| SubCategoryDef {
                            name: s.name.clone(),
                            items: s.items.iter().map(|i| i.name.clone()).collect(),
                        })
                        .collect(),
                })
                .collect(),
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Center `m` of household return logits such that the return
    /// probability averaged over households and weeks is `return_prob`.
    fn return_logit_center(&self, gc: &GroupConfig) -> f64 {
        let sds: Vec<f64> =
            self.returns.variances(self.weeks).into_iter().map(|v| (gc.return_logit_sd.powi(2) + v).sqrt()).collect();
        // Trapezoid rule for E[logistic(m + sd Z)] on z in [-8, 8].
        let n = 320;
        let h = 16.0 / n as f64;
        let nodes: Vec<(f64, f64)> = (0..=n)
            .map(|k| {
                let z = -8.0 + h * k as f64;
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                (z, w * h * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
            })
            .collect();
        let mean_prob = |m: f64| {
            sds.iter().map(|sd| nodes.iter().map(|(z, w)| w * logistic(m + sd * z)).sum::<f64>()).sum::<f64>()
                / sds.len() as f64
        };
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if mean_prob(mid) < gc.return_prob {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn log_level_offset(&self, mean_spend: f64) -> f64 {
        let s = &self.spend;
        let t = self.weeks as f64;
        let walk = (1..=self.weeks).map(|k| (0.5 * k as f64 * s.walk_sd.powi(2)).exp()).sum::<f64>() / t;
        mean_spend.ln() - 0.5 * s.household_sd.powi(2) - 0.5 * s.noise_sd.powi(2) - walk.ln()
    }
}

/// True parameters of one household-item pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemTruth {
    /// Quantity log-rate coefficient on the discount fraction.
    pub sensitivity: f64,
    /// Purchase logit at typical sub-category spend and no discount.
    pub purchase_logit: f64,
    /// Log rate of `quantity - 1` at typical spend and no discount.
    pub log_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdTruth {
    pub household: u32,
    pub group: Group,
    /// Household return logit level.
    pub return_logit: f64,
    /// True return probability of each week.
    pub return_probs: Vec<f64>,
    /// Household log global spend level.
    pub log_spend_level: f64,
    pub items: Vec<ItemTruth>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTruth {
    pub households: Vec<HouseholdTruth>,
    /// Promotion depth running in each group, indexed `[group - 1][item][week - 1]`; 0 = none.
    pub promotions: Vec<Vec<Vec<f64>>>,
}

impl LatentTruth {
    pub fn household(&self, id: u32) -> Option<&HouseholdTruth> {
        self.households.binary_search_by_key(&id, |h| h.household).ok().map(|i| &self.households[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub truth: LatentTruth,
}

/// Seed and hashes identifying a generated corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_sha256: String,
    /// SHA-256 of the corpus in CSV form.
    pub corpus_sha256: String,
    pub households: usize,
    pub weeks: u32,
    pub records: usize,
    pub generator_version: String,
}

struct HashWriter(Sha256);

impl std::io::Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl Manifest {
    pub fn compute(config: &GeneratorConfig, corpus: &Corpus) -> Result<Self> {
        let mut w = HashWriter(Sha256::new());
        write_csv(&mut w, corpus)?;
        Ok(Manifest {
            seed: config.seed,
            config_sha256: config.sha256(),
            corpus_sha256: hex::encode(w.0.finalize()),
            households: corpus.groups.len(),
            weeks: config.weeks,
            records: corpus.records.len(),
            generator_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Split `total` cents over positive weights, at least one cent each, by
/// largest remainder (ties to the lower index).
fn split_cents(total: u64, weights: &[f64]) -> Vec<u64> {
    let k = weights.len() as u64;
    let free = total - k;
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| free as f64 * w / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|e| 1 + e.floor() as u64).collect();
    let mut left = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

struct Household<'a> {
    cfg: &'a GeneratorConfig,
    h: &'a HierarchySpec,
    id: u32,
    group: Group,
    promotions: &'a [Vec<f64>],
    return_center: f64,
}

impl Household<'_> {
    fn generate(&self) -> (Vec<WeeklyRecord>, HouseholdTruth) {
        let cfg = self.cfg;
        let s = &cfg.spend;
        let h = self.h;
        let gc = &cfg.groups[self.group as usize - 1];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(self.id as u64);

        let rc = &cfg.returns;
        let return_logit = self.return_center + gc.return_logit_sd * normal(&mut rng);
        let mut return_dev = rc.initial_sd() * normal(&mut rng);
        let mut return_probs = Vec::with_capacity(cfg.weeks as usize);
        let mu = cfg.log_level_offset(gc.mean_spend) + s.household_sd * normal(&mut rng);

        let cats: Vec<&CategoryGen> = cfg.categories.iter().collect();
        let subs: Vec<&SubCategoryGen> = cats.iter().flat_map(|c| c.sub_categories.iter()).collect();
        let items: Vec<&ItemGen> = subs.iter().flat_map(|s| s.items.iter()).collect();

        let cat_share: Vec<f64> = cats.iter().map(|c| c.share.ln() + s.share_household_sd * normal(&mut rng)).collect();
        let cat_gate: Vec<f64> =
            cats.iter().map(|c| logit(c.purchase_prob) + s.gate_household_sd * normal(&mut rng)).collect();
        let sub_share: Vec<f64> =
            subs.iter().map(|sc| sc.weight.ln() + s.share_household_sd * normal(&mut rng)).collect();
        let sub_gate: Vec<f64> =
            subs.iter().map(|sc| logit(sc.purchase_prob) + s.gate_household_sd * normal(&mut rng)).collect();
        let t = &cfg.sensitivity;
        let item_truth: Vec<ItemTruth> = items
            .iter()
            .map(|it| {
                let sensitive = rng.random_bool(t.sensitive_fraction);
                let z = normal(&mut rng);
                let sensitivity = if sensitive { t.mean + t.sd * z } else { 0.0 };
                let purchase_logit = logit(it.purchase_prob) + s.gate_household_sd * normal(&mut rng);
                let log_rate = if it.mean_quantity > 1.0 {
                    (it.mean_quantity - 1.0).ln() + s.quantity_household_sd * normal(&mut rng)
                } else {
                    f64::NEG_INFINITY
                };
                ItemTruth { sensitivity, purchase_logit, log_rate }
            })
            .collect();

        // Typical log spends used to center parent-spend effects.
        let sub_frac_norm: Vec<f64> =
            (0..h.n_categories()).map(|c| h.subs_of(c).map(|j| sub_share[j].exp()).sum::<f64>().ln()).collect();
        let typical_cat: Vec<f64> = (0..h.n_categories()).map(|c| mu + cat_share[c]).collect();
        let typical_sub: Vec<f64> = (0..h.n_sub_categories())
            .map(|j| {
                let c = h.parent_of_sub(j);
                typical_cat[c] + sub_share[j] - sub_frac_norm[c]
            })
            .collect();

        let mut walk = 0.0;
        let mut records = Vec::with_capacity(cfg.weeks as usize);
        for week in 1..=cfg.weeks {
            walk += s.walk_sd * normal(&mut rng);
            let mut r = WeeklyRecord::empty(self.id, week, h);
            for (i, it) in items.iter().enumerate() {
                r.items[i].unit_price = it.unit_price;
                let depth = self.promotions[i][week as usize - 1];
                r.items[i].offered = depth > 0.0 && rng.random_bool(cfg.promotions.reach);
            }
            return_dev = rc.persistence * return_dev + rc.walk_sd * normal(&mut rng);
            let return_prob = logistic(return_logit + return_dev);
            return_probs.push(return_prob);
            r.returned = rng.random_bool(return_prob);
            if r.returned {
                self.fill_week(
                    &mut r,
                    &mut rng,
                    mu + walk,
                    mu,
                    &cat_share,
                    &cat_gate,
                    &sub_share,
                    &sub_gate,
                    &typical_cat,
                    &typical_sub,
                    &item_truth,
                    week,
                );
            }
            records.push(r);
        }
        let truth = HouseholdTruth {
            household: self.id,
            group: self.group,
            return_logit,
            return_probs,
            log_spend_level: mu,
            items: item_truth,
        };
        (records, truth)
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.cfg.mechanism {
            Mechanism::Matched => normal(rng),
            Mechanism::Misspecified => {
                let t: f64 = StudentT::new(MISSPEC_T_DOF).expect("valid dof").sample(rng);
                let unit = t / (MISSPEC_T_DOF / (MISSPEC_T_DOF - 2.0)).sqrt();
                unit.clamp(-MISSPEC_T_CLIP, MISSPEC_T_CLIP)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn fill_week(
        &self,
        r: &mut WeeklyRecord,
        rng: &mut ChaCha8Rng,
        level: f64,
        mu: f64,
        cat_share: &[f64],
        cat_gate: &[f64],
        sub_share: &[f64],
        sub_gate: &[f64],
        typical_cat: &[f64],
        typical_sub: &[f64],
        items: &[ItemTruth],
        week: u32,
    ) {
        let cfg = self.cfg;
        let s = &cfg.spend;
        let h = self.h;
        let log_g = level + s.noise_sd * self.noise(rng);
        let x_g = log_g - mu;

        let mut cat_raw = vec![0.0; h.n_categories()];
        for c in 0..h.n_categories() {
            let p = logistic(cat_gate[c] + s.parent_gate_effect * x_g);
            let bought = rng.random_bool(p);
            let e = s.share_noise_sd * self.noise(rng);
            if bought {
                cat_raw[c] = (cat_share[c] + e).exp();
            }
        }
        let raw_sum: f64 = cat_raw.iter().sum();
        let scale = if raw_sum > MAX_SHARE { MAX_SHARE / raw_sum } else { 1.0 };

        let g_cents = (log_g.exp() * 100.0).round().max(1.0) as u64;
        let mut cat_cents_total = 0u64;
        for c in 0..h.n_categories() {
            if cat_raw[c] == 0.0 {
                continue;
            }
            let subs: Vec<usize> = h.subs_of(c).collect();
            let log_c = log_g + (cat_raw[c] * scale).ln();
            let x_c = log_c - typical_cat[c];
            let mut chosen: Vec<bool> =
                subs.iter().map(|&j| rng.random_bool(logistic(sub_gate[j] + s.parent_gate_effect * x_c))).collect();
            if !chosen.iter().any(|&b| b) {
                let w: Vec<f64> = subs.iter().map(|&j| logistic(sub_gate[j])).collect();
                let pick = WeightedIndex::new(&w).expect("positive weights").sample(rng);
                chosen[pick] = true;
            }
            let weights: Vec<f64> = subs
                .iter()
                .zip(&chosen)
                .filter(|(_, &b)| b)
                .map(|(&j, _)| (sub_share[j] + s.share_noise_sd * self.noise(rng)).exp())
                .collect();
            let c_cents = ((log_c.exp() * 100.0).round() as u64).max(weights.len() as u64);
            let split = split_cents(c_cents, &weights);
            let mut k = 0;
            for (&j, &b) in subs.iter().zip(&chosen) {
                if b {
                    r.sub_category_spend[j] = split[k] as f64 / 100.0;
                    k += 1;
                }
            }
            r.category_spend[c] = c_cents as f64 / 100.0;
            cat_cents_total += c_cents;
        }
        r.total_spend = g_cents.max(cat_cents_total) as f64 / 100.0;

        let t = &cfg.sensitivity;
        for (i, truth) in items.iter().enumerate() {
            let j = h.parent_of_item(i);
            if r.sub_category_spend[j] <= 0.0 {
                continue;
            }
            let x_s = r.sub_category_spend[j].ln() - typical_sub[j];
            let d = if r.items[i].offered { self.promotions[i][week as usize - 1] } else { 0.0 };
            let p = logistic(truth.purchase_logit + s.parent_gate_effect * x_s + t.gate_scale * truth.sensitivity * d);
            if !rng.random_bool(p) {
                continue;
            }
            let mut lambda = (truth.log_rate + s.parent_quantity_effect * x_s + truth.sensitivity * d).exp();
            if cfg.mechanism == Mechanism::Misspecified && lambda > 0.0 {
                lambda *= Gamma::new(MISSPEC_NB_SHAPE, 1.0 / MISSPEC_NB_SHAPE).expect("valid gamma").sample(rng);
            }
            let extra = if lambda > 0.0 { Poisson::new(lambda).expect("valid rate").sample(rng) as u32 } else { 0 };
            r.items[i] = ItemWeek { quantity: 1 + extra, discount_pct: d, ..r.items[i] };
        }
    }
}

fn promotion_calendars(cfg: &GeneratorConfig, n_items: usize) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let p = &cfg.promotions;
    (0..cfg.groups.len())
        .map(|_| {
            (0..n_items)
                .map(|_| {
                    (0..cfg.weeks)
                        .map(|_| {
                            let on = rng.random_bool(p.offer_prob);
                            let depth = p.depths[rng.random_range(0..p.depths.len())];
                            if on {
                                depth
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Generate `households_per_group` households for every group; ids run from
/// 1 in group order.
pub fn generate_synthetic(config: &GeneratorConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let h = config.hierarchy()?;
    let promotions = promotion_calendars(config, h.n_items());
    let n = config.households_per_group;
    let centers: Vec<f64> = config.groups.iter().map(|gc| config.return_logit_center(gc)).collect();
    let ids: Vec<(u32, Group)> =
        (0..config.groups.len()).flat_map(|g| (0..n).map(move |k| (g as u32 * n + k + 1, g as Group + 1))).collect();
    let out: Vec<(Vec<WeeklyRecord>, HouseholdTruth)> = ids
        .par_iter()
        .map(|&(id, group)| {
            let g = group as usize - 1;
            Household { cfg: config, h: &h, id, group, promotions: &promotions[g], return_center: centers[g] }
                .generate()
        })
        .collect();
    let mut records = Vec::with_capacity(out.len() * config.weeks as usize);
    let mut households = Vec::with_capacity(out.len());
    let mut groups = BTreeMap::new();
    for (recs, truth) in out {
        groups.insert(truth.household, truth.group);
        records.extend(recs);
        households.push(truth);
    }
    let corpus = Corpus::new(h, records, groups)?;
    Ok(SyntheticCorpus { corpus, truth: LatentTruth { households, promotions } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_csv;

    fn small(seed: u64, n: u32) -> GeneratorConfig {
        GeneratorConfig { seed, households_per_group: n, weeks: 40, ..Default::default() }
    }

    #[test]
    fn cents_split_is_exact() {
        let s = split_cents(1001, &[1.0, 1.0, 1.0]);
        assert_eq!(s.iter().sum::<u64>(), 1001);
        assert_eq!(s, vec![334, 334, 333]);
        assert_eq!(split_cents(2, &[1e-9, 5.0]), vec![1, 1]);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let a = generate_synthetic(&small(7, 10)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| generate_synthetic(&small(7, 10)).unwrap());
        assert_eq!(a, b);
        let c = generate_synthetic(&small(8, 10)).unwrap();
        assert_ne!(a.corpus.records, c.corpus.records);
    }

    #[test]
    fn records_satisfy_invariants_and_round_trip() {
        let s = generate_synthetic(&small(3, 5)).unwrap();
        assert_eq!(s.corpus.records.len(), 3 * 5 * 40);
        let mut buf = vec![];
        write_csv(&mut buf, &s.corpus).unwrap();
        let back = read_csv(buf.as_slice(), &s.corpus.hierarchy).unwrap();
        assert_eq!(back, s.corpus);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let c = GeneratorConfig::default();
        let s = c.to_toml_string().unwrap();
        assert_eq!(GeneratorConfig::from_toml_str(&s).unwrap(), c);
        assert!(GeneratorConfig::from_toml_str("weeks = 0").is_err());
        assert!(GeneratorConfig::from_toml_str("bogus = 1").is_err());
        let partial = GeneratorConfig::from_toml_str("seed = 9\nhouseholds_per_group = 3").unwrap();
        assert_eq!(partial.groups.len(), 3);
        assert_eq!(partial.seed, 9);
    }

    #[test]
    fn manifest_is_stable() {
        let cfg = small(11, 4);
        let a = generate_synthetic(&cfg).unwrap();
        let m1 = Manifest::compute(&cfg, &a.corpus).unwrap();
        let m2 = Manifest::compute(&cfg, &generate_synthetic(&cfg).unwrap().corpus).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.households, 12);
    }
}
