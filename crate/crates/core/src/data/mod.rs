//! Weekly household records, CSV ingest, categorization, discount
//! imputation and the synthetic generator.

mod categorize;
mod csv_io;
mod discount;
mod generator;

pub use categorize::{
    assign_groups, categorize_household, select_items, CategorizeThresholds, HouseholdItemProfile, ItemRanking,
};
pub use csv_io::{ingest_csv, read_csv, write_csv, CSV_HEADER, CSV_VERSION_LINE};
pub use discount::{aggregate_discount, DiscountTable};
pub use generator::{
    generate_synthetic, CategoryGen, GeneratorConfig, GroupConfig, HouseholdTruth, ItemGen, ItemTruth, LatentTruth,
    Manifest, Mechanism, PromotionConfig, SensitivityConfig, SpendConfig, SubCategoryGen, SyntheticCorpus,
};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Tolerance for category = sum of sub-category spends.
pub const SPEND_SUM_TOL: f64 = 1e-6;

/// One item in one household-week.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemWeek {
    pub quantity: u32,
    pub unit_price: f64,
    /// Discount fraction paid; observed only when purchased, zero otherwise.
    pub discount_pct: f64,
    /// A promotion on this item was offered to the household this week.
    pub offered: bool,
}

impl ItemWeek {
    /// Amount paid for the item this week.
    pub fn spend(&self) -> f64 {
        self.quantity as f64 * self.unit_price * (1.0 - self.discount_pct)
    }
}

/// All observations for one household in one week. Vectors are indexed by
/// the node indices of the [`HierarchySpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRecord {
    pub household: u32,
    pub week: u32,
    pub returned: bool,
    pub total_spend: f64,
    pub category_spend: Vec<f64>,
    pub sub_category_spend: Vec<f64>,
    pub items: Vec<ItemWeek>,
}

impl WeeklyRecord {
    /// A non-return week with regular prices and the given offers.
    pub fn empty(household: u32, week: u32, h: &HierarchySpec) -> Self {
        WeeklyRecord {
            household,
            week,
            returned: false,
            total_spend: 0.0,
            category_spend: vec![0.0; h.n_categories()],
            sub_category_spend: vec![0.0; h.n_sub_categories()],
            items: vec![ItemWeek { quantity: 0, unit_price: 1.0, discount_pct: 0.0, offered: false }; h.n_items()],
        }
    }

    /// Check record invariants against the hierarchy.
    pub fn validate(&self, h: &HierarchySpec) -> Result<()> {
        let loc = || format!("household {} week {}", self.household, self.week);
        let bad = |m: String| Err(Error::validation(loc(), m));
        if self.week == 0 {
            return bad("weeks are numbered from 1".into());
        }
        if self.category_spend.len() != h.n_categories()
            || self.sub_category_spend.len() != h.n_sub_categories()
            || self.items.len() != h.n_items()
        {
            return bad("record does not match the hierarchy shape".into());
        }
        let spends = std::iter::once(self.total_spend)
            .chain(self.category_spend.iter().cloned())
            .chain(self.sub_category_spend.iter().cloned());
        for s in spends {
            if !s.is_finite() || s < 0.0 {
                return bad(format!("invalid spend {s}"));
            }
        }
        for (i, it) in self.items.iter().enumerate() {
            if !(it.unit_price > 0.0) || !it.unit_price.is_finite() {
                return bad(format!("item '{}' has invalid unit price {}", h.item_name(i), it.unit_price));
            }
            if !(0.0..=1.0).contains(&it.discount_pct) {
                return bad(format!("item '{}' discount {} outside [0, 1]", h.item_name(i), it.discount_pct));
            }
        }
        if !self.returned {
            let any = self.total_spend > 0.0
                || self.category_spend.iter().any(|&v| v > 0.0)
                || self.sub_category_spend.iter().any(|&v| v > 0.0)
                || self.items.iter().any(|i| i.quantity > 0);
            if any {
                return bad("returned = 0 but spend or quantity is positive".into());
            }
            return Ok(());
        }
        if !(self.total_spend > 0.0) {
            return bad("returned = 1 but total spend is zero".into());
        }
        for c in 0..h.n_categories() {
            let sum: f64 = h.subs_of(c).map(|s| self.sub_category_spend[s]).sum();
            if (sum - self.category_spend[c]).abs() > SPEND_SUM_TOL {
                return bad(format!(
                    "category '{}' spend {} differs from sub-category sum {}",
                    h.category_name(c),
                    self.category_spend[c],
                    sum
                ));
            }
        }
        for (i, it) in self.items.iter().enumerate() {
            if it.quantity > 0 && !(self.sub_category_spend[h.parent_of_item(i)] > 0.0) {
                return bad(format!(
                    "item '{}' purchased but sub-category '{}' spend is zero",
                    h.item_name(i),
                    h.sub_category_name(h.parent_of_item(i))
                ));
            }
        }
        Ok(())
    }
}

/// Household segment, 1 = highest spending.
pub type Group = u8;

/// Records for a set of households, sorted by (household, week).
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub hierarchy: HierarchySpec,
    pub records: Vec<WeeklyRecord>,
    pub groups: BTreeMap<u32, Group>,
}

impl Corpus {
    /// Sort, validate and reject duplicate household-weeks.
    pub fn new(hierarchy: HierarchySpec, mut records: Vec<WeeklyRecord>, groups: BTreeMap<u32, Group>) -> Result<Self> {
        records.sort_by_key(|r| (r.household, r.week));
        for w in records.windows(2) {
            if (w[0].household, w[0].week) == (w[1].household, w[1].week) {
                return Err(Error::validation(
                    format!("household {} week {}", w[0].household, w[0].week),
                    "duplicated (household, week)",
                ));
            }
        }
        for r in &records {
            r.validate(&hierarchy)?;
        }
        Ok(Corpus { hierarchy, records, groups })
    }

    /// Contiguous per-household slices in household order.
    pub fn households(&self) -> Vec<(u32, &[WeeklyRecord])> {
        let mut out = vec![];
        let mut start = 0;
        for i in 1..=self.records.len() {
            if i == self.records.len() || self.records[i].household != self.records[start].household {
                out.push((self.records[start].household, &self.records[start..i]));
                start = i;
            }
        }
        out
    }

    pub fn group_of(&self, household: u32) -> Group {
        self.groups.get(&household).copied().unwrap_or(1)
    }

    /// Records of households in `group`.
    pub fn group_records(&self, group: Group) -> Vec<WeeklyRecord> {
        self.records.iter().filter(|r| self.group_of(r.household) == group).cloned().collect()
    }

    pub fn group_ids(&self) -> Vec<Group> {
        let mut g: Vec<Group> = self.groups.values().copied().collect();
        if g.is_empty() {
            g.push(1);
        }
        g.sort_unstable();
        g.dedup();
        g
    }
}
