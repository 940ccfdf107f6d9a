//! Household-item promotion profiles, purchase-volume groups and item
//! selection.

use super::{Corpus, Group, WeeklyRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Cut-offs for the four household-item categories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategorizeThresholds {
    /// Minimum DOP for promotion sensitivity to be detectable.
    pub min_dop: f64,
    /// Minimum DPP - RPP for promotion sensitivity.
    pub min_lift: f64,
    /// Minimum RPP for an established buying habit.
    pub loyal_rpp: f64,
}

impl Default for CategorizeThresholds {
    fn default() -> Self {
        CategorizeThresholds { min_dop: 0.1, min_lift: 0.15, loyal_rpp: 0.25 }
    }
}

/// Promotion and purchase proportions of one household for one item.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HouseholdItemProfile {
    /// Share of weeks with an offer.
    pub dop: f64,
    /// Share of offered weeks with a purchase; 0 when never offered.
    pub dpp: f64,
    /// Share of regular-price weeks with a purchase; 0 when always offered.
    pub rpp: f64,
    /// 1 loyal, 2 promotion sensitive, 3 no promotions, 4 disinterested.
    pub category: u8,
}

/// Profile one household's records (any order) for `item`.
pub fn categorize_household(records: &[WeeklyRecord], item: usize, t: &CategorizeThresholds) -> HouseholdItemProfile {
    let (mut offered, mut offered_buy, mut regular_buy) = (0usize, 0usize, 0usize);
    for r in records {
        let it = &r.items[item];
        let bought = it.quantity > 0;
        if it.offered {
            offered += 1;
            offered_buy += bought as usize;
        } else {
            regular_buy += bought as usize;
        }
    }
    let n = records.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let dop = ratio(offered, n);
    let dpp = ratio(offered_buy, offered);
    let rpp = ratio(regular_buy, n - offered);
    let category = if offered == 0 {
        3
    } else if dop >= t.min_dop && dpp - rpp >= t.min_lift {
        2
    } else if rpp >= t.loyal_rpp {
        1
    } else {
        4
    };
    HouseholdItemProfile { dop, dpp, rpp, category }
}

/// Split households into purchase-volume tertiles: group 1 holds the
/// largest total quantities. Ties are broken by household id.
pub fn assign_groups(records: &[WeeklyRecord]) -> BTreeMap<u32, Group> {
    let mut totals: BTreeMap<u32, u64> = BTreeMap::new();
    for r in records {
        *totals.entry(r.household).or_default() += r.items.iter().map(|i| i.quantity as u64).sum::<u64>();
    }
    let mut order: Vec<(u32, u64)> = totals.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = order.len();
    order.into_iter().enumerate().map(|(rank, (hh, _))| (hh, 1 + (3 * rank / n) as Group)).collect()
}

/// One item's share of promotion-sensitive households.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemRanking {
    pub item: usize,
    pub name: String,
    pub households: usize,
    pub category_counts: [usize; 4],
    pub share_sensitive: f64,
}

/// Items ranked by the share of category-2 households, descending; ties go
/// to the lexicographically smaller item name.
pub fn select_items(corpus: &Corpus, t: &CategorizeThresholds) -> Vec<ItemRanking> {
    let h = &corpus.hierarchy;
    let households = corpus.households();
    if households.is_empty() {
        return vec![];
    }
    let mut out: Vec<ItemRanking> = (0..h.n_items())
        .map(|item| {
            let mut counts = [0usize; 4];
            for (_, recs) in &households {
                counts[categorize_household(recs, item, t).category as usize - 1] += 1;
            }
            ItemRanking {
                item,
                name: h.item_name(item).to_string(),
                households: households.len(),
                category_counts: counts,
                share_sensitive: counts[1] as f64 / households.len() as f64,
            }
        })
        .collect();
    out.sort_by(|a, b| b.share_sensitive.total_cmp(&a.share_sensitive).then_with(|| a.name.cmp(&b.name)));
    out
}
