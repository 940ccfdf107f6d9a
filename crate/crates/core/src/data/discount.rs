//! Potential discounts and their group averages.
//!
//! The discount on offer is only observed when the household buys. For an
//! offered week without a purchase it is imputed as the modal purchased
//! discount for that item-week within the group, falling back to the most
//! recent earlier week that has one, then to 0. Weeks without an offer have
//! potential discount 0.

use super::WeeklyRecord;
use std::collections::BTreeMap;

/// Per-group lookup of modal offered discounts and weekly aggregates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiscountTable {
    modes: Vec<BTreeMap<u32, f64>>,
    aggregates: Vec<BTreeMap<u32, f64>>,
}

fn basis_points(d: f64) -> i64 {
    (d * 1e4).round() as i64
}

impl DiscountTable {
    /// Build from all records of one household group.
    pub fn build(records: &[WeeklyRecord], n_items: usize) -> Self {
        let mut counts: Vec<BTreeMap<u32, BTreeMap<i64, usize>>> = vec![BTreeMap::new(); n_items];
        for r in records {
            for (i, it) in r.items.iter().enumerate().take(n_items) {
                if it.offered && it.quantity > 0 {
                    *counts[i].entry(r.week).or_default().entry(basis_points(it.discount_pct)).or_default() += 1;
                }
            }
        }
        let modes = counts
            .into_iter()
            .map(|by_week| {
                by_week
                    .into_iter()
                    .map(|(w, c)| {
                        // BTreeMap iterates keys ascending, so `>` keeps the smallest tied key.
                        let mut best = (0i64, 0usize);
                        for (k, n) in c {
                            if n > best.1 {
                                best = (k, n);
                            }
                        }
                        (w, best.0 as f64 / 1e4)
                    })
                    .collect()
            })
            .collect();
        let mut table = DiscountTable { modes, aggregates: vec![BTreeMap::new(); n_items] };
        let mut sums: Vec<BTreeMap<u32, (f64, usize)>> = vec![BTreeMap::new(); n_items];
        for r in records {
            for (i, sum) in sums.iter_mut().enumerate() {
                let e = sum.entry(r.week).or_default();
                e.0 += table.potential(r, i);
                e.1 += 1;
            }
        }
        table.aggregates =
            sums.into_iter().map(|m| m.into_iter().map(|(w, (s, n))| (w, s / n as f64)).collect()).collect();
        table
    }

    /// Imputed discount on offer for an offered item-week.
    pub fn imputed_offer(&self, item: usize, week: u32) -> f64 {
        self.modes.get(item).and_then(|m| m.range(..=week).next_back()).map(|(_, &d)| d).unwrap_or(0.0)
    }

    /// Potential discount faced by the household of `record` for `item`.
    pub fn potential(&self, record: &WeeklyRecord, item: usize) -> f64 {
        let it = &record.items[item];
        if it.quantity > 0 {
            it.discount_pct
        } else if it.offered {
            self.imputed_offer(item, record.week)
        } else {
            0.0
        }
    }

    /// Group mean of potential discounts; 0 for weeks without records.
    pub fn aggregate(&self, item: usize, week: u32) -> f64 {
        self.aggregates.get(item).and_then(|m| m.get(&week)).copied().unwrap_or(0.0)
    }
}

/// Average potential discount across the given households' records for one
/// item-week.
pub fn aggregate_discount(records: &[WeeklyRecord], item: usize, week: u32) -> f64 {
    let n_items = records.first().map_or(0, |r| r.items.len());
    if item >= n_items {
        return 0.0;
    }
    DiscountTable::build(records, n_items).aggregate(item, week)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::{purchase, tiny_hierarchy};

    fn rec(hh: u32, week: u32, offered: bool, bought: bool, d: f64) -> WeeklyRecord {
        let h = tiny_hierarchy();
        let mut r = purchase(&h, hh, week);
        r.items[0].offered = offered;
        r.items[0].quantity = bought as u32;
        r.items[0].discount_pct = if bought { d } else { 0.0 };
        r
    }

    #[test]
    fn all_offered_twenty_percent() {
        let recs: Vec<_> = (0..4).map(|hh| rec(hh, 1, true, true, 0.2)).collect();
        assert!((aggregate_discount(&recs, 0, 1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn half_zero_half_forty() {
        let recs: Vec<_> = (0..4).map(|hh| rec(hh, 1, hh % 2 == 0, hh % 2 == 0, 0.4)).collect();
        assert!((aggregate_discount(&recs, 0, 1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn imputation_matches_brute_force() {
        let recs = vec![
            rec(1, 1, true, true, 0.3),
            rec(2, 1, true, true, 0.1),
            rec(3, 1, true, true, 0.1),
            rec(4, 1, true, false, 0.0),
            rec(5, 1, false, false, 0.0),
            rec(1, 2, true, false, 0.0),
            rec(2, 2, false, false, 0.0),
        ];
        let t = DiscountTable::build(&recs, 3);
        assert_eq!(t.imputed_offer(0, 1), 0.1);
        assert_eq!(t.imputed_offer(0, 2), 0.1);
        assert_eq!(t.imputed_offer(0, 0), 0.0);
        let brute1 = (0.3 + 0.1 + 0.1 + 0.1 + 0.0) / 5.0;
        assert!((t.aggregate(0, 1) - brute1).abs() < 1e-15);
        assert!((t.aggregate(0, 2) - 0.05).abs() < 1e-15);
        assert_eq!(t.aggregate(1, 1), 0.0);
    }

    #[test]
    fn modal_tie_takes_smaller() {
        let recs = vec![rec(1, 1, true, true, 0.3), rec(2, 1, true, true, 0.2), rec(3, 1, true, false, 0.0)];
        let t = DiscountTable::build(&recs, 3);
        assert_eq!(t.potential(&recs[2], 0), 0.2);
    }
}
