//! Category, sub-category and item hierarchy.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Nested form used in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryDef {
    pub name: String,
    pub sub_categories: Vec<SubCategoryDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubCategoryDef {
    pub name: String,
    pub items: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HierarchyDef {
    categories: Vec<CategoryDef>,
}

/// Flattened three-level hierarchy; nodes are addressed by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HierarchyDef", into = "HierarchyDef")]
pub struct HierarchySpec {
    categories: Vec<String>,
    sub_categories: Vec<(String, usize)>,
    items: Vec<(String, usize)>,
}

impl TryFrom<HierarchyDef> for HierarchySpec {
    type Error = Error;
    fn try_from(d: HierarchyDef) -> Result<Self> {
        HierarchySpec::new(d.categories)
    }
}

impl From<HierarchySpec> for HierarchyDef {
    fn from(h: HierarchySpec) -> Self {
        HierarchyDef { categories: h.to_nested() }
    }
}

impl HierarchySpec {
    pub fn new(categories: Vec<CategoryDef>) -> Result<Self> {
        let bad = |m: String| Err(Error::Config(format!("hierarchy: {m}")));
        if categories.is_empty() {
            return bad("no categories".into());
        }
        let mut seen = HashSet::new();
        let mut h = HierarchySpec { categories: vec![], sub_categories: vec![], items: vec![] };
        for c in categories {
            if c.name.is_empty() || !seen.insert(c.name.clone()) {
                return bad(format!("empty or duplicate name '{}'", c.name));
            }
            if c.sub_categories.is_empty() {
                return bad(format!("category '{}' has no sub-categories", c.name));
            }
            let ci = h.categories.len();
            h.categories.push(c.name);
            for s in c.sub_categories {
                if s.name.is_empty() || !seen.insert(s.name.clone()) {
                    return bad(format!("empty or duplicate name '{}'", s.name));
                }
                if s.items.is_empty() {
                    return bad(format!("sub-category '{}' has no items", s.name));
                }
                let si = h.sub_categories.len();
                h.sub_categories.push((s.name, ci));
                for it in s.items {
                    if it.is_empty() || !seen.insert(it.clone()) {
                        return bad(format!("empty or duplicate name '{it}'"));
                    }
                    h.items.push((it, si));
                }
            }
        }
        Ok(h)
    }

    pub fn to_nested(&self) -> Vec<CategoryDef> {
        (0..self.categories.len())
            .map(|c| CategoryDef {
                name: self.categories[c].clone(),
                sub_categories: self
                    .subs_of(c)
                    .map(|s| SubCategoryDef {
                        name: self.sub_categories[s].0.clone(),
                        items: self.items_of(s).map(|i| self.items[i].0.clone()).collect(),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn n_sub_categories(&self) -> usize {
        self.sub_categories.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn category_name(&self, c: usize) -> &str {
        &self.categories[c]
    }

    pub fn sub_category_name(&self, s: usize) -> &str {
        &self.sub_categories[s].0
    }

    pub fn item_name(&self, i: usize) -> &str {
        &self.items[i].0
    }

    /// Category of sub-category `s`.
    pub fn parent_of_sub(&self, s: usize) -> usize {
        self.sub_categories[s].1
    }

    /// Sub-category of item `i`.
    pub fn parent_of_item(&self, i: usize) -> usize {
        self.items[i].1
    }

    pub fn subs_of(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.sub_categories.len()).filter(move |&s| self.sub_categories[s].1 == c)
    }

    pub fn items_of(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.items.len()).filter(move |&i| self.items[i].1 == s)
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    pub fn sub_category_index(&self, name: &str) -> Option<usize> {
        self.sub_categories.iter().position(|s| s.0 == name)
    }

    pub fn item_index(&self, name: &str) -> Option<usize> {
        self.items.iter().position(|s| s.0 == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small() -> HierarchySpec {
        HierarchySpec::new(vec![
            CategoryDef {
                name: "dairy".into(),
                sub_categories: vec![
                    SubCategoryDef { name: "milk".into(), items: vec!["milk_1".into(), "milk_2".into()] },
                    SubCategoryDef { name: "yogurt".into(), items: vec!["yogurt_1".into()] },
                ],
            },
            CategoryDef {
                name: "bakery".into(),
                sub_categories: vec![SubCategoryDef { name: "bread".into(), items: vec!["bread_1".into()] }],
            },
        ])
        .unwrap()
    }

    #[test]
    fn indices_and_parents() {
        let h = small();
        assert_eq!(h.n_items(), 4);
        assert_eq!(h.parent_of_item(h.item_index("yogurt_1").unwrap()), 1);
        assert_eq!(h.parent_of_sub(2), 1);
        assert_eq!(h.subs_of(0).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn toml_round_trip() {
        let h = small();
        let s = toml::to_string(&h).unwrap();
        let back: HierarchySpec = toml::from_str(&s).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn rejects_duplicates() {
        let r = HierarchySpec::new(vec![CategoryDef {
            name: "a".into(),
            sub_categories: vec![SubCategoryDef { name: "a".into(), items: vec!["x".into()] }],
        }]);
        assert!(r.is_err());
    }
}
