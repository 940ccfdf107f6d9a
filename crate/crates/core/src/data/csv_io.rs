//! CSV schema, one row per (household, week, item):
//!
//! ```text
//! #hhcast-weekly v1
//! household_id,group,week,returned,total_spend,category,category_spend,sub_category,sub_category_spend,item,quantity,unit_price,discount_pct,offered
//! ```
//!
//! Week-level columns are repeated on every item row of the week and must
//! agree. `group` may be empty. Flags are `0`/`1`. Floats are written in
//! shortest round-trip form.

use super::{assign_groups, Corpus, Group, ItemWeek, WeeklyRecord};
use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub const CSV_VERSION_LINE: &str = "#hhcast-weekly v1";
pub const CSV_HEADER: [&str; 14] = [
    "household_id",
    "group",
    "week",
    "returned",
    "total_spend",
    "category",
    "category_spend",
    "sub_category",
    "sub_category_spend",
    "item",
    "quantity",
    "unit_price",
    "discount_pct",
    "offered",
];

struct Partial {
    first_row: usize,
    group: Option<Group>,
    record: WeeklyRecord,
    item_rows: Vec<Option<usize>>,
    cat_set: Vec<bool>,
    sub_set: Vec<bool>,
}

/// Read, validate and sort records from a CSV file; households without a
/// group column value are assigned by purchase-count tertiles.
pub fn ingest_csv(path: impl AsRef<Path>, hierarchy: &HierarchySpec) -> Result<Corpus> {
    let f = std::fs::File::open(path.as_ref())?;
    read_csv(f, hierarchy)
}

pub fn read_csv<R: Read>(reader: R, h: &HierarchySpec) -> Result<Corpus> {
    let mut br = BufReader::new(reader);
    let mut first = String::new();
    br.read_line(&mut first)?;
    if first.trim_end() != CSV_VERSION_LINE {
        return Err(Error::validation("row 1", format!("expected version line '{CSV_VERSION_LINE}'")));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(br);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::validation("row 2", format!("header must be '{}'", CSV_HEADER.join(","))));
    }
    let mut parts: BTreeMap<(u32, u32), Partial> = BTreeMap::new();
    for (idx, row) in rdr.records().enumerate() {
        let row_no = idx + 3;
        let row = row?;
        let loc = format!("row {row_no}");
        let field = |i: usize| row.get(i).unwrap_or("");
        let parse_f = |i: usize| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::validation(&loc, format!("column '{}' is not a number", CSV_HEADER[i])))
        };
        let parse_u = |i: usize| -> Result<u32> {
            field(i).parse::<u32>().map_err(|_| {
                Error::validation(&loc, format!("column '{}' is not a non-negative integer", CSV_HEADER[i]))
            })
        };
        let parse_b = |i: usize| -> Result<bool> {
            match field(i) {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::validation(&loc, format!("column '{}' must be 0 or 1", CSV_HEADER[i]))),
            }
        };
        let household = parse_u(0)?;
        let group = match field(1) {
            "" => None,
            g => Some(g.parse::<Group>().map_err(|_| Error::validation(&loc, "invalid group"))?),
        };
        let week = parse_u(2)?;
        let returned = parse_b(3)?;
        let total = parse_f(4)?;
        let item =
            h.item_index(field(9)).ok_or_else(|| Error::validation(&loc, format!("unknown item '{}'", field(9))))?;
        let s = h.parent_of_item(item);
        let c = h.parent_of_sub(s);
        if field(7) != h.sub_category_name(s) || field(5) != h.category_name(c) {
            return Err(Error::validation(&loc, format!("item '{}' listed under the wrong parents", field(9))));
        }
        let cat_spend = parse_f(6)?;
        let sub_spend = parse_f(8)?;
        let it = ItemWeek {
            quantity: parse_u(10)?,
            unit_price: parse_f(11)?,
            discount_pct: parse_f(12)?,
            offered: parse_b(13)?,
        };
        let p = parts.entry((household, week)).or_insert_with(|| {
            let mut record = WeeklyRecord::empty(household, week, h);
            record.returned = returned;
            record.total_spend = total;
            Partial {
                first_row: row_no,
                group,
                record,
                item_rows: vec![None; h.n_items()],
                cat_set: vec![false; h.n_categories()],
                sub_set: vec![false; h.n_sub_categories()],
            }
        });
        let mismatch = |what: &str| {
            Error::validation(&loc, format!("{what} disagrees with row {} of the same household-week", p.first_row))
        };
        if p.record.returned != returned || p.record.total_spend != total {
            return Err(mismatch("week-level value"));
        }
        if p.group != group {
            return Err(mismatch("group"));
        }
        if let Some(prev) = p.item_rows[item] {
            return Err(Error::validation(
                &loc,
                format!("duplicated (household, week) = ({household}, {week}); item already given on row {prev}"),
            ));
        }
        p.item_rows[item] = Some(row_no);
        if p.cat_set[c] && p.record.category_spend[c] != cat_spend {
            return Err(mismatch("category spend"));
        }
        if p.sub_set[s] && p.record.sub_category_spend[s] != sub_spend {
            return Err(mismatch("sub-category spend"));
        }
        p.cat_set[c] = true;
        p.sub_set[s] = true;
        p.record.category_spend[c] = cat_spend;
        p.record.sub_category_spend[s] = sub_spend;
        p.record.items[item] = it;
    }
    let mut groups = BTreeMap::new();
    let mut records = Vec::with_capacity(parts.len());
    for ((household, week), p) in parts {
        let loc = format!("row {}", p.first_row);
        if let Some(missing) = p.item_rows.iter().position(|r| r.is_none()) {
            return Err(Error::validation(
                loc,
                format!("household {household} week {week} has no row for item '{}'", h.item_name(missing)),
            ));
        }
        p.record.validate(h).map_err(|e| match e {
            Error::Validation { message, .. } => Error::validation(loc.clone(), message),
            e => e,
        })?;
        if let Some(g) = p.group {
            if let Some(prev) = groups.insert(household, g) {
                if prev != g {
                    return Err(Error::validation(loc, format!("household {household} has several groups")));
                }
            }
        }
        records.push(p.record);
    }
    let assigned = assign_groups(&records);
    for (hh, g) in assigned {
        groups.entry(hh).or_insert(g);
    }
    Corpus::new(h.clone(), records, groups)
}

/// Write records in the documented schema.
pub fn write_csv<W: Write>(writer: W, corpus: &Corpus) -> Result<()> {
    let h = &corpus.hierarchy;
    let mut w = std::io::BufWriter::new(writer);
    writeln!(w, "{CSV_VERSION_LINE}")?;
    let mut cw = csv::WriterBuilder::new().from_writer(w);
    cw.write_record(CSV_HEADER)?;
    for r in &corpus.records {
        let group = corpus.groups.get(&r.household).map(|g| g.to_string()).unwrap_or_default();
        for (i, it) in r.items.iter().enumerate() {
            let s = h.parent_of_item(i);
            let c = h.parent_of_sub(s);
            cw.write_record([
                r.household.to_string(),
                group.clone(),
                r.week.to_string(),
                (r.returned as u8).to_string(),
                format!("{}", r.total_spend),
                h.category_name(c).to_string(),
                format!("{}", r.category_spend[c]),
                h.sub_category_name(s).to_string(),
                format!("{}", r.sub_category_spend[s]),
                h.item_name(i).to_string(),
                it.quantity.to_string(),
                format!("{}", it.unit_price),
                format!("{}", it.discount_pct),
                (it.offered as u8).to_string(),
            ])?;
        }
    }
    cw.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::{purchase, tiny_hierarchy};

    fn fixture(rows: &[&str]) -> String {
        let mut s = format!("{CSV_VERSION_LINE}\n{}\n", CSV_HEADER.join(","));
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    const OK_ROWS: [&str; 3] = [
        "7,1,1,1,20,dairy,7.75,milk,4.5,milk_a,2,1.5,0,0",
        "7,1,1,1,20,dairy,7.75,milk,4.5,milk_b,0,2,0,1",
        "7,1,1,1,20,dairy,7.75,cheese,3.25,cheese_a,0,3,0,0",
    ];

    #[test]
    fn three_rows_one_record() {
        let c = read_csv(fixture(&OK_ROWS).as_bytes(), &tiny_hierarchy()).unwrap();
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.records[0].items[0].quantity, 2);
        assert!(c.records[0].items[1].offered);
        assert_eq!(c.groups[&7], 1);
    }

    #[test]
    fn not_returned_with_spend_is_rejected() {
        let rows: Vec<String> = OK_ROWS.iter().map(|r| r.replacen("7,1,1,1,20", "7,1,1,0,20", 1)).collect();
        let rows: Vec<&str> = rows.iter().map(|s| s.as_str()).collect();
        let e = read_csv(fixture(&rows).as_bytes(), &tiny_hierarchy()).unwrap_err();
        assert!(e.to_string().contains("row 3"), "{e}");
    }

    #[test]
    fn duplicate_household_week_is_rejected() {
        let mut rows = OK_ROWS.to_vec();
        rows.push(OK_ROWS[0]);
        let e = read_csv(fixture(&rows).as_bytes(), &tiny_hierarchy()).unwrap_err();
        assert!(e.to_string().contains("duplicated"), "{e}");
    }

    #[test]
    fn bad_header_is_rejected() {
        let s = fixture(&OK_ROWS).replace("household_id", "hh");
        assert!(read_csv(s.as_bytes(), &tiny_hierarchy()).is_err());
        let s = fixture(&OK_ROWS).replace("v1", "v0");
        assert!(read_csv(s.as_bytes(), &tiny_hierarchy()).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let h = tiny_hierarchy();
        let mut a = purchase(&h, 3, 1);
        a.total_spend = 0.1 + 0.2;
        a.items[2].unit_price = 1.0 / 3.0;
        a.items[1].discount_pct = 0.15;
        let b = WeeklyRecord::empty(3, 2, &h);
        let corpus = Corpus::new(h.clone(), vec![a, b], BTreeMap::from([(3, 2)])).unwrap();
        let mut buf = vec![];
        write_csv(&mut buf, &corpus).unwrap();
        let back = read_csv(buf.as_slice(), &h).unwrap();
        assert_eq!(back, corpus);
    }
}
