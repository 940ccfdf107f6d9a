use hhcast::data::{ingest_csv, LatentTruth};
use hhcast::metrics::calibration_bins;
use hhcast::HierarchySpec;
use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
output_dir = "out"
[data.generator]
households_per_group = 3
weeks = 40
[experiment]
variants = ["M1", "M3"]
projection = { mode = "ensemble", size = 5 }
trajectory_households = 2
"#;

fn hhcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hhcast")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let o = hhcast(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn config(dir: &Path, body: &str) -> String {
    let p = dir.join("hhcast.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        ok(&["simulate", &cfg, "--seed", seed, "-o", out.to_str().unwrap()]);
        let simulated = read(out.join("manifest.json"));
        ok(&["run", &cfg, "--seed", seed, "-o", out.to_str().unwrap(), "--threads", "2"]);
        assert_eq!(simulated, read(out.join("manifest.json")), "run regenerated a different corpus");
    }
    for f in ["manifest.json", "corpus.csv", "report.json", "report.txt", "tables/series.csv", "tables/fans.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs between identical runs");
    }
    assert_ne!(read(a.join("manifest.json")), read(c.join("manifest.json")));
    let m: serde_json::Value = serde_json::from_str(&read(a.join("manifest.json"))).unwrap();
    assert_eq!(m["seed"], 5);
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", &cfg, "-o", a.to_str().unwrap(), "--threads", "1"]);
    ok(&["run", &cfg, "-o", b.to_str().unwrap(), "--threads", "4"]);
    assert_eq!(read(a.join("report.json")), read(b.join("report.json")));
}

#[test]
fn invalid_config_exits_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &SMALL.replace("\"M1\"", "\"M7\""));
    let o = hhcast(&["simulate", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("M7"));
    let o = hhcast(&["run", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_csv_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("w.csv"), "not a corpus\n").unwrap();
    let cfg = config(
        dir.path(),
        r#"
[data]
csv = "w.csv"
[[data.hierarchy.categories]]
name = "dairy"
[[data.hierarchy.categories.sub_categories]]
name = "milk"
items = ["a", "b"]
"#,
    );
    let o = hhcast(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_run_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hhcast(&["report", dir.path().join("nowhere").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));
    // An existing directory without a run in it fails too.
    let o = hhcast(&["report", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[derive(serde::Deserialize)]
struct ReturnRow {
    variant: String,
    horizon: usize,
    prob: f64,
    returned: bool,
}

#[derive(serde::Deserialize, Debug, PartialEq)]
struct BinRow {
    label: String,
    lower: f64,
    upper: f64,
    count: usize,
    mean_predicted: Option<f64>,
    frequency: Option<f64>,
}

#[test]
fn calibration_plot_data_equals_calibration_bins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&["run", &cfg]);
    ok(&["report", out.to_str().unwrap()]);
    let returns: Vec<ReturnRow> = csv::Reader::from_path(out.join("tables/return_predictions.csv"))
        .unwrap()
        .deserialize()
        .map(Result::unwrap)
        .collect();
    for v in ["M1", "M3"] {
        assert!(out.join(format!("plots/calibration_return_{v}.svg")).is_file());
        let plotted: Vec<BinRow> = csv::Reader::from_path(out.join(format!("plots/calibration_return_{v}.csv")))
            .unwrap()
            .deserialize()
            .map(Result::unwrap)
            .collect();
        let (p, y): (Vec<f64>, Vec<bool>) =
            returns.iter().filter(|r| r.variant == v && r.horizon == 1).map(|r| (r.prob, r.returned)).unzip();
        let bins = calibration_bins(&p, &y, plotted.len()).unwrap();
        assert_eq!(bins.len(), plotted.len());
        for (b, r) in bins.iter().zip(&plotted) {
            assert_eq!(r.label, format!("return/{v}"));
            assert_eq!((r.lower, r.upper, r.count), (b.lower, b.upper, b.count));
            assert_eq!((r.mean_predicted, r.frequency), (b.mean_predicted, b.frequency));
        }
    }
}

#[test]
fn every_plot_has_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&["run", &cfg]);
    ok(&["report", out.to_str().unwrap()]);
    let mut plots = 0;
    for e in std::fs::read_dir(out.join("plots")).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "svg") {
            plots += 1;
            let table = if p.file_stem().unwrap() == "coverage" {
                p.with_file_name("coverage_plot.csv")
            } else {
                p.with_extension("csv")
            };
            assert!(table.is_file(), "no table for {}", p.display());
        }
    }
    // Two calibration plots, coverage, and a sensitivity and fan plot per household and variant.
    assert_eq!(plots, 2 + 1 + 2 * 2 * 2);
}

#[derive(serde::Deserialize)]
struct SensRow {
    household: u32,
    item: String,
    week: u32,
    mean: f64,
    lower: f64,
    truth: Option<f64>,
}

/// Every pair responds strongly to discounts and offers are frequent. The
/// best observed pairs should end with a 90% band above zero.
#[test]
fn engineered_sensitivity_shows_positive_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        r#"
output_dir = "out"
seed = 11
[data.generator]
households_per_group = 2
[data.generator.sensitivity]
sensitive_fraction = 1.0
mean = 2.5
sd = 0.0
[data.generator.promotions]
offer_prob = 0.5
reach = 1.0
[experiment]
variants = ["M3"]
trajectory_households = 6
"#,
    );
    let out = dir.path().join("out");
    ok(&["simulate", &cfg]);
    ok(&["run", &cfg]);
    ok(&["report", out.to_str().unwrap()]);
    let h: HierarchySpec = serde_json::from_str(&read(out.join("hierarchy.json"))).unwrap();
    let truth: LatentTruth = serde_json::from_str(&read(out.join("truth.json"))).unwrap();
    assert!(truth.households.iter().all(|t| t.items.iter().all(|i| i.sensitivity == 2.5)));
    let corpus = ingest_csv(out.join("corpus.csv"), &h).unwrap();
    let mut bought: BTreeMap<(u32, String), usize> = BTreeMap::new();
    for r in &corpus.records {
        for (i, it) in r.items.iter().enumerate() {
            *bought.entry((r.household, h.item_name(i).to_string())).or_default() += (it.quantity > 0) as usize;
        }
    }
    let mut finals: BTreeMap<(u32, String), SensRow> = BTreeMap::new();
    for hh in 1..=6u32 {
        let path = out.join(format!("plots/sensitivity_{hh}_M3.csv"));
        for r in csv::Reader::from_path(path).unwrap().deserialize::<SensRow>() {
            let r = r.unwrap();
            assert_eq!(r.truth, Some(2.5));
            let key = (r.household, r.item.clone());
            if finals.get(&key).is_none_or(|f| f.week < r.week) {
                finals.insert(key, r);
            }
        }
    }
    let mut pairs: Vec<(&(u32, String), &SensRow)> = finals.iter().collect();
    pairs.sort_by_key(|(k, _)| std::cmp::Reverse(bought[k]));
    let (k, r) = pairs[0];
    assert!(r.lower > 0.0, "{k:?} bought {} weeks: band lower {}", bought[k], r.lower);
    // Band widths shrink slowly, so only most of the next best pairs clear zero.
    let clear = pairs[..10].iter().filter(|(_, r)| r.lower > 0.0).count();
    assert!(clear >= 7, "{clear} of the 10 most bought pairs have a positive band");
    let positive = finals.values().filter(|r| r.mean > 0.0).count();
    assert!(positive * 10 >= finals.len() * 9, "{positive} of {} final means positive", finals.len());
}

#[test]
fn example_config_runs() {
    let example = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../hhcast.example.toml");
    let dir = tempfile::tempdir().unwrap();
    let body = read(&example)
        .replace("households_per_group = 50", "households_per_group = 2")
        .replace("weeks = 112", "weeks = 30");
    let cfg = config(dir.path(), &body);
    ok(&["run", &cfg]);
    ok(&["report", dir.path().join("output").to_str().unwrap()]);
    ok(&["categorize", &cfg, "-o", dir.path().join("cat").to_str().unwrap()]);
    assert!(dir.path().join("cat/item_ranking.csv").is_file());
}
