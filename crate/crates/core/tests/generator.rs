use hhcast::data::{generate_synthetic, GeneratorConfig, Mechanism, SyntheticCorpus};

fn corpus(n: u32, seed: u64) -> SyntheticCorpus {
    let cfg = GeneratorConfig { households_per_group: n, seed, ..GeneratorConfig::default() };
    generate_synthetic(&cfg).unwrap()
}

#[test]
fn group_return_rates_and_spends_track_targets() {
    let cfg = GeneratorConfig::default();
    let s = corpus(300, 11);
    for (g, gc) in (1..=3u8).zip(&cfg.groups) {
        let recs = s.corpus.group_records(g);
        let ret: Vec<_> = recs.iter().filter(|r| r.returned).collect();
        let p = ret.len() as f64 / recs.len() as f64;
        let mean = ret.iter().map(|r| r.total_spend).sum::<f64>() / ret.len() as f64;
        assert!((p - gc.return_prob).abs() < 0.02, "group {g}: return rate {p}");
        assert!((mean / gc.mean_spend - 1.0).abs() < 0.1, "group {g}: mean spend {mean}");
    }
}

#[test]
fn true_return_probabilities_average_to_target() {
    let cfg = GeneratorConfig::default();
    let s = corpus(300, 12);
    for (g, gc) in (1..=3u8).zip(&cfg.groups) {
        let probs: Vec<f64> =
            s.truth.households.iter().filter(|h| h.group == g).flat_map(|h| h.return_probs.iter().copied()).collect();
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        assert!((mean - gc.return_prob).abs() < 0.025, "group {g}: mean true probability {mean}");
    }
}

/// Pooled 2x2 table of (discount on offer, bought) for the household-items
/// selected by `keep`.
fn offer_table(s: &SyntheticCorpus, keep: impl Fn(f64) -> bool) -> [[f64; 2]; 2] {
    let mut t = [[0.0; 2]; 2];
    let hh: std::collections::BTreeMap<u32, _> = s.truth.households.iter().map(|h| (h.household, h)).collect();
    for r in &s.corpus.records {
        if !r.returned {
            continue;
        }
        let truth = hh[&r.household];
        for (i, it) in r.items.iter().enumerate() {
            if keep(truth.items[i].sensitivity) {
                t[it.offered as usize][(it.quantity > 0) as usize] += 1.0;
            }
        }
    }
    t
}

fn chi_square(t: &[[f64; 2]; 2]) -> f64 {
    let n: f64 = t.iter().flatten().sum();
    let rows = [t[0][0] + t[0][1], t[1][0] + t[1][1]];
    let cols = [t[0][0] + t[1][0], t[0][1] + t[1][1]];
    let mut x = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            x += (t[i][j] - e).powi(2) / e;
        }
    }
    x
}

#[test]
fn insensitive_purchases_ignore_offers() {
    let s = corpus(100, 13);
    let t = offer_table(&s, |b| b == 0.0);
    // 99.9% point of chi-square with one degree of freedom.
    assert!(chi_square(&t) < 10.83, "table {t:?}");
}

#[test]
fn sensitive_purchases_rise_with_offers() {
    let s = corpus(100, 13);
    let t = offer_table(&s, |b| b > 0.0);
    let rate = |row: [f64; 2]| row[1] / (row[0] + row[1]);
    assert!(rate(t[1]) > rate(t[0]) + 0.02, "table {t:?}");
    assert!(chi_square(&t) > 10.83);
}

#[test]
fn misspecified_spends_have_heavier_tails() {
    let kurtosis = |mechanism| {
        let cfg = GeneratorConfig { households_per_group: 100, seed: 14, mechanism, ..GeneratorConfig::default() };
        let s = generate_synthetic(&cfg).unwrap();
        let x: Vec<f64> = s.corpus.records.iter().filter(|r| r.returned).map(|r| r.total_spend.ln()).collect();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n / (v * v)
    };
    assert!(kurtosis(Mechanism::Misspecified) > kurtosis(Mechanism::Matched));
}

#[test]
fn seed_changes_the_corpus() {
    let a = corpus(5, 1);
    let b = corpus(5, 2);
    assert_ne!(a.corpus.records, b.corpus.records);
    assert_eq!(a.corpus.records, corpus(5, 1).corpus.records);
}
