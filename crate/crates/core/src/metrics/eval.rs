//! Probabilistic evaluation: calibration, interval coverage, confusion
//! matrices, group summaries and binary classification scores.

use crate::distribution::ForecastDistribution;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Mean forecast probability in the bin; `None` when empty.
    pub mean_predicted: Option<f64>,
    /// Observed event frequency in the bin; `None` when empty.
    pub frequency: Option<f64>,
}

/// Equal-width bins on `[0, 1]`; the last bin includes 1.
pub fn calibration_bins(probs: &[f64], outcomes: &[bool], n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if probs.len() != outcomes.len() {
        return Err(Error::Dimension("probabilities and outcomes differ in length".into()));
    }
    if n_bins == 0 {
        return Err(Error::InvalidParameter("need at least one bin".into()));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &y) in probs.iter().zip(outcomes) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("probability {p} outside [0, 1]")));
        }
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sum_p[b] += p;
        hits[b] += y as usize;
        count[b] += 1;
    }
    Ok((0..n_bins)
        .map(|b| CalibrationBin {
            lower: b as f64 / n_bins as f64,
            upper: (b + 1) as f64 / n_bins as f64,
            count: count[b],
            mean_predicted: (count[b] > 0).then(|| sum_p[b] / count[b] as f64),
            frequency: (count[b] > 0).then(|| hits[b] as f64 / count[b] as f64),
        })
        .collect())
}

/// Central interval `[Q((1-L)/2), Q((1+L)/2)]` using generalized quantiles,
/// so atoms are included whenever they straddle a tail probability.
pub fn central_interval(dist: &ForecastDistribution, level: f64) -> (f64, f64) {
    let a = 0.5 * (1.0 - level);
    (dist.quantile(a), dist.quantile(1.0 - a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub level: f64,
    pub coverage: f64,
    pub count: usize,
}

/// Empirical coverage of inclusive central intervals at each level.
pub fn coverage_curve(dists: &[ForecastDistribution], outcomes: &[f64], levels: &[f64]) -> Result<Vec<CoveragePoint>> {
    if dists.len() != outcomes.len() {
        return Err(Error::Dimension("distributions and outcomes differ in length".into()));
    }
    let mut hits = vec![0usize; levels.len()];
    for (d, &y) in dists.iter().zip(outcomes) {
        add_hits(d, y, levels, &mut hits);
    }
    Ok(coverage_from_hits(levels, &hits, dists.len()))
}

const CDF_TIE: f64 = 1e-9;

/// Whether `y` lies in the central interval at each level, added to `hits`.
///
/// `Q(a) <= y` iff `F(y) >= a` and `y <= Q(1 - a)` iff `F(y-) < 1 - a`, so
/// two CDF evaluations serve every level. Levels whose tail probability is
/// within `CDF_TIE` of either value use the quantiles directly.
pub fn add_hits(dist: &ForecastDistribution, y: f64, levels: &[f64], hits: &mut [usize]) {
    let (f, f_left) = (dist.cdf(y), dist.cdf_left(y));
    for (h, &l) in hits.iter_mut().zip(levels) {
        let a = 0.5 * (1.0 - l);
        let hit = if (f - a).abs() < CDF_TIE || (f_left - (1.0 - a)).abs() < CDF_TIE {
            let (lo, hi) = central_interval(dist, l);
            lo <= y && y <= hi
        } else {
            f >= a && f_left < 1.0 - a
        };
        *h += hit as usize;
    }
}

pub(crate) fn coverage_from_hits(levels: &[f64], hits: &[usize], n: usize) -> Vec<CoveragePoint> {
    levels
        .iter()
        .zip(hits)
        .map(|(&level, &h)| CoveragePoint {
            level,
            coverage: if n == 0 { f64::NAN } else { h as f64 / n as f64 },
            count: n,
        })
        .collect()
}

/// Proportions over (outcome positive or zero) x (forecast positive or zero).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `y > 0, f > 0`
    pub pos_pos: f64,
    /// `y > 0, f = 0`
    pub pos_zero: f64,
    /// `y = 0, f > 0`
    pub zero_pos: f64,
    /// `y = 0, f = 0`
    pub zero_zero: f64,
    pub count: usize,
}

pub fn confusion_matrix(point_forecasts: &[f64], outcomes: &[f64]) -> Result<ConfusionMatrix> {
    if point_forecasts.len() != outcomes.len() {
        return Err(Error::Dimension("forecasts and outcomes differ in length".into()));
    }
    let mut c = [0usize; 4];
    for (&f, &y) in point_forecasts.iter().zip(outcomes) {
        let idx = match (y > 0.0, f > 0.0) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        c[idx] += 1;
    }
    let n = point_forecasts.len();
    let p = |k: usize| if n == 0 { 0.0 } else { c[k] as f64 / n as f64 };
    Ok(ConfusionMatrix { pos_pos: p(0), pos_zero: p(1), zero_pos: p(2), zero_zero: p(3), count: n })
}

/// Median with 25th and 75th percentiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
    pub n: usize,
}

/// Quantile with linear interpolation between order statistics
/// (position `p (n - 1)` in the sorted sample).
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of per-series metrics; non-finite entries are ignored.
pub fn summarize_group(values: &[f64]) -> GroupSummary {
    let mut v: Vec<f64> = values.iter().cloned().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    GroupSummary {
        median: quantile_linear(&v, 0.5),
        p25: quantile_linear(&v, 0.25),
        p75: quantile_linear(&v, 0.75),
        n: v.len(),
    }
}

/// Area under the ROC curve via the rank-sum statistic with mid-ranks for ties.
pub fn auc(probs: &[f64], outcomes: &[bool]) -> Option<f64> {
    let n_pos = outcomes.iter().filter(|&&y| y).count();
    let n_neg = outcomes.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || probs.len() != outcomes.len() {
        return None;
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap());
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && probs[idx[j + 1]] == probs[idx[i]] {
            j += 1;
        }
        let mid = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &idx[i..=j] {
            if outcomes[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// F1 score of the classifier `p >= threshold`.
pub fn f1_score(probs: &[f64], outcomes: &[bool], threshold: f64) -> Option<f64> {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(outcomes) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

/// Mean squared error of probabilities against binary outcomes.
pub fn brier(probs: &[f64], outcomes: &[bool]) -> Option<f64> {
    if probs.is_empty() {
        return None;
    }
    Some(probs.iter().zip(outcomes).map(|(&p, &y)| (p - y as u8 as f64).powi(2)).sum::<f64>() / probs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_three() {
        let s = summarize_group(&[3.0, 1.0, 2.0]);
        assert_eq!((s.median, s.p25, s.p75), (2.0, 1.5, 2.5));
        let one = summarize_group(&[4.2]);
        assert_eq!((one.median, one.p25, one.p75), (4.2, 4.2, 4.2));
    }

    #[test]
    fn cdf_route_matches_quantile_route() {
        use crate::distribution::LogT;
        let levels: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
        let dists = [
            ForecastDistribution::zero_inflated(
                0.7,
                ForecastDistribution::LogT(LogT::new(4.0, 2.0, 0.8, 0.01, 1e4).unwrap()),
            ),
            ForecastDistribution::zero_inflated(
                0.4,
                ForecastDistribution::NegBinomial { alpha: 2.0, beta: 1.5, shift: 1 },
            ),
            ForecastDistribution::StudentT { dof: 3.0, loc: 1.0, scale: 2.0 },
            ForecastDistribution::Bernoulli { alpha: 3.0, beta: 1.0 },
        ];
        for d in &dists {
            for k in 0..400 {
                let y = if d.is_discrete() { (k % 12) as f64 } else { -5.0 + k as f64 * 0.37 };
                let mut fast = vec![0; levels.len()];
                add_hits(d, y, &levels, &mut fast);
                for (l, h) in levels.iter().zip(&fast) {
                    let (lo, hi) = central_interval(d, *l);
                    assert_eq!(*h == 1, lo <= y && y <= hi, "{d:?} y={y} level={l}");
                }
            }
        }
    }

    #[test]
    fn calibration_single_bin() {
        let bins = calibration_bins(&[0.5; 20], &[true; 20], 10).unwrap();
        assert_eq!(bins[5].frequency, Some(1.0));
        assert_eq!(bins[5].count, 20);
        assert_eq!(bins[0].count, 0);
        assert_eq!(bins[0].frequency, None);
    }

    #[test]
    fn coverage_trivial_cases() {
        let d = vec![ForecastDistribution::point(2.0); 3];
        let c = coverage_curve(&d, &[2.0; 3], &[0.1, 0.5, 0.9]).unwrap();
        assert!(c.iter().all(|p| p.coverage == 1.0));
        let t = vec![ForecastDistribution::StudentT { dof: 3.0, loc: 0.0, scale: 1.0 }; 2];
        let c = coverage_curve(&t, &[100.0, -1e6], &[1.0]).unwrap();
        assert_eq!(c[0].coverage, 1.0);
    }

    #[test]
    fn confusion_all_positive() {
        let m = confusion_matrix(&[1.0, 2.0], &[3.0, 1.0]).unwrap();
        assert_eq!(m.pos_pos, 1.0);
        let m = confusion_matrix(&[0.0, 2.0, 1.0, 0.0], &[3.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((m.pos_pos + m.pos_zero + m.zero_pos + m.zero_zero - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auc_and_f1() {
        let p = [0.1, 0.4, 0.35, 0.8];
        let y = [false, false, true, true];
        assert!((auc(&p, &y).unwrap() - 0.75).abs() < 1e-12);
        assert!((f1_score(&p, &y, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert!((brier(&[1.0, 0.0], &[true, true]).unwrap() - 0.5).abs() < 1e-15);
    }
}
