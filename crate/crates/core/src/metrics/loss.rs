//! Loss functions and the point forecasts that minimize their expectation.

use crate::distribution::{ForecastDistribution as FD, LogTTable, COUNT_TAIL};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Point-forecast loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LossKind {
    Mad,
    Mape,
    Zape,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mad, LossKind::Mape, LossKind::Zape];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mad => "MAD",
            LossKind::Mape => "MAPE",
            LossKind::Zape => "ZAPE",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MAD" => Ok(LossKind::Mad),
            "MAPE" => Ok(LossKind::Mape),
            "ZAPE" => Ok(LossKind::Zape),
            _ => Err(Error::Config(format!("unknown loss '{s}'"))),
        }
    }
}

/// Loss specification. The ZAPE constant is the reciprocal of `E[1/Y; Y > 0]`,
/// which makes `p(y)/y` a proper density, so it is derived from the forecast.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
}

/// Stopping tolerance on the ZAPE risk derivative.
pub const ZAPE_GRAD_TOL: f64 = 1e-8;
/// Iteration cap of the ZAPE gradient descent.
pub const ZAPE_MAX_ITER: usize = 10_000;

/// Loss of point forecast `f` at outcome `y`; `None` for MAPE at `y = 0`.
pub fn realized_loss(y: f64, f: f64, spec: LossSpec) -> Option<f64> {
    match spec.kind {
        LossKind::Mad => Some((y - f).abs()),
        LossKind::Mape => (y > 0.0).then(|| (y - f).abs() / y),
        LossKind::Zape => Some(if y == 0.0 { f / (1.0 + f) } else { (y - f).abs() / y }),
    }
}

/// Median.
pub fn mad_optimal(dist: &FD) -> Result<f64> {
    Ok(match decompose(dist)? {
        Law::Counts(pmf) => count_quantile(&pmf, 0.5),
        Law::Continuous(_) => dist.quantile(0.5),
    })
}

/// Median of the law conditioned on a positive outcome.
pub fn mad_optimal_positive(dist: &FD) -> Result<f64> {
    match decompose(dist)? {
        Law::Counts(mut pmf) => {
            pmf[0] = 0.0;
            let tot: f64 = pmf.iter().sum();
            if !(tot > 0.0) {
                return Err(Error::NoPositiveMass);
            }
            pmf.iter_mut().for_each(|p| *p /= tot);
            Ok(count_quantile(&pmf, 0.5))
        }
        Law::Continuous(c) => {
            let ppos = c.ppos();
            if !(ppos > 0.0) {
                return Err(Error::NoPositiveMass);
            }
            Ok(c.a_quantile(0.5 * ppos))
        }
    }
}

/// The (-1)-median: median of `g(y) ∝ p(y)/y` over `y > 0`.
pub fn mape_optimal(dist: &FD) -> Result<f64> {
    match decompose(dist)? {
        Law::Counts(pmf) => count_minus_one_median(&pmf).ok_or(Error::NoPositiveMass),
        Law::Continuous(c) => c.minus_one_median().ok_or(Error::NoPositiveMass),
    }
}

/// ZAPE-optimal point forecast; zero when there is no positive mass.
pub fn zape_optimal(dist: &FD) -> Result<f64> {
    match decompose(dist)? {
        Law::Counts(pmf) => Ok(count_zape(&pmf)),
        Law::Continuous(c) => Ok(c.zape_from(c.minus_one_median())),
    }
}

/// Optimal point forecast for `kind`.
pub fn optimal_point(dist: &FD, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::Mad => mad_optimal(dist),
        LossKind::Mape => mape_optimal(dist),
        LossKind::Zape => zape_optimal(dist),
    }
}

/// MAD, MAPE and ZAPE optima from one decomposition. MAPE is `None` when
/// the law has no positive mass.
pub fn optimal_points(dist: &FD) -> Result<(f64, Option<f64>, f64)> {
    Ok(match decompose(dist)? {
        Law::Counts(pmf) => (count_quantile(&pmf, 0.5), count_minus_one_median(&pmf), count_zape(&pmf)),
        Law::Continuous(c) => {
            let m = c.minus_one_median();
            (dist.quantile(0.5), m, c.zape_from(m))
        }
    })
}

/// Expected ZAPE loss `R(f)`.
pub fn zape_risk(dist: &FD, f: f64) -> Result<f64> {
    Ok(match decompose(dist)? {
        Law::Counts(pmf) => count_risk(&pmf, f, true),
        Law::Continuous(c) => c.risk(f),
    })
}

/// Expected absolute percentage error over positive outcomes, unnormalized.
pub fn mape_risk(dist: &FD, f: f64) -> Result<f64> {
    Ok(match decompose(dist)? {
        Law::Counts(pmf) => count_risk(&pmf, f, false),
        Law::Continuous(c) => c.risk(f) - c.p0 * f / (1.0 + f),
    })
}

enum Law {
    Counts(Vec<f64>),
    Continuous(ContinuousLaw),
}

fn decompose(dist: &FD) -> Result<Law> {
    if dist.is_discrete() {
        if dist.support().0 < 0.0 {
            return Err(Error::LossDomain("negative support".into()));
        }
        return Ok(Law::Counts(dist.count_pmf(COUNT_TAIL)?));
    }
    let mut law = ContinuousLaw { p0: 0.0, parts: vec![], atoms: vec![] };
    law.collect(dist, 1.0)?;
    Ok(Law::Continuous(law))
}

fn count_quantile(pmf: &[f64], p: f64) -> f64 {
    let mut acc = 0.0;
    for (k, v) in pmf.iter().enumerate() {
        acc += v;
        if acc >= p - 1e-12 {
            return k as f64;
        }
    }
    (pmf.len() - 1) as f64
}

fn count_minus_one_median(pmf: &[f64]) -> Option<f64> {
    let tot: f64 = pmf.iter().enumerate().skip(1).map(|(y, p)| p / y as f64).sum();
    if !(tot > 0.0) {
        return None;
    }
    let mut acc = 0.0;
    for (y, p) in pmf.iter().enumerate().skip(1) {
        acc += p / y as f64;
        if acc >= 0.5 * tot * (1.0 - 1e-12) {
            return Some(y as f64);
        }
    }
    Some((pmf.len() - 1) as f64)
}

fn count_risk(pmf: &[f64], f: f64, with_zero: bool) -> f64 {
    let mut r = if with_zero { pmf[0] * f / (1.0 + f) } else { 0.0 };
    for (y, p) in pmf.iter().enumerate().skip(1) {
        let y = y as f64;
        r += p * (y - f).abs() / y;
    }
    r
}

/// Grid search over `0..=(-1)-median` of the exact ZAPE risk; ties go to the smallest.
fn count_zape(pmf: &[f64]) -> f64 {
    let Some(m) = count_minus_one_median(pmf) else {
        return 0.0;
    };
    let m = m as usize;
    let btot: f64 = pmf.iter().enumerate().skip(1).map(|(y, p)| p / y as f64).sum();
    let ppos: f64 = pmf[1..].iter().sum();
    let (mut a, mut b) = (0.0, 0.0);
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..=m {
        if k >= 1 {
            a += pmf[k];
            b += pmf[k] / k as f64;
        }
        let f = k as f64;
        let r = pmf[0] * f / (1.0 + f) + f * (2.0 * b - btot) + ppos - 2.0 * a;
        if r < best.0 - 1e-14 {
            best = (r, k);
        }
    }
    best.1 as f64
}

struct ContinuousLaw {
    p0: f64,
    parts: Vec<(f64, LogTTable)>,
    atoms: Vec<(f64, f64)>,
}

impl ContinuousLaw {
    fn collect(&mut self, d: &FD, w: f64) -> Result<()> {
        if w == 0.0 {
            return Ok(());
        }
        match d {
            FD::PointMass { value } if *value == 0.0 => self.p0 += w,
            FD::PointMass { value } if *value > 0.0 => self.atoms.push((w, *value)),
            FD::LogT(l) => self.parts.push((w, l.table())),
            FD::ZeroInflated { nonzero_prob, inner } => {
                self.p0 += w * (1.0 - nonzero_prob);
                self.collect(inner, w * nonzero_prob)?;
            }
            FD::Mixture { weights, components } => {
                for (cw, c) in weights.iter().zip(components) {
                    self.collect(c, w * cw)?;
                }
            }
            FD::NegBinomial { shift, .. } if *shift >= 1 => {
                return Err(Error::LossDomain("count component inside a continuous law".into()))
            }
            _ => return Err(Error::LossDomain(format!("unsupported component {d:?}"))),
        }
        Ok(())
    }

    fn ppos(&self) -> f64 {
        self.parts.iter().map(|p| p.0).sum::<f64>() + self.atoms.iter().map(|a| a.0).sum::<f64>()
    }

    fn btot(&self) -> f64 {
        self.parts.iter().map(|(w, t)| w * t.total_b()).sum::<f64>()
            + self.atoms.iter().map(|(w, v)| w / v).sum::<f64>()
    }

    /// `(P(0 < Y <= f), E[1/Y; 0 < Y <= f])`.
    fn partial(&self, f: f64) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        for (w, t) in &self.parts {
            let (pa, pb) = t.partial(f);
            a += w * pa;
            b += w * pb;
        }
        for (w, v) in &self.atoms {
            if *v <= f {
                a += w;
                b += w / v;
            }
        }
        (a, b)
    }

    fn bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for (_, t) in &self.parts {
            lo = lo.min(t.lower());
            hi = hi.max(t.upper());
        }
        for (_, v) in &self.atoms {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        (lo, hi)
    }

    /// Smallest `f` with `sel(partial(f)) >= target`.
    fn search(&self, target: f64, sel: impl Fn((f64, f64)) -> f64) -> f64 {
        let (lo, hi) = self.bounds();
        if sel(self.partial(lo)) >= target {
            return lo;
        }
        let (mut lo, mut hi) = (lo.ln(), hi.ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sel(self.partial(mid.exp())) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        hi.exp()
    }

    fn a_quantile(&self, target: f64) -> f64 {
        self.search(target, |(a, _)| a)
    }

    fn minus_one_median(&self) -> Option<f64> {
        let btot = self.btot();
        if !(btot > 0.0) {
            return None;
        }
        if self.atoms.is_empty() && self.parts.len() == 1 {
            return Some(self.parts[0].1.b_quantile(0.5));
        }
        Some(self.search(0.5 * btot, |(_, b)| b))
    }

    fn risk(&self, f: f64) -> f64 {
        let (a, b) = self.partial(f);
        self.p0 * f / (1.0 + f) + f * (2.0 * b - self.btot()) + self.ppos() - 2.0 * a
    }

    fn deriv(&self, f: f64, btot: f64) -> f64 {
        let (_, b) = self.partial(f);
        self.p0 / ((1.0 + f) * (1.0 + f)) + 2.0 * b - btot
    }

    fn zape_from(&self, m: Option<f64>) -> f64 {
        let Some(m) = m else {
            return 0.0;
        };
        let btot = self.btot();
        let ppos = self.ppos();
        let risk = |f: f64| {
            let (a, b) = self.partial(f);
            self.p0 * f / (1.0 + f) + f * (2.0 * b - btot) + ppos - 2.0 * a
        };
        let mut f = m;
        let mut r = risk(f);
        let mut step = 1.0;
        let mut converged = false;
        for _ in 0..ZAPE_MAX_ITER {
            let d = self.deriv(f, btot);
            if d.abs() < ZAPE_GRAD_TOL {
                converged = true;
                break;
            }
            let mut alpha = step;
            let mut moved = false;
            while alpha > 1e-20 {
                let cand = (f - alpha * d).max(0.0);
                if cand == f {
                    break;
                }
                let rc = risk(cand);
                if rc <= r - 0.5 * alpha * d * d || (cand == 0.0 && rc <= r) {
                    f = cand;
                    r = rc;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved || f == 0.0 {
                converged = f == 0.0;
                break;
            }
            step = (alpha * 2.0).min(1e6);
        }
        if !converged {
            f = self.bisect_stationary(m, btot).unwrap_or(f);
        }
        if self.p0 / (btot * (1.0 + f) * (1.0 + f)) >= 1.0 || risk(0.0) <= risk(f) {
            return 0.0;
        }
        f
    }

    fn bisect_stationary(&self, m: f64, btot: f64) -> Option<f64> {
        let (mut lo, mut hi) = (0.0, m);
        if self.deriv(lo, btot) >= 0.0 || self.deriv(hi, btot) <= 0.0 {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.deriv(mid, btot) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{LogT, DEFAULT_LOWER, DEFAULT_UPPER};

    fn counts(p: &[(u64, f64)]) -> FD {
        FD::Mixture {
            weights: p.iter().map(|x| x.1).collect(),
            components: p.iter().map(|x| FD::point(x.0 as f64)).collect(),
        }
    }

    #[test]
    fn realized_loss_examples() {
        let s = |kind| LossSpec { kind };
        assert_eq!(realized_loss(0.0, 1.0, s(LossKind::Zape)), Some(0.5));
        assert_eq!(realized_loss(2.5, 2.5, s(LossKind::Mad)), Some(0.0));
        assert_eq!(realized_loss(4.0, 3.0, s(LossKind::Mape)), Some(0.25));
        assert_eq!(realized_loss(0.0, 3.0, s(LossKind::Mape)), None);
    }

    #[test]
    fn point_mass_optima() {
        assert_eq!(mad_optimal(&FD::point(3.0)).unwrap(), 3.0);
        assert_eq!(mape_optimal(&FD::point(5.0)).unwrap(), 5.0);
        assert_eq!(zape_optimal(&FD::point(5.0)).unwrap(), 5.0);
        assert_eq!(mape_optimal(&FD::point(5.5)).unwrap(), 5.5);
        assert_eq!(zape_optimal(&FD::point(0.0)).unwrap(), 0.0);
        assert!(matches!(mape_optimal(&FD::point(0.0)), Err(Error::NoPositiveMass)));
    }

    #[test]
    fn mad_in_zero_atom() {
        let d = FD::zero_inflated(0.4, FD::NegBinomial { alpha: 2.0, beta: 0.5, shift: 1 });
        assert_eq!(mad_optimal(&d).unwrap(), 0.0);
    }

    #[test]
    fn mape_two_point() {
        assert_eq!(mape_optimal(&counts(&[(1, 0.5), (2, 0.5)])).unwrap(), 1.0);
    }

    #[test]
    fn zape_three_point_matches_enumeration() {
        let d = counts(&[(0, 0.3), (1, 0.4), (2, 0.3)]);
        let m = mape_optimal(&d).unwrap() as u64;
        let risk = |f: f64| 0.3 * f / (1.0 + f) + 0.4 * (1.0 - f).abs() + 0.3 * (2.0 - f).abs() / 2.0;
        let mut best = (f64::INFINITY, 0);
        for k in 0..=m {
            if risk(k as f64) < best.0 {
                best = (risk(k as f64), k);
            }
        }
        assert_eq!(zape_optimal(&d).unwrap(), best.1 as f64);
    }

    #[test]
    fn zape_heavy_zero_goes_to_zero() {
        let d = counts(&[(0, 0.9), (1, 0.1)]);
        assert_eq!(zape_optimal(&d).unwrap(), 0.0);
        let c = FD::zero_inflated(0.1, FD::LogT(LogT::new(30.0, 0.0, 0.05, DEFAULT_LOWER, DEFAULT_UPPER).unwrap()));
        assert_eq!(zape_optimal(&c).unwrap(), 0.0);
    }

    #[test]
    fn zape_without_zero_mass_is_minus_one_median() {
        let d = FD::LogT(LogT::new(5.0, 2.0, 0.4, DEFAULT_LOWER, DEFAULT_UPPER).unwrap());
        let m = mape_optimal(&d).unwrap();
        let z = zape_optimal(&d).unwrap();
        assert!((m - z).abs() < 1e-6 * m, "m={m} z={z}");
    }

    #[test]
    fn log_t_median_is_exp_location() {
        let d = FD::LogT(LogT::new(7.0, 2.3, 0.5, DEFAULT_LOWER, DEFAULT_UPPER).unwrap());
        assert!((mad_optimal(&d).unwrap() - 2.3f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn mape_risk_minimized_at_minus_one_median() {
        let d = FD::zero_inflated(0.7, FD::LogT(LogT::new(4.0, 1.5, 0.6, DEFAULT_LOWER, DEFAULT_UPPER).unwrap()));
        let m = mape_optimal(&d).unwrap();
        let r0 = mape_risk(&d, m).unwrap();
        for &h in &[0.97, 0.99, 1.01, 1.03] {
            assert!(mape_risk(&d, m * h).unwrap() >= r0 - 1e-12);
        }
    }
}
