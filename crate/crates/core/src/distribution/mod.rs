//! Forecast distributions produced by the models and consumed by the metrics.

mod logt;

pub use logt::{LogT, LogTTable, DEFAULT_LOWER, DEFAULT_UPPER};

use crate::error::{Error, Result};
use crate::special::ln_gamma;
use crate::student::{t_cdf, t_quantile, TKernel};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal, StandardUniform};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

/// Tail mass below which count support is truncated when enumerating.
pub const COUNT_TAIL: f64 = 1e-10;
/// Hard cap on enumerated count support.
pub const COUNT_CAP: u64 = 1_000_000;

/// A predictive law for one outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecastDistribution {
    /// All mass at `value`.
    PointMass { value: f64 },
    /// Beta-Bernoulli; `P(1) = alpha / (alpha + beta)`.
    Bernoulli { alpha: f64, beta: f64 },
    /// `shift + X` where `X` is gamma-Poisson with shape `alpha` and rate `beta`.
    NegBinomial { alpha: f64, beta: f64, shift: u64 },
    /// Location-scale Student-t; infinite `dof` is normal.
    StudentT { dof: f64, loc: f64, scale: f64 },
    /// Truncated log-Student-t on the dollar scale.
    LogT(LogT),
    /// Zero with probability `1 - nonzero_prob`, otherwise `inner`.
    ZeroInflated { nonzero_prob: f64, inner: Box<ForecastDistribution> },
    /// Finite mixture.
    Mixture { weights: Vec<f64>, components: Vec<ForecastDistribution> },
}

use ForecastDistribution as FD;

impl ForecastDistribution {
    pub fn point(value: f64) -> Self {
        FD::PointMass { value }
    }

    pub fn zero_inflated(nonzero_prob: f64, inner: ForecastDistribution) -> Self {
        FD::ZeroInflated { nonzero_prob, inner: Box::new(inner) }
    }

    /// Equal-weight mixture.
    pub fn uniform_mixture(components: Vec<ForecastDistribution>) -> Self {
        let w = 1.0 / components.len() as f64;
        FD::Mixture { weights: vec![w; components.len()], components }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            FD::PointMass { value } if !value.is_finite() => bad(format!("point mass at {value}")),
            FD::PointMass { .. } => Ok(()),
            FD::Bernoulli { alpha, beta } | FD::NegBinomial { alpha, beta, .. }
                if !(*alpha > 0.0 && *beta > 0.0 && alpha.is_finite() && beta.is_finite()) =>
            {
                bad(format!("non-positive parameters ({alpha}, {beta})"))
            }
            FD::Bernoulli { .. } | FD::NegBinomial { .. } => Ok(()),
            FD::StudentT { dof, loc, scale } => {
                if *dof > 0.0 && loc.is_finite() && *scale > 0.0 && scale.is_finite() {
                    Ok(())
                } else {
                    bad(format!("invalid Student-t ({dof}, {loc}, {scale})"))
                }
            }
            FD::LogT(d) => d.validate(),
            FD::ZeroInflated { nonzero_prob, inner } => {
                if !(0.0..=1.0).contains(nonzero_prob) {
                    return bad(format!("probability {nonzero_prob} outside [0, 1]"));
                }
                inner.validate()
            }
            FD::Mixture { weights, components } => {
                if weights.len() != components.len() || weights.is_empty() {
                    return bad("mixture weights and components differ in length".into());
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("mixture weights must be non-negative and sum to one".into());
                }
                components.iter().try_for_each(|c| c.validate())
            }
        }
    }

    /// True when all mass sits on integers.
    pub fn is_discrete(&self) -> bool {
        match self {
            FD::PointMass { value } => value.fract() == 0.0,
            FD::Bernoulli { .. } | FD::NegBinomial { .. } => true,
            FD::StudentT { .. } | FD::LogT(_) => false,
            FD::ZeroInflated { inner, .. } => inner.is_discrete(),
            FD::Mixture { components, .. } => components.iter().all(|c| c.is_discrete()),
        }
    }

    /// Smallest and largest points of the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            FD::PointMass { value } => (*value, *value),
            FD::Bernoulli { .. } => (0.0, 1.0),
            FD::NegBinomial { shift, .. } => (*shift as f64, f64::INFINITY),
            FD::StudentT { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            FD::LogT(d) => (d.lower, d.upper),
            FD::ZeroInflated { nonzero_prob, inner } => {
                let (lo, hi) = inner.support();
                if *nonzero_prob <= 0.0 {
                    (0.0, 0.0)
                } else if *nonzero_prob >= 1.0 {
                    (lo, hi)
                } else {
                    (lo.min(0.0), hi.max(0.0))
                }
            }
            FD::Mixture { weights, components } => components
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(c, _)| c.support())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1))),
        }
    }

    /// Probability of exactly `x`.
    pub fn pmf(&self, x: f64) -> f64 {
        match self {
            FD::PointMass { value } => (x == *value) as u8 as f64,
            FD::Bernoulli { alpha, beta } => {
                let p = alpha / (alpha + beta);
                if x == 1.0 {
                    p
                } else if x == 0.0 {
                    1.0 - p
                } else {
                    0.0
                }
            }
            FD::NegBinomial { alpha, beta, shift } => {
                if x.fract() != 0.0 || x < *shift as f64 {
                    return 0.0;
                }
                nb_pmf(*alpha, *beta, x - *shift as f64)
            }
            FD::StudentT { .. } | FD::LogT(_) => 0.0,
            FD::ZeroInflated { nonzero_prob, inner } => {
                (1.0 - nonzero_prob) * (x == 0.0) as u8 as f64 + nonzero_prob * inner.pmf(x)
            }
            FD::Mixture { weights, components } => weights.iter().zip(components).map(|(w, c)| w * c.pmf(x)).sum(),
        }
    }

    /// Density of the continuous part at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            FD::StudentT { dof, loc, scale } => TKernel::new(*dof).pdf((x - loc) / scale) / scale,
            FD::LogT(d) => d.pdf(x),
            FD::ZeroInflated { nonzero_prob, inner } => nonzero_prob * inner.pdf(x),
            FD::Mixture { weights, components } => weights.iter().zip(components).map(|(w, c)| w * c.pdf(x)).sum(),
            _ => 0.0,
        }
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            FD::PointMass { value } => (x >= *value) as u8 as f64,
            FD::Bernoulli { alpha, beta } => {
                if x < 0.0 {
                    0.0
                } else if x < 1.0 {
                    beta / (alpha + beta)
                } else {
                    1.0
                }
            }
            FD::NegBinomial { alpha, beta, shift } => {
                if x < *shift as f64 {
                    return 0.0;
                }
                if x.is_infinite() {
                    return 1.0;
                }
                nb_cdf(*alpha, *beta, (x - *shift as f64).floor())
            }
            FD::StudentT { dof, loc, scale } => t_cdf((x - loc) / scale, *dof),
            FD::LogT(d) => d.cdf(x),
            FD::ZeroInflated { nonzero_prob, inner } => {
                (1.0 - nonzero_prob) * (x >= 0.0) as u8 as f64 + nonzero_prob * inner.cdf(x)
            }
            FD::Mixture { weights, components } => weights.iter().zip(components).map(|(w, c)| w * c.cdf(x)).sum(),
        }
    }

    /// `P(X < x)`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            FD::PointMass { value } => (x > *value) as u8 as f64,
            FD::Bernoulli { .. } | FD::NegBinomial { .. } => {
                if x.fract() == 0.0 {
                    self.cdf(x - 1.0)
                } else {
                    self.cdf(x)
                }
            }
            FD::StudentT { .. } | FD::LogT(_) => self.cdf(x),
            FD::ZeroInflated { nonzero_prob, inner } => {
                (1.0 - nonzero_prob) * (x > 0.0) as u8 as f64 + nonzero_prob * inner.cdf_left(x)
            }
            FD::Mixture { weights, components } => weights.iter().zip(components).map(|(w, c)| w * c.cdf_left(x)).sum(),
        }
    }

    /// Generalized inverse `inf { x : P(X <= x) >= p }`; `p = 0` gives the
    /// lower support bound.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            FD::PointMass { value } => *value,
            FD::Bernoulli { alpha, beta } => {
                if p <= beta / (alpha + beta) {
                    0.0
                } else {
                    1.0
                }
            }
            FD::NegBinomial { shift, .. } => {
                if p == 0.0 {
                    return *shift as f64;
                }
                if p == 1.0 {
                    return f64::INFINITY;
                }
                discrete_search(self, p, *shift as f64)
            }
            FD::StudentT { dof, loc, scale } => loc + scale * t_quantile(p, *dof),
            FD::LogT(d) => d.quantile(p),
            FD::ZeroInflated { nonzero_prob: w, inner } => {
                let w = *w;
                if w <= 0.0 {
                    return 0.0;
                }
                let below = w * inner.cdf_left(0.0);
                let through = below + (1.0 - w) + w * inner.pmf(0.0);
                if below > 0.0 && p <= below {
                    inner.quantile(p / w)
                } else if p <= through {
                    0.0
                } else {
                    inner.quantile(((p - (1.0 - w)) / w).min(1.0))
                }
            }
            FD::Mixture { .. } => {
                let (lo, hi) = self.support();
                if p == 0.0 {
                    return lo;
                }
                if p == 1.0 {
                    return hi;
                }
                if self.is_discrete() {
                    discrete_search(self, p, lo)
                } else {
                    continuous_search(self, p, lo, hi)
                }
            }
        }
    }

    /// Expected value when finite.
    pub fn mean(&self) -> Option<f64> {
        match self {
            FD::PointMass { value } => Some(*value),
            FD::Bernoulli { alpha, beta } => Some(alpha / (alpha + beta)),
            FD::NegBinomial { alpha, beta, shift } => Some(*shift as f64 + alpha / beta),
            FD::StudentT { dof, loc, .. } => (*dof > 1.0).then_some(*loc),
            FD::LogT(d) => Some(d.table().mean()),
            FD::ZeroInflated { nonzero_prob, inner } => {
                if *nonzero_prob == 0.0 {
                    Some(0.0)
                } else {
                    inner.mean().map(|m| nonzero_prob * m)
                }
            }
            FD::Mixture { weights, components } => {
                weights.iter().zip(components).filter(|(w, _)| **w > 0.0).map(|(w, c)| c.mean().map(|m| w * m)).sum()
            }
        }
    }

    /// `P(X = 0)`.
    pub fn prob_zero(&self) -> f64 {
        self.pmf(0.0)
    }

    /// Draw one value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FD::PointMass { value } => *value,
            FD::Bernoulli { alpha, beta } => {
                let u: f64 = StandardUniform.sample(rng);
                (u < alpha / (alpha + beta)) as u8 as f64
            }
            FD::NegBinomial { alpha, beta, shift } => {
                let lambda = Gamma::new(*alpha, 1.0 / beta).expect("valid gamma").sample(rng);
                let x = if lambda > 0.0 {
                    Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(lambda.round())
                } else {
                    0.0
                };
                *shift as f64 + x
            }
            FD::StudentT { dof, loc, scale } => {
                let z: f64 = if dof.is_infinite() {
                    StandardNormal.sample(rng)
                } else {
                    rand_distr::StudentT::new(*dof).expect("valid dof").sample(rng)
                };
                loc + scale * z
            }
            FD::LogT(d) => {
                let u: f64 = StandardUniform.sample(rng);
                d.quantile(u)
            }
            FD::ZeroInflated { nonzero_prob, inner } => {
                let u: f64 = StandardUniform.sample(rng);
                if u < *nonzero_prob {
                    inner.sample(rng)
                } else {
                    0.0
                }
            }
            FD::Mixture { weights, components } => {
                let u: f64 = StandardUniform.sample(rng);
                let mut acc = 0.0;
                for (w, c) in weights.iter().zip(components) {
                    acc += w;
                    if u < acc {
                        return c.sample(rng);
                    }
                }
                components.last().unwrap().sample(rng)
            }
        }
    }

    /// Map a log-spend law (zero encoding zero spend) to the dollar scale,
    /// with continuous parts truncated to `[lower, upper]`.
    pub fn to_dollars(&self, lower: f64, upper: f64) -> Result<ForecastDistribution> {
        Ok(match self {
            FD::PointMass { value } => FD::point(if *value == 0.0 { 0.0 } else { value.exp() }),
            FD::StudentT { dof, loc, scale } => FD::LogT(LogT::new(*dof, *loc, *scale, lower, upper)?),
            FD::ZeroInflated { nonzero_prob, inner } => {
                FD::zero_inflated(*nonzero_prob, inner.to_dollars(lower, upper)?)
            }
            FD::Mixture { weights, components } => FD::Mixture {
                weights: weights.clone(),
                components: components.iter().map(|c| c.to_dollars(lower, upper)).collect::<Result<_>>()?,
            },
            FD::LogT(_) => self.clone(),
            FD::Bernoulli { .. } | FD::NegBinomial { .. } => {
                return Err(Error::InvalidParameter("count law has no dollar scale".into()))
            }
        })
    }

    /// Smallest `y` with `P(X > y) < tail`, capped.
    pub fn count_upper(&self, tail: f64) -> u64 {
        let target = 1.0 - tail;
        if self.cdf(0.0) > target {
            return 0;
        }
        let mut hi = 1u64;
        while self.cdf(hi as f64) <= target {
            if hi >= COUNT_CAP {
                return COUNT_CAP;
            }
            hi = (hi * 2).min(COUNT_CAP);
        }
        let mut lo = hi / 2;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf(mid as f64) > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Probability vector `P(X = 0..=upper)` for a non-negative count law.
    pub fn count_pmf(&self, tail: f64) -> Result<Vec<f64>> {
        if !self.is_discrete() || self.support().0 < 0.0 {
            return Err(Error::LossDomain("not a non-negative count law".into()));
        }
        let upper = self.count_upper(tail);
        let mut out = vec![0.0; upper as usize + 1];
        self.fill_pmf(1.0, &mut out);
        Ok(out)
    }

    fn fill_pmf(&self, weight: f64, out: &mut [f64]) {
        if weight == 0.0 {
            return;
        }
        match self {
            FD::NegBinomial { alpha, beta, shift } => {
                let s = *shift as usize;
                if s >= out.len() {
                    return;
                }
                let r = 1.0 / (1.0 + beta);
                let mut p = nb_pmf(*alpha, *beta, 0.0);
                for (k, slot) in out[s..].iter_mut().enumerate() {
                    if k > 0 {
                        p *= (alpha + (k - 1) as f64) / k as f64 * r;
                        if p == 0.0 || k % 64 == 0 {
                            p = nb_pmf(*alpha, *beta, k as f64);
                        }
                    }
                    *slot += weight * p;
                }
            }
            FD::ZeroInflated { nonzero_prob, inner } => {
                out[0] += weight * (1.0 - nonzero_prob);
                inner.fill_pmf(weight * nonzero_prob, out);
            }
            FD::Mixture { weights, components } => {
                for (w, c) in weights.iter().zip(components) {
                    c.fill_pmf(weight * w, out);
                }
            }
            _ => {
                for (k, slot) in out.iter_mut().enumerate() {
                    *slot += weight * self.pmf(k as f64);
                }
            }
        }
    }
}

fn nb_pmf(alpha: f64, beta: f64, k: f64) -> f64 {
    (ln_gamma(alpha + k) - ln_gamma(alpha) - ln_gamma(k + 1.0) + alpha * (beta / (1.0 + beta)).ln()
        - k * (1.0 + beta).ln())
    .exp()
}

fn nb_cdf(alpha: f64, beta: f64, k: f64) -> f64 {
    if k < 0.0 {
        return 0.0;
    }
    beta_reg(alpha, k + 1.0, beta / (1.0 + beta))
}

fn discrete_search(d: &ForecastDistribution, p: f64, lower: f64) -> f64 {
    let start = lower.max(-1e12).floor();
    if d.cdf(start) >= p {
        return start;
    }
    let mut step = 1.0;
    let mut lo = start;
    let mut hi = start + step;
    while d.cdf(hi) < p {
        lo = hi;
        step *= 2.0;
        hi = start + step;
        if step > 1e15 {
            return f64::INFINITY;
        }
    }
    while hi - lo > 1.0 {
        let mid = (0.5 * (lo + hi)).floor();
        if d.cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn continuous_search(d: &ForecastDistribution, p: f64, lo: f64, hi: f64) -> f64 {
    let mut lo = if lo.is_finite() { lo } else { -1.0 };
    while d.cdf(lo) >= p && lo > -1e300 {
        if lo == d.support().0 {
            return lo;
        }
        lo = if lo < 0.0 { lo * 2.0 } else { -1.0 };
    }
    let mut hi = if hi.is_finite() { hi } else { 1.0 };
    while d.cdf(hi) < p && hi < 1e300 {
        hi = if hi > 0.0 { hi * 2.0 } else { 1.0 };
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if d.cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi.abs().max(1.0) {
            break;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nb_geometric_special_case() {
        // alpha = beta = 1 gives P(y) = (1/2)^(y+1)
        let d = FD::NegBinomial { alpha: 1.0, beta: 1.0, shift: 0 };
        for y in 0..20 {
            let exact = 0.5f64.powi(y + 1);
            assert!((d.pmf(y as f64) - exact).abs() < 1e-15);
            assert!((d.cdf(y as f64) - (1.0 - 0.5f64.powi(y + 1))).abs() < 1e-13);
        }
    }

    #[test]
    fn nb_pmf_vector_sums_to_one() {
        let d = FD::NegBinomial { alpha: 2.7, beta: 0.4, shift: 1 };
        let v = d.count_pmf(COUNT_TAIL).unwrap();
        let s: f64 = v.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(v[0], 0.0);
        for (k, p) in v.iter().enumerate() {
            assert!((p - d.pmf(k as f64)).abs() < 1e-13);
        }
    }

    #[test]
    fn bernoulli_moments() {
        let d = FD::Bernoulli { alpha: 3.0, beta: 1.0 };
        assert_eq!(d.mean(), Some(0.75));
        assert_eq!(d.prob_zero(), 0.25);
        assert_eq!(d.quantile(0.2), 0.0);
        assert_eq!(d.quantile(0.3), 1.0);
    }

    #[test]
    fn zero_inflated_quantiles() {
        let d = FD::zero_inflated(0.4, FD::NegBinomial { alpha: 1.0, beta: 1.0, shift: 1 });
        assert_eq!(d.quantile(0.5), 0.0);
        assert_eq!(d.quantile(0.6), 0.0);
        assert_eq!(d.quantile(0.61), 1.0);
        let t = FD::zero_inflated(0.5, FD::StudentT { dof: 5.0, loc: 3.0, scale: 0.2 });
        assert_eq!(t.quantile(0.4), 0.0);
        assert!(t.quantile(0.75) > 2.9 && t.quantile(0.75) < 3.1);
    }

    #[test]
    fn mixture_quantile_matches_cdf() {
        let d = FD::uniform_mixture(vec![
            FD::StudentT { dof: 4.0, loc: -1.0, scale: 1.0 },
            FD::StudentT { dof: 9.0, loc: 2.0, scale: 0.5 },
        ]);
        for &p in &[0.05, 0.4, 0.8] {
            let x = d.quantile(p);
            assert!((d.cdf(x) - p).abs() < 1e-9);
        }
        let c = FD::uniform_mixture(vec![FD::point(0.0), FD::NegBinomial { alpha: 2.0, beta: 0.5, shift: 1 }]);
        assert_eq!(c.quantile(0.5), 0.0);
        assert!(c.quantile(0.51) >= 1.0);
    }

    #[test]
    fn dollar_conversion() {
        let d = FD::zero_inflated(0.7, FD::StudentT { dof: 10.0, loc: 2.0, scale: 0.5 });
        let dd = d.to_dollars(DEFAULT_LOWER, DEFAULT_UPPER).unwrap();
        assert!((dd.prob_zero() - 0.3).abs() < 1e-15);
        assert!((dd.quantile(0.3 + 0.7 * 0.5) - 2.0f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn sampling_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = FD::zero_inflated(0.6, FD::NegBinomial { alpha: 3.0, beta: 2.0, shift: 1 });
        let n = 200_000;
        let m: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((m - d.mean().unwrap()).abs() < 0.01);
    }

    #[test]
    fn serde_round_trip() {
        let d = FD::zero_inflated(0.3, FD::NegBinomial { alpha: 1.5, beta: 2.0, shift: 1 });
        let s = serde_json::to_string(&d).unwrap();
        let back: ForecastDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(d, back);
    }
}
