use crate::error::{Error, Result};
use crate::student::{t_cdf, t_quantile, TKernel};
use serde::{Deserialize, Serialize};

/// Default lower truncation of dollar-scale spend.
pub const DEFAULT_LOWER: f64 = 0.01;
/// Default upper truncation of dollar-scale spend.
pub const DEFAULT_UPPER: f64 = 1.0e4;

/// Spend `y = exp(x)` with `x` Student-t, truncated to `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogT {
    pub dof: f64,
    pub loc: f64,
    pub scale: f64,
    pub lower: f64,
    pub upper: f64,
}

const OFFSETS: [f64; 19] =
    [0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0, 96.0, 128.0, 256.0, 512.0, 1024.0];
const MAX_PANEL: f64 = 1.0;

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

impl LogT {
    pub fn new(dof: f64, loc: f64, scale: f64, lower: f64, upper: f64) -> Result<Self> {
        let d = LogT { dof, loc, scale, lower, upper };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dof > 0.0) || !self.loc.is_finite() || !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid log-T parameters {self:?}")));
        }
        if !(self.lower > 0.0) || !(self.upper > self.lower) || !self.upper.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid truncation [{}, {}]", self.lower, self.upper)));
        }
        Ok(())
    }

    fn std(&self, y: f64) -> f64 {
        (y.ln() - self.loc) / self.scale
    }

    fn bounds_cdf(&self) -> (f64, f64) {
        (t_cdf(self.std(self.lower), self.dof), t_cdf(self.std(self.upper), self.dof))
    }

    /// Probability mass of the untruncated law inside the truncation window.
    pub fn retained_mass(&self) -> f64 {
        let (lo, hi) = self.bounds_cdf();
        hi - lo
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= self.lower {
            return 0.0;
        }
        if y >= self.upper {
            return 1.0;
        }
        let (lo, hi) = self.bounds_cdf();
        ((t_cdf(self.std(y), self.dof) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if y < self.lower || y > self.upper {
            return 0.0;
        }
        TKernel::new(self.dof).pdf(self.std(y)) / (self.scale * y * self.retained_mass())
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.lower;
        }
        if p >= 1.0 {
            return self.upper;
        }
        let (lo, hi) = self.bounds_cdf();
        let z = t_quantile(lo + p * (hi - lo), self.dof);
        (self.loc + self.scale * z).exp().clamp(self.lower, self.upper)
    }

    /// Quadrature table for partial expectations in `u = ln y`.
    pub fn table(&self) -> LogTTable {
        LogTTable::new(self)
    }
}

/// Composite Gauss-Legendre table over `u = ln y` giving fast
/// `A(f) = P(Y <= f)` and `B(f) = E[1/Y; Y <= f]`.
#[derive(Clone, Debug)]
pub struct LogTTable {
    kernel: TKernel,
    loc: f64,
    scale: f64,
    norm: f64,
    edges: Vec<f64>,
    cum_a: Vec<f64>,
    cum_b: Vec<f64>,
    mean: f64,
    lower: f64,
    upper: f64,
}

impl LogTTable {
    fn new(d: &LogT) -> Self {
        let (ul, uh) = (d.lower.ln(), d.upper.ln());
        let mut cuts = vec![ul, uh];
        for &k in &OFFSETS {
            for v in [d.loc - d.scale * k, d.loc + d.scale * k] {
                if v > ul && v < uh {
                    cuts.push(v);
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup();
        let mut edges = vec![cuts[0]];
        for w in cuts.windows(2) {
            let n = ((w[1] - w[0]) / MAX_PANEL).ceil().max(1.0) as usize;
            let h = (w[1] - w[0]) / n as f64;
            for i in 1..n {
                edges.push(w[0] + h * i as f64);
            }
            edges.push(w[1]);
        }
        let kernel = TKernel::new(d.dof);
        let mut t = LogTTable {
            kernel,
            loc: d.loc,
            scale: d.scale,
            norm: 1.0,
            edges,
            cum_a: vec![],
            cum_b: vec![],
            mean: 0.0,
            lower: d.lower,
            upper: d.upper,
        };
        let mut cum_a = vec![0.0];
        let mut cum_b = vec![0.0];
        let mut m = 0.0;
        for w in t.edges.windows(2) {
            let (a, b, c) = t.panel(w[0], w[1]);
            cum_a.push(cum_a.last().unwrap() + a);
            cum_b.push(cum_b.last().unwrap() + b);
            m += c;
        }
        let z = *cum_a.last().unwrap();
        t.norm = z;
        t.cum_a = cum_a.into_iter().map(|v| v / z).collect();
        t.cum_b = cum_b.into_iter().map(|v| v / z).collect();
        t.mean = m / z;
        t
    }

    fn density_u(&self, u: f64) -> f64 {
        self.kernel.pdf((u - self.loc) / self.scale) / (self.scale * self.norm)
    }

    /// Integrals over `[u0, u1]` of `g`, `e^{-u} g` and `e^{u} g`.
    fn panel(&self, u0: f64, u1: f64) -> (f64, f64, f64) {
        let half = 0.5 * (u1 - u0);
        let mid = 0.5 * (u1 + u0);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            let u = mid + half * x;
            let g = w * self.density_u(u);
            let e = u.exp();
            a += g;
            b += g / e;
            c += g * e;
        }
        (a * half, b * half, c * half)
    }

    fn locate(&self, f: f64) -> Option<(usize, f64)> {
        if f <= self.lower {
            return None;
        }
        let u = f.ln().min(*self.edges.last().unwrap());
        let j = self.edges.partition_point(|&e| e <= u).saturating_sub(1);
        Some((j.min(self.edges.len() - 2), u))
    }

    /// `A(f) = P(Y <= f)` and `B(f) = E[1/Y; Y <= f]`.
    pub fn partial(&self, f: f64) -> (f64, f64) {
        if f >= self.upper {
            return (1.0, self.total_b());
        }
        match self.locate(f) {
            None => (0.0, 0.0),
            Some((j, u)) => {
                let (a, b, _) = self.panel(self.edges[j], u);
                (self.cum_a[j] + a, self.cum_b[j] + b)
            }
        }
    }

    /// `E[1/Y]`.
    pub fn total_b(&self) -> f64 {
        *self.cum_b.last().unwrap()
    }

    /// `E[Y]`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Inverse of the normalized `B`: smallest `f` with `B(f) >= p * E[1/Y]`.
    pub fn b_quantile(&self, p: f64) -> f64 {
        let target = p * self.total_b();
        let j = self.cum_b.partition_point(|&v| v < target).clamp(1, self.cum_b.len() - 1) - 1;
        let (mut lo, mut hi) = (self.edges[j], self.edges[j + 1]);
        // Safeguarded Newton in u; B'(u) = e^{-u} g(u).
        let mut u = 0.5 * (lo + hi);
        for _ in 0..100 {
            let (_, b, _) = self.panel(self.edges[j], u);
            let r = self.cum_b[j] + b - target;
            if r >= 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            let slope = (-u).exp() * self.density_u(u);
            let mut next = u - r / slope;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - u).abs() < 1e-14 * u.abs().max(1.0) || hi - lo < 1e-14 * hi.abs().max(1.0) {
                u = next;
                break;
            }
            u = next;
        }
        hi = u;
        hi.exp()
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_law() -> LogT {
        LogT::new(6.0, 2.5, 0.6, DEFAULT_LOWER, DEFAULT_UPPER).unwrap()
    }

    #[test]
    fn table_mass_matches_cdf() {
        let d = sample_law();
        let t = d.table();
        for &f in &[0.5, 3.0, 12.18, 40.0, 900.0] {
            let (a, _) = t.partial(f);
            assert!((a - d.cdf(f)).abs() < 1e-9, "f={f} a={a} cdf={}", d.cdf(f));
        }
        assert_eq!(t.partial(DEFAULT_UPPER).0, 1.0);
        assert_eq!(t.partial(0.001), (0.0, 0.0));
    }

    #[test]
    fn normal_limit_reciprocal_moment() {
        // Untruncated log-normal: E[1/Y] = exp(-m + s^2 / 2), E[Y] = exp(m + s^2 / 2).
        let d = LogT::new(f64::INFINITY, 1.0, 0.3, 1e-6, 1e6).unwrap();
        let t = d.table();
        assert!((t.total_b() - (-1.0f64 + 0.045).exp()).abs() < 1e-10);
        assert!((t.mean() - (1.0f64 + 0.045).exp()).abs() < 1e-9);
    }

    #[test]
    fn b_quantile_inverts_partial() {
        let t = sample_law().table();
        for &p in &[0.1, 0.5, 0.93] {
            let f = t.b_quantile(p);
            let (_, b) = t.partial(f);
            assert!((b / t.total_b() - p).abs() < 1e-10);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let d = sample_law();
        for &p in &[0.01, 0.5, 0.99] {
            assert!((d.cdf(d.quantile(p)) - p).abs() < 1e-10);
        }
    }
}
