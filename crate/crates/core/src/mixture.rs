//! Zero-inflated mixtures of a Bernoulli gate with a shifted Poisson (DCMM)
//! or a normal DLM on log spend (DLMM).

use crate::dglm::{Dglm, Dlm, Family};
use crate::distribution::ForecastDistribution;
use crate::error::{Error, Result};
use nalgebra::DVector;

/// Dynamic count mixture: `z ~ Bernoulli(pi)`, `y | z = 1 ~ 1 + Poisson`.
#[derive(Clone, Debug)]
pub struct Dcmm {
    pub gate: Dglm,
    pub count: Dglm,
    pub gate_updates: u64,
    pub count_updates: u64,
}

impl Dcmm {
    pub fn new(gate: Dglm, count: Dglm) -> Result<Self> {
        if gate.family != Family::Bernoulli || count.family != Family::Poisson {
            return Err(Error::InvalidParameter("DCMM needs a Bernoulli gate and a Poisson count model".into()));
        }
        Ok(Dcmm { gate, count, gate_updates: 0, count_updates: 0 })
    }

    /// `k`-step forecast: zero with probability `1 - E[pi]`, else `1 + NB`.
    pub fn forecast(&self, gate_path: &[DVector<f64>], count_path: &[DVector<f64>]) -> Result<ForecastDistribution> {
        let g = self.gate.forecast_conjugate(gate_path)?;
        let c = self.count.forecast_conjugate(count_path)?;
        Ok(ForecastDistribution::zero_inflated(
            g.alpha / (g.alpha + g.beta),
            ForecastDistribution::NegBinomial { alpha: c.alpha, beta: c.beta, shift: 1 },
        ))
    }

    /// Update on count `y`; the count model sees `y - 1` only when `y > 0`.
    pub fn update(&mut self, gate_f: &DVector<f64>, count_f: &DVector<f64>, y: u64) -> Result<()> {
        self.gate.update(gate_f, (y > 0) as u8 as f64)?;
        self.gate_updates += 1;
        if y > 0 {
            self.count.update(count_f, (y - 1) as f64)?;
            self.count_updates += 1;
        } else {
            self.count.skip()?;
        }
        Ok(())
    }

    pub fn skip(&mut self) -> Result<()> {
        self.gate.skip()?;
        self.count.skip()
    }
}

/// Dynamic linear mixture: `z ~ Bernoulli(pi)`, `x | z = 1 ~ T` where `x` is log spend.
#[derive(Clone, Debug)]
pub struct Dlmm {
    pub gate: Dglm,
    pub level: Dlm,
    pub gate_updates: u64,
    pub level_updates: u64,
}

impl Dlmm {
    pub fn new(gate: Dglm, level: Dlm) -> Result<Self> {
        if gate.family != Family::Bernoulli {
            return Err(Error::InvalidParameter("DLMM needs a Bernoulli gate".into()));
        }
        Ok(Dlmm { gate, level, gate_updates: 0, level_updates: 0 })
    }

    /// `k`-step forecast on the log-spend scale, zero meaning no spend.
    pub fn forecast(&self, gate_path: &[DVector<f64>], level_path: &[DVector<f64>]) -> Result<ForecastDistribution> {
        let g = self.gate.forecast_conjugate(gate_path)?;
        Ok(ForecastDistribution::zero_inflated(g.alpha / (g.alpha + g.beta), self.level.forecast(level_path)?))
    }

    /// Update on log spend `x`, with `x == 0` read as no spend.
    pub fn update(&mut self, gate_f: &DVector<f64>, level_f: &DVector<f64>, x: f64) -> Result<()> {
        self.update_outcome(gate_f, level_f, x != 0.0, x)
    }

    /// Update with an explicit purchase indicator, so that a positive spend
    /// whose log is exactly zero is not taken for a non-purchase.
    pub fn update_outcome(&mut self, gate_f: &DVector<f64>, level_f: &DVector<f64>, z: bool, x: f64) -> Result<()> {
        self.gate.update(gate_f, z as u8 as f64)?;
        self.gate_updates += 1;
        if z {
            self.level.update(level_f, x)?;
            self.level_updates += 1;
        } else {
            self.level.skip()?;
        }
        Ok(())
    }

    pub fn skip(&mut self) -> Result<()> {
        self.gate.skip()?;
        self.level.skip()
    }
}
