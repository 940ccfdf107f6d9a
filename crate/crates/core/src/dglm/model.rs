use super::{
    dlm_update, evolve, evolve_k, linear_bayes_update, posterior_predictor_moments, predictor_moments, solve_conjugate,
    update_conjugate, ConjugateParams, EvolutionSpec, Family, PredictorMoments, StateMoments, VolatilitySpec,
};
use crate::distribution::ForecastDistribution;
use crate::error::{Error, Result};
use nalgebra::DVector;

/// Conjugate Bernoulli or Poisson DGLM holding the latest posterior.
#[derive(Clone, Debug)]
pub struct Dglm {
    pub family: Family,
    pub state: StateMoments,
    pub evolution: EvolutionSpec,
}

impl Dglm {
    pub fn new(family: Family, state: StateMoments, evolution: EvolutionSpec) -> Result<Self> {
        if state.dim() != evolution.dim() {
            return Err(Error::Dimension("state and evolution dimensions differ".into()));
        }
        Ok(Dglm { family, state, evolution })
    }

    /// Conjugate parameters of the `k`-step-ahead forecast, `k = f_path.len()`.
    pub fn forecast_conjugate(&self, f_path: &[DVector<f64>]) -> Result<ConjugateParams> {
        let f_vec = f_path.last().ok_or_else(|| Error::InvalidParameter("empty regression path".into()))?;
        let prior = evolve_k(&self.state, &self.evolution, f_path.len())?;
        let pm = predictor_moments(&prior, f_vec)?;
        solve_conjugate(self.family, pm)
    }

    /// `k`-step-ahead forecast distribution.
    pub fn forecast(&self, f_path: &[DVector<f64>]) -> Result<ForecastDistribution> {
        let cp = self.forecast_conjugate(f_path)?;
        Ok(match self.family {
            Family::Bernoulli => ForecastDistribution::Bernoulli { alpha: cp.alpha, beta: cp.beta },
            Family::Poisson => ForecastDistribution::NegBinomial { alpha: cp.alpha, beta: cp.beta, shift: 0 },
        })
    }

    /// Evolve one step and update on `y`.
    pub fn update(&mut self, f_vec: &DVector<f64>, y: f64) -> Result<()> {
        let prior = evolve(&self.state, &self.evolution)?;
        let pm = predictor_moments(&prior, f_vec)?;
        let cp = solve_conjugate(self.family, pm)?;
        let post_pm = posterior_predictor_moments(self.family, update_conjugate(self.family, cp, y));
        self.state = linear_bayes_update(&prior, f_vec, pm, post_pm)?;
        Ok(())
    }

    /// Evolve one step without an observation.
    pub fn skip(&mut self) -> Result<()> {
        self.state = evolve(&self.state, &self.evolution)?;
        Ok(())
    }
}

/// Normal DLM with discounted volatility.
#[derive(Clone, Debug)]
pub struct Dlm {
    pub state: StateMoments,
    pub evolution: EvolutionSpec,
    pub volatility: VolatilitySpec,
}

impl Dlm {
    pub fn new(state: StateMoments, evolution: EvolutionSpec, volatility: VolatilitySpec) -> Result<Self> {
        if state.dim() != evolution.dim() {
            return Err(Error::Dimension("state and evolution dimensions differ".into()));
        }
        Ok(Dlm { state, evolution, volatility })
    }

    /// Location, variance and degrees of freedom of the `k`-step forecast.
    pub fn forecast_moments(&self, f_path: &[DVector<f64>]) -> Result<(PredictorMoments, f64)> {
        let f_vec = f_path.last().ok_or_else(|| Error::InvalidParameter("empty regression path".into()))?;
        let prior = evolve_k(&self.state, &self.evolution, f_path.len())?;
        let pm = predictor_moments(&prior, f_vec)?;
        let mut vol = self.volatility;
        for _ in 0..f_path.len() {
            vol = vol.evolve();
        }
        Ok((PredictorMoments { f: pm.f, q: pm.q + vol.scale }, vol.dof))
    }

    /// `k`-step-ahead Student-t forecast.
    pub fn forecast(&self, f_path: &[DVector<f64>]) -> Result<ForecastDistribution> {
        let (pm, dof) = self.forecast_moments(f_path)?;
        Ok(ForecastDistribution::StudentT { dof, loc: pm.f, scale: pm.q.sqrt() })
    }

    pub fn update(&mut self, f_vec: &DVector<f64>, y: f64) -> Result<()> {
        let prior = evolve(&self.state, &self.evolution)?;
        let (post, vol) = dlm_update(&prior, f_vec, y, &self.volatility)?;
        self.state = post;
        self.volatility = vol;
        Ok(())
    }

    pub fn skip(&mut self) -> Result<()> {
        self.state = evolve(&self.state, &self.evolution)?;
        self.volatility = self.volatility.evolve();
        Ok(())
    }
}
