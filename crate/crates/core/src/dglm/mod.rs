//! Dynamic generalized linear models: state evolution, conjugate
//! moment matching and linear Bayes updating.

mod conjugate;
mod dlm;
mod model;

pub use conjugate::{
    posterior_predictor_moments, predictor_from_conjugate, solve_conjugate, update_conjugate, SOLVER_MAX_ITER,
    SOLVER_MIN_PARAM, SOLVER_TOL,
};
pub use dlm::{dlm_update, VolatilitySpec};
pub use model::{Dglm, Dlm};

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Observation family of a conjugate DGLM.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Binary outcome; conjugate Beta(alpha, beta) on the success probability.
    Bernoulli,
    /// Count outcome; conjugate Gamma(alpha, rate = beta) on the Poisson mean.
    Poisson,
}

/// Mean and covariance of the state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct StateMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl StateMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite state moments".into()));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-9 * cov.amax().max(1.0) {
            return Err(Error::InvalidParameter(format!("covariance not symmetric ({asym:e})")));
        }
        Ok(StateMoments { mean, cov })
    }

    /// Zero mean with covariance `scale * I`.
    pub fn isotropic(dim: usize, scale: f64) -> Self {
        StateMoments { mean: DVector::zeros(dim), cov: DMatrix::identity(dim, dim) * scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.cov)
    }

    /// Positive semi-definite up to a trace-relative tolerance.
    pub fn is_psd(&self) -> bool {
        let tr = self.cov.trace().abs();
        self.min_eigenvalue() >= -1e-10 * tr.max(f64::MIN_POSITIVE)
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)],
        _ => SymmetricEigen::new(m.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min),
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// A contiguous block of state components sharing one discount factor.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountBlock {
    pub start: usize,
    pub len: usize,
    pub discount: f64,
}

/// System matrix plus component discounting and optional additive evolution variance.
#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionSpec {
    pub g: DMatrix<f64>,
    pub blocks: Vec<DiscountBlock>,
    pub w: Option<DMatrix<f64>>,
}

impl EvolutionSpec {
    pub fn new(g: DMatrix<f64>, blocks: Vec<DiscountBlock>, w: Option<DMatrix<f64>>) -> Result<Self> {
        let d = g.nrows();
        if g.ncols() != d {
            return Err(Error::Dimension("system matrix must be square".into()));
        }
        let mut used = vec![false; d];
        for b in &blocks {
            if !(b.discount > 0.0 && b.discount <= 1.0) {
                return Err(Error::InvalidParameter(format!("discount factor {} outside (0, 1]", b.discount)));
            }
            if b.start + b.len > d {
                return Err(Error::Dimension("discount block exceeds state dimension".into()));
            }
            for u in &mut used[b.start..b.start + b.len] {
                if *u {
                    return Err(Error::InvalidParameter("discount blocks overlap".into()));
                }
                *u = true;
            }
        }
        if let Some(w) = &w {
            if w.nrows() != d || w.ncols() != d {
                return Err(Error::Dimension("evolution variance has wrong shape".into()));
            }
        }
        Ok(EvolutionSpec { g, blocks, w })
    }

    /// Identity system matrix with the given blocks.
    pub fn random_walk(dim: usize, blocks: Vec<DiscountBlock>) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim), blocks, None)
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }
}

/// One-step state evolution: `a = G m`, `R = G C G'` with each discount block
/// divided by its factor, plus any additive evolution variance.
pub fn evolve(post: &StateMoments, spec: &EvolutionSpec) -> Result<StateMoments> {
    if post.dim() != spec.dim() {
        return Err(Error::Dimension(format!(
            "state has dimension {} but evolution expects {}",
            post.dim(),
            spec.dim()
        )));
    }
    let a = &spec.g * &post.mean;
    let mut r = &spec.g * &post.cov * spec.g.transpose();
    for b in &spec.blocks {
        if b.discount < 1.0 {
            let mut view = r.view_mut((b.start, b.start), (b.len, b.len));
            view /= b.discount;
        }
    }
    if let Some(w) = &spec.w {
        r += w;
    }
    symmetrize(&mut r);
    Ok(StateMoments { mean: a, cov: r })
}

/// Apply `evolve` `k` times.
pub fn evolve_k(post: &StateMoments, spec: &EvolutionSpec, k: usize) -> Result<StateMoments> {
    let mut s = post.clone();
    for _ in 0..k {
        s = evolve(&s, spec)?;
    }
    Ok(s)
}

/// Mean and variance of the linear predictor.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PredictorMoments {
    pub f: f64,
    pub q: f64,
}

/// `f = F'a`, `q = F'RF`.
pub fn predictor_moments(prior: &StateMoments, f_vec: &DVector<f64>) -> Result<PredictorMoments> {
    if f_vec.len() != prior.dim() {
        return Err(Error::Dimension(format!(
            "regression vector has length {} but state has dimension {}",
            f_vec.len(),
            prior.dim()
        )));
    }
    let f = f_vec.dot(&prior.mean);
    let q = (&prior.cov * f_vec).dot(f_vec);
    Ok(PredictorMoments { f, q: q.max(0.0) })
}

/// Linear Bayes update of the state given prior and posterior predictor moments.
pub fn linear_bayes_update(
    prior: &StateMoments,
    f_vec: &DVector<f64>,
    prior_pm: PredictorMoments,
    post_pm: PredictorMoments,
) -> Result<StateMoments> {
    let q = prior_pm.q;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::DegenerateVariance(q));
    }
    let rf = &prior.cov * f_vec;
    let mean = &prior.mean + &rf * ((post_pm.f - prior_pm.f) / q);
    let shrink = (1.0 - post_pm.q / q) / q;
    let mut cov = &prior.cov - &rf * rf.transpose() * shrink;
    symmetrize(&mut cov);
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite posterior moments".into()));
    }
    Ok(StateMoments { mean, cov })
}

/// Conjugate Beta or Gamma parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConjugateParams {
    pub alpha: f64,
    pub beta: f64,
}
