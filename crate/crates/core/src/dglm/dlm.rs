use super::{symmetrize, StateMoments};
use crate::error::{Error, Result};
use nalgebra::DVector;

/// Observational variance state of a normal DLM.
///
/// `dof` is the degrees of freedom `n` of the scale estimate `s`; an infinite
/// value means the variance is known and equal to `scale`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VolatilitySpec {
    pub dof: f64,
    pub scale: f64,
    pub discount: f64,
}

impl VolatilitySpec {
    pub fn new(dof: f64, scale: f64, discount: f64) -> Result<Self> {
        if !(dof > 0.0) || !(scale > 0.0) || !scale.is_finite() || !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid volatility (n = {dof}, s = {scale}, delta = {discount})"
            )));
        }
        Ok(VolatilitySpec { dof, scale, discount })
    }

    /// Known observational variance.
    pub fn known(variance: f64) -> Self {
        VolatilitySpec { dof: f64::INFINITY, scale: variance, discount: 1.0 }
    }

    pub fn is_known(&self) -> bool {
        self.dof.is_infinite()
    }

    /// One step of volatility discounting: `n -> delta n`.
    pub fn evolve(&self) -> Self {
        VolatilitySpec { dof: self.discount * self.dof, ..*self }
    }
}

/// Normal DLM update. `prior` is the evolved state for this step and `vol` the
/// volatility posterior from the previous step; the volatility is discounted
/// here before updating.
pub fn dlm_update(
    prior: &StateMoments,
    f_vec: &DVector<f64>,
    y: f64,
    vol: &VolatilitySpec,
) -> Result<(StateMoments, VolatilitySpec)> {
    if f_vec.len() != prior.dim() {
        return Err(Error::Dimension(format!(
            "regression vector has length {} but state has dimension {}",
            f_vec.len(),
            prior.dim()
        )));
    }
    if !y.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite observation {y}")));
    }
    let v = vol.evolve();
    let rf = &prior.cov * f_vec;
    let f = f_vec.dot(&prior.mean);
    let q = rf.dot(f_vec) + v.scale;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::DegenerateVariance(q));
    }
    let e = y - f;
    let gain = &rf / q;
    let (n1, s1) = if v.is_known() {
        (f64::INFINITY, v.scale)
    } else {
        let n1 = v.dof + 1.0;
        (n1, v.scale + v.scale / n1 * (e * e / q - 1.0))
    };
    let mean = &prior.mean + &gain * e;
    let mut cov = (&prior.cov - &gain * gain.transpose() * q) * (s1 / v.scale);
    symmetrize(&mut cov);
    Ok((StateMoments { mean, cov }, VolatilitySpec { dof: n1, scale: s1, discount: v.discount }))
}
