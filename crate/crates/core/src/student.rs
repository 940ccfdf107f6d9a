//! Standard Student-t helpers; infinite degrees of freedom means standard normal.

use crate::special::ln_gamma;
use libm::erfc;
use statrs::function::beta::{beta_reg, inv_beta_reg};
use statrs::function::erf::erfc_inv;
use std::f64::consts::{PI, SQRT_2};

/// Standard Student-t density with cached normalizing constant.
#[derive(Clone, Copy, Debug)]
pub(crate) struct TKernel {
    dof: f64,
    ln_norm: f64,
}

impl TKernel {
    pub(crate) fn new(dof: f64) -> Self {
        let ln_norm = if dof.is_infinite() {
            -0.5 * (2.0 * PI).ln()
        } else {
            ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * PI).ln()
        };
        TKernel { dof, ln_norm }
    }

    pub(crate) fn pdf(&self, z: f64) -> f64 {
        if self.dof.is_infinite() {
            (self.ln_norm - 0.5 * z * z).exp()
        } else {
            (self.ln_norm - 0.5 * (self.dof + 1.0) * (z * z / self.dof).ln_1p()).exp()
        }
    }
}

#[cfg(test)]
pub(crate) fn t_pdf(z: f64, dof: f64) -> f64 {
    TKernel::new(dof).pdf(z)
}

pub(crate) fn t_cdf(z: f64, dof: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if dof.is_infinite() {
        return 0.5 * erfc(-z / SQRT_2);
    }
    let x = dof / (dof + z * z);
    let tail = 0.5 * beta_reg(0.5 * dof, 0.5, x.clamp(0.0, 1.0));
    if z < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub(crate) fn t_quantile(p: f64, dof: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut z = if dof.is_infinite() {
        -SQRT_2 * erfc_inv(2.0 * p)
    } else {
        let x = inv_beta_reg(0.5 * dof, 0.5, 2.0 * p.min(1.0 - p));
        let z = if x <= 0.0 { f64::INFINITY } else { (dof * (1.0 - x) / x).sqrt() };
        if p < 0.5 {
            -z
        } else {
            z
        }
    };
    if !z.is_finite() {
        return z;
    }
    let kernel = TKernel::new(dof);
    for _ in 0..3 {
        let d = kernel.pdf(z);
        if d <= 0.0 {
            break;
        }
        let step = (t_cdf(z, dof) - p) / d;
        if !step.is_finite() {
            break;
        }
        z -= step;
        if step.abs() < 1e-15 * z.abs().max(1.0) {
            break;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cauchy_closed_form() {
        for &z in &[-30.0_f64, -2.0, -0.3, 0.0, 0.7, 4.0] {
            let exact = 0.5 + z.atan() / PI;
            assert!((t_cdf(z, 1.0) - exact).abs() < 1e-13);
            assert!((t_pdf(z, 1.0) - 1.0 / (PI * (1.0 + z * z))).abs() < 1e-14);
        }
    }

    #[test]
    fn two_dof_closed_form() {
        for &z in &[-5.0_f64, -1.0, 0.25, 3.0] {
            let exact = 0.5 + z / (2.0 * (2.0 + z * z).sqrt());
            assert!((t_cdf(z, 2.0) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &dof in &[0.8, 1.0, 3.0, 17.0, 200.0, f64::INFINITY] {
            for &p in &[1e-6, 0.01, 0.25, 0.5, 0.9, 0.999] {
                let z = t_quantile(p, dof);
                assert!((t_cdf(z, dof) - p).abs() < 1e-12 * p.max(1e-3), "dof={dof} p={p}");
            }
        }
    }

    #[test]
    fn normal_limit() {
        let q = t_quantile(0.975, f64::INFINITY);
        assert!((q - 1.959963984540054).abs() < 1e-12, "{q} {}", t_cdf(1.959963984540054, f64::INFINITY));
        let (a, b) = (t_cdf(1.0, 1e8), t_cdf(1.0, f64::INFINITY));
        assert!((a - b).abs() < 1e-7, "{a} {b}");
    }
}
