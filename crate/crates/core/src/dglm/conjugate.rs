use super::{ConjugateParams, Family, PredictorMoments};
use crate::error::{Error, Result};
use crate::special::{digamma, tetragamma, trigamma};

/// Residual tolerance of the conjugate solver.
pub const SOLVER_TOL: f64 = 1e-10;
/// Iteration cap of the conjugate solver.
pub const SOLVER_MAX_ITER: usize = 50;
/// Lower clamp on solved conjugate parameters.
pub const SOLVER_MIN_PARAM: f64 = 1e-6;

const MAX_PARAM: f64 = 1e15;

/// Forward map from conjugate parameters to the mean and variance of the
/// natural parameter (logit for Bernoulli, log-rate for Poisson).
pub fn predictor_from_conjugate(family: Family, cp: ConjugateParams) -> PredictorMoments {
    match family {
        Family::Bernoulli => {
            PredictorMoments { f: digamma(cp.alpha) - digamma(cp.beta), q: trigamma(cp.alpha) + trigamma(cp.beta) }
        }
        Family::Poisson => PredictorMoments { f: digamma(cp.alpha) - cp.beta.ln(), q: trigamma(cp.alpha) },
    }
}

/// Posterior predictor moments `(g, p)` after a conjugate update.
pub fn posterior_predictor_moments(family: Family, cp: ConjugateParams) -> PredictorMoments {
    predictor_from_conjugate(family, cp)
}

/// Conjugate update with unit precision.
pub fn update_conjugate(family: Family, cp: ConjugateParams, y: f64) -> ConjugateParams {
    match family {
        Family::Bernoulli => ConjugateParams { alpha: cp.alpha + y, beta: cp.beta + 1.0 - y },
        Family::Poisson => ConjugateParams { alpha: cp.alpha + y, beta: cp.beta + 1.0 },
    }
}

/// Find conjugate parameters whose natural-parameter moments equal `(f, q)`.
pub fn solve_conjugate(family: Family, pm: PredictorMoments) -> Result<ConjugateParams> {
    let PredictorMoments { f, q } = pm;
    if !f.is_finite() || !q.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite predictor moments ({f}, {q})")));
    }
    if !(q > 0.0) {
        return Err(Error::DegenerateVariance(q));
    }
    match family {
        Family::Bernoulli => solve_bernoulli(f, q),
        Family::Poisson => solve_poisson(f, q),
    }
}

fn clamp_log(v: f64) -> f64 {
    v.clamp(SOLVER_MIN_PARAM.ln(), MAX_PARAM.ln())
}

fn solve_poisson(f: f64, q: f64) -> Result<ConjugateParams> {
    let ln_q = q.ln();
    let resid = |u: f64| trigamma(u.exp()).ln() - ln_q;
    let mut u = clamp_log(-ln_q);
    let mut r = resid(u);
    for _ in 0..SOLVER_MAX_ITER {
        if r.abs() < SOLVER_TOL {
            let alpha = u.exp();
            return Ok(ConjugateParams { alpha, beta: (digamma(alpha) - f).exp() });
        }
        let a = u.exp();
        let slope = a * tetragamma(a) / trigamma(a);
        let step = -r / slope;
        let mut lambda = 1.0;
        loop {
            let u_new = clamp_log(u + lambda * step);
            let r_new = resid(u_new);
            if r_new.abs() < r.abs() || lambda < 1e-6 {
                u = u_new;
                r = r_new;
                break;
            }
            lambda *= 0.5;
        }
    }
    Err(Error::NonConvergence { f, q })
}

fn solve_bernoulli(f: f64, q: f64) -> Result<ConjugateParams> {
    let ln_q = q.ln();
    let resid = |u: f64, v: f64| {
        let (a, b) = (u.exp(), v.exp());
        (digamma(a) - digamma(b) - f, (trigamma(a) + trigamma(b)).ln() - ln_q)
    };
    let fe = f.clamp(-700.0, 700.0);
    let mut u = clamp_log(((1.0 + fe.exp()) / q).ln());
    let mut v = clamp_log(((1.0 + (-fe).exp()) / q).ln());
    let mut r = resid(u, v);
    let norm = |r: (f64, f64)| r.0.abs().max(r.1.abs());
    for _ in 0..SOLVER_MAX_ITER {
        if norm(r) < SOLVER_TOL {
            return Ok(ConjugateParams { alpha: u.exp(), beta: v.exp() });
        }
        let (a, b) = (u.exp(), v.exp());
        let (ta, tb) = (trigamma(a), trigamma(b));
        let big_q = ta + tb;
        let j11 = a * ta;
        let j12 = -b * tb;
        let j21 = a * tetragamma(a) / big_q;
        let j22 = b * tetragamma(b) / big_q;
        let det = j11 * j22 - j12 * j21;
        if !det.is_finite() || det == 0.0 {
            break;
        }
        let du = -(j22 * r.0 - j12 * r.1) / det;
        let dv = -(-j21 * r.0 + j11 * r.1) / det;
        let mut lambda = 1.0;
        loop {
            let (u_new, v_new) = (clamp_log(u + lambda * du), clamp_log(v + lambda * dv));
            let r_new = resid(u_new, v_new);
            if norm(r_new) < norm(r) || lambda < 1e-6 {
                u = u_new;
                v = v_new;
                r = r_new;
                break;
            }
            lambda *= 0.5;
        }
    }
    Err(Error::NonConvergence { f, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bernoulli_uniform_prior() {
        let cp = solve_conjugate(Family::Bernoulli, PredictorMoments { f: 0.0, q: 3.28987 }).unwrap();
        assert_relative_eq!(cp.alpha, 1.0, epsilon = 1e-4);
        assert_relative_eq!(cp.beta, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn poisson_known_solution() {
        // Gamma(2, 1): f = psi(2), q = psi'(2)
        let pm = PredictorMoments { f: 0.42278433509846713, q: 0.6449340668482264 };
        let cp = solve_conjugate(Family::Poisson, pm).unwrap();
        assert_relative_eq!(cp.alpha, 2.0, epsilon = 1e-8);
        assert_relative_eq!(cp.beta, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn rejects_non_positive_q() {
        for fam in [Family::Bernoulli, Family::Poisson] {
            assert!(matches!(
                solve_conjugate(fam, PredictorMoments { f: 0.0, q: 0.0 }),
                Err(Error::DegenerateVariance(_))
            ));
            assert!(solve_conjugate(fam, PredictorMoments { f: 0.0, q: -1.0 }).is_err());
        }
    }

    #[test]
    fn update_examples() {
        let u = |fam, a, b, y| update_conjugate(fam, ConjugateParams { alpha: a, beta: b }, y);
        assert_eq!(u(Family::Bernoulli, 1.0, 1.0, 1.0), ConjugateParams { alpha: 2.0, beta: 1.0 });
        assert_eq!(u(Family::Bernoulli, 1.0, 1.0, 0.0), ConjugateParams { alpha: 1.0, beta: 2.0 });
        assert_eq!(u(Family::Poisson, 2.0, 3.0, 5.0), ConjugateParams { alpha: 7.0, beta: 4.0 });
    }

    #[test]
    fn posterior_moments_examples() {
        let p = posterior_predictor_moments(Family::Bernoulli, ConjugateParams { alpha: 1.0, beta: 1.0 });
        assert_relative_eq!(p.f, 0.0, epsilon = 1e-14);
        assert_relative_eq!(p.q, 3.28987, epsilon = 1e-5);
        let p = posterior_predictor_moments(Family::Poisson, ConjugateParams { alpha: 2.0, beta: 1.0 });
        assert_relative_eq!(p.f, 0.42278, epsilon = 1e-5);
        assert_relative_eq!(p.q, 0.644934, epsilon = 1e-6);
    }

    #[test]
    fn round_trip_extremes() {
        for fam in [Family::Bernoulli, Family::Poisson] {
            for &f in &[-10.0, -3.0, 0.0, 2.5, 10.0] {
                for &q in &[1e-4, 0.01, 1.0, 10.0, 50.0] {
                    let cp = solve_conjugate(fam, PredictorMoments { f, q })
                        .unwrap_or_else(|e| panic!("{fam:?} f={f} q={q}: {e}"));
                    let back = predictor_from_conjugate(fam, cp);
                    assert!((back.f - f).abs() < 1e-8 * f.abs().max(1.0), "{fam:?} f={f} q={q}");
                    assert!((back.q - q).abs() < 1e-8 * q, "{fam:?} f={f} q={q}");
                }
            }
        }
    }
}
