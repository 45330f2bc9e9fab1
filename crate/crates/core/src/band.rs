//! Three-threshold band policies: the candidate value function built from a
//! smooth-fit root b, a repelling boundary theta and an upper barrier
//! lambda, with coefficients determined by a five-equation smoothness
//! system (C^1 fit at theta, C^2 fit at lambda).

use crate::barrier::BarrierValue;
use crate::model::{Evaluation, ModelParams, Side, ValueFunction, Yield};
use nalgebra::{Matrix5, Vector5};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BandError {
    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence { iters: usize, residual: f64 },
    #[error("converged to a solution violating the ordering b < theta < lambda: b={b}, theta={theta}, lambda={lambda}")]
    OrderingViolation { b: f64, theta: f64, lambda: f64 },
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("thresholds must exceed the yield support threshold")]
    BelowSupport,
}

/// Thresholds and piecewise coefficients of the band candidate.
#[derive(Debug, Clone, Copy)]
pub struct BandSolution {
    pub b: f64,
    pub theta: f64,
    pub lambda: f64,
    /// Inherited from the barrier solution at b.
    pub coef_a: f64,
    pub coef_b: f64,
    pub c1: f64,
    pub c2: f64,
    pub d: f64,
    /// Max-norm of the five smoothness residuals at the returned point.
    pub residual_norm: f64,
}

/// The five residuals, in order: value match at theta, first-derivative
/// match at theta, value match at lambda (against D), first-derivative
/// match at lambda, second-derivative match at lambda.
///
/// The unknown vector is u = (C1, C2, D, theta, lambda); b and its barrier
/// coefficients are fixed inputs.
pub fn band_residual(u: &[f64; 5], b: f64, params: &ModelParams, yld: &Yield) -> [f64; 5] {
    let [c1, c2, d, th, lam] = *u;
    let (gp, gm) = params.gamma_roots();
    let coef_a = yld.eval(b) / params.phi_d1(b);
    let coef_b = coef_a * params.phi(b);
    let (ep_t, em_t) = ((gp * th).exp(), (gm * th).exp());
    let (ep_l, em_l) = ((gp * lam).exp(), (gm * lam).exp());
    [
        c1 * ep_t + c2 * em_t - (coef_b + yld.integral(b, th)),
        c1 * gp * ep_t + c2 * gm * em_t - yld.eval(th),
        c1 * ep_l + c2 * em_l - d,
        c1 * gp * ep_l + c2 * gm * em_l - yld.eval(lam),
        c1 * gp * gp * ep_l + c2 * gm * gm * em_l - yld.deriv1(lam),
    ]
}

/// Analytic Jacobian of [`band_residual`] with respect to u.
pub fn band_jacobian(u: &[f64; 5], params: &ModelParams, yld: &Yield) -> Matrix5<f64> {
    let [c1, c2, _d, th, lam] = *u;
    let (gp, gm) = params.gamma_roots();
    let (ep_t, em_t) = ((gp * th).exp(), (gm * th).exp());
    let (ep_l, em_l) = ((gp * lam).exp(), (gm * lam).exp());
    Matrix5::from_rows(&[
        [ep_t, em_t, 0.0, c1 * gp * ep_t + c2 * gm * em_t - yld.eval(th), 0.0].into(),
        [
            gp * ep_t,
            gm * em_t,
            0.0,
            c1 * gp * gp * ep_t + c2 * gm * gm * em_t - yld.deriv1(th),
            0.0,
        ]
        .into(),
        [ep_l, em_l, -1.0, 0.0, c1 * gp * ep_l + c2 * gm * em_l].into(),
        [
            gp * ep_l,
            gm * em_l,
            0.0,
            0.0,
            c1 * gp * gp * ep_l + c2 * gm * gm * em_l - yld.deriv1(lam),
        ]
        .into(),
        [
            gp * gp * ep_l,
            gm * gm * em_l,
            0.0,
            0.0,
            c1 * gp * gp * gp * ep_l + c2 * gm * gm * gm * em_l - yld.deriv2(lam),
        ]
        .into(),
    ])
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Target max-norm of the residual vector.
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings allowed per iteration before giving up on damping.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 200, max_halvings: 40 }
    }
}

fn max_norm(r: &[f64; 5]) -> f64 {
    r.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damped Newton iteration on the smoothness system starting from `guess =
/// (C1, C2, D, theta, lambda)`. Steps are halved while the residual norm
/// fails to decrease. A converged point that does not satisfy
/// b < theta < lambda is reported as an ordering violation, distinct from
/// non-convergence, so that callers never receive a silently wrong answer.
pub fn solve_band(
    b: f64,
    guess: [f64; 5],
    params: &ModelParams,
    yld: &Yield,
    opts: NewtonOptions,
) -> Result<BandSolution, BandError> {
    let support = yld.support_threshold();
    if b <= support {
        return Err(BandError::BelowSupport);
    }
    let mut u = guess;
    let mut res = band_residual(&u, b, params, yld);
    let mut norm = max_norm(&res);
    for iter in 0..opts.max_iter {
        if norm < opts.tol {
            return finish(u, b, norm, params, yld);
        }
        let jac = band_jacobian(&u, params, yld);
        let rhs = Vector5::from_row_slice(&res);
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(BandError::SingularJacobian(iter))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let mut trial = u;
            for i in 0..5 {
                trial[i] -= scale * step[i];
            }
            // keep thresholds inside the residual's domain
            if trial[3] > support && trial[4] > support {
                let trial_res = band_residual(&trial, b, params, yld);
                let trial_norm = max_norm(&trial_res);
                if trial_norm.is_finite() && (trial_norm < norm || scale < 1e-8) {
                    u = trial;
                    res = trial_res;
                    norm = trial_norm;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(BandError::NonConvergence { iters: iter, residual: norm });
        }
    }
    if norm < opts.tol {
        return finish(u, b, norm, params, yld);
    }
    Err(BandError::NonConvergence { iters: opts.max_iter, residual: norm })
}

/// Minimal separation between consecutive thresholds. The system also
/// admits a collapsed root with theta = lambda exactly, which reproduces the
/// plain barrier value rather than a genuine band. The Jacobian is singular
/// there, so in double precision the residual drops below tolerance anywhere
/// in a basin of threshold splits up to ~1e-4 around the collapse; anything
/// separated by less than this margin is classified as collapsed and
/// rejected as an ordering violation.
const MIN_THRESHOLD_SEP: f64 = 1e-3;

fn finish(
    u: [f64; 5],
    b: f64,
    norm: f64,
    params: &ModelParams,
    yld: &Yield,
) -> Result<BandSolution, BandError> {
    let [c1, c2, d, theta, lambda] = u;
    if !(b + MIN_THRESHOLD_SEP < theta && theta + MIN_THRESHOLD_SEP < lambda) {
        return Err(BandError::OrderingViolation { b, theta, lambda });
    }
    let coef_a = yld.eval(b) / params.phi_d1(b);
    Ok(BandSolution {
        b,
        theta,
        lambda,
        coef_a,
        coef_b: coef_a * params.phi(b),
        c1,
        c2,
        d,
        residual_norm: norm,
    })
}

/// Multi-start sweep over a grid of initial guesses; returns every distinct
/// convergent solution satisfying the ordering invariant (dedup tolerance
/// 1e-6 on thresholds).
pub fn multi_start(
    b: f64,
    guesses: &[[f64; 5]],
    params: &ModelParams,
    yld: &Yield,
    opts: NewtonOptions,
) -> Vec<BandSolution> {
    let mut found: Vec<BandSolution> = Vec::new();
    for &g in guesses {
        if let Ok(sol) = solve_band(b, g, params, yld, opts) {
            let dup = found.iter().any(|s| {
                (s.theta - sol.theta).abs() < 1e-6 && (s.lambda - sol.lambda).abs() < 1e-6
            });
            if !dup {
                found.push(sol);
            }
        }
    }
    found
}

/// Default guess grid for [`multi_start`]: thresholds spread over (b, hi)
/// with coefficient seeds taken from the barrier solution's scale.
pub fn default_guess_grid(b: f64, coef_b: f64, hi: f64) -> Vec<[f64; 5]> {
    let mut out = Vec::new();
    let n = 6;
    for i in 1..n {
        for j in (i + 1)..=n {
            let theta = b + (hi - b) * i as f64 / n as f64;
            let lambda = b + (hi - b) * j as f64 / n as f64;
            out.push([coef_b, 1.0, coef_b, theta, lambda]);
        }
    }
    out
}

/// The four-branch candidate value function v* defined by a band solution.
///
/// Branches: A phi on [0, b]; B plus the running yield integral on
/// (b, theta]; the two-exponential homogeneous solution on (theta, lambda];
/// D plus the running integral on (lambda, inf). C^2 at b and lambda, C^1
/// only at theta.
#[derive(Debug, Clone)]
pub struct BandValue {
    pub sol: BandSolution,
    params: ModelParams,
    yld: Yield,
}

impl BandValue {
    pub fn new(sol: BandSolution, params: ModelParams, yld: &Yield) -> Self {
        Self { sol, params, yld: yld.clone() }
    }

    /// Jump of the second derivative at theta (right minus left); strictly
    /// positive when smooth fit genuinely fails there.
    pub fn second_derivative_gap_at_theta(&self) -> f64 {
        let l = self.evaluate(self.sol.theta, Side::Left).second;
        let r = self.evaluate(self.sol.theta, Side::Right).second;
        r - l
    }
}

impl ValueFunction for BandValue {
    fn evaluate(&self, x: f64, side: Side) -> Evaluation {
        let s = &self.sol;
        let (gp, gm) = self.params.gamma_roots();
        let before = |k: f64| x < k || (x == k && side == Side::Left);
        if before(s.b) {
            Evaluation {
                value: s.coef_a * self.params.phi(x),
                first: s.coef_a * self.params.phi_d1(x),
                second: s.coef_a * self.params.phi_d2(x),
            }
        } else if before(s.theta) {
            Evaluation {
                value: s.coef_b + self.yld.integral(s.b, x),
                first: self.yld.eval(x),
                second: self.yld.deriv1(x),
            }
        } else if before(s.lambda) {
            let (ep, em) = ((gp * x).exp(), (gm * x).exp());
            Evaluation {
                value: s.c1 * ep + s.c2 * em,
                first: s.c1 * gp * ep + s.c2 * gm * em,
                second: s.c1 * gp * gp * ep + s.c2 * gm * gm * em,
            }
        } else {
            Evaluation {
                value: s.d + self.yld.integral(s.lambda, x),
                first: self.yld.eval(x),
                second: self.yld.deriv1(x),
            }
        }
    }

    fn kinks(&self) -> Vec<f64> {
        vec![self.sol.b, self.sol.theta, self.sol.lambda]
    }
}

/// Convenience: the barrier value function sharing b with a band solution,
/// for policy-vs-policy comparisons.
pub fn barrier_value_at_band_root(sol: &BandSolution, params: &ModelParams, yld: &Yield) -> BarrierValue {
    BarrierValue::new(sol.b, *params, yld)
}
