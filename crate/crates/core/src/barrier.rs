//! Single-barrier policies: closed-form value, smooth-fit root location and
//! classification, and the no-reflection comparison case.

use crate::model::{Evaluation, ModelParams, Side, ValueFunction, Yield};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("scan range empty or malformed: lo={lo}, hi={hi}, step={step}")]
    BadScanRange { lo: f64, hi: f64, step: f64 },
    #[error("scan must start above the yield support threshold {support}")]
    ScanBelowSupport { support: f64 },
    #[error("no smooth-fit root found in [{lo}, {hi}]")]
    NoRoots { lo: f64, hi: f64 },
    #[error("no-reflection threshold not bracketed in ({lo}, {hi}); widen the range")]
    NotBracketed { lo: f64, hi: f64 },
}

/// Nature of a critical point of b -> V_{xi(b)}(x).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    LocalMax,
    LocalMin,
    Saddle,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Classification::LocalMax => write!(f, "local_max"),
            Classification::LocalMin => write!(f, "local_min"),
            Classification::Saddle => write!(f, "saddle"),
        }
    }
}

/// A refined smooth-fit root with the coefficients of the associated
/// barrier value function.
#[derive(Debug, Clone, Copy)]
pub struct BarrierSolution {
    pub b: f64,
    /// Coefficient of phi on the inaction branch: A = eta(b)/phi'(b).
    pub coef_a: f64,
    /// Constant on the action branch: B = A phi(b).
    pub coef_b: f64,
    /// Smooth-fit residual at the refined root.
    pub residual: f64,
    pub classification: Classification,
}

/// The value function of the barrier policy with threshold b, as a
/// piecewise object with a single kink at b.
///
/// Thresholds at or below the yield support threshold earn nothing; they are
/// returned as a flagged degenerate with value identically zero so that
/// parameter sweeps do not abort.
#[derive(Debug, Clone)]
pub struct BarrierValue {
    pub b: f64,
    pub coef_a: f64,
    pub coef_b: f64,
    pub degenerate: bool,
    params: ModelParams,
    yld: Yield,
}

impl BarrierValue {
    pub fn new(b: f64, params: ModelParams, yld: &Yield) -> Self {
        if b <= yld.support_threshold() {
            return Self {
                b,
                coef_a: 0.0,
                coef_b: 0.0,
                degenerate: true,
                params,
                yld: yld.clone(),
            };
        }
        let coef_a = yld.eval(b) / params.phi_d1(b);
        Self {
            b,
            coef_a,
            coef_b: coef_a * params.phi(b),
            degenerate: false,
            params,
            yld: yld.clone(),
        }
    }
}

impl ValueFunction for BarrierValue {
    fn evaluate(&self, x: f64, side: Side) -> Evaluation {
        if self.degenerate {
            return Evaluation { value: 0.0, first: 0.0, second: 0.0 };
        }
        let inaction = x < self.b || (x == self.b && side == Side::Left);
        if inaction {
            Evaluation {
                value: self.coef_a * self.params.phi(x),
                first: self.coef_a * self.params.phi_d1(x),
                second: self.coef_a * self.params.phi_d2(x),
            }
        } else {
            Evaluation {
                value: self.coef_b + self.yld.integral(self.b, x),
                first: self.yld.eval(x),
                second: self.yld.deriv1(x),
            }
        }
    }

    fn kinks(&self) -> Vec<f64> {
        if self.degenerate {
            Vec::new()
        } else {
            vec![self.b]
        }
    }
}

/// V_{xi(b)}(x), the expected discounted yield of the barrier policy at b.
pub fn barrier_value(b: f64, x: f64, params: &ModelParams, yld: &Yield) -> f64 {
    BarrierValue::new(b, *params, yld).evaluate(x, Side::Right).value
}

/// Residual eta(b) phi''(b)/phi'(b) - eta'(b) whose zeros are exactly the
/// critical points of b -> V_{xi(b)}(x), equivalently the thresholds at
/// which the barrier value is C^2.
pub fn smooth_fit_residual(b: f64, params: &ModelParams, yld: &Yield) -> f64 {
    yld.eval(b) * params.phi_d2(b) / params.phi_d1(b) - yld.deriv1(b)
}

/// Scan window for root bracketing. The default (support + 1e-6, 50] with
/// step 1e-3 is a documented heuristic: a step too coarse to bracket a pair
/// of nearby roots is not detected.
#[derive(Debug, Clone, Copy)]
pub struct ScanRange {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl ScanRange {
    pub fn default_for(yld: &Yield) -> Self {
        Self {
            lo: yld.support_threshold() + 1e-6,
            hi: 50.0,
            step: 1e-3,
        }
    }
}

const BISECT_WIDTH: f64 = 1e-10;

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    while hi - lo > BISECT_WIDTH {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (flo < 0.0) == (fm < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Bracket every sign change of the smooth-fit residual in the scan window
/// and refine each by bisection to interval width 1e-10. Roots are
/// classified from the residual's bracketing signs: the derivative
/// expression eta' phi' - eta phi'' is -phi' times the residual, so a
/// (-,+) bracket is a local maximum of b -> V_{xi(b)} and (+,-) a local
/// minimum.
pub fn find_barrier_roots(
    params: &ModelParams,
    yld: &Yield,
    scan: ScanRange,
) -> Result<Vec<BarrierSolution>, BarrierError> {
    if !(scan.step > 0.0) || !(scan.hi > scan.lo) {
        return Err(BarrierError::BadScanRange { lo: scan.lo, hi: scan.hi, step: scan.step });
    }
    if scan.lo <= yld.support_threshold() {
        return Err(BarrierError::ScanBelowSupport { support: yld.support_threshold() });
    }
    let f = |b: f64| smooth_fit_residual(b, params, yld);
    let mut roots = Vec::new();
    let n = ((scan.hi - scan.lo) / scan.step).ceil() as usize;
    let mut prev_x = scan.lo;
    let mut prev_f = f(prev_x);
    for i in 1..=n {
        let x = (scan.lo + i as f64 * scan.step).min(scan.hi);
        let fx = f(x);
        if prev_f == 0.0 {
            // grid point landed exactly on a root; classify from neighbours
            let cls = if fx < 0.0 {
                Classification::LocalMin
            } else if fx > 0.0 {
                Classification::LocalMax
            } else {
                Classification::Saddle
            };
            roots.push(make_solution(prev_x, cls, params, yld));
        } else if prev_f * fx < 0.0 {
            let b = bisect(f, prev_x, x);
            let cls = if prev_f < 0.0 {
                Classification::LocalMax
            } else {
                Classification::LocalMin
            };
            roots.push(make_solution(b, cls, params, yld));
        }
        prev_x = x;
        prev_f = fx;
    }
    Ok(roots)
}

fn make_solution(
    b: f64,
    classification: Classification,
    params: &ModelParams,
    yld: &Yield,
) -> BarrierSolution {
    let coef_a = yld.eval(b) / params.phi_d1(b);
    BarrierSolution {
        b,
        coef_a,
        coef_b: coef_a * params.phi(b),
        residual: smooth_fit_residual(b, params, yld),
        classification,
    }
}

/// The root whose barrier value at x_eval is largest. The winner does not
/// depend on x_eval > 0 because the sign of dV/db does not.
pub fn best_barrier(
    roots: &[BarrierSolution],
    x_eval: f64,
    params: &ModelParams,
    yld: &Yield,
) -> Result<BarrierSolution, BarrierError> {
    roots
        .iter()
        .copied()
        .max_by(|a, b| {
            let va = barrier_value(a.b, x_eval, params, yld);
            let vb = barrier_value(b.b, x_eval, params, yld);
            va.partial_cmp(&vb).unwrap()
        })
        .ok_or(BarrierError::NoRoots { lo: f64::NAN, hi: f64::NAN })
}

/// Barrier value for the uncontrolled-boundary (no reflection at 0) problem,
/// defined on the whole real line.
pub fn no_reflection_value(b: f64, x: f64, params: &ModelParams, yld: &Yield) -> f64 {
    NoReflectionValue::new(b, *params, yld).evaluate(x, Side::Right).value
}

/// Piecewise value of the no-reflection barrier policy; kink at b.
#[derive(Debug, Clone)]
pub struct NoReflectionValue {
    pub b: f64,
    params: ModelParams,
    yld: Yield,
}

impl NoReflectionValue {
    pub fn new(b: f64, params: ModelParams, yld: &Yield) -> Self {
        Self { b, params, yld: yld.clone() }
    }
}

impl ValueFunction for NoReflectionValue {
    fn evaluate(&self, x: f64, side: Side) -> Evaluation {
        let (gp, _) = self.params.gamma_roots();
        let eta_b = self.yld.eval(self.b);
        if x < self.b || (x == self.b && side == Side::Left) {
            let e = (gp * (x - self.b)).exp();
            Evaluation {
                value: eta_b / gp * e,
                first: eta_b * e,
                second: eta_b * gp * e,
            }
        } else {
            Evaluation {
                value: eta_b / gp + self.yld.integral(self.b, x),
                first: self.yld.eval(x),
                second: self.yld.deriv1(x),
            }
        }
    }

    fn kinks(&self) -> Vec<f64> {
        vec![self.b]
    }
}

/// Unique root of g+ eta(b) = eta'(b) on (support, hi), located by
/// bisection. The left-hand side minus the right is strictly increasing for
/// an increasing concave yield, so at most one bracket exists.
pub fn no_reflection_threshold(
    params: &ModelParams,
    yld: &Yield,
    hi: f64,
) -> Result<f64, BarrierError> {
    let (gp, _) = params.gamma_roots();
    let f = |b: f64| gp * yld.eval(b) - yld.deriv1(b);
    let lo = yld.support_threshold() + 1e-9;
    if !(f(lo) < 0.0 && f(hi) > 0.0) {
        return Err(BarrierError::NotBracketed { lo, hi });
    }
    Ok(bisect(f, lo, hi))
}
