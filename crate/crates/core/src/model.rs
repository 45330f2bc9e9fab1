//! Problem primitives: model parameters, the characteristic exponents and
//! fundamental solution of the killed generator, marginal yield functions,
//! and the differential operators used throughout.
//!
//! The controlled state is a drifted Brownian motion reflected at the origin.
//! Everything in this module is immutable after construction and safe to
//! share across threads.

use thiserror::Error;

/// Tolerance below which a sampled value is treated as exactly zero when
/// counting sign changes (avoids spurious crossings at yield kinks).
pub const SIGN_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sigma must be strictly positive (got {0})")]
    NonPositiveSigma(f64),
    #[error("discount rate r must be strictly positive (got {0})")]
    NonPositiveRate(f64),
    #[error("grid must be strictly increasing")]
    GridNotIncreasing,
    #[error("yield table invalid: {0}")]
    InvalidYield(String),
}

/// Drift, volatility and discount rate, with the characteristic exponents
/// `gamma_plus > 0 > gamma_minus` (roots of (sigma^2/2) g^2 + mu g - r = 0)
/// computed once at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    mu: f64,
    sigma: f64,
    r: f64,
    gamma_plus: f64,
    gamma_minus: f64,
}

impl ModelParams {
    pub fn new(mu: f64, sigma: f64, r: f64) -> Result<Self, ModelError> {
        if !(sigma > 0.0) {
            return Err(ModelError::NonPositiveSigma(sigma));
        }
        if !(r > 0.0) {
            return Err(ModelError::NonPositiveRate(r));
        }
        let s2 = sigma * sigma;
        let disc = (mu * mu + 2.0 * r * s2).sqrt();
        Ok(Self {
            mu,
            sigma,
            r,
            gamma_plus: (-mu + disc) / s2,
            gamma_minus: (-mu - disc) / s2,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// The two real roots (gamma_plus, gamma_minus) of the characteristic
    /// quadratic, with gamma_plus > 0 > gamma_minus.
    pub fn gamma_roots(&self) -> (f64, f64) {
        (self.gamma_plus, self.gamma_minus)
    }

    /// Fundamental solution phi(x) = e^{g+ x}/g+ - e^{g- x}/g- of Lv = 0
    /// normalised so that phi'(0) = 0.
    pub fn phi(&self, x: f64) -> f64 {
        (self.gamma_plus * x).exp() / self.gamma_plus
            - (self.gamma_minus * x).exp() / self.gamma_minus
    }

    /// phi'(x) = e^{g+ x} - e^{g- x}; identically zero at the origin.
    pub fn phi_d1(&self, x: f64) -> f64 {
        (self.gamma_plus * x).exp() - (self.gamma_minus * x).exp()
    }

    /// phi''(x) = g+ e^{g+ x} - g- e^{g- x}.
    pub fn phi_d2(&self, x: f64) -> f64 {
        self.gamma_plus * (self.gamma_plus * x).exp()
            - self.gamma_minus * (self.gamma_minus * x).exp()
    }
}

/// Which one-sided limit to take at a kink of a piecewise function.
///
/// The candidate value functions in this crate are only piecewise smooth;
/// every derivative-valued query carries an explicit side so that callers
/// never receive a silently chosen branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Value and first two one-sided derivatives at a point.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// A scalar function with one-sided first and second derivatives, smooth
/// except at a finite set of declared kink points.
///
/// Implementations must be immutable after construction (`Sync`) so that
/// grid certification and Monte Carlo estimation can share them across
/// worker threads.
pub trait ValueFunction: Sync {
    fn evaluate(&self, x: f64, side: Side) -> Evaluation;

    /// Points where the function may fail to be twice differentiable.
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// The generator-minus-discount operator Lv(x) = -r v + mu v' + (sigma^2/2) v''.
pub fn apply_l(v: &dyn ValueFunction, x: f64, side: Side, params: &ModelParams) -> f64 {
    let e = v.evaluate(x, side);
    -params.r() * e.value + params.mu() * e.first + 0.5 * params.sigma() * params.sigma() * e.second
}

/// The control operator Mv(x) = eta(x) - v'(x).
pub fn apply_m(v: &dyn ValueFunction, x: f64, side: Side, yld: &Yield) -> f64 {
    eta_minus_slope(yld, x, v.evaluate(x, side).first)
}

fn eta_minus_slope(yld: &Yield, x: f64, slope: f64) -> f64 {
    yld.eval(x) - slope
}

/// Marginal yield per unit of control exerted at state x.
///
/// The canonical instance is (1 - 1/x)^+ with support threshold 1; arbitrary
/// increasing-concave yields can be supplied as a table of sample points,
/// interpolated linearly. The assumptions (bounded by \[0,1\], vanishing near
/// the origin, increasing and concave on the support) are validated at
/// construction rather than trusted.
#[derive(Debug, Clone, PartialEq)]
pub enum Yield {
    Canonical,
    Tabulated(TabulatedYield),
}

impl Yield {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Yield::Canonical => {
                if x > 1.0 {
                    1.0 - 1.0 / x
                } else {
                    0.0
                }
            }
            Yield::Tabulated(t) => t.eval(x),
        }
    }

    /// First derivative; zero off the support (the kink at the support
    /// threshold takes its right limit).
    pub fn deriv1(&self, x: f64) -> f64 {
        match self {
            Yield::Canonical => {
                if x > 1.0 {
                    1.0 / (x * x)
                } else {
                    0.0
                }
            }
            Yield::Tabulated(t) => t.deriv1(x),
        }
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        match self {
            Yield::Canonical => {
                if x > 1.0 {
                    -2.0 / (x * x * x)
                } else {
                    0.0
                }
            }
            Yield::Tabulated(t) => t.deriv2(x),
        }
    }

    /// The largest x* with eta = 0 on [0, x*].
    pub fn support_threshold(&self) -> f64 {
        match self {
            Yield::Canonical => 1.0,
            Yield::Tabulated(t) => t.support_threshold,
        }
    }

    /// The lump reward integral \int_lo^hi eta(u) du (closed form for the
    /// canonical yield, exact on the interpolant otherwise). Signed: a
    /// reversed interval gives the negated value, which the band solver
    /// relies on when an iterate wanders below its anchor.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Yield::Canonical => {
                // below the support the integrand vanishes
                let lo = lo.max(1.0);
                let hi = hi.max(1.0);
                (hi - lo) - (hi / lo).ln()
            }
            Yield::Tabulated(t) => {
                if hi >= lo {
                    t.integral(lo, hi)
                } else {
                    -t.integral(hi, lo)
                }
            }
        }
    }

    pub fn is_canonical(&self) -> bool {
        matches!(self, Yield::Canonical)
    }
}

/// Piecewise-linear yield built from (x, eta(x)) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedYield {
    xs: Vec<f64>,
    ys: Vec<f64>,
    support_threshold: f64,
}

impl TabulatedYield {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, ModelError> {
        if points.len() < 2 {
            return Err(ModelError::InvalidYield(
                "need at least two sample points".into(),
            ));
        }
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        if !xs.windows(2).all(|w| w[0] < w[1]) {
            return Err(ModelError::InvalidYield(
                "abscissae must be strictly increasing".into(),
            ));
        }
        if ys.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
            return Err(ModelError::InvalidYield(
                "values must lie in [0, 1]".into(),
            ));
        }
        if ys[0] != 0.0 || xs[0] < 0.0 {
            return Err(ModelError::InvalidYield(
                "yield must vanish at the first sample and x >= 0".into(),
            ));
        }
        // last sample with eta = 0 marks the support threshold
        let k = ys.iter().rposition(|&y| y == 0.0).unwrap();
        let support_threshold = xs[k];
        // increasing and concave on the support, checked on the samples
        let slopes: Vec<f64> = (k..xs.len() - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        if slopes.iter().any(|&s| s < 0.0) {
            return Err(ModelError::InvalidYield(
                "yield must be increasing on its support".into(),
            ));
        }
        if slopes.windows(2).any(|w| w[1] > w[0] + SIGN_EPS) {
            return Err(ModelError::InvalidYield(
                "yield must be concave on its support".into(),
            ));
        }
        Ok(Self {
            xs,
            ys,
            support_threshold,
        })
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.xs.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return *self.ys.last().unwrap();
        }
        let i = self.segment(x);
        let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + w * (self.ys[i + 1] - self.ys[i])
    }

    pub fn deriv1(&self, x: f64) -> f64 {
        if x <= self.xs[0] || x >= *self.xs.last().unwrap() {
            return 0.0;
        }
        let i = self.segment(x);
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    /// Zero within segments; the interpolant carries all curvature at the
    /// sample points.
    pub fn deriv2(&self, _x: f64) -> f64 {
        0.0
    }

    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        // exact trapezoid on the piecewise-linear interpolant
        if hi <= lo {
            return 0.0;
        }
        let mut acc = 0.0;
        let mut a = lo;
        let mut fa = self.eval(lo);
        for &x in &self.xs {
            if x <= a {
                continue;
            }
            if x >= hi {
                break;
            }
            let fx = self.eval(x);
            acc += 0.5 * (fa + fx) * (x - a);
            a = x;
            fa = fx;
        }
        acc += 0.5 * (fa + self.eval(hi)) * (hi - a);
        acc
    }
}

/// Number of sign changes of -r eta + mu eta' + (sigma^2/2) eta'' across a
/// strictly increasing grid. Values within [`SIGN_EPS`] of zero are skipped.
///
/// At most one sign change guarantees an optimal single-barrier policy; the
/// band phenomenon requires this condition to fail.
pub fn structural_sign_changes(
    yld: &Yield,
    params: &ModelParams,
    grid: &[f64],
) -> Result<usize, ModelError> {
    if !grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(ModelError::GridNotIncreasing);
    }
    let half_s2 = 0.5 * params.sigma() * params.sigma();
    let mut changes = 0usize;
    let mut prev: Option<f64> = None;
    for &x in grid {
        let v = -params.r() * yld.eval(x) + params.mu() * yld.deriv1(x) + half_s2 * yld.deriv2(x);
        if v.abs() < SIGN_EPS {
            continue;
        }
        let s = v.signum();
        if let Some(p) = prev {
            if s != p {
                changes += 1;
            }
        }
        prev = Some(s);
    }
    Ok(changes)
}

/// Sufficient condition e^{g- - g+} < -g+/g- for the smooth-fit equation to
/// have at most one root (for the canonical yield).
pub fn liu_uniqueness_bound(params: &ModelParams) -> bool {
    let (gp, gm) = params.gamma_roots();
    (gm - gp).exp() < -gp / gm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference_params() -> ModelParams {
        ModelParams::new(0.508378, 2.0_f64.sqrt(), 0.00520074).unwrap()
    }

    #[test]
    fn gamma_roots_driftless_symmetric() {
        let p = ModelParams::new(0.0, 2.0_f64.sqrt(), 0.04).unwrap();
        let (gp, gm) = p.gamma_roots();
        assert!((gp - 0.2).abs() < 1e-14);
        assert!((gm + 0.2).abs() < 1e-14);
    }

    #[test]
    fn gamma_roots_reference_params_vieta() {
        let p = reference_params();
        let (gp, gm) = p.gamma_roots();
        assert!(gp > 0.0 && gm < 0.0);
        assert!((gp * gm + 0.00520074).abs() < 1e-12);
        assert!((gp + gm + 0.508378).abs() < 1e-12);
    }

    #[test]
    fn gamma_roots_reject_bad_domain() {
        assert!(matches!(
            ModelParams::new(0.1, 0.0, 0.04),
            Err(ModelError::NonPositiveSigma(_))
        ));
        assert!(matches!(
            ModelParams::new(0.1, 1.0, -0.5),
            Err(ModelError::NonPositiveRate(_))
        ));
    }

    #[test]
    fn phi_at_origin() {
        let p = reference_params();
        let (gp, gm) = p.gamma_roots();
        assert_eq!(p.phi_d1(0.0), 0.0);
        assert!((p.phi(0.0) - (1.0 / gp - 1.0 / gm)).abs() < 1e-12);
        assert!(p.phi(0.0) > 0.0);
    }

    struct ScaledPhi {
        params: ModelParams,
        scale: f64,
    }

    impl ValueFunction for ScaledPhi {
        fn evaluate(&self, x: f64, _side: Side) -> Evaluation {
            Evaluation {
                value: self.scale * self.params.phi(x),
                first: self.scale * self.params.phi_d1(x),
                second: self.scale * self.params.phi_d2(x),
            }
        }
    }

    #[test]
    fn l_annihilates_phi_on_grid() {
        let p = reference_params();
        let v = ScaledPhi { params: p, scale: 3.7 };
        for i in 0..=500 {
            let x = 0.1 * i as f64;
            let lv = apply_l(&v, x, Side::Right, &p);
            let scale = p.r() * v.evaluate(x, Side::Right).value.abs();
            assert!(
                lv.abs() <= 1e-10 * scale.max(1.0),
                "Lphi({x}) = {lv}"
            );
        }
    }

    struct Constant(f64);
    impl ValueFunction for Constant {
        fn evaluate(&self, _x: f64, _side: Side) -> Evaluation {
            Evaluation { value: self.0, first: 0.0, second: 0.0 }
        }
    }

    #[test]
    fn l_on_constant() {
        let p = reference_params();
        let lv = apply_l(&Constant(2.5), 3.0, Side::Left, &p);
        assert!((lv + p.r() * 2.5).abs() < 1e-15);
    }

    struct SlopeIsYield;
    impl ValueFunction for SlopeIsYield {
        fn evaluate(&self, x: f64, _side: Side) -> Evaluation {
            let y = Yield::Canonical;
            Evaluation { value: 0.0, first: y.eval(x), second: 0.0 }
        }
    }

    #[test]
    fn m_vanishes_when_slope_equals_yield() {
        for x in [0.0, 0.5, 1.0, 2.0, 7.3] {
            assert_eq!(apply_m(&SlopeIsYield, x, Side::Right, &Yield::Canonical), 0.0);
        }
    }

    #[test]
    fn canonical_yield_shape() {
        let y = Yield::Canonical;
        assert_eq!(y.eval(0.5), 0.0);
        assert_eq!(y.eval(1.0), 0.0);
        assert!((y.eval(2.0) - 0.5).abs() < 1e-15);
        assert!((y.deriv1(2.0) - 0.25).abs() < 1e-15);
        assert!((y.deriv2(2.0) + 0.25).abs() < 1e-15);
        // increasing, concave, bounded on (1, inf)
        let mut prev = 0.0;
        let mut prev_slope = f64::INFINITY;
        for i in 1..2000 {
            let x = 1.0 + 0.01 * i as f64;
            let v = y.eval(x);
            assert!(v > prev && v < 1.0);
            let s = y.deriv1(x);
            assert!(s < prev_slope);
            prev = v;
            prev_slope = s;
        }
    }

    #[test]
    fn canonical_integral_matches_closed_form() {
        let y = Yield::Canonical;
        let (lo, hi) = (1.5, 4.0);
        assert!((y.integral(lo, hi) - ((hi - lo) - (hi / lo).ln())).abs() < 1e-15);
        // below the support the integral vanishes
        assert_eq!(y.integral(0.2, 0.9), 0.0);
    }

    #[test]
    fn tabulated_yield_validates_assumptions() {
        // decreasing on support rejected
        assert!(TabulatedYield::new(&[(0.0, 0.0), (1.0, 0.5), (2.0, 0.3)]).is_err());
        // convex on support rejected
        assert!(TabulatedYield::new(&[(0.0, 0.0), (1.0, 0.1), (2.0, 0.5)]).is_err());
        // out of range rejected
        assert!(TabulatedYield::new(&[(0.0, 0.0), (1.0, 1.5)]).is_err());
        // a sampled (1 - 1/x)^+ is accepted and interpolates
        let pts: Vec<(f64, f64)> = (0..=400)
            .map(|i| {
                let x = 0.05 * i as f64;
                (x, if x > 1.0 { 1.0 - 1.0 / x } else { 0.0 })
            })
            .collect();
        let t = TabulatedYield::new(&pts).unwrap();
        assert_eq!(t.support_threshold, 1.0);
        assert!((t.eval(5.025) - 0.8) < 1e-3);
    }

    #[test]
    fn tabulated_integral_is_exact_on_interpolant() {
        let t = TabulatedYield::new(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.5), (4.0, 0.9)]).unwrap();
        // 0.5*(0+0.5)*1 + trapezoid on [2,3]: 0.5*(0.5+0.7)*1
        let got = t.integral(1.0, 3.0);
        assert!((got - (0.25 + 0.6)).abs() < 1e-12, "{got}");
    }

    #[test]
    fn structural_condition_reference_params_two_changes() {
        let p = reference_params();
        let grid: Vec<f64> = (1..=19000).map(|i| 1.0 + 1e-3 * i as f64).collect();
        let n = structural_sign_changes(&Yield::Canonical, &p, &grid).unwrap();
        assert_eq!(n, 2);
    }

    #[test]
    fn structural_condition_driftless_no_changes() {
        let p = ModelParams::new(0.0, 2.0_f64.sqrt(), 0.5).unwrap();
        let grid: Vec<f64> = (1..=19000).map(|i| 1.0 + 1e-3 * i as f64).collect();
        let n = structural_sign_changes(&Yield::Canonical, &p, &grid).unwrap();
        assert_eq!(n, 0);
    }

    #[test]
    fn structural_rejects_unsorted_grid() {
        let p = reference_params();
        assert!(matches!(
            structural_sign_changes(&Yield::Canonical, &p, &[1.0, 0.5]),
            Err(ModelError::GridNotIncreasing)
        ));
    }

    #[test]
    fn liu_bound_reference_params_false() {
        assert!(!liu_uniqueness_bound(&reference_params()));
    }

    #[test]
    fn liu_bound_driftless_true() {
        // mu = 0 gives g- = -g+, so the condition reads e^{-2 g+} < 1
        let p = ModelParams::new(0.0, 2.0_f64.sqrt(), 0.04).unwrap();
        assert!(liu_uniqueness_bound(&p));
    }

    proptest! {
        #[test]
        fn vieta_identities_hold(mu in -3.0..3.0f64, sigma in 0.1..4.0f64, r in 1e-4..2.0f64) {
            let p = ModelParams::new(mu, sigma, r).unwrap();
            let (gp, gm) = p.gamma_roots();
            let s2 = sigma * sigma;
            prop_assert!(gp > 0.0 && gm < 0.0);
            prop_assert!((gp * gm + 2.0 * r / s2).abs() <= 1e-12 * (2.0 * r / s2).abs());
            prop_assert!((gp + gm + 2.0 * mu / s2).abs() <= 1e-12 * (1.0 + (2.0 * mu / s2).abs()));
            // defining quadratic, relative to its largest term
            for g in [gp, gm] {
                let q = 0.5 * s2 * g * g + mu * g - r;
                let scale = (0.5 * s2 * g * g).abs().max((mu * g).abs()).max(r);
                prop_assert!(q.abs() <= 1e-12 * scale);
            }
        }
    }
}
