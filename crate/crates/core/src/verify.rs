//! Grid certification of the variational inequalities Lv <= 0, Mv <= 0,
//! plus smoothness audits and pointwise policy-vs-policy comparison.
//!
//! A candidate that passes the check dominates the true value function, so
//! a passing report certifies optimality of the policy attaining it.

use crate::model::{apply_l, apply_m, ModelParams, Side, ValueFunction, Yield};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("grid [{lo}, {hi}] does not cover kink at {kink}")]
    KinkOutsideGrid { lo: f64, hi: f64, kink: f64 },
    #[error("grid empty or malformed: lo={lo}, hi={hi}, step={step}")]
    BadGrid { lo: f64, hi: f64, step: f64 },
}

/// Uniform evaluation grid [lo, hi] with the given step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        let mut pts: Vec<f64> = (0..=n).map(|i| self.lo + i as f64 * self.step).collect();
        if let Some(last) = pts.last_mut() {
            *last = self.hi;
        }
        pts
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: 0.0, hi: 20.0, step: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Max positive excursion of Lv and Mv tolerated by a passing report.
    pub tol: f64,
    /// Refine the grid to `refine_step` within `refine_radius` of each kink.
    pub refine_radius: f64,
    pub refine_step: f64,
    /// Audit v'(0) = 0; disable for value functions on the whole real line
    /// (the no-reflection case has no boundary at the origin).
    pub check_origin_slope: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { tol: 1e-8, refine_radius: 0.01, refine_step: 1e-6, check_origin_slope: true }
    }
}

/// Outcome of the grid certification.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub grid_spec: GridSpec,
    pub max_lv_violation: f64,
    pub max_mv_violation: f64,
    /// Grid location of the worst Lv / Mv excursions.
    pub lv_argmax: f64,
    pub mv_argmax: f64,
    /// Points where both one-sided evaluations were required.
    pub kink_points: Vec<f64>,
    /// True iff both maxima are within tolerance.
    pub passed: bool,
    /// |v'(0+)| <= 1e-10, when the audit is enabled.
    pub origin_slope_ok: bool,
    /// v grows at most linearly on the grid tail (slope bound 1 from the
    /// yield bound eta <= 1).
    pub linear_tail_ok: bool,
}

/// One evaluated grid point, for CSV emission and violation localisation.
#[derive(Debug, Clone, Copy)]
pub struct OperatorSample {
    pub x: f64,
    pub side: Side,
    pub lv: f64,
    pub mv: f64,
}

fn eval_points(v: &dyn ValueFunction, grid: &GridSpec, opts: &VerifyOptions) -> Vec<(f64, Side)> {
    let kinks = v.kinks();
    let mut pts: Vec<(f64, Side)> =
        grid.points().into_iter().map(|x| (x, Side::Right)).collect();
    for &k in &kinks {
        pts.push((k, Side::Left));
        pts.push((k, Side::Right));
        // refinement band around the kink
        let n = (opts.refine_radius / opts.refine_step).round() as i64;
        for i in -n..=n {
            let x = k + i as f64 * opts.refine_step;
            if x > grid.lo && x < grid.hi && i != 0 {
                pts.push((x, Side::Right));
            }
        }
    }
    pts
}

/// Evaluate Lv and Mv at every grid point (both sides at declared kinks,
/// with near-kink refinement) and report the maximum positive excursions.
pub fn verify_hjb(
    v: &dyn ValueFunction,
    params: &ModelParams,
    yld: &Yield,
    grid: GridSpec,
    opts: VerifyOptions,
) -> Result<VerificationReport, VerifyError> {
    if !(grid.step > 0.0) || !(grid.hi > grid.lo) {
        return Err(VerifyError::BadGrid { lo: grid.lo, hi: grid.hi, step: grid.step });
    }
    let kinks = v.kinks();
    for &k in &kinks {
        if k < grid.lo || k > grid.hi {
            return Err(VerifyError::KinkOutsideGrid { lo: grid.lo, hi: grid.hi, kink: k });
        }
    }
    let pts = eval_points(v, &grid, &opts);
    struct Acc {
        lv: f64,
        lv_at: f64,
        mv: f64,
        mv_at: f64,
    }
    let id = || Acc { lv: f64::NEG_INFINITY, lv_at: f64::NAN, mv: f64::NEG_INFINITY, mv_at: f64::NAN };
    let merge = |mut a: Acc, b: Acc| {
        if b.lv > a.lv {
            a.lv = b.lv;
            a.lv_at = b.lv_at;
        }
        if b.mv > a.mv {
            a.mv = b.mv;
            a.mv_at = b.mv_at;
        }
        a
    };
    let worst = pts
        .par_iter()
        .map(|&(x, side)| Acc {
            lv: apply_l(v, x, side, params),
            lv_at: x,
            mv: apply_m(v, x, side, yld),
            mv_at: x,
        })
        .reduce(id, merge);
    let max_lv_violation = worst.lv.max(0.0);
    let max_mv_violation = worst.mv.max(0.0);

    let origin_slope_ok = if opts.check_origin_slope && grid.lo <= 0.0 {
        v.evaluate(0.0, Side::Right).first.abs() <= 1e-10
    } else {
        true
    };
    // tail audit: beyond the last kink, v(x) - v(anchor) <= x - anchor
    // (sufficient linear growth bound since v' = eta <= 1 there)
    let anchor = kinks.iter().copied().fold(grid.lo, f64::max);
    let va = v.evaluate(anchor, Side::Right).value;
    let linear_tail_ok = grid
        .points()
        .iter()
        .filter(|&&x| x > anchor)
        .all(|&x| v.evaluate(x, Side::Right).value - va <= (x - anchor) + 1e-8 * va.abs().max(1.0));

    Ok(VerificationReport {
        grid_spec: grid,
        max_lv_violation,
        max_mv_violation,
        lv_argmax: worst.lv_at,
        mv_argmax: worst.mv_at,
        kink_points: kinks,
        passed: max_lv_violation <= opts.tol && max_mv_violation <= opts.tol,
        origin_slope_ok,
        linear_tail_ok,
    })
}

/// Raw operator samples over the same evaluation points used by
/// [`verify_hjb`], for CSV emission and violation localisation.
pub fn operator_samples(
    v: &dyn ValueFunction,
    params: &ModelParams,
    yld: &Yield,
    grid: GridSpec,
    opts: VerifyOptions,
) -> Vec<OperatorSample> {
    let mut pts = eval_points(v, &grid, &opts);
    pts.sort_by(|a, b| {
        a.0.partial_cmp(&b.0).unwrap().then_with(|| {
            let rank = |s: Side| matches!(s, Side::Right) as u8;
            rank(a.1).cmp(&rank(b.1))
        })
    });
    pts.dedup();
    pts.into_iter()
        .map(|(x, side)| OperatorSample {
            x,
            side,
            lv: apply_l(v, x, side, params),
            mv: apply_m(v, x, side, yld),
        })
        .collect()
}

/// Pointwise gap statistics of v1 - v2 over a grid.
#[derive(Debug, Clone, Copy)]
pub struct PolicyGap {
    pub max_abs_gap: f64,
    /// Most negative pointwise gap (zero if v1 >= v2 everywhere).
    pub min_gap: f64,
    /// Maximum of (v1 - v2)/|v2| over points with v2 bounded away from 0.
    pub max_rel_gap: f64,
    /// Location of the maximum relative gap.
    pub argmax: f64,
}

pub fn compare_policies(
    v1: &dyn ValueFunction,
    v2: &dyn ValueFunction,
    grid: GridSpec,
) -> PolicyGap {
    let mut max_abs: f64 = 0.0;
    let mut min_gap: f64 = 0.0;
    let mut max_rel = f64::NEG_INFINITY;
    let mut argmax = f64::NAN;
    for x in grid.points() {
        let a = v1.evaluate(x, Side::Right).value;
        let b = v2.evaluate(x, Side::Right).value;
        let gap = a - b;
        max_abs = max_abs.max(gap.abs());
        min_gap = min_gap.min(gap);
        if b.abs() > 1e-12 {
            let rel = gap / b.abs();
            if rel > max_rel {
                max_rel = rel;
                argmax = x;
            }
        }
    }
    PolicyGap { max_abs_gap: max_abs, min_gap, max_rel_gap: max_rel, argmax }
}
