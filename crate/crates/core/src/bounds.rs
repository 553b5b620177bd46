//! Interval partitions for superadditive controls and the two-sided bound
//! factors for perturbed kernels.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::conditions::{ControlPair, QForm};
use crate::error::{Error, Result};
use crate::perturbation::SeriesResult;

/// Slack on the certified jump bound.
const JUMP_SLACK: f64 = 1e-12;

/// A nondecreasing function with one-sided limits.
pub trait Monotone {
    /// `F(u-)`.
    fn left(&self, u: f64) -> f64;
    /// `F(u+)`.
    fn right(&self, u: f64) -> f64;
    /// Right-continuous value `F(u)`.
    fn value(&self, u: f64) -> f64 {
        self.right(u)
    }
    /// `sup { u in (s, t) : F(u) <= level }`, or `t` when the set reaches `t`.
    fn sup_below(&self, level: f64, s: f64, t: f64) -> f64;
}

/// Piecewise-linear nondecreasing function with jumps at the knots.
///
/// Each knot stores `(u_k, F(u_k-), F(u_k+))`; `F` is linear between
/// `F(u_k+)` and `F(u_(k+1)-)` and constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedF {
    knots: Vec<(f64, f64, f64)>,
}

impl TabulatedF {
    pub fn new(knots: Vec<(f64, f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidParams("tabulated F needs at least one knot".into()));
        }
        for (k, &(u, l, r)) in knots.iter().enumerate() {
            if !(u.is_finite() && l.is_finite() && r.is_finite()) || l > r {
                return Err(Error::InvalidParams(format!("knot {k} is not nondecreasing")));
            }
            if k > 0 {
                let (u0, _, r0) = knots[k - 1];
                if !(u > u0) || r0 > l {
                    return Err(Error::InvalidParams(format!("knots {} and {k} are not nondecreasing", k - 1)));
                }
            }
        }
        Ok(Self { knots })
    }

    /// Continuous function through `(u_k, F_k)`.
    pub fn continuous(points: &[(f64, f64)]) -> Result<Self> {
        Self::new(points.iter().map(|&(u, f)| (u, f, f)).collect())
    }

    pub fn knots(&self) -> &[(f64, f64, f64)] {
        &self.knots
    }

    /// Index of the last knot strictly left of `u`.
    fn before(&self, u: f64) -> Option<usize> {
        self.knots.partition_point(|k| k.0 < u).checked_sub(1)
    }

    fn between(&self, k: usize, u: f64) -> f64 {
        let (u0, _, r0) = self.knots[k];
        match self.knots.get(k + 1) {
            Some(&(u1, l1, _)) => r0 + (l1 - r0) * (u - u0) / (u1 - u0),
            None => r0,
        }
    }
}

impl Monotone for TabulatedF {
    fn left(&self, u: f64) -> f64 {
        match self.before(u) {
            None => self.knots[0].1,
            Some(k) => self.between(k, u),
        }
    }

    fn right(&self, u: f64) -> f64 {
        let at = self.knots.partition_point(|k| k.0 <= u);
        match at.checked_sub(1) {
            None => self.knots[0].1,
            Some(k) if self.knots[k].0 == u => self.knots[k].2,
            Some(k) => self.between(k, u),
        }
    }

    fn sup_below(&self, level: f64, s: f64, t: f64) -> f64 {
        // last knot whose right value stays within the level
        let k = self.knots.partition_point(|kn| kn.2 <= level);
        let sup = match k.checked_sub(1) {
            None => self.knots[0].0,
            Some(k) => match self.knots.get(k + 1) {
                None => f64::INFINITY,
                Some(&(u1, l1, _)) if l1 <= level => u1,
                Some(&(u1, l1, _)) => {
                    let (u0, _, r0) = self.knots[k];
                    u0 + (level - r0) / (l1 - r0) * (u1 - u0)
                }
            },
        };
        sup.clamp(s, t)
    }
}

/// `F(u) = Q(s0, u)` for `u > s0` and zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlF {
    Linear { rate: f64, origin: f64 },
    Table { table: TabulatedF, origin: f64, offset: f64 },
}

impl Monotone for ControlF {
    fn left(&self, u: f64) -> f64 {
        match self {
            ControlF::Linear { rate, origin } => rate * (u - origin).max(0.0),
            ControlF::Table { table, origin, offset } => {
                if u <= *origin {
                    0.0
                } else {
                    table.left(u) - offset
                }
            }
        }
    }

    fn right(&self, u: f64) -> f64 {
        match self {
            ControlF::Linear { rate, origin } => rate * (u - origin).max(0.0),
            ControlF::Table { table, origin, offset } => {
                if u < *origin {
                    0.0
                } else {
                    table.right(u) - offset
                }
            }
        }
    }

    fn sup_below(&self, level: f64, s: f64, t: f64) -> f64 {
        match self {
            ControlF::Linear { rate, origin } => {
                if level < 0.0 {
                    s
                } else if *rate > 0.0 {
                    (origin + level / rate).clamp(s, t)
                } else {
                    t
                }
            }
            ControlF::Table { table, origin, offset } => {
                if level < 0.0 {
                    s
                } else {
                    table.sup_below(level + offset, s.max(*origin), t).max(s)
                }
            }
        }
    }
}

/// The reduction `F(u) = Q(s0, u)` of a superadditive control.
pub fn control_to_f(control: &ControlPair, s0: f64) -> ControlF {
    match &control.q {
        QForm::Rate { rate } => ControlF::Linear { rate: *rate, origin: s0 },
        QForm::TabulatedF(table) => ControlF::Table { table: table.clone(), origin: s0, offset: table.right(s0) },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    /// `s = t_0 < t_1 < ... < t_m = t`.
    pub points: Vec<f64>,
    pub m: usize,
    /// A-priori bound on `m`.
    pub k: usize,
    /// Certified bound on `F(t_(i+1)-) - F(t_i+)`.
    pub theta: f64,
    /// `max_i F(t_(i+1)-) - F(t_i+)`.
    pub max_jump: f64,
}

/// Greedy partition of `(s, t)` into parts of variation at most `theta`,
/// `r_i = sup { u : F(u) - F(s+) <= i theta }`.
pub fn greedy_partition<F: Monotone + ?Sized>(f: &F, s: f64, t: f64, theta: f64) -> Result<PartitionResult> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParams("theta must be positive".into()));
    }
    if !(s < t) {
        return Err(Error::InvalidParams(format!("empty interval ({s}, {t})")));
    }
    let base = f.right(s);
    let variation = f.left(t) - base;
    if !variation.is_finite() {
        return Err(Error::InvalidParams("F(t-) - F(s+) must be finite".into()));
    }
    let k = ((variation / theta - 1e-12).ceil().max(1.0)) as usize;
    let mut points = vec![s];
    for i in 1..k {
        let r = f.sup_below(base + i as f64 * theta, s, t);
        if r > *points.last().expect("starts with s") && r < t {
            points.push(r);
        }
    }
    points.push(t);
    let mut max_jump: f64 = 0.0;
    for w in points.windows(2) {
        let jump = f.left(w[1]) - f.right(w[0]);
        max_jump = max_jump.max(jump);
        if jump > theta * (1.0 + JUMP_SLACK) + JUMP_SLACK {
            return Err(Error::JumpTooLarge { left: w[0], right: w[1], jump, theta });
        }
    }
    Ok(PartitionResult { m: points.len() - 1, points, k, theta, max_jump })
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::EtaOutOfRange(eta));
    }
    Ok(())
}

/// `(1/(1-2 eta))^(1 + q/eta)` for `eta > 0` and `e^q` for `eta = 0`.
pub fn upper_bound_factor(eta: f64, q: f64) -> Result<f64> {
    check_eta(eta)?;
    if eta == 0.0 {
        return Ok(q.exp());
    }
    Ok((-(1.0 - 2.0 * eta).ln() * (1.0 + q / eta)).exp())
}

/// Iterations of the golden-section search over `delta`.
const GOLDEN_ITERATIONS: usize = 60;

/// `max_delta (4 delta/(1 + 2 delta))^(1 + q/(1/2 - eta - delta))`.
pub fn lower_bound_factor(eta: f64, q: f64) -> Result<f64> {
    check_eta(eta)?;
    let ln_factor = |d: f64| (4.0 * d / (1.0 + 2.0 * d)).ln() * (1.0 + q / (0.5 - eta - d));
    let (mut lo, mut hi) = (1e-6, 0.5 - eta - 1e-6);
    if lo >= hi {
        return Ok(ln_factor(0.5 * (0.5 - eta)).exp());
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    let (mut fc, mut fd) = (ln_factor(c), ln_factor(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = ln_factor(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = ln_factor(d);
        }
    }
    Ok(fc.max(fd).exp())
}

fn class_p_factors(eta: f64, q: f64) -> Result<(f64, f64)> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::EtaOutOfRange(eta));
    }
    let exponent = 1.0 + q / eta;
    let lower = (((1.0 - 2.0 * eta) / (1.0 - eta)).ln() * exponent).exp();
    let upper = (-(1.0 - eta).ln() * exponent).exp();
    Ok((lower, upper))
}

/// `((1-2 eta)/(1-eta))^(1 + r T/eta)` and `(1/(1-eta))^(1 + r T/eta)`.
pub fn class_p_bounds(eta: f64, rate: f64, elapsed: f64) -> Result<(f64, f64)> {
    if !(rate >= 0.0 && elapsed > 0.0) {
        return Err(Error::InvalidParams("rate must be nonnegative and elapsed time positive".into()));
    }
    class_p_factors(eta, rate * elapsed)
}

/// `C(n + k - 1, k - 1) theta^n`.
pub fn binomial_term_bound(n: usize, k: usize, theta: f64) -> f64 {
    assert!(k >= 1, "at least one part");
    if n == 0 {
        return 1.0;
    }
    if theta == 0.0 {
        return 0.0;
    }
    (ln_binomial((n + k - 1) as u64, (k - 1) as u64) + n as f64 * theta.ln()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMode {
    /// Factors for a control pair `(eta, Q)`.
    NClass,
    /// Factors for a short-window constant `eta` with `Q = (eta/h)(t - s)`.
    PClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMargin {
    pub s: f64,
    pub x: f64,
    pub t: f64,
    pub y: f64,
    /// `p~ / p`.
    pub ratio: f64,
    /// Distance to the relaxed lower factor (negative when violated).
    pub margin_lower: f64,
    /// Distance to the relaxed upper factor (negative when violated).
    pub margin_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundVerdict {
    pub mode: BoundMode,
    pub eta: f64,
    pub q_value: f64,
    pub lower: f64,
    pub upper: f64,
    pub tol: f64,
    pub samples: Vec<SampleMargin>,
    pub passed: bool,
}

impl BoundVerdict {
    /// Sample with the smallest margin.
    pub fn worst(&self) -> Option<(usize, &SampleMargin)> {
        self.samples
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.margin_lower.min(a.1.margin_upper).total_cmp(&b.1.margin_lower.min(b.1.margin_upper)))
    }
}

/// Margins of `lower p <= p~ <= upper p`, relaxed by `1 -/+ 5 tol`.
pub fn bound_margins(samples: &[SeriesResult], eta: f64, q_value: f64, mode: BoundMode, tol: f64) -> Result<BoundVerdict> {
    let (lower, upper) = match mode {
        BoundMode::NClass => (lower_bound_factor(eta, q_value)?, upper_bound_factor(eta, q_value)?),
        BoundMode::PClass => class_p_factors(eta, q_value)?,
    };
    let lo = lower * (1.0 - 5.0 * tol);
    let hi = upper * (1.0 + 5.0 * tol);
    let mut margins = Vec::with_capacity(samples.len());
    for r in samples {
        if !r.converged {
            return Err(Error::InvalidParams(format!("series at ({}, {}) has not converged", r.x, r.y)));
        }
        let ratio = r.sum() / r.base;
        margins.push(SampleMargin {
            s: r.s,
            x: r.x,
            t: r.t,
            y: r.y,
            ratio,
            margin_lower: ratio - lo,
            margin_upper: hi - ratio,
        });
    }
    let passed = margins.iter().all(|m| m.margin_lower >= 0.0 && m.margin_upper >= 0.0);
    Ok(BoundVerdict { mode, eta, q_value, lower, upper, tol, samples: margins, passed })
}

/// Like [`bound_margins`] but fails with the worst offending sample.
pub fn verify_bounds(samples: &[SeriesResult], eta: f64, q_value: f64, mode: BoundMode, tol: f64) -> Result<BoundVerdict> {
    let verdict = bound_margins(samples, eta, q_value, mode, tol)?;
    if !verdict.passed {
        let (index, worst) = verdict.worst().expect("a failing verdict has samples");
        return Err(Error::BoundViolation { index, ratio: worst.ratio, lower: verdict.lower, upper: verdict.upper });
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_partition() {
        let f = ControlF::Linear { rate: 1.0, origin: 0.0 };
        let p = greedy_partition(&f, 0.0, 1.0, 0.4).unwrap();
        assert_eq!(p.points, vec![0.0, 0.4, 0.8, 1.0]);
        assert_eq!((p.m, p.k), (3, 3));
    }

    #[test]
    fn step_partition() {
        let f = TabulatedF::new(vec![(0.5, 0.0, 0.5)]).unwrap();
        let p = greedy_partition(&f, 0.0, 1.0, 0.6).unwrap();
        assert_eq!(p.points, vec![0.0, 1.0]);
        assert_eq!(p.m, 1);
        assert_eq!(f.left(0.5), 0.0);
        assert_eq!(f.value(0.5), 0.5);
    }

    #[test]
    fn flat_partition() {
        let f = TabulatedF::continuous(&[(0.0, 2.0), (5.0, 2.0)]).unwrap();
        let p = greedy_partition(&f, 1.0, 3.0, 0.1).unwrap();
        assert_eq!(p.points, vec![1.0, 3.0]);
        assert_eq!((p.m, p.k), (1, 1));
    }

    #[test]
    fn factor_values() {
        assert!((upper_bound_factor(0.25, 0.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(upper_bound_factor(0.0, 1.0).unwrap(), 1f64.exp());
        assert_eq!(upper_bound_factor(0.0, 0.0).unwrap(), 1.0);
        assert!(upper_bound_factor(0.5, 0.0).is_err());
        let (lo, hi) = class_p_bounds(0.25, 0.0, 1.0).unwrap();
        assert!((hi - 4.0 / 3.0).abs() < 1e-15 && (lo - 2.0 / 3.0).abs() < 1e-15);
        assert!((binomial_term_bound(5, 1, 0.3) / 0.3f64.powi(5) - 1.0).abs() < 1e-12);
        assert!((binomial_term_bound(2, 3, 0.5) - 1.5).abs() < 1e-12);
        assert_eq!(binomial_term_bound(0, 4, 0.3), 1.0);
    }
}
