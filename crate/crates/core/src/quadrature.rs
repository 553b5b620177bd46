//! Integration engines: adaptive Gauss-Kronrod on intervals, graded
//! time meshes for endpoint singularities, and point-adapted spatial
//! panels for peaked integrands.

use std::collections::BinaryHeap;
use std::cmp::Ordering;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::KernelParams;

/// Absolute error floor shared by the adaptive engines.
pub const ABS_FLOOR: f64 = 1e-14;

// Gauss-Kronrod 10/21 abscissae and weights (QUADPACK qk21).
const XGK21: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];
const WGK21: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077715271016734,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG10: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Values the adaptive integrator can accumulate.
pub trait QuadValue: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<V> {
    pub value: V,
    pub error: f64,
    pub evaluations: usize,
}

fn gk21<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK21[10];
    let mut gauss = V::zero();
    for j in 0..10 {
        let dx = h * XGK21[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        let pair = f1 + f2;
        kronrod = kronrod + pair * WGK21[j];
        if j % 2 == 1 {
            gauss = gauss + pair * WG10[j / 2];
        }
    }
    let value = kronrod * h;
    let err = (kronrod - gauss).magnitude() * h.abs();
    (value, err)
}

struct Segment<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
}

impl<V> PartialEq for Segment<V> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<V> Eq for Segment<V> {}
impl<V> PartialOrd for Segment<V> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Segment<V> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss-Kronrod 21 quadrature over `[a, b]`.
///
/// Terminates when the summed error estimate is below
/// `max(rel_tol * |I|, abs_tol)`. Breakpoints split the interval up front.
pub fn adaptive<V: QuadValue, F: FnMut(f64) -> V>(
    mut f: F,
    breakpoints: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_segments: usize,
) -> Result<Estimate<V>> {
    let mut heap = BinaryHeap::new();
    let mut total = V::zero();
    let mut total_err = 0.0;
    let mut evaluations = 0;
    for w in breakpoints.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = gk21(&mut f, w[0], w[1]);
        evaluations += 21;
        total = total + v;
        total_err += e;
        heap.push(Segment { a: w[0], b: w[1], value: v, error: e });
    }
    while total_err > (rel_tol * total.magnitude()).max(abs_tol) {
        if heap.len() >= max_segments {
            return Err(Error::NumericalNonConvergence(format!(
                "adaptive quadrature: {} segments, error {:.3e} vs |I| {:.3e}",
                heap.len(),
                total_err,
                total.magnitude()
            )));
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine resolution; accept what we have
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk21(&mut f, worst.a, mid);
        let (v2, e2) = gk21(&mut f, mid, worst.b);
        evaluations += 42;
        total = total - worst.value + v1 + v2;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
    }
    // re-sum to shed accumulated cancellation in the running total
    let mut value = V::zero();
    let mut error = 0.0;
    let mut segs: Vec<_> = heap.into_vec();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    for s in &segs {
        value = value + s.value;
        error += s.error;
    }
    Ok(Estimate { value, error, evaluations })
}

/// Integrable endpoint singularity `(distance)^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularWeight {
    pub exponent: f64,
}

impl SingularWeight {
    pub const NONE: SingularWeight = SingularWeight { exponent: 0.0 };

    pub fn new(exponent: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&exponent) {
            return Err(Error::InvalidParams(format!(
                "singular exponent {exponent} must lie in [0, 1)"
            )));
        }
        Ok(Self { exponent })
    }

    /// Power of the substitution `u = a + h v^q` that cancels the weight.
    pub fn grading_power(&self) -> f64 {
        1.0 / (1.0 - self.exponent)
    }
}

/// Adaptive integration of `f` over `[a, b]` to relative tolerance `tol`.
pub fn integrate_1d<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Estimate<f64>> {
    adaptive(f, &[a, b], tol, ABS_FLOOR, 4000)
}

/// Like [`integrate_1d`] but removes an integrable singularity of the
/// given weight at both endpoints by the substitution `u = a + h v^q`.
pub fn integrate_1d_weighted<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    weight: SingularWeight,
    tol: f64,
) -> Result<Estimate<f64>> {
    let q = weight.grading_power();
    let m = 0.5 * (a + b);
    let h = m - a;
    let left = adaptive(
        |v: f64| {
            if v <= 0.0 {
                return 0.0;
            }
            let jac = h * q * v.powf(q - 1.0);
            f(a + h * v.powf(q)) * jac
        },
        &[0.0, 1.0],
        tol,
        ABS_FLOOR,
        4000,
    )?;
    let right = adaptive(
        |v: f64| {
            if v <= 0.0 {
                return 0.0;
            }
            let jac = h * q * v.powf(q - 1.0);
            f(b - h * v.powf(q)) * jac
        },
        &[0.0, 1.0],
        tol,
        ABS_FLOOR,
        4000,
    )?;
    Ok(Estimate {
        value: left.value + right.value,
        error: left.error + right.error,
        evaluations: left.evaluations + right.evaluations,
    })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * x * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (x * p0 - p1) / (x * x - 1.0);
            let dx = p0 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// A fixed quadrature rule: nodes with weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Composite Gauss-Legendre rule with `order` points on every panel.
    pub fn composite(breaks: &[f64], order: usize) -> Rule {
        let (gx, gw) = gauss_legendre(order);
        let mut rule = Rule::default();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let c = 0.5 * (a + b);
            let h = 0.5 * (b - a);
            for (x, wt) in gx.iter().zip(&gw) {
                rule.nodes.push(c + h * x);
                rule.weights.push(h * wt);
            }
        }
        rule
    }

    /// Graded rule on `(a, b)` for integrands with `(distance)^(-sigma)`
    /// behaviour at both ends.
    ///
    /// Each half is mapped by `u = a + (h/2) v^q` and `v` is split into
    /// uniform Gauss panels, so nodes cluster like `distance^(1/q)`. The
    /// power `q` is the integer multiple of `1/(1-sigma)` closest to
    /// `grading`, which keeps the transformed weight a polynomial in `v`.
    pub fn graded(a: f64, b: f64, panels_per_half: usize, order: usize, grading: f64, weight: SingularWeight) -> Rule {
        let nodes = graded_nodes(b - a, panels_per_half, order, grading, weight);
        Rule {
            nodes: nodes.iter().map(|n| a + n.from_start).collect(),
            weights: nodes.iter().map(|n| n.weight).collect(),
        }
    }
}

/// A node of a graded rule on `(a, a + len)` with both end distances kept
/// exact, so that `from_end` stays accurate far below `ulp(len)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradedNode {
    pub from_start: f64,
    pub from_end: f64,
    pub weight: f64,
}

/// Nodes of [`Rule::graded`] on an interval of length `len`, in increasing order.
pub fn graded_nodes(len: f64, panels_per_half: usize, order: usize, grading: f64, weight: SingularWeight) -> Vec<GradedNode> {
    let k = panels_per_half.max(1);
    let half = 0.5 * len;
    let base_power = weight.grading_power();
    let q = base_power * (grading / base_power).round().max(1.0);
    let breaks: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();
    let base = Rule::composite(&breaks, order);
    let mut nodes = Vec::with_capacity(2 * base.len());
    for (&v, &w) in base.nodes.iter().zip(&base.weights) {
        let dist = half * v.powf(q);
        let jac = half * q * v.powf(q - 1.0) * w;
        nodes.push(GradedNode { from_start: dist, from_end: len - dist, weight: jac });
        nodes.push(GradedNode { from_start: len - dist, from_end: dist, weight: jac });
    }
    nodes.sort_by(|x, y| x.from_start.total_cmp(&y.from_start).then(y.from_end.total_cmp(&x.from_end)));
    nodes
}

/// A point around which spatial panels are refined geometrically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Focus {
    pub at: f64,
    /// Width of the innermost panel on either side.
    pub inner: f64,
}

/// Composite Gauss-Legendre rule on `[lo, hi]` whose panels shrink
/// geometrically (by `ratio`) toward every focus point.
pub fn focused_rule(lo: f64, hi: f64, foci: &[Focus], order: usize, ratio: f64, max_panel: f64) -> Rule {
    let mut breaks = vec![lo, hi];
    for f in foci {
        if !(f.at > lo - f.inner && f.at < hi + f.inner) || !(f.inner > 0.0) {
            continue;
        }
        if f.at > lo && f.at < hi {
            breaks.push(f.at);
        }
        let mut d = f.inner;
        while d < hi - lo {
            for x in [f.at - d, f.at + d] {
                if x > lo && x < hi {
                    breaks.push(x);
                }
            }
            d *= ratio;
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * a.abs().max(b.abs()));
    // split panels that are too wide
    let mut refined = Vec::with_capacity(breaks.len());
    for w in breaks.windows(2) {
        refined.push(w[0]);
        let n = ((w[1] - w[0]) / max_panel).ceil().max(1.0) as usize;
        for j in 1..n {
            refined.push(w[0] + (w[1] - w[0]) * j as f64 / n as f64);
        }
    }
    refined.push(*breaks.last().expect("at least two breaks"));
    Rule::composite(&refined, order)
}

/// Discretisation settings for space-time integrals.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub n_time: usize,
    pub n_space: usize,
    /// Spatial truncation radius.
    pub l: f64,
    /// Time-mesh grading exponent.
    pub grading: f64,
    pub tol: f64,
    pub max_refine: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_time: 32, n_space: 128, l: 20.0, grading: 3.0, tol: 1e-4, max_refine: 4 }
    }
}

/// Gauss points per time panel.
pub const TIME_ORDER: usize = 4;
/// Gauss points per spatial panel.
pub const SPACE_ORDER: usize = 6;

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_time < 4 || self.n_space < 4 {
            return Err(Error::InvalidParams("n_time and n_space must be at least 4".into()));
        }
        if !(self.l > 0.0) || !(self.tol > 0.0) || !(self.grading > 0.0) {
            return Err(Error::InvalidParams("L, tol and grading must be positive".into()));
        }
        Ok(())
    }

    /// The next refinement level: node counts doubled.
    pub fn refined(&self) -> GridSpec {
        GridSpec { n_time: 2 * self.n_time, n_space: 2 * self.n_space, ..*self }
    }

    pub fn panels_per_half(&self) -> usize {
        (self.n_time / (2 * TIME_ORDER)).max(1)
    }

    pub fn time_rule(&self, s: f64, t: f64, weight: SingularWeight) -> Rule {
        Rule::graded(s, t, self.panels_per_half(), TIME_ORDER, self.grading, weight)
    }

    pub fn space_rule(&self) -> Rule {
        let panels = (self.n_space / SPACE_ORDER).max(1);
        let breaks: Vec<f64> = (0..=panels)
            .map(|j| -self.l + 2.0 * self.l * j as f64 / panels as f64)
            .collect();
        Rule::composite(&breaks, SPACE_ORDER)
    }

    /// Envelope bound on the kernel mass outside `[-L, L]` accumulated over
    /// a time window of the given length.
    pub fn truncation_estimate(&self, params: &KernelParams, horizon: f64) -> f64 {
        let d = params.dim as f64;
        let mut tail = horizon / self.l.powf(d + params.alpha);
        if params.a > 0.0 {
            tail += params.a.powf(params.beta) * horizon / self.l.powf(d + params.beta);
        }
        tail * horizon
    }

    /// Smallest radius (rounded up to a multiple of 5) whose tail estimate
    /// falls below `tol`.
    pub fn radius_for(params: &KernelParams, horizon: f64, tol: f64) -> f64 {
        let mut spec = GridSpec { l: 5.0, ..GridSpec::default() };
        while spec.truncation_estimate(params, horizon) > tol && spec.l < 1e6 {
            spec.l += 5.0;
        }
        spec.l
    }
}

/// Graded space-time quadrature of `f(u, z)` over `(s, t) x [-L, L]`,
/// refined by doubling until successive levels agree to `grid.tol`.
pub fn integrate_spacetime<F: Fn(f64, f64) -> f64 + Sync>(
    f: F,
    s: f64,
    t: f64,
    grid: &GridSpec,
    weight: SingularWeight,
) -> Result<Estimate<f64>> {
    grid.validate()?;
    let level = |g: &GridSpec| -> f64 {
        let tr = g.time_rule(s, t, weight);
        let sr = g.space_rule();
        tr.nodes
            .iter()
            .zip(&tr.weights)
            .map(|(&u, &wu)| wu * sr.integrate(|z| f(u, z)))
            .sum()
    };
    let mut spec = *grid;
    let mut prev = level(&spec);
    let mut evaluations = spec.n_time * spec.n_space;
    for _ in 0..grid.max_refine {
        spec = spec.refined();
        let cur = level(&spec);
        evaluations += spec.n_time * spec.n_space;
        let err = (cur - prev).abs();
        if err <= grid.tol * cur.abs() + ABS_FLOOR {
            return Ok(Estimate { value: cur, error: err, evaluations });
        }
        prev = cur;
    }
    Err(Error::NumericalNonConvergence(format!(
        "space-time quadrature did not settle after {} refinements",
        grid.max_refine
    )))
}

/// [`integrate_spacetime`] preceded by the envelope truncation check.
pub fn integrate_spacetime_checked<F: Fn(f64, f64) -> f64 + Sync>(
    f: F,
    s: f64,
    t: f64,
    grid: &GridSpec,
    weight: SingularWeight,
    params: &KernelParams,
) -> Result<Estimate<f64>> {
    let estimate = grid.truncation_estimate(params, t - s);
    if estimate > grid.tol {
        return Err(Error::TruncationWarning { estimate, tol: grid.tol });
    }
    integrate_spacetime(f, s, t, grid, weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_and_trig() {
        let r = integrate_1d(|x| x * x, 0.0, 1.0, 1e-12).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-14);
        let r = integrate_1d(f64::sin, 0.0, PI, 1e-12).unwrap();
        assert!((r.value - 2.0).abs() < 1e-13);
    }

    #[test]
    fn inverse_sqrt_with_weight() {
        let w = SingularWeight::new(0.5).unwrap();
        let r = integrate_1d_weighted(|x| x.powf(-0.5), 0.0, 1.0, w, 1e-12).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn weight_exponent_must_be_below_one() {
        assert!(SingularWeight::new(1.0).is_err());
        assert!(SingularWeight::new(-0.1).is_err());
    }

    #[test]
    fn gauss_legendre_exact_on_polynomials() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn graded_rule_integrates_both_endpoint_singularities() {
        let w = SingularWeight::new(2.0 / 3.0).unwrap();
        let rule = Rule::graded(0.0, 1.0, 4, 4, 3.0, w);
        let v = rule.integrate(|u| u.powf(-2.0 / 3.0) + (1.0 - u).powf(-2.0 / 3.0));
        assert!((v - 6.0).abs() < 1e-3, "{v}");
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-13);
        assert!(rule.nodes.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn focused_rule_handles_algebraic_point_singularity() {
        let rule = focused_rule(-1.0, 1.0, &[Focus { at: 0.0, inner: 1e-12 }], 8, 2.0, 0.5);
        let v = rule.integrate(|z| z.abs().powf(-0.4));
        assert!((v - 2.0 / 0.6).abs() < 1e-6, "{v}");
    }

    #[test]
    fn spacetime_constant() {
        let grid = GridSpec { n_time: 8, n_space: 12, l: 1.0, ..GridSpec::default() };
        let r = integrate_spacetime(|_, _| 1.0, 0.0, 1.0, &grid, SingularWeight::NONE).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spacetime_endpoint_singularity() {
        let grid = GridSpec { n_time: 8, n_space: 12, l: 1.0, tol: 1e-9, max_refine: 6, ..GridSpec::default() };
        let w = SingularWeight::new(0.5).unwrap();
        let r = integrate_spacetime(|u, _| (1.0 - u).powf(-0.5), 0.0, 1.0, &grid, w).unwrap();
        assert!((r.value - 4.0).abs() < 1e-10, "{}", r.value);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let r = adaptive(|x: f64| 1.0 / x, &[0.0, 1.0], 1e-12, 1e-14, 50);
        assert!(matches!(r, Err(Error::NumericalNonConvergence(_))));
    }
}
