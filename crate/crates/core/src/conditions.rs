//! Smallness conditions on the drift: the Kato-type functional, the
//! short-window class estimate, the factorised upper bound and the
//! small-ball Kato-class indicator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{Monotone, TabulatedF};
use crate::table::KernelSlice;
use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::kernel::Kernel1d;
use crate::perturbation::{graded_time_rule_with, natural_width, SpaceLayout};
use crate::quadrature::{adaptive, integrate_1d_weighted, GridSpec, SingularWeight, ABS_FLOOR};
use crate::table::TabulatedKernel;

/// The superadditive part `Q` of a control pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QForm {
    /// `Q(s, t) = rate (t - s)`.
    Rate { rate: f64 },
    /// `Q(s, t) = F(t) - F(s)`.
    TabulatedF(TabulatedF),
}

/// A control pair `(eta, Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPair {
    pub eta: f64,
    pub q: QForm,
}

impl ControlPair {
    /// `Q(s, t)`.
    pub fn q_value(&self, s: f64, t: f64) -> f64 {
        match &self.q {
            QForm::Rate { rate } => rate * (t - s),
            QForm::TabulatedF(f) => f.value(t) - f.value(s),
        }
    }
}

/// `(eta, (eta/h)(t - s))`.
pub fn to_class_n(eta: f64, h: f64) -> Result<ControlPair> {
    if !(eta > 0.0 && h > 0.0) {
        return Err(Error::InvalidParams("eta and h must be positive".into()));
    }
    Ok(ControlPair { eta, q: QForm::Rate { rate: eta / h } })
}

/// `int_0^tau int p(u, z - x) |b(s+u, z)| g(tau - u, y - z) dz du` for a
/// second factor `g` built from a kernel slice.
fn pair_integral<G>(
    s: f64,
    x: f64,
    tau: f64,
    y: f64,
    drift: &DriftField,
    kernel: &TabulatedKernel,
    grid: &GridSpec,
    combine: G,
) -> Result<f64>
where
    G: Fn(&KernelSlice<'_>, &KernelSlice<'_>, f64, f64) -> f64,
{
    let params = *kernel.params();
    let singular = drift.singular_points();
    // a singularity at `y` steepens the blow-up at `u = tau`; at `x` it
    // stays below the `1/alpha` the default grading handles
    let sigma = if singular.contains(&y) { drift.singular_order() } else { 0.0 };
    let rule = graded_time_rule_with(grid, &params, tau, sigma)?;
    let layout = SpaceLayout::new(grid);
    let mut total = 0.0;
    for node in &rule {
        let (u, r, wu) = (node.from_start, node.from_end, node.weight);
        let first = kernel.slice(u);
        let second = kernel.slice(r);
        let space = layout.rule(&[(x, natural_width(&params, u)), (y, natural_width(&params, r))], &singular);
        let inner: f64 = space
            .nodes
            .iter()
            .zip(&space.weights)
            .map(|(&z, &wz)| {
                let b = drift.magnitude(s + u, z);
                if b == 0.0 {
                    0.0
                } else {
                    wz * b * combine(&first, &second, z - x, y - z)
                }
            })
            .sum();
        total += wu * inner;
    }
    Ok(total)
}

/// Repeats `eval` on refined grids until two levels agree to `grid.tol`.
fn refine<F: Fn(&GridSpec) -> Result<f64>>(grid: &GridSpec, what: &str, eval: F) -> Result<f64> {
    let mut spec = *grid;
    let mut prev = eval(&spec)?;
    for _ in 0..grid.max_refine {
        spec = spec.refined();
        let cur = eval(&spec)?;
        if (cur - prev).abs() <= grid.tol * cur.abs() + ABS_FLOOR {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::NumericalNonConvergence(format!("{what} did not settle after {} refinements", grid.max_refine)))
}

fn check_pair(kernel: &TabulatedKernel, s: f64, t: f64) -> Result<()> {
    kernel.params().require_perturbation_grade()?;
    if !(s < t) {
        return Err(Error::InvalidParams(format!("need s < t, got s = {s}, t = {t}")));
    }
    Ok(())
}

/// `[int_s^t int p(s,x,u,z) |b(u,z)| |grad_z p(u,z,t,y)| dz du] / p(s,x,t,y)`.
#[allow(clippy::too_many_arguments)]
pub fn kato_functional(
    s: f64,
    x: f64,
    t: f64,
    y: f64,
    drift: &DriftField,
    kernel: &TabulatedKernel,
    grid: &GridSpec,
) -> Result<f64> {
    check_pair(kernel, s, t)?;
    if drift.is_zero() {
        return Ok(0.0);
    }
    let tau = t - s;
    let p = kernel.density(tau, y - x);
    let integral = refine(grid, "Kato functional", |g| {
        pair_integral(s, x, tau, y, drift, kernel, g, |a, b, dx, dy| a.density(dx) * b.gradient(dy).abs())
    })?;
    Ok(integral / p)
}

/// The factorised bound and its comparison with the Kato functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitBound {
    /// `int_s^t int (p-hat(s,x,u,z) + p-hat(u,z,t,y)) |b(u,z)| dz du`.
    pub value: f64,
    pub kato: f64,
    /// `kato / value`.
    pub ratio: f64,
}

/// Factorised upper bound for the Kato functional.
#[allow(clippy::too_many_arguments)]
pub fn split_bound(
    s: f64,
    x: f64,
    t: f64,
    y: f64,
    drift: &DriftField,
    kernel: &TabulatedKernel,
    grid: &GridSpec,
) -> Result<SplitBound> {
    check_pair(kernel, s, t)?;
    if drift.is_zero() {
        return Ok(SplitBound { value: 0.0, kato: 0.0, ratio: 0.0 });
    }
    let params = *kernel.params();
    let tau = t - s;
    let value = refine(grid, "split bound", |g| {
        pair_integral(s, x, tau, y, drift, kernel, g, |a, b, dx, dy| {
            params.hat_factor(a.time()) * a.density(dx) + params.hat_factor(b.time()) * b.density(dy)
        })
    })?;
    let kato = kato_functional(s, x, t, y, drift, kernel, grid)?;
    Ok(SplitBound { value, kato, ratio: if value > 0.0 { kato / value } else { 0.0 } })
}

/// Start times and `(x, y)` pairs over which suprema are taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub anchors: Vec<f64>,
    pub pairs: Vec<(f64, f64)>,
}

impl Default for SampleSet {
    /// A 7x7 grid of `(x, y)` plus extra points on the diagonal.
    fn default() -> Self {
        let axis = [-3.0, -1.5, -0.5, 0.0, 0.5, 1.5, 3.0];
        let mut pairs: Vec<(f64, f64)> = axis.iter().flat_map(|&x| axis.iter().map(move |&y| (x, y))).collect();
        pairs.extend([-2.0, -1.0, -0.25, 0.25, 1.0, 2.0].iter().map(|&v| (v, v)));
        Self { anchors: vec![0.0], pairs }
    }
}

impl SampleSet {
    /// Samples that differ only by a common translation give the same
    /// functional for translation-invariant drifts.
    fn reduced(&self, drift: &DriftField) -> Vec<(f64, f64, f64)> {
        if drift.translation_invariant().is_some() {
            let mut d: Vec<f64> = self.pairs.iter().map(|(x, y)| y - x).collect();
            d.sort_by(f64::total_cmp);
            d.dedup();
            return d.into_iter().map(|d| (0.0, 0.0, d)).collect();
        }
        self.anchors
            .iter()
            .flat_map(|&s| self.pairs.iter().map(move |&(x, y)| (s, x, y)))
            .collect()
    }
}

/// Smallest and largest windows probed by [`estimate_class_p`].
pub const H_BRACKET: (f64, f64) = (1e-4, 1e2);
/// Bisection steps on `ln h`.
pub const H_ITERATIONS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ClassPEstimate {
    Found {
        eta: f64,
        h: f64,
        /// Largest sampled functional over windows of length `h`.
        measured: f64,
        /// The functional stays below `eta` up to the largest probe.
        capped: bool,
    },
    NotFound {
        eta: f64,
        smallest_probe: f64,
        measured: f64,
    },
}

impl ClassPEstimate {
    pub fn h(&self) -> Option<f64> {
        match self {
            ClassPEstimate::Found { h, .. } => Some(*h),
            ClassPEstimate::NotFound { .. } => None,
        }
    }
}

/// Largest sampled Kato functional over windows of length `h`.
pub fn sampled_sup(h: f64, drift: &DriftField, kernel: &TabulatedKernel, grid: &GridSpec, samples: &SampleSet) -> Result<f64> {
    let points = samples.reduced(drift);
    let values: Vec<f64> = points
        .par_iter()
        .map(|&(s, x, y)| kato_functional(s, x, s + h, y, drift, kernel, grid))
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Largest window `h` with sampled functional at most `eta`, by bisection
/// on `ln h`.
pub fn estimate_class_p(
    drift: &DriftField,
    kernel: &TabulatedKernel,
    eta: f64,
    samples: &SampleSet,
    grid: &GridSpec,
) -> Result<ClassPEstimate> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParams("eta must be positive".into()));
    }
    if samples.pairs.is_empty() || samples.anchors.is_empty() {
        return Err(Error::InvalidParams("empty sample set".into()));
    }
    let sup = |h: f64| sampled_sup(h, drift, kernel, grid, samples);
    let (lo_h, hi_h) = H_BRACKET;
    let bottom = sup(lo_h)?;
    if bottom > eta {
        return Ok(ClassPEstimate::NotFound { eta, smallest_probe: lo_h, measured: bottom });
    }
    let top = sup(hi_h)?;
    if top <= eta {
        return Ok(ClassPEstimate::Found { eta, h: hi_h, measured: top, capped: true });
    }
    let (mut lo, mut hi) = (lo_h.ln(), hi_h.ln());
    let mut measured = bottom;
    for _ in 0..H_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let v = sup(mid.exp())?;
        if v <= eta {
            lo = mid;
            measured = v;
        } else {
            hi = mid;
        }
    }
    Ok(ClassPEstimate::Found { eta, h: lo.exp(), measured, capped: false })
}

/// `int_0^t p-hat^1(u, x) du` for unit weight `a = 1`.
pub fn time_integrated_hat(t: f64, x: f64, kernel: &TabulatedKernel) -> Result<f64> {
    let params = kernel.params();
    if params.a != 1.0 {
        return Err(Error::InvalidParams("time-integrated hat kernel needs a = 1".into()));
    }
    if !(t > 0.0) || x == 0.0 {
        return Err(Error::InvalidParams("need t > 0 and x != 0".into()));
    }
    // the integrand peaks where u^(1/alpha) ~ |x|; split logarithmically
    let peak = x.abs().powf(params.alpha);
    let mut breaks = vec![0.0];
    let mut u = 1e-6 * peak;
    while u < t {
        breaks.push(u);
        u *= 4.0;
    }
    breaks.push(t);
    let est = adaptive(
        |u: f64| if u > 0.0 { params.hat_factor(u) * kernel.density(u, x) } else { 0.0 },
        &breaks,
        1e-9,
        ABS_FLOOR,
        4000,
    )?;
    Ok(est.value)
}

/// Default radii for [`kato_class_indicator`].
pub const PROBE_RADII: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
/// Smallest log-log slope of the small-ball integral counted as decay.
pub const DECAY_SLOPE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KatoIndicator {
    pub gamma: f64,
    pub radii: Vec<f64>,
    /// Largest probed small-ball integral per radius; infinite when the
    /// integral diverges at some probe.
    pub values: Vec<f64>,
    /// Least-squares slope of `ln value` against `ln radius`.
    pub slope: f64,
    pub decays: bool,
}

/// `sup_x int_{|z-x|<eps} |b(z)| |z-x|^(gamma-2) dz` for decreasing `eps`.
pub fn kato_class_indicator(drift: &DriftField, gamma: f64, radii: &[f64]) -> Result<KatoIndicator> {
    if !drift.time_independent() {
        return Err(Error::InvalidParams("Kato-class indicator needs a time-independent drift".into()));
    }
    if !(gamma > 1.0 && gamma < 2.0) {
        return Err(Error::InvalidParams(format!("gamma = {gamma} outside (1, 2)")));
    }
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] < w[0] && w[1] > 0.0)) {
        return Err(Error::InvalidParams("probe radii must be positive and decreasing".into()));
    }
    let singular = drift.singular_points();
    let anchors = if singular.is_empty() { vec![0.0] } else { singular.clone() };
    let weight = SingularWeight::new(0.95)?;
    let values: Vec<f64> = radii
        .iter()
        .map(|&eps| {
            let mut centres = Vec::new();
            for &a in &anchors {
                for f in [0.0, 0.1, 0.5, 1.0] {
                    centres.push(a + f * eps);
                    centres.push(a - f * eps);
                }
            }
            centres
                .iter()
                .map(|&x| ball_integral(drift, gamma, x, eps, &singular, weight))
                .fold(0.0, f64::max)
        })
        .collect();
    let slope = if values.iter().all(|v| v.is_finite() && *v > 0.0) {
        let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
        let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let n = lx.len() as f64;
        let mx = lx.iter().sum::<f64>() / n;
        let my = ly.iter().sum::<f64>() / n;
        let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
        sxy / sxx
    } else if values.iter().all(|v| *v == 0.0) {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let monotone = values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    Ok(KatoIndicator {
        gamma,
        radii: radii.to_vec(),
        decays: monotone && slope >= DECAY_SLOPE,
        values,
        slope,
    })
}

/// Integral over the ball of radius `eps` about `x`, split at `x` and at
/// the singular points; infinite when the quadrature diverges.
fn ball_integral(drift: &DriftField, gamma: f64, x: f64, eps: f64, singular: &[f64], weight: SingularWeight) -> f64 {
    let mut breaks = vec![x - eps, x, x + eps];
    breaks.extend(singular.iter().copied().filter(|&p| (p - x).abs() < eps));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let f = |z: f64| {
            let d = (z - x).abs();
            if d == 0.0 {
                return 0.0;
            }
            drift.magnitude(0.0, z) * d.powf(gamma - 2.0)
        };
        match integrate_1d_weighted(f, w[0], w[1], weight, 1e-8) {
            Ok(e) if e.value.is_finite() => total += e.value,
            _ => return f64::INFINITY,
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::Direction;
    use crate::kernel::KernelParams;

    fn stable() -> TabulatedKernel {
        TabulatedKernel::new(KernelParams::stable(1.5, 1).unwrap()).unwrap()
    }

    #[test]
    fn zero_drift_has_zero_functional() {
        let k = stable();
        let g = GridSpec::default();
        assert_eq!(kato_functional(0.0, 0.0, 1.0, 0.3, &DriftField::zero(), &k, &g).unwrap(), 0.0);
        let est = estimate_class_p(&DriftField::zero(), &k, 0.25, &SampleSet::default(), &g).unwrap();
        assert!(matches!(est, ClassPEstimate::Found { capped: true, .. }));
    }

    #[test]
    fn functional_is_homogeneous_in_the_drift() {
        let k = stable();
        let g = GridSpec::default();
        let one = kato_functional(0.0, 0.0, 0.5, 0.7, &DriftField::constant(0.3).unwrap(), &k, &g).unwrap();
        let two = kato_functional(0.0, 0.0, 0.5, 0.7, &DriftField::constant(0.6).unwrap(), &k, &g).unwrap();
        assert!((two / one - 2.0).abs() < 1e-9);
    }

    #[test]
    fn class_n_rate() {
        let c = to_class_n(0.25, 0.5).unwrap();
        assert_eq!(c.q, QForm::Rate { rate: 0.5 });
        assert_eq!(c.q_value(1.0, 3.0), 1.0);
        assert!(to_class_n(0.0, 1.0).is_err());
    }

    #[test]
    fn bounded_drift_is_kato_class() {
        let b = DriftField::constant(1.0).unwrap();
        let ind = kato_class_indicator(&b, 1.5, &PROBE_RADII).unwrap();
        assert!(ind.decays);
        assert!((ind.slope - 0.5).abs() < 1e-6);
        assert!((ind.values[0] - 4.0 * 0.1f64.sqrt()).abs() < 1e-7);
    }

    #[test]
    fn power_law_indicator() {
        let p = KernelParams::new(1.5, 1.2, 1.0, 1).unwrap();
        let b = DriftField::power_law(&p, 0.1, Direction::Inward).unwrap();
        assert!(kato_class_indicator(&b, p.alpha, &PROBE_RADII).unwrap().decays);
        assert!(!kato_class_indicator(&b, p.beta, &PROBE_RADII).unwrap().decays);
    }
}
