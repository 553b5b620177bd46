//! Mixed-stable transition densities `p^a(t, x)` with symbol
//! `psi(xi) = |xi|^alpha + a^beta |xi|^beta`, evaluated by radial Fourier
//! inversion in dimensions 1 and 3.
//!
//! Small arguments (`|x|` below a fraction of the natural length) are
//! integrated along the real frequency axis. Larger arguments rotate the
//! frequency contour into the sector `0 < arg < pi/(2 alpha)`, where both
//! the symbol and the oscillator decay, after subtracting the free
//! oscillator whose contribution is known in closed form.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive;

/// Density values below this are reported as zero.
pub const DENSITY_FLOOR: f64 = 1e-300;

const REL_TOL: f64 = 1e-12;
const MAX_SEGMENTS: usize = 3000;
/// `exp(-DECAY_CUTOFF)` is negligible against double precision.
const DECAY_CUTOFF: f64 = 40.0;
/// Below this value of `|x| * frequency scale` the real axis is used.
const CONTOUR_SWITCH: f64 = 0.25;

/// Parameters of the mixed-stable kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub alpha: f64,
    /// Second stability index, only used when `a > 0`.
    pub beta: f64,
    /// Mixture weight of the `beta` component.
    pub a: f64,
    pub dim: usize,
}

impl KernelParams {
    /// Evaluation-grade parameters: `0 < beta < alpha < 2` when `a > 0`.
    pub fn new(alpha: f64, beta: f64, a: f64, dim: usize) -> Result<Self> {
        let p = Self { alpha, beta, a, dim };
        p.validate()?;
        Ok(p)
    }

    /// The pure `alpha`-stable kernel (`a = 0`).
    pub fn stable(alpha: f64, dim: usize) -> Result<Self> {
        Self::new(alpha, alpha / 2.0, 0.0, dim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::InvalidParams(format!("alpha = {} must lie in (0, 2)", self.alpha)));
        }
        if !(self.a >= 0.0) || !self.a.is_finite() {
            return Err(Error::InvalidParams(format!("a = {} must be finite and >= 0", self.a)));
        }
        if self.a > 0.0 && !(self.beta > 0.0 && self.beta < self.alpha) {
            return Err(Error::InvalidParams(format!(
                "beta = {} must lie in (0, alpha = {})",
                self.beta, self.alpha
            )));
        }
        if self.dim != 1 && self.dim != 3 {
            return Err(Error::InvalidParams(format!("dimension {} not supported (1 or 3)", self.dim)));
        }
        Ok(())
    }

    /// Whether the parameters admit gradient perturbations:
    /// `1 < beta < alpha < 2`, or `a = 0` with `1 < alpha < 2`.
    pub fn is_perturbation_grade(&self) -> bool {
        if self.a > 0.0 {
            self.beta > 1.0 && self.beta < self.alpha && self.alpha < 2.0
        } else {
            self.alpha > 1.0 && self.alpha < 2.0
        }
    }

    pub fn require_perturbation_grade(&self) -> Result<()> {
        self.validate()?;
        if !self.is_perturbation_grade() {
            return Err(Error::InvalidParams(format!(
                "perturbation requires 1 < beta < alpha < 2 (or a = 0, 1 < alpha < 2); got alpha={}, beta={}, a={}",
                self.alpha, self.beta, self.a
            )));
        }
        Ok(())
    }

    pub fn with_dim(&self, dim: usize) -> Self {
        Self { dim, ..*self }
    }

    /// `a^beta`, or zero for the pure stable kernel.
    pub fn weight(&self) -> f64 {
        if self.a > 0.0 {
            self.a.powf(self.beta)
        } else {
            0.0
        }
    }

    /// The symbol `psi(s)` for `s >= 0`.
    pub fn symbol(&self, s: f64) -> f64 {
        let mut v = s.powf(self.alpha);
        if self.a > 0.0 {
            v += self.weight() * s.powf(self.beta);
        }
        v
    }

    /// Frequency `s` with `t psi(s) = level`.
    pub fn frequency_at(&self, t: f64, level: f64) -> f64 {
        let target = level / t;
        if self.a == 0.0 {
            return target.powf(1.0 / self.alpha);
        }
        // psi is increasing; bracket in log space then bisect
        let mut lo = target.powf(1.0 / self.alpha).min((target / self.weight()).powf(1.0 / self.beta));
        let mut hi = target.powf(1.0 / self.alpha).max((target / self.weight()).powf(1.0 / self.beta));
        lo *= 0.5;
        hi *= 2.0;
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if self.symbol(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo - 1.0 < 1e-15 {
                break;
            }
        }
        (lo * hi).sqrt()
    }

    /// Natural length scale at time `t`: the reciprocal of the frequency
    /// where `t psi = 1`.
    pub fn length_scale(&self, t: f64) -> f64 {
        1.0 / self.frequency_at(t, 1.0)
    }

    /// Time factor of the hat kernel, `t^(-1/alpha) ^ (a^beta t)^(-1/beta)`.
    pub fn hat_factor(&self, t: f64) -> f64 {
        let f = t.powf(-1.0 / self.alpha);
        if self.a > 0.0 {
            f.min((self.weight() * t).powf(-1.0 / self.beta))
        } else {
            f
        }
    }
}

/// Elapsed time and displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeArg {
    pub t: f64,
    pub x: Vec<f64>,
}

impl SpaceTimeArg {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Self { t, x }
    }

    /// One-dimensional argument.
    pub fn scalar(t: f64, x: f64) -> Self {
        Self { t, x: vec![x] }
    }

    pub fn radius(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_dim(&self, params: &KernelParams) -> Result<()> {
        if self.x.len() != params.dim {
            return Err(Error::InvalidParams(format!(
                "displacement has length {} but dimension is {}",
                self.x.len(),
                params.dim
            )));
        }
        Ok(())
    }
}

/// `exp(z) - 1` without cancellation for small `|z|`.
fn expm1_complex(z: Complex64) -> Complex64 {
    let half = (0.5 * z.im).sin();
    let em = z.re.exp_m1();
    Complex64::new(em * z.im.cos() - 2.0 * half * half, z.re.exp() * z.im.sin())
}

/// Radial density `p^a(t, r)` in dimension `params.dim` (1 or 3).
pub fn density_radial(params: &KernelParams, t: f64, r: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Ok(0.0);
    }
    let r = r.abs();
    let s_scale = params.frequency_at(t, 1.0);
    let value = if r * s_scale <= CONTOUR_SWITCH {
        real_axis(params, t, r)?
    } else {
        rotated(params, t, r)?
    };
    Ok(if value < DENSITY_FLOOR { 0.0 } else { value })
}

fn real_axis(params: &KernelParams, t: f64, r: f64) -> Result<f64> {
    let upper = params.frequency_at(t, DECAY_CUTOFF);
    let s_scale = params.frequency_at(t, 1.0);
    let breaks = [0.0, 0.25 * s_scale, s_scale, upper];
    match params.dim {
        1 => {
            let est = adaptive(
                |s: f64| (-t * params.symbol(s)).exp() * (r * s).cos(),
                &breaks,
                REL_TOL,
                1e-300,
                MAX_SEGMENTS,
            )?;
            Ok(est.value / PI)
        }
        3 => {
            let est = adaptive(
                |s: f64| {
                    let sinc = if r == 0.0 { s } else { (r * s).sin() / r };
                    (-t * params.symbol(s)).exp() * s * sinc
                },
                &breaks,
                REL_TOL,
                1e-300,
                MAX_SEGMENTS,
            )?;
            Ok(est.value / (2.0 * PI * PI))
        }
        d => Err(Error::InvalidParams(format!("dimension {d} not supported"))),
    }
}

fn rotated(params: &KernelParams, t: f64, r: f64) -> Result<f64> {
    let theta = PI / (4.0 * params.alpha);
    let rot = Complex64::from_polar(1.0, theta);
    let rot_alpha = Complex64::from_polar(1.0, params.alpha * theta);
    let rot_beta = Complex64::from_polar(1.0, params.beta * theta);
    let weight = params.weight();
    let decay = r * theta.sin();
    let upper = (DECAY_CUTOFF + 5.0) / decay;
    // tPsi along the ray; |exp(-tPsi)| <= 1 in the sector
    let minus_t_psi = |w: f64| -> Complex64 {
        let mut v = rot_alpha * w.powf(params.alpha);
        if weight > 0.0 {
            v += rot_beta * (weight * w.powf(params.beta));
        }
        -v * t
    };
    let osc = |w: f64| -> Complex64 { (Complex64::i() * rot * (r * w)).exp() };
    let scale = 1.0 / decay;
    let breaks = [0.0, 0.1 * scale, scale, 5.0 * scale, upper.max(10.0 * scale)];
    match params.dim {
        1 => {
            let est = adaptive(
                |w: f64| expm1_complex(minus_t_psi(w)) * osc(w),
                &breaks,
                REL_TOL,
                1e-300,
                MAX_SEGMENTS,
            )?;
            Ok((rot * est.value).re / PI)
        }
        3 => {
            let est = adaptive(
                |w: f64| expm1_complex(minus_t_psi(w)) * osc(w) * w,
                &breaks,
                REL_TOL,
                1e-300,
                MAX_SEGMENTS,
            )?;
            Ok((rot * rot * est.value).im / (2.0 * PI * PI * r))
        }
        d => Err(Error::InvalidParams(format!("dimension {d} not supported"))),
    }
}

/// `p^a(t, x)`; zero for `t <= 0`.
pub fn eval_density(params: &KernelParams, arg: &SpaceTimeArg) -> Result<f64> {
    params.validate()?;
    arg.check_dim(params)?;
    if !arg.t.is_finite() && arg.t > 0.0 {
        return Err(Error::InvalidParams("t must be finite".into()));
    }
    density_radial(params, arg.t, arg.radius())
}

/// `grad_x p^a(t, x) = -2 pi x p^a_(d+2)(t, |x|)`.
pub fn eval_gradient(params: &KernelParams, arg: &SpaceTimeArg) -> Result<Vec<f64>> {
    params.validate()?;
    arg.check_dim(params)?;
    if params.dim != 1 {
        return Err(Error::InvalidParams("gradient needs the (d+2)-companion; only d = 1 is supported".into()));
    }
    if !(arg.t > 0.0) {
        return Ok(vec![0.0; params.dim]);
    }
    let lifted = params.with_dim(params.dim + 2);
    let q = density_radial(&lifted, arg.t, arg.radius())?;
    Ok(arg.x.iter().map(|&xi| -2.0 * PI * xi * q).collect())
}

/// Two-sided comparability envelope of the density.
pub fn envelope(params: &KernelParams, arg: &SpaceTimeArg) -> f64 {
    let d = params.dim as f64;
    let t = arg.t;
    let r = arg.radius();
    let w = params.weight();
    let mut diag = t.powf(-d / params.alpha);
    if params.a > 0.0 {
        diag = diag.min((w * t).powf(-d / params.beta));
    }
    let tail = if r == 0.0 {
        f64::INFINITY
    } else {
        let mut v = t / r.powf(d + params.alpha);
        if params.a > 0.0 {
            v += w * t / r.powf(d + params.beta);
        }
        v
    };
    diag.min(tail)
}

/// `p-hat^a(t, x) = (t^(-1/alpha) ^ (a^beta t)^(-1/beta)) p^a(t, x)`.
pub fn hat_kernel(params: &KernelParams, arg: &SpaceTimeArg) -> Result<f64> {
    if !(arg.t > 0.0) {
        return Ok(0.0);
    }
    Ok(params.hat_factor(arg.t) * eval_density(params, arg)?)
}

/// Result of mapping a kernel with weight `a > 0` onto unit weight.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitScaling {
    pub params: KernelParams,
    pub arg: SpaceTimeArg,
    pub prefactor: f64,
}

/// `p^a(t, x) = a^(beta d/(alpha-beta)) p^1(a^(alpha beta/(alpha-beta)) t, a^(beta/(alpha-beta)) x)`.
pub fn scale_to_unit(params: &KernelParams, arg: &SpaceTimeArg) -> Result<UnitScaling> {
    if !(params.a > 0.0) {
        return Err(Error::DegenerateScaling);
    }
    let gap = params.alpha - params.beta;
    let d = params.dim as f64;
    let time_scale = params.a.powf(params.alpha * params.beta / gap);
    let space_scale = params.a.powf(params.beta / gap);
    Ok(UnitScaling {
        params: KernelParams { a: 1.0, ..*params },
        arg: SpaceTimeArg::new(arg.t * time_scale, arg.x.iter().map(|v| v * space_scale).collect()),
        prefactor: params.a.powf(params.beta * d / gap),
    })
}

/// Fast scalar access to a one-dimensional kernel and its gradient.
pub trait Kernel1d: Sync {
    fn params(&self) -> &KernelParams;
    /// `p(t, x)`, zero for `t <= 0`.
    fn density(&self, t: f64, x: f64) -> f64;
    /// `d/dx p(t, x)`, zero for `t <= 0`.
    fn gradient(&self, t: f64, x: f64) -> f64;

    fn hat(&self, t: f64, x: f64) -> f64 {
        if t > 0.0 {
            self.params().hat_factor(t) * self.density(t, x)
        } else {
            0.0
        }
    }
}

/// Direct quadrature evaluation. Panics only if the inversion integral
/// fails to converge, which does not happen on the supported domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactKernel {
    params: KernelParams,
    lifted: KernelParams,
}

impl ExactKernel {
    pub fn new(params: KernelParams) -> Result<Self> {
        params.validate()?;
        if params.dim != 1 {
            return Err(Error::InvalidParams("scalar kernels are one-dimensional".into()));
        }
        Ok(Self { params, lifted: params.with_dim(3) })
    }

    pub fn density3(&self, t: f64, r: f64) -> Result<f64> {
        density_radial(&self.lifted, t, r)
    }
}

impl Kernel1d for ExactKernel {
    fn params(&self) -> &KernelParams {
        &self.params
    }

    fn density(&self, t: f64, x: f64) -> f64 {
        density_radial(&self.params, t, x).expect("kernel inversion converges")
    }

    fn gradient(&self, t: f64, x: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        -2.0 * PI * x * density_radial(&self.lifted, t, x).expect("kernel inversion converges")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cauchy(t: f64, x: f64) -> f64 {
        t / (PI * (t * t + x * x))
    }

    #[test]
    fn cauchy_values() {
        let p = KernelParams::stable(1.0, 1).unwrap();
        let v = eval_density(&p, &SpaceTimeArg::scalar(1.0, 0.0)).unwrap();
        assert!((v - 1.0 / PI).abs() < 1e-12);
        let v = eval_density(&p, &SpaceTimeArg::scalar(2.0, 2.0)).unwrap();
        assert!((v / (2.0 / (PI * 8.0)) - 1.0).abs() < 1e-10);
        for &x in &[0.01, 0.3, 1.0, 7.0, 100.0, 1e4] {
            let v = density_radial(&p, 1.0, x).unwrap();
            assert!((v / cauchy(1.0, x) - 1.0).abs() < 1e-9, "x={x} v={v}");
        }
    }

    #[test]
    fn three_dimensional_cauchy() {
        // p_3(t, r) = t / (pi^2 (t^2 + r^2)^2)
        let p = KernelParams::stable(1.0, 3).unwrap();
        for &r in &[0.0, 0.05, 0.5, 2.0, 30.0] {
            let v = density_radial(&p, 1.0, r).unwrap();
            let exact = 1.0 / (PI * PI * (1.0 + r * r).powi(2));
            assert!((v / exact - 1.0).abs() < 1e-9, "r={r} v={v} exact={exact}");
        }
    }

    #[test]
    fn nonpositive_time_is_zero() {
        let p = KernelParams::stable(1.5, 1).unwrap();
        assert_eq!(eval_density(&p, &SpaceTimeArg::scalar(0.0, 0.3)).unwrap(), 0.0);
        assert_eq!(eval_density(&p, &SpaceTimeArg::scalar(-1.0, 0.3)).unwrap(), 0.0);
    }

    #[test]
    fn isotropy_and_gradient_sign() {
        let p = KernelParams::new(1.5, 1.2, 1.0, 1).unwrap();
        let a = eval_density(&p, &SpaceTimeArg::scalar(0.7, 1.3)).unwrap();
        let b = eval_density(&p, &SpaceTimeArg::scalar(0.7, -1.3)).unwrap();
        assert_eq!(a, b);
        let g = eval_gradient(&p, &SpaceTimeArg::scalar(0.7, 1.3)).unwrap();
        assert!(g[0] < 0.0);
        let g0 = eval_gradient(&p, &SpaceTimeArg::scalar(0.7, 0.0)).unwrap();
        assert_eq!(g0[0], 0.0);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let p = KernelParams::stable(1.5, 1).unwrap();
        let h = 1e-4;
        let x = 0.7;
        let fd = (density_radial(&p, 1.0, x + h).unwrap() - density_radial(&p, 1.0, x - h).unwrap()) / (2.0 * h);
        let g = eval_gradient(&p, &SpaceTimeArg::scalar(1.0, x)).unwrap()[0];
        assert!((g / fd - 1.0).abs() < 1e-5, "g={g} fd={fd}");
    }

    #[test]
    fn envelope_cases() {
        let p = KernelParams::stable(1.5, 1).unwrap();
        assert_eq!(envelope(&p, &SpaceTimeArg::scalar(1.0, 0.0)), 1.0);
        for &(t, x) in &[(0.3, 0.1), (2.0, 5.0), (1.0, 1.0)] {
            let e = envelope(&p, &SpaceTimeArg::scalar(t, x));
            let f: f64 = t.powf(-1.0 / 1.5);
            let expected = f.min(t / x.powf(2.5));
            assert!((e - expected).abs() <= 1e-15 * expected);
        }
        let q = KernelParams::new(1.5, 1.2, 1.0, 1).unwrap();
        let mut last = f64::INFINITY;
        for i in 0..100 {
            let e = envelope(&q, &SpaceTimeArg::scalar(0.8, i as f64 * 0.2));
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn hat_kernel_factor() {
        let p = KernelParams::stable(1.5, 1).unwrap();
        let arg = SpaceTimeArg::scalar(1.0, 0.4);
        assert_eq!(hat_kernel(&p, &arg).unwrap(), eval_density(&p, &arg).unwrap());
        let q = KernelParams::new(1.5, 1.2, 1.0, 1).unwrap();
        let t: f64 = 50.0;
        assert_eq!(q.hat_factor(t), t.powf(-1.0 / 1.2));
        let arg = SpaceTimeArg::scalar(t, 3.0);
        let ratio = hat_kernel(&q, &arg).unwrap() / eval_density(&q, &arg).unwrap();
        assert!((ratio - q.hat_factor(t)).abs() < 1e-15 * ratio);
    }

    #[test]
    fn scaling_prefactor_and_identity() {
        let p = KernelParams::new(1.5, 1.2, 2.0, 1).unwrap();
        let s = scale_to_unit(&p, &SpaceTimeArg::scalar(0.5, 0.8)).unwrap();
        assert!((s.prefactor - 16.0).abs() < 1e-12);
        let one = KernelParams::new(1.5, 1.2, 1.0, 1).unwrap();
        let s1 = scale_to_unit(&one, &SpaceTimeArg::scalar(0.5, 0.8)).unwrap();
        assert_eq!(s1.prefactor, 1.0);
        assert_eq!(s1.arg, SpaceTimeArg::scalar(0.5, 0.8));
        let direct = eval_density(&p, &SpaceTimeArg::scalar(0.5, 0.8)).unwrap();
        let via = s.prefactor * eval_density(&s.params, &s.arg).unwrap();
        assert!((direct / via - 1.0).abs() < 1e-8);
        let zero = KernelParams::stable(1.5, 1).unwrap();
        assert_eq!(scale_to_unit(&zero, &SpaceTimeArg::scalar(1.0, 0.0)), Err(Error::DegenerateScaling));
    }

    #[test]
    fn parameter_grades() {
        assert!(KernelParams::new(1.5, 0.8, 1.0, 1).unwrap().validate().is_ok());
        assert!(!KernelParams::new(1.5, 0.8, 1.0, 1).unwrap().is_perturbation_grade());
        assert!(KernelParams::new(1.5, 1.2, 1.0, 1).unwrap().is_perturbation_grade());
        assert!(KernelParams::new(1.5, 1.6, 1.0, 1).is_err());
        assert!(KernelParams::new(2.0, 1.0, 0.0, 1).is_err());
        assert!(KernelParams::new(1.5, 1.2, 1.0, 2).is_err());
        assert!(!KernelParams::stable(0.9, 1).unwrap().is_perturbation_grade());
    }
}
