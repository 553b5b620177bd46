//! Test functions, the fractional Laplacian and the weak form of the
//! perturbed generator.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use super::{natural_width, SeriesSolver, SpaceLayout};
use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::quadrature::{adaptive, GridSpec, Rule};
use crate::table::TabulatedKernel;

/// Smooth bump `A exp(-1/(1 - r^2))` with
/// `r^2 = ((u - u0)/R_t)^2 + ((z - z0)/R_z)^2`, supported on `r < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    /// `(time, space)` centre.
    pub center: (f64, f64),
    /// `(time, space)` radii.
    pub radius: (f64, f64),
    pub amplitude: f64,
}

impl TestFunction {
    pub fn new(center: (f64, f64), radius: (f64, f64), amplitude: f64) -> Result<Self> {
        if !(radius.0 > 0.0 && radius.1 > 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidParams("bump radii must be positive and amplitude finite".into()));
        }
        Ok(Self { center, radius, amplitude })
    }

    fn offsets(&self, u: f64, z: f64) -> (f64, f64, f64) {
        let a = (u - self.center.0) / self.radius.0;
        let b = (z - self.center.1) / self.radius.1;
        (a, b, a * a + b * b)
    }

    pub fn value(&self, u: f64, z: f64) -> f64 {
        let (_, _, q) = self.offsets(u, z);
        if q >= 1.0 {
            0.0
        } else {
            self.amplitude * (-1.0 / (1.0 - q)).exp()
        }
    }

    /// `d phi / du`.
    pub fn d_time(&self, u: f64, z: f64) -> f64 {
        let (a, _, q) = self.offsets(u, z);
        if q >= 1.0 {
            return 0.0;
        }
        let g1 = -1.0 / ((1.0 - q) * (1.0 - q));
        self.value(u, z) * g1 * 2.0 * a / self.radius.0
    }

    /// `d phi / dz`.
    pub fn d_space(&self, u: f64, z: f64) -> f64 {
        let (_, b, q) = self.offsets(u, z);
        if q >= 1.0 {
            return 0.0;
        }
        let g1 = -1.0 / ((1.0 - q) * (1.0 - q));
        self.value(u, z) * g1 * 2.0 * b / self.radius.1
    }

    /// `d^2 phi / dz^2`.
    pub fn d_space2(&self, u: f64, z: f64) -> f64 {
        let (_, b, q) = self.offsets(u, z);
        if q >= 1.0 {
            return 0.0;
        }
        let m = 1.0 - q;
        let g1 = -1.0 / (m * m);
        let g2 = -2.0 / (m * m * m);
        let qz = 2.0 * b / self.radius.1;
        let qzz = 2.0 / (self.radius.1 * self.radius.1);
        self.value(u, z) * ((g1 * qz).powi(2) + g2 * qz * qz + g1 * qzz)
    }

    pub fn sup_norm(&self) -> f64 {
        self.amplitude.abs() * (-1.0f64).exp()
    }

    pub fn time_support(&self) -> (f64, f64) {
        (self.center.0 - self.radius.0, self.center.0 + self.radius.0)
    }

    pub fn space_support(&self) -> (f64, f64) {
        (self.center.1 - self.radius.1, self.center.1 + self.radius.1)
    }
}

/// `A_{d,-gamma} = 2^gamma Gamma((d+gamma)/2) / (pi^(d/2) |Gamma(-gamma/2)|)`.
pub fn generator_constant(dim: usize, gamma_index: f64) -> f64 {
    let d = dim as f64;
    let half = 0.5 * gamma_index;
    // |Gamma(-g/2)| = Gamma(1 - g/2) / (g/2)
    let abs_gamma = gamma(1.0 - half) / half;
    2f64.powf(gamma_index) * gamma(0.5 * (d + gamma_index)) / (std::f64::consts::PI.powf(0.5 * d) * abs_gamma)
}

/// Radius of the excluded ball, relative to the spatial radius of the bump.
const EXCLUSION: f64 = 1e-3;
/// Absolute tolerance of the principal value integral per unit `||phi||_inf`.
const PV_ABS_TOL: f64 = 1e-12;

/// `Delta^(gamma/2) phi(u, z)` as the principal value
/// `A int (phi(z + y) - phi(z)) |y|^(-1-gamma) dy`.
pub fn fractional_laplacian(phi: &TestFunction, gamma_index: f64, at: (f64, f64)) -> Result<f64> {
    if !(gamma_index > 0.0 && gamma_index < 2.0) {
        return Err(Error::InvalidParams(format!("fractional order {gamma_index} outside (0, 2)")));
    }
    let (u, z) = at;
    let constant = generator_constant(1, gamma_index);
    let (lo, hi) = phi.space_support();
    let eps = EXCLUSION * phi.radius.1;
    let v0 = phi.value(u, z);
    // beyond `reach` both shifted values vanish
    let reach = (z - lo).abs().max((z - hi).abs()).max(2.0 * eps);
    let mut breaks = vec![eps, reach];
    for edge in [(z - lo).abs(), (z - hi).abs()] {
        if edge > eps && edge < reach {
            breaks.push(edge);
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let est = adaptive(
        |y: f64| (phi.value(u, z + y) + phi.value(u, z - y) - 2.0 * v0) * y.powf(-1.0 - gamma_index),
        &breaks,
        1e-10,
        PV_ABS_TOL * phi.sup_norm(),
        4000,
    )?;
    let tail = -2.0 * v0 * reach.powf(-gamma_index) / gamma_index;
    let ball = phi.d_space2(u, z) * eps.powf(2.0 - gamma_index) / (2.0 - gamma_index);
    Ok(constant * (est.value + tail + ball))
}

/// Weak-form residual and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    /// `int int p~ (d_u + L + b d_z) phi dz du`.
    pub integral: f64,
    /// `phi(s, x)`.
    pub start_value: f64,
    /// `|integral + phi(s, x)|`.
    pub residual: f64,
    pub sup_norm: f64,
}

impl WeakResidual {
    /// Residual in units of `||phi||_inf`.
    pub fn relative(&self) -> f64 {
        self.residual / self.sup_norm
    }
}

/// Residual of
/// `int_s^oo int p~(s,x,u,z) [d_u phi + Delta^(alpha/2) phi + a^beta Delta^(beta/2) phi + b d_z phi] dz du = -phi(s, x)`
/// for a density `(u, z) -> p~(s, x, u, z)`.
#[allow(clippy::too_many_arguments)]
pub fn weak_generator_residual_with<D: Fn(f64, f64) -> f64 + Sync>(
    s: f64,
    x: f64,
    phi: &TestFunction,
    drift: &DriftField,
    params: &KernelParams,
    grid: &GridSpec,
    density: D,
) -> Result<WeakResidual> {
    params.validate()?;
    let start_value = phi.value(s, x);
    let sup_norm = phi.sup_norm();
    let (t_lo, t_hi) = phi.time_support();
    if t_hi <= s {
        return Ok(WeakResidual { integral: 0.0, start_value, residual: start_value.abs(), sup_norm });
    }
    let lo = t_lo.max(s);
    let panels = (grid.n_time / 2).max(4);
    let breaks: Vec<f64> = (0..=panels).map(|j| lo + (t_hi - lo) * j as f64 / panels as f64).collect();
    let time_rule = Rule::composite(&breaks, 8);
    let layout = SpaceLayout::new(grid);
    let weight = params.weight();
    let shift = drift.translation_invariant().unwrap_or(0.0);
    let mut singular = drift.singular_points();
    let (z_lo, z_hi) = phi.space_support();
    singular.extend([z_lo, z_hi]);
    let mut integral = 0.0;
    for (&u, &wu) in time_rule.nodes.iter().zip(&time_rule.weights) {
        let elapsed = u - s;
        let w = natural_width(params, elapsed.max(f64::MIN_POSITIVE));
        let peaks = [(x, w), (x + shift * elapsed, w), (phi.center.1, 0.5 * phi.radius.1)];
        let rule = layout.rule(&peaks, &singular);
        let mut inner = 0.0;
        for (&z, &wz) in rule.nodes.iter().zip(&rule.weights) {
            let p = density(u, z);
            if p == 0.0 {
                continue;
            }
            let mut l = phi.d_time(u, z) + fractional_laplacian(phi, params.alpha, (u, z))?;
            if weight > 0.0 {
                l += weight * fractional_laplacian(phi, params.beta, (u, z))?;
            }
            l += drift.value(u, z) * phi.d_space(u, z);
            inner += wz * p * l;
        }
        integral += wu * inner;
    }
    Ok(WeakResidual { integral, start_value, residual: (integral + start_value).abs(), sup_norm })
}

/// [`weak_generator_residual_with`] for the partial sum `p~_N` of the series.
#[allow(clippy::too_many_arguments)]
pub fn weak_generator_residual(
    s: f64,
    x: f64,
    phi: &TestFunction,
    drift: &DriftField,
    kernel: &TabulatedKernel,
    grid: &GridSpec,
    order: usize,
) -> Result<WeakResidual> {
    let params = *crate::kernel::Kernel1d::params(kernel);
    let horizon = phi.time_support().1 - s;
    if horizon <= 0.0 {
        return weak_generator_residual_with(s, x, phi, drift, &params, grid, |_, _| 0.0);
    }
    let mut solver = SeriesSolver::new(kernel, drift.clone(), s, x, horizon, grid, &[])?;
    solver.solve(order)?;
    weak_generator_residual_with(s, x, phi, drift, &params, grid, |u, z| {
        if u > s {
            solver.field_sum(order, u, z).unwrap_or(0.0)
        } else {
            0.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_constant_for_cauchy() {
        assert!((generator_constant(1, 1.0) - 1.0 / std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn bump_derivatives_match_differences() {
        let phi = TestFunction::new((1.0, 0.5), (0.4, 0.8), 2.0).unwrap();
        let (u, z) = (1.1, 0.2);
        let h = 1e-5;
        let du = (phi.value(u + h, z) - phi.value(u - h, z)) / (2.0 * h);
        let dz = (phi.value(u, z + h) - phi.value(u, z - h)) / (2.0 * h);
        let dzz = (phi.value(u, z + h) - 2.0 * phi.value(u, z) + phi.value(u, z - h)) / (h * h);
        assert!((phi.d_time(u, z) - du).abs() < 1e-7);
        assert!((phi.d_space(u, z) - dz).abs() < 1e-7);
        assert!((phi.d_space2(u, z) - dzz).abs() < 1e-4);
        assert_eq!(phi.value(2.0, 0.5), 0.0);
    }

    #[test]
    fn fractional_laplacian_is_linear_and_equivariant() {
        let phi = TestFunction::new((0.0, 0.3), (1.0, 1.0), 1.0).unwrap();
        let zero = TestFunction { amplitude: 0.0, ..phi };
        assert_eq!(fractional_laplacian(&zero, 1.5, (0.0, 0.1)).unwrap(), 0.0);
        let double = TestFunction { amplitude: 2.0, ..phi };
        let a = fractional_laplacian(&phi, 1.5, (0.0, 0.1)).unwrap();
        let b = fractional_laplacian(&double, 1.5, (0.0, 0.1)).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
        let shifted = TestFunction { center: (0.0, 0.8), ..phi };
        let c = fractional_laplacian(&shifted, 1.5, (0.0, 0.6)).unwrap();
        assert!((c - a).abs() < 1e-8, "{c} vs {a}");
    }

    /// `-(1/pi) int_0^oo xi^gamma Phi(xi) cos(xi (z - z0)) d xi` with
    /// `Phi(xi) = 2 int_0^R phi(z0 + v) cos(v xi) dv` for a bump even about `z0`.
    fn spectral_oracle(phi: &TestFunction, gamma: f64, u: f64, z: f64) -> f64 {
        let r = phi.radius.1;
        let inner_breaks: Vec<f64> = (0..=400).map(|i| r * i as f64 / 400.0).collect();
        let inner = Rule::composite(&inner_breaks, 10);
        let transform = |xi: f64| 2.0 * inner.integrate(|v| phi.value(u, phi.center.1 + v) * (v * xi).cos());
        let outer_breaks: Vec<f64> = (0..=1500).map(|i| 0.4 * i as f64).collect();
        let outer = Rule::composite(&outer_breaks, 10);
        let d = z - phi.center.1;
        -outer.integrate(|xi| xi.powf(gamma) * transform(xi) * (xi * d).cos()) / std::f64::consts::PI
    }

    #[test]
    fn fractional_laplacian_matches_symbol() {
        let phi = TestFunction::new((0.0, 0.3), (1.0, 1.0), 1.0).unwrap();
        let scale = fractional_laplacian(&phi, 1.5, (0.0, 0.3)).unwrap().abs();
        for z in [0.1, 0.9, 2.0] {
            let direct = fractional_laplacian(&phi, 1.5, (0.0, z)).unwrap();
            let oracle = spectral_oracle(&phi, 1.5, 0.0, z);
            assert!((direct - oracle).abs() <= 1e-4 * scale, "z = {z}: {direct} vs {oracle}");
        }
    }
}
