//! Interpolated kernel for bulk evaluation.
//!
//! The density is stored as `ln(w^d p_d(t, w rho))` where `w(t)` is a
//! smooth natural length and `rho = sinh(xi)`, on a uniform `(ln t, xi)`
//! lattice. For `a = 0` self-similarity removes the time axis. Weights
//! `a > 0` are mapped onto `a = 1` first. Lookups outside the lattice fall
//! back to direct inversion.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::Result;
use crate::kernel::{density_radial, ExactKernel, Kernel1d, KernelParams, DENSITY_FLOOR};

const XI_STEP: f64 = 0.025;
const XI_MAX: f64 = 20.0;
const TAU_STEP: f64 = 0.125;
/// Unit-weight time range covered by the lattice when `a > 0`.
const UNIT_TIME_RANGE: (f64, f64) = (1e-16, 1e8);
/// Off-lattice points with `t psi(1/r)` below this use the Levy tail.
const FAR_FIELD: f64 = 1e-12;

#[derive(Debug)]
struct Row {
    ln1: Vec<f64>,
    ln3: Vec<f64>,
}

/// Interpolating kernel; time rows are filled on first use, so building
/// is cheap and lookups are thread-safe.
#[derive(Debug, Clone)]
pub struct TabulatedKernel {
    params: KernelParams,
    exact: ExactKernel,
    /// `(time, space, density-1d, density-3d)` factors onto unit weight.
    unit: Option<[f64; 4]>,
    unit_params: KernelParams,
    tau_lo: f64,
    n_tau: usize,
    n_xi: usize,
    rows: Arc<[OnceLock<Row>]>,
}

/// Stencil offsets relative to the node left of the query point.
pub(crate) const STENCIL: [isize; 6] = [-2, -1, 0, 1, 2, 3];

/// Six-point Lagrange weights for nodes at [`STENCIL`] and position `u`.
pub(crate) fn lagrange6(u: f64) -> [f64; 6] {
    let mut w = [1.0; 6];
    for (k, &ok) in STENCIL.iter().enumerate() {
        for &om in STENCIL.iter() {
            if om != ok {
                w[k] *= (u - om as f64) / (ok - om) as f64;
            }
        }
    }
    w
}

impl TabulatedKernel {
    pub fn new(params: KernelParams) -> Result<Self> {
        let exact = ExactKernel::new(params)?;
        let (unit, unit_params) = if params.a > 0.0 {
            let gap = params.alpha - params.beta;
            let a = params.a;
            (
                Some([
                    a.powf(params.alpha * params.beta / gap),
                    a.powf(params.beta / gap),
                    a.powf(params.beta / gap),
                    a.powf(3.0 * params.beta / gap),
                ]),
                KernelParams { a: 1.0, ..params },
            )
        } else {
            (None, params)
        };
        let (tau_lo, n_tau) = match unit {
            None => (0.0, 1),
            Some(_) => {
                let lo = UNIT_TIME_RANGE.0.ln();
                let hi = UNIT_TIME_RANGE.1.ln();
                (lo, ((hi - lo) / TAU_STEP).ceil() as usize + 1)
            }
        };
        let n_xi = (XI_MAX / XI_STEP).round() as usize + 1;
        let rows: Arc<[OnceLock<Row>]> = (0..n_tau).map(|_| OnceLock::new()).collect();
        Ok(Self { params, exact, unit, unit_params, tau_lo, n_tau, n_xi, rows })
    }

    fn row(&self, i: usize) -> &Row {
        self.rows[i].get_or_init(|| {
            let t = self.node_time(i);
            let w = self.width(t);
            let lifted = self.unit_params.with_dim(3);
            let cells: Vec<(f64, f64)> = (0..self.n_xi)
                .into_par_iter()
                .map(|j| {
                    let r = w * (j as f64 * XI_STEP).sinh();
                    let p1 = density_radial(&self.unit_params, t, r).expect("kernel inversion converges") * w;
                    let p3 = density_radial(&lifted, t, r).expect("kernel inversion converges") * w * w * w;
                    (p1.max(DENSITY_FLOOR).ln(), p3.max(DENSITY_FLOOR).ln())
                })
                .collect();
            let (ln1, ln3) = cells.into_iter().unzip();
            Row { ln1, ln3 }
        })
    }

    fn node_time(&self, i: usize) -> f64 {
        if self.unit.is_none() {
            1.0
        } else {
            (self.tau_lo + i as f64 * TAU_STEP).exp()
        }
    }

    /// Natural length in unit-weight variables.
    fn width(&self, t: f64) -> f64 {
        let p = &self.unit_params;
        if self.unit.is_none() {
            t.powf(1.0 / p.alpha)
        } else {
            (t.powf(2.0 / p.alpha) + t.powf(2.0 / p.beta)).sqrt()
        }
    }

    /// Fractional `xi` index and stencil base, or `None` beyond the lattice.
    fn xi_stencil(&self, rho: f64) -> Option<(isize, [f64; 6])> {
        let xi = rho.asinh() / XI_STEP;
        if !(xi <= (self.n_xi - 1) as f64) {
            return None;
        }
        let j0 = (xi.floor() as isize).min(self.n_xi as isize - 4);
        Some((j0, lagrange6(xi - j0 as f64)))
    }

    /// Fractional `tau` row index and stencil base for `a > 0` tables.
    fn tau_stencil(&self, t: f64) -> Option<(isize, [f64; 6])> {
        let tau = (t.ln() - self.tau_lo) / TAU_STEP;
        if !(tau >= 2.0 && tau <= (self.n_tau - 3) as f64) {
            return None;
        }
        let i0 = (tau.floor() as isize).min(self.n_tau as isize - 4);
        Some((i0, lagrange6(tau - i0 as f64)))
    }

    /// Interpolated `ln Phi` or `None` outside the lattice.
    fn lookup(&self, lifted: bool, t: f64, rho: f64) -> Option<f64> {
        let (j0, wx) = self.xi_stencil(rho)?;
        let row = |i: usize| -> f64 {
            let r = self.row(i);
            interp_row(if lifted { &r.ln3 } else { &r.ln1 }, j0, &wx)
        };
        if self.n_tau == 1 {
            return Some(row(0));
        }
        let (i0, wt) = self.tau_stencil(t)?;
        Some(STENCIL.iter().zip(&wt).map(|(&o, w)| w * row((i0 + o) as usize)).sum())
    }

    /// Collapses the table onto one time for repeated spatial lookups.
    pub fn slice(&self, t: f64) -> KernelSlice<'_> {
        let mut slice = KernelSlice { table: self, t, rho_per_x: 0.0, d1: 0.0, d3: 0.0, rows: None };
        if !(t > 0.0) {
            return slice;
        }
        let (tu, space) = match self.unit {
            Some(f) => (t * f[0], f[1]),
            None => (t, 1.0),
        };
        let w = self.width(tu);
        slice.rho_per_x = space / w;
        slice.d1 = self.unit.map_or(1.0, |f| f[2]) / w;
        slice.d3 = self.unit.map_or(1.0, |f| f[3]) / (w * w * w);
        slice.rows = if self.n_tau == 1 {
            let r = self.row(0);
            Some((Cow::Borrowed(&r.ln1[..]), Cow::Borrowed(&r.ln3[..])))
        } else {
            self.tau_stencil(tu).map(|(i0, wt)| {
                let rows: Vec<&Row> = STENCIL.iter().map(|&o| self.row((i0 + o) as usize)).collect();
                let mut ln1 = vec![0.0; self.n_xi];
                let mut ln3 = vec![0.0; self.n_xi];
                for (r, w) in rows.iter().zip(&wt) {
                    for j in 0..self.n_xi {
                        ln1[j] += w * r.ln1[j];
                        ln3[j] += w * r.ln3[j];
                    }
                }
                (Cow::Owned(ln1), Cow::Owned(ln3))
            })
        };
        slice
    }

    fn unit_args(&self, t: f64, x: f64) -> (f64, f64) {
        match self.unit {
            Some(f) => (t * f[0], x.abs() * f[1]),
            None => (t, x.abs()),
        }
    }

    /// Three-dimensional companion density at radius `|x|`.
    pub fn density3(&self, t: f64, x: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        let (tu, r) = self.unit_args(t, x);
        let w = self.width(tu);
        let pref = self.unit.map_or(1.0, |f| f[3]);
        match self.lookup(true, tu, r / w) {
            Some(v) => pref * v.exp() / (w * w * w),
            None => self
                .far_field(3, t, x.abs())
                .unwrap_or_else(|| self.exact.density3(t, x).expect("kernel inversion converges")),
        }
    }

    /// Leading tail `t nu_d(r)` where the next order is below [`FAR_FIELD`]
    /// relative.
    fn far_field(&self, dim: usize, t: f64, r: f64) -> Option<f64> {
        let p = &self.params;
        if !(r > 0.0) || t * p.symbol(1.0 / r) > FAR_FIELD {
            return None;
        }
        let d = dim as f64;
        let mut v = levy_constant(d, p.alpha) * r.powf(-d - p.alpha);
        if p.a > 0.0 {
            v += p.weight() * levy_constant(d, p.beta) * r.powf(-d - p.beta);
        }
        Some(t * v)
    }
}

/// `c` in the Levy density `c |x|^(-d-gamma)` of the symbol `|xi|^gamma`.
fn levy_constant(d: f64, gamma: f64) -> f64 {
    gamma * 2f64.powf(gamma - 1.0) * statrs::function::gamma::gamma(0.5 * (d + gamma))
        / (PI.powf(0.5 * d) * statrs::function::gamma::gamma(1.0 - 0.5 * gamma))
}

fn interp_row(row: &[f64], j0: isize, wx: &[f64; 6]) -> f64 {
    STENCIL.iter().zip(wx).map(|(&o, w)| w * row[(j0 + o).unsigned_abs()]).sum()
}

/// A [`TabulatedKernel`] at one fixed time.
#[derive(Debug, Clone)]
pub struct KernelSlice<'a> {
    table: &'a TabulatedKernel,
    t: f64,
    rho_per_x: f64,
    d1: f64,
    d3: f64,
    rows: Option<(Cow<'a, [f64]>, Cow<'a, [f64]>)>,
}

impl KernelSlice<'_> {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(self.t > 0.0) {
            return 0.0;
        }
        let hit = self.rows.as_ref().and_then(|(ln1, _)| {
            let (j0, wx) = self.table.xi_stencil(x.abs() * self.rho_per_x)?;
            Some(self.d1 * interp_row(ln1, j0, &wx).exp())
        });
        hit.unwrap_or_else(|| self.table.density(self.t, x))
    }

    pub fn density3(&self, x: f64) -> f64 {
        if !(self.t > 0.0) {
            return 0.0;
        }
        let hit = self.rows.as_ref().and_then(|(_, ln3)| {
            let (j0, wx) = self.table.xi_stencil(x.abs() * self.rho_per_x)?;
            Some(self.d3 * interp_row(ln3, j0, &wx).exp())
        });
        hit.unwrap_or_else(|| self.table.density3(self.t, x))
    }

    pub fn gradient(&self, x: f64) -> f64 {
        -2.0 * PI * x * self.density3(x)
    }
}

impl Kernel1d for TabulatedKernel {
    fn params(&self) -> &KernelParams {
        &self.params
    }

    fn density(&self, t: f64, x: f64) -> f64 {
        if !(t > 0.0) {
            return 0.0;
        }
        let (tu, r) = self.unit_args(t, x);
        let w = self.width(tu);
        let pref = self.unit.map_or(1.0, |f| f[2]);
        match self.lookup(false, tu, r / w) {
            Some(v) => pref * v.exp() / w,
            None => self.far_field(1, t, x.abs()).unwrap_or_else(|| self.exact.density(t, x)),
        }
    }

    fn gradient(&self, t: f64, x: f64) -> f64 {
        -2.0 * PI * x * self.density3(t, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn check(params: KernelParams, t_min: f64, t_max: f64) {
        let table = TabulatedKernel::new(params).unwrap();
        let exact = ExactKernel::new(params).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let t = (rng.gen_range(t_min.ln()..t_max.ln())).exp();
            let x = rng.gen_range(-8.0f64..8.0).exp() * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let d = table.density(t, x);
            let e = exact.density(t, x);
            assert!((d / e - 1.0).abs() < 1e-7, "density t={t} x={x}: {d} vs {e}");
            let g = table.gradient(t, x);
            let ge = exact.gradient(t, x);
            assert!((g / ge - 1.0).abs() < 1e-7, "gradient t={t} x={x}: {g} vs {ge}");
        }
    }

    #[test]
    fn matches_exact_pure_stable() {
        check(KernelParams::stable(1.5, 1).unwrap(), 1e-8, 1e3);
    }

    #[test]
    fn matches_exact_mixed() {
        check(KernelParams::new(1.5, 1.2, 1.0, 1).unwrap(), 1e-3, 1e2);
        check(KernelParams::new(1.7, 1.1, 0.5, 1).unwrap(), 1e-2, 1e1);
    }

    #[test]
    fn slices_agree_with_lookups() {
        let p = KernelParams::new(1.5, 1.2, 2.0, 1).unwrap();
        let table = TabulatedKernel::new(p).unwrap();
        for t in [0.13, 0.5, 0.97, 3.0] {
            let slice = table.slice(t);
            for x in [0.0, -0.3, 2.0, 40.0] {
                assert!((slice.density(x) / table.density(t, x) - 1.0).abs() < 1e-13);
                assert!((slice.gradient(x) - table.gradient(t, x)).abs() <= 1e-13 * table.gradient(t, x).abs());
            }
        }
        assert_eq!(table.slice(0.0).density(1.0), 0.0);
    }

    #[test]
    fn far_field_matches_inversion() {
        let cases = [
            KernelParams::stable(1.5, 1).unwrap(),
            KernelParams::new(1.5, 1.2, 1.0, 1).unwrap(),
            KernelParams::new(1.8, 1.1, 2.0, 1).unwrap(),
        ];
        for p in cases {
            let table = TabulatedKernel::new(p).unwrap();
            let exact = ExactKernel::new(p).unwrap();
            for (t, r) in [(1.0, 1e12), (1e-24, 1e-6), (1e-30, 0.5)] {
                let tail = table.far_field(1, t, r).expect("far enough");
                assert!((tail / exact.density(t, r) - 1.0).abs() < 1e-8, "{p:?} {t} {r}");
                let tail3 = table.far_field(3, t, r).unwrap();
                assert!((tail3 / exact.density3(t, r).unwrap() - 1.0).abs() < 1e-8, "{p:?} {t} {r}");
            }
            assert!(table.far_field(1, 1.0, 10.0).is_none());
        }
    }

    #[test]
    fn outside_range_falls_back() {
        let p = KernelParams::new(1.5, 1.2, 1.0, 1).unwrap();
        let table = TabulatedKernel::new(p).unwrap();
        let exact = ExactKernel::new(p).unwrap();
        assert_eq!(table.density(1e12, 0.3), exact.density(1e12, 0.3));
        let far = exact.density(0.5, 1e12);
        assert!((table.density(0.5, 1e12) - far).abs() < 1e-10 * far);
        assert_eq!(table.density(0.0, 0.3), 0.0);
    }
}
