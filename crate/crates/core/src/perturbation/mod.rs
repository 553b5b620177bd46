//! Perturbation series `p~ = sum_n p_n` for a one-dimensional drift.
//!
//! For a fixed start `(s, x)` the terms `p_n(s, x, s + tau, z)` are stored
//! on a self-similar lattice: rows are log-uniform in the elapsed time
//! `tau`, columns uniform in `xi` with `z = x + w(tau) sinh(xi)`. Order `n`
//! is the integral of order `n - 1` against the kernel gradient, computed
//! with a graded time rule and a spatial rule refined towards the peaks of
//! both factors. Drifts invariant under translations reuse one lattice for
//! every start point.

mod generator;

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use generator::{
    fractional_laplacian, generator_constant, weak_generator_residual, weak_generator_residual_with, TestFunction,
    WeakResidual,
};

use crate::bounds::BoundVerdict;
use crate::drift::DriftField;
use crate::error::{Error, Result};
use crate::kernel::{Kernel1d, KernelParams};
use crate::quadrature::{focused_rule, graded_nodes, Focus, GradedNode, GridSpec, Rule, SingularWeight, ABS_FLOOR, SPACE_ORDER, TIME_ORDER};
use crate::table::{lagrange6, KernelSlice, TabulatedKernel, STENCIL};

/// Smallest stored elapsed time, relative to the horizon.
pub const TIME_FLOOR: f64 = 1e-4;
/// Lattice columns cover `|xi| <= XI_RANGE`.
pub const XI_RANGE: f64 = 8.0;
/// Slice suprema are taken over `|z - x| <= SLICE_RHO w(tau)`.
pub const SLICE_RHO: f64 = 20.0;

/// Innermost panel at a drift singularity, relative to the narrowest peak.
const SINGULAR_INNER: f64 = 1e-8;

/// Smooth length scale `(tau^(2/alpha) + (a^beta tau)^(2/beta))^(1/2)`.
pub fn natural_width(params: &KernelParams, tau: f64) -> f64 {
    let mut v = tau.powf(2.0 / params.alpha);
    if params.a > 0.0 {
        v += (params.weight() * tau).powf(2.0 / params.beta);
    }
    v.sqrt()
}

/// Spatial rules for space-time integrals, derived from a [`GridSpec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SpaceLayout {
    pub l: f64,
    pub ratio: f64,
    pub max_panel: f64,
}

impl SpaceLayout {
    pub fn new(grid: &GridSpec) -> Self {
        let n = grid.n_space as f64;
        Self { l: grid.l, ratio: 1.0 + 256.0 / n, max_panel: 2.0 * grid.l * SPACE_ORDER as f64 / n }
    }

    /// Rule on `[min - L, max + L]` refined to each peak `(centre, width)`
    /// and to the singular points of the drift.
    pub fn rule(&self, peaks: &[(f64, f64)], singular: &[f64]) -> Rule {
        let lo = peaks.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - self.l;
        let hi = peaks.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + self.l;
        let narrow = peaks.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let mut foci: Vec<Focus> = peaks.iter().map(|&(at, w)| Focus { at, inner: 0.5 * w }).collect();
        foci.extend(singular.iter().map(|&at| Focus { at, inner: SINGULAR_INNER * narrow }));
        focused_rule(lo, hi, &foci, SPACE_ORDER, self.ratio, self.max_panel)
    }
}

/// Graded rule on `(0, tau)` matching the `(.)^(-1/alpha)` gradient blow-up.
pub(crate) fn graded_time_rule(grid: &GridSpec, params: &KernelParams, tau: f64) -> Result<Vec<GradedNode>> {
    graded_time_rule_with(grid, params, tau, 0.0)
}

/// Like [`graded_time_rule`] when an endpoint sits on a drift singularity
/// of order `sigma`, which steepens the blow-up to `(.)^(-(1+sigma)/alpha)`.
pub(crate) fn graded_time_rule_with(
    grid: &GridSpec,
    params: &KernelParams,
    tau: f64,
    sigma: f64,
) -> Result<Vec<GradedNode>> {
    let weight = SingularWeight::new((1.0 + sigma) / params.alpha)?;
    let grading = grid.grading.max(weight.grading_power());
    Ok(graded_nodes(tau, grid.panels_per_half(), TIME_ORDER, grading, weight))
}

/// Series terms and diagnostics at one point `(s, x, t, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub s: f64,
    pub x: f64,
    pub t: f64,
    pub y: f64,
    /// `p(s, x, t, y)`.
    pub base: f64,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    /// Largest ratio of consecutive slice suprema from order one on.
    pub tail_ratio: f64,
    pub converged: bool,
    /// Geometric estimate `|p_N| r / (1 - r)` of the omitted tail.
    pub tail_estimate: f64,
    /// Orders past this one were dropped by the early-stopping rule.
    pub stopped_at: Option<usize>,
    /// Change of the partial sum under the last grid refinement.
    pub quadrature_error: f64,
    pub bound_check: Option<BoundVerdict>,
}

impl SeriesResult {
    pub fn sum(&self) -> f64 {
        *self.partial_sums.last().expect("order zero is always present")
    }
}

/// One interpolating view of a stored order at a fixed elapsed time.
struct FieldSlice<'a> {
    x: f64,
    width: f64,
    inv_d_xi: f64,
    values: Cow<'a, [f64]>,
}

impl FieldSlice<'_> {
    fn value(&self, z: f64) -> f64 {
        let f = ((z - self.x) / self.width).asinh() * self.inv_d_xi + XI_RANGE * self.inv_d_xi;
        let n = self.values.len();
        if !(f >= 0.0 && f <= (n - 1) as f64) {
            return 0.0;
        }
        let j0 = (f.floor() as isize).clamp(2, n as isize - 4);
        let w = lagrange6(f - j0 as f64);
        STENCIL.iter().zip(&w).map(|(&o, w)| w * self.values[(j0 + o) as usize]).sum::<f64>() / self.width
    }
}

enum Source<'a> {
    Base { slice: KernelSlice<'a>, x: f64 },
    Field(FieldSlice<'a>),
    Zero,
}

impl Source<'_> {
    fn value(&self, z: f64) -> f64 {
        match self {
            Source::Base { slice, x } => slice.density(z - x),
            Source::Field(f) => f.value(z),
            Source::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct ExtraRow {
    tau: f64,
    width: f64,
    /// Normalised values per computed order, starting at order one.
    orders: Vec<Vec<f64>>,
}

/// Series terms from a fixed start `(s, x)` up to a horizon.
#[derive(Debug, Clone)]
pub struct SeriesSolver<'k> {
    kernel: &'k TabulatedKernel,
    params: KernelParams,
    drift: DriftField,
    singular: Vec<f64>,
    s: f64,
    x: f64,
    horizon: f64,
    grid: GridSpec,
    layout: SpaceLayout,
    ln_tau0: f64,
    d_ln_tau: f64,
    taus: Vec<f64>,
    widths: Vec<f64>,
    d_xi: f64,
    xis: Vec<f64>,
    /// `w(tau) p_n` on the lattice for `n >= 1`, row-major.
    fields: Vec<Vec<f64>>,
    extras: Vec<ExtraRow>,
    /// Supremum of `|p_n| / p` on the final row, per computed order.
    slice_sups: Vec<f64>,
    /// Orders beyond this are zero by the early-stopping rule.
    stopped_at: Option<usize>,
}

impl<'k> SeriesSolver<'k> {
    /// Lattice for elapsed times up to `horizon`; `extra_times` get exact
    /// rows of their own.
    pub fn new(
        kernel: &'k TabulatedKernel,
        drift: DriftField,
        s: f64,
        x: f64,
        horizon: f64,
        grid: &GridSpec,
        extra_times: &[f64],
    ) -> Result<Self> {
        let params = *kernel.params();
        params.require_perturbation_grade()?;
        grid.validate()?;
        if grid.n_time < 8 {
            return Err(Error::InvalidParams("series lattice needs n_time >= 8".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParams("series horizon must be positive".into()));
        }
        if let Some(bad) = extra_times.iter().find(|&&t| !(t > 0.0 && t <= horizon)) {
            return Err(Error::InvalidParams(format!("extra time {bad} outside (0, {horizon}]")));
        }
        let n_rows = grid.n_time;
        let ln_tau0 = (TIME_FLOOR * horizon).ln();
        let d_ln_tau = -TIME_FLOOR.ln() / (n_rows - 1) as f64;
        let taus: Vec<f64> = (0..n_rows)
            .map(|i| if i + 1 == n_rows { horizon } else { (ln_tau0 + i as f64 * d_ln_tau).exp() })
            .collect();
        let widths = taus.iter().map(|&t| natural_width(&params, t)).collect();
        let n_xi = grid.n_space + 1;
        let d_xi = 2.0 * XI_RANGE / grid.n_space as f64;
        let xis = (0..n_xi).map(|j| -XI_RANGE + j as f64 * d_xi).collect();
        let extras = extra_times
            .iter()
            .map(|&tau| ExtraRow { tau, width: natural_width(&params, tau), orders: Vec::new() })
            .collect();
        Ok(Self {
            kernel,
            params,
            singular: drift.singular_points(),
            drift,
            s,
            x,
            horizon,
            grid: *grid,
            layout: SpaceLayout::new(grid),
            ln_tau0,
            d_ln_tau,
            taus,
            widths,
            d_xi,
            xis,
            fields: Vec::new(),
            extras,
            slice_sups: Vec::new(),
            stopped_at: None,
        })
    }

    pub fn start(&self) -> (f64, f64) {
        (self.s, self.x)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift(&self) -> &DriftField {
        &self.drift
    }

    /// Highest order stored on the lattice.
    pub fn computed_order(&self) -> usize {
        self.fields.len()
    }

    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }

    /// `sup |p_n| / p` over the final row, for `n = 1..=computed_order`.
    pub fn slice_sups(&self) -> &[f64] {
        &self.slice_sups
    }

    /// Largest ratio of consecutive slice suprema, from order one on.
    pub fn tail_ratio(&self) -> f64 {
        self.slice_sups
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .fold(0.0, f64::max)
    }

    fn n_xi(&self) -> usize {
        self.xis.len()
    }

    /// Stores orders up to `max_order` unless the series stops earlier.
    pub fn solve(&mut self, max_order: usize) -> Result<()> {
        while self.fields.len() < max_order && self.stopped_at.is_none() {
            let n = self.fields.len() + 1;
            if self.drift.is_zero() {
                self.stopped_at = Some(0);
                break;
            }
            let n_xi = self.n_xi();
            let nodes: Vec<(f64, f64)> = self
                .taus
                .iter()
                .zip(&self.widths)
                .flat_map(|(&tau, &w)| self.xis.iter().map(move |&xi| (tau, w, xi)))
                .map(|(tau, w, xi)| (tau, w * xi.sinh()))
                .collect();
            let widths = &self.widths;
            let values: Vec<f64> = nodes
                .par_iter()
                .enumerate()
                .map(|(k, &(tau, dz))| widths[k / n_xi] * self.convolve(n, tau, self.x + dz))
                .collect::<Vec<f64>>();
            let extra_values: Vec<Vec<f64>> = self
                .extras
                .iter()
                .map(|row| {
                    self.xis
                        .par_iter()
                        .map(|&xi| row.width * self.convolve(n, row.tau, self.x + row.width * xi.sinh()))
                        .collect()
                })
                .collect();
            let sup = self.final_row_sup(&values);
            self.fields.push(values);
            for (row, v) in self.extras.iter_mut().zip(extra_values) {
                row.orders.push(v);
            }
            self.slice_sups.push(sup);
            self.check_growth(n)?;
            let tol = self.grid.tol;
            let k = self.slice_sups.len();
            if k >= 2 && self.slice_sups[k - 1] < tol && self.slice_sups[k - 2] < tol {
                self.stopped_at = Some(n);
            }
        }
        Ok(())
    }

    fn final_row_sup(&self, values: &[f64]) -> f64 {
        let n_xi = self.n_xi();
        let row = &values[(self.taus.len() - 1) * n_xi..];
        let w = *self.widths.last().expect("lattice has rows");
        let slice = self.kernel.slice(self.horizon);
        self.xis
            .iter()
            .zip(row)
            .filter(|(xi, _)| xi.sinh().abs() <= SLICE_RHO)
            .map(|(&xi, &v)| (v / w).abs() / slice.density(w * xi.sinh()))
            .fold(0.0, f64::max)
    }

    fn check_growth(&self, n: usize) -> Result<()> {
        let m = &self.slice_sups;
        if m.len() >= 4 {
            let k = m.len();
            if (k - 3..k).all(|i| m[i] > m[i - 1] && m[i - 1] > 0.0) {
                return Err(Error::DivergenceDetected { order: n });
            }
        }
        Ok(())
    }

    fn width(&self, tau: f64) -> f64 {
        natural_width(&self.params, tau)
    }

    fn field_slice(&self, n: usize, tau: f64) -> FieldSlice<'_> {
        let inv_d_xi = 1.0 / self.d_xi;
        let width = self.width(tau);
        if let Some(row) = self.extras.iter().find(|r| (r.tau / tau - 1.0).abs() < 1e-12) {
            return FieldSlice { x: self.x, width, inv_d_xi, values: Cow::Borrowed(&row.orders[n - 1]) };
        }
        let n_xi = self.n_xi();
        let n_rows = self.taus.len();
        let field = &self.fields[n - 1];
        let f = (tau.ln() - self.ln_tau0) / self.d_ln_tau;
        let values = if f <= 0.0 {
            Cow::Borrowed(&field[..n_xi])
        } else if f >= (n_rows - 1) as f64 {
            Cow::Borrowed(&field[(n_rows - 1) * n_xi..])
        } else {
            let i0 = (f.floor() as isize).clamp(2, n_rows as isize - 4);
            let w = lagrange6(f - i0 as f64);
            let mut row = vec![0.0; n_xi];
            for (&o, wk) in STENCIL.iter().zip(&w) {
                let base = (i0 + o) as usize * n_xi;
                for (r, v) in row.iter_mut().zip(&field[base..base + n_xi]) {
                    *r += wk * v;
                }
            }
            Cow::Owned(row)
        };
        FieldSlice { x: self.x, width, inv_d_xi, values }
    }

    fn source(&self, n: usize, tau: f64) -> Source<'_> {
        if n == 0 {
            Source::Base { slice: self.kernel.slice(tau), x: self.x }
        } else if self.is_dropped(n) {
            Source::Zero
        } else {
            Source::Field(self.field_slice(n, tau))
        }
    }

    fn is_dropped(&self, n: usize) -> bool {
        self.stopped_at.is_some_and(|m| n > m)
    }

    /// `-int_0^tau int p_(n-1)(s, x, s+u, z) b(s+u, z) p'(tau-u, y-z) dz du`.
    fn convolve(&self, n: usize, tau: f64, y: f64) -> f64 {
        let rule = graded_time_rule(&self.grid, &self.params, tau).expect("exponent validated at construction");
        let mut total = 0.0;
        for node in &rule {
            let (u, r, wu) = (node.from_start, node.from_end, node.weight);
            let src = self.source(n - 1, u);
            if let Source::Zero = src {
                return 0.0;
            }
            let grad = self.kernel.slice(r);
            let space = self.layout.rule(&[(self.x, self.width(u)), (y, self.width(r))], &self.singular);
            let time = self.s + u;
            let inner: f64 = space
                .nodes
                .iter()
                .zip(&space.weights)
                .map(|(&z, &wz)| wz * src.value(z) * self.drift.value(time, z) * grad.gradient(y - z))
                .sum();
            total += wu * inner;
        }
        -total
    }

    /// `p_n(s, x, t, y)`, integrated directly from the stored order `n - 1`.
    pub fn term(&self, n: usize, t: f64, y: f64) -> Result<f64> {
        let tau = self.elapsed(t)?;
        if n == 0 {
            return Ok(self.kernel.density(tau, y - self.x));
        }
        if self.is_dropped(n) || self.drift.is_zero() {
            return Ok(0.0);
        }
        if n - 1 > self.fields.len() {
            return Err(Error::InvalidParams(format!("order {} is not stored", n - 1)));
        }
        Ok(self.convolve(n, tau, y))
    }

    /// `p_n(s, x, t, z)` read from the lattice.
    pub fn field(&self, n: usize, t: f64, z: f64) -> Result<f64> {
        let tau = self.elapsed(t)?;
        if n == 0 {
            return Ok(self.kernel.density(tau, z - self.x));
        }
        if self.is_dropped(n) || self.drift.is_zero() {
            return Ok(0.0);
        }
        if n > self.fields.len() {
            return Err(Error::InvalidParams(format!("order {n} is not stored")));
        }
        Ok(self.field_slice(n, tau).value(z))
    }

    /// `p~_N(s, x, t, z)` read from the lattice.
    pub fn field_sum(&self, order: usize, t: f64, z: f64) -> Result<f64> {
        (0..=order.min(self.fields.len())).map(|n| self.field(n, t, z)).sum()
    }

    /// Largest `|p_n|` on the lattice row at elapsed time `tau`.
    pub fn row_sup(&self, n: usize, tau: f64) -> f64 {
        if n == 0 {
            return self.kernel.density(tau, 0.0);
        }
        if self.is_dropped(n) || n > self.fields.len() {
            return 0.0;
        }
        let slice = self.field_slice(n, tau);
        slice.values.iter().map(|v| v.abs()).fold(0.0, f64::max) / slice.width
    }

    fn elapsed(&self, t: f64) -> Result<f64> {
        let tau = t - self.s;
        if !(tau > 0.0 && tau <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::InvalidParams(format!("time {t} outside the solved window")));
        }
        Ok(tau.min(self.horizon))
    }

    /// Terms `p_0..=p_order` at `(t, y)` with diagnostics.
    pub fn result_at(&self, order: usize, t: f64, y: f64) -> Result<SeriesResult> {
        let mut terms = Vec::with_capacity(order + 1);
        let mut partial_sums = Vec::with_capacity(order + 1);
        let mut sum = 0.0;
        for n in 0..=order {
            let v = self.term(n, t, y)?;
            sum += v;
            terms.push(v);
            partial_sums.push(sum);
        }
        let r = self.tail_ratio();
        let converged = r < 1.0;
        let last = terms.last().copied().unwrap_or(0.0).abs();
        Ok(SeriesResult {
            s: self.s,
            x: self.x,
            t,
            y,
            base: terms[0],
            terms,
            partial_sums,
            tail_ratio: r,
            converged,
            tail_estimate: if converged { last * r / (1.0 - r) } else { f64::INFINITY },
            stopped_at: self.stopped_at,
            quadrature_error: 0.0,
            bound_check: None,
        })
    }
}

/// A solved series whose partial sums at the probe points `(t, y)` changed
/// by at most `grid.tol` relative to their largest value under the last
/// refinement of the grid.
#[derive(Debug, Clone)]
pub struct SettledSolver<'k> {
    pub solver: SeriesSolver<'k>,
    /// Grid of the accepted level.
    pub grid: GridSpec,
    /// Largest change of a probed partial sum under the last refinement.
    pub quadrature_error: f64,
    /// Per-probe changes under the last refinement.
    pub changes: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn settled_solver<'k>(
    kernel: &'k TabulatedKernel,
    drift: &DriftField,
    s: f64,
    x: f64,
    horizon: f64,
    grid: &GridSpec,
    extra_times: &[f64],
    order: usize,
    probes: &[(f64, f64)],
) -> Result<SettledSolver<'k>> {
    let run = |g: &GridSpec| -> Result<(SeriesSolver<'k>, Vec<f64>)> {
        let mut solver = SeriesSolver::new(kernel, drift.clone(), s, x, horizon, g, extra_times)?;
        solver.solve(order)?;
        let sums = probes
            .iter()
            .map(|&(t, y)| (0..=order).map(|n| solver.term(n, t, y)).sum::<Result<f64>>())
            .collect::<Result<Vec<f64>>>()?;
        Ok((solver, sums))
    };
    let mut spec = *grid;
    let (solver, mut prev) = run(&spec)?;
    if drift.is_zero() {
        let changes = vec![0.0; probes.len()];
        return Ok(SettledSolver { solver, grid: spec, quadrature_error: 0.0, changes });
    }
    for _ in 0..grid.max_refine {
        spec = spec.refined();
        let (solver, cur) = run(&spec)?;
        let scale = cur.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let changes: Vec<f64> = cur.iter().zip(&prev).map(|(c, p)| (c - p).abs()).collect();
        let worst = changes.iter().copied().fold(0.0, f64::max);
        if worst <= grid.tol * scale + ABS_FLOOR {
            return Ok(SettledSolver { solver, grid: spec, quadrature_error: worst, changes });
        }
        prev = cur;
    }
    Err(Error::NumericalNonConvergence(format!(
        "series partial sums did not settle after {} refinements",
        grid.max_refine
    )))
}

/// Series results at several end points sharing one start, on a grid
/// refined until successive levels agree.
#[allow(clippy::too_many_arguments)]
pub fn series_sum_many(
    order: usize,
    s: f64,
    x: f64,
    t: f64,
    ys: &[f64],
    drift: &DriftField,
    kernel: &TabulatedKernel,
    grid: &GridSpec,
) -> Result<Vec<SeriesResult>> {
    check_window(s, t)?;
    let probes: Vec<(f64, f64)> = ys.iter().map(|&y| (t, y)).collect();
    let settled = settled_solver(kernel, drift, s, x, t - s, grid, &[], order, &probes)?;
    ys.iter()
        .zip(&settled.changes)
        .map(|(&y, &change)| {
            let mut r = settled.solver.result_at(order, t, y)?;
            r.quadrature_error = change;
            Ok(r)
        })
        .collect()
}

/// `p_n(s, x, t, y)`.
pub fn series_term(
    n: usize,
    s: f64,
    x: f64,
    t: f64,
    y: f64,
    drift: &DriftField,
    params: &KernelParams,
    grid: &GridSpec,
) -> Result<f64> {
    check_window(s, t)?;
    let kernel = TabulatedKernel::new(*params)?;
    let mut results = series_sum_many(n, s, x, t, &[y], drift, &kernel, grid)?;
    Ok(results.pop().map(|r| r.terms.get(n).copied().unwrap_or(0.0)).unwrap_or(0.0))
}

/// Terms `p_0..=p_N` at `(s, x, t, y)`.
pub fn series_sum(
    order: usize,
    s: f64,
    x: f64,
    t: f64,
    y: f64,
    drift: &DriftField,
    params: &KernelParams,
    grid: &GridSpec,
) -> Result<SeriesResult> {
    check_window(s, t)?;
    let kernel = TabulatedKernel::new(*params)?;
    let mut results = series_sum_many(order, s, x, t, &[y], drift, &kernel, grid)?;
    Ok(results.pop().expect("one end point requested"))
}

fn check_window(s: f64, t: f64) -> Result<()> {
    if !(s < t) {
        return Err(Error::InvalidParams(format!("need s < t, got s = {s}, t = {t}")));
    }
    Ok(())
}

/// Residual of a Chapman-Kolmogorov identity together with its scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkResidual {
    /// `|lhs - rhs|`.
    pub residual: f64,
    /// The integral over the intermediate point.
    pub lhs: f64,
    /// The direct value.
    pub rhs: f64,
    /// Largest magnitude of the compared quantity on the final row.
    pub scale: f64,
}

impl CkResidual {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual / self.scale
        } else {
            self.residual
        }
    }
}

/// Integral `int f(z) g(z) dz` for peaks at `(x, w1)` and `(y, w2)`.
fn product_integral(layout: &SpaceLayout, peaks: [(f64, f64); 2], f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> f64 {
    let rule = layout.rule(&peaks, &[]);
    rule.nodes.iter().zip(&rule.weights).map(|(&z, &w)| w * f(z) * g(z)).sum()
}

/// Order-wise Chapman-Kolmogorov residual
/// `|sum_m int p_m(s,x,u,z) p_(n-m)(u,z,t,y) dz - p_n(s,x,t,y)|`.
///
/// Translation-invariant drifts reuse one lattice; other drifts solve a
/// second series from every spatial node, which is slow.
#[allow(clippy::too_many_arguments)]
pub fn check_order_ck(
    n: usize,
    s: f64,
    u: f64,
    t: f64,
    x: f64,
    y: f64,
    drift: &DriftField,
    kernel: &TabulatedKernel,
    grid: &GridSpec,
) -> Result<CkResidual> {
    ck_impl(s, u, t, x, y, drift, kernel, grid, CkMode::Order(n))
}

/// Chapman-Kolmogorov residual of the partial sum `p~_N`.
#[allow(clippy::too_many_arguments)]
pub fn check_ck(
    s: f64,
    u: f64,
    t: f64,
    x: f64,
    y: f64,
    drift: &DriftField,
    kernel: &TabulatedKernel,
    grid: &GridSpec,
    order: usize,
) -> Result<CkResidual> {
    ck_impl(s, u, t, x, y, drift, kernel, grid, CkMode::Sum(order))
}

/// Which Chapman-Kolmogorov identity to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CkMode {
    /// `sum_m int p_m p_(n-m) = p_n`.
    Order(usize),
    /// `int p~_N p~_N = p~_N`, up to the truncation of both factors.
    Sum(usize),
}

impl CkMode {
    fn max_order(self) -> usize {
        match self {
            CkMode::Order(n) | CkMode::Sum(n) => n,
        }
    }
}

impl SeriesSolver<'_> {
    /// Chapman-Kolmogorov residual from `x` over `t1` then `t2` to `y`, for
    /// a translation-invariant drift. Exact rows at `t1` and `t2` should be
    /// among the extra times.
    pub fn ck_residual(&self, mode: CkMode, t1: f64, t2: f64, x: f64, y: f64) -> Result<CkResidual> {
        if self.drift.translation_invariant().is_none() {
            return Err(Error::InvalidParams("lattice reuse needs a translation-invariant drift".into()));
        }
        if !(t1 > 0.0 && t2 > 0.0) {
            return Err(Error::InvalidParams("intermediate times must be positive".into()));
        }
        let n = mode.max_order();
        if n > self.fields.len() && self.stopped_at.is_none() {
            return Err(Error::InvalidParams(format!("order {n} is not stored")));
        }
        let (s0, x0) = (self.s, self.x);
        let layout = SpaceLayout::new(&self.grid);
        let peaks = [(x, self.width(t1)), (y, self.width(t2))];
        let pairs: Vec<(usize, usize)> = match mode {
            CkMode::Order(n) => (0..=n).map(|m| (m, n - m)).collect(),
            CkMode::Sum(n) => (0..=n).flat_map(|a| (0..=n).map(move |b| (a, b))).collect(),
        };
        let mut lhs = 0.0;
        for (a, b) in pairs {
            lhs += product_integral(
                &layout,
                peaks,
                |z| self.field(a, s0 + t1, x0 + z - x).unwrap_or(0.0),
                |z| self.field(b, s0 + t2, x0 + y - z).unwrap_or(0.0),
            );
        }
        let end = s0 + t1 + t2;
        let (rhs, scale) = match mode {
            CkMode::Order(n) => (self.term(n, end, x0 + y - x)?, self.row_sup(n, t1 + t2)),
            CkMode::Sum(n) => {
                let v: f64 = (0..=n).map(|m| self.term(m, end, x0 + y - x)).sum::<Result<f64>>()?;
                (v, self.row_sup(0, t1 + t2))
            }
        };
        Ok(CkResidual { residual: (lhs - rhs).abs(), lhs, rhs, scale })
    }
}

#[allow(clippy::too_many_arguments)]
fn ck_impl(
    s: f64,
    u: f64,
    t: f64,
    x: f64,
    y: f64,
    drift: &DriftField,
    kernel: &TabulatedKernel,
    grid: &GridSpec,
    mode: CkMode,
) -> Result<CkResidual> {
    if !(s < u && u < t) {
        return Err(Error::InvalidParams("need s < u < t".into()));
    }
    let params = *kernel.params();
    let max_order = mode.max_order();
    let (t1, t2) = (u - s, t - u);
    if drift.translation_invariant().is_some() {
        let mut solver = SeriesSolver::new(kernel, drift.clone(), 0.0, 0.0, t - s, grid, &[t1, t2])?;
        solver.solve(max_order)?;
        return solver.ck_residual(mode, t1, t2, x, y);
    }
    // general drift: one series per intermediate node
    let layout = SpaceLayout::new(grid);
    let peaks = [(x, natural_width(&params, t1)), (y, natural_width(&params, t2))];
    let mut first = SeriesSolver::new(kernel, drift.clone(), s, x, t - s, grid, &[t1])?;
    first.solve(max_order)?;
    let rule = layout.rule(&peaks, &drift.singular_points());
    let mut lhs = 0.0;
    for (&z, &wz) in rule.nodes.iter().zip(&rule.weights) {
        let mut second = SeriesSolver::new(kernel, drift.clone(), u, z, t2, grid, &[])?;
        second.solve(max_order.saturating_sub(1))?;
        let value = match mode {
            CkMode::Order(n) => (0..=n)
                .map(|m| Ok(first.field(m, u, z)? * second.term(n - m, t, y)?))
                .sum::<Result<f64>>()?,
            CkMode::Sum(n) => {
                let a: f64 = (0..=n).map(|m| first.field(m, u, z)).sum::<Result<f64>>()?;
                let b: f64 = (0..=n).map(|m| second.term(m, t, y)).sum::<Result<f64>>()?;
                a * b
            }
        };
        lhs += wz * value;
    }
    let (rhs, scale) = match mode {
        CkMode::Order(n) => (first.term(n, t, y)?, first.row_sup(n, t - s)),
        CkMode::Sum(n) => ((0..=n).map(|m| first.term(m, t, y)).sum::<Result<f64>>()?, first.row_sup(0, t - s)),
    };
    Ok(CkResidual { residual: (lhs - rhs).abs(), lhs, rhs, scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (TabulatedKernel, GridSpec) {
        let params = KernelParams::stable(1.5, 1).unwrap();
        (TabulatedKernel::new(params).unwrap(), GridSpec { n_time: 16, n_space: 64, ..GridSpec::default() })
    }

    #[test]
    fn zero_drift_terms_vanish() {
        let (kernel, grid) = setup();
        let mut solver = SeriesSolver::new(&kernel, DriftField::zero(), 0.0, 0.0, 0.5, &grid, &[]).unwrap();
        solver.solve(3).unwrap();
        let r = solver.result_at(3, 0.5, 0.2).unwrap();
        assert_eq!(&r.terms[1..], &[0.0, 0.0, 0.0]);
        assert_eq!(r.sum(), r.base);
        assert_eq!(r.tail_ratio, 0.0);
    }

    #[test]
    fn first_order_constant_drift() {
        let (kernel, grid) = setup();
        let c = 0.3;
        let mut solver = SeriesSolver::new(&kernel, DriftField::constant(c).unwrap(), 0.0, 0.0, 0.5, &grid, &[]).unwrap();
        solver.solve(0).unwrap();
        for y in [-1.0, -0.2, 0.4, 2.0] {
            let p1 = solver.term(1, 0.5, y).unwrap();
            let expected = -0.5 * c * kernel.gradient(0.5, y);
            assert!((p1 - expected).abs() < 1e-4 * kernel.density(0.5, 0.0), "y={y}: {p1} vs {expected}");
        }
    }

    #[test]
    fn rejects_evaluation_only_parameters() {
        let kernel = TabulatedKernel::new(KernelParams::new(1.5, 0.8, 1.0, 1).unwrap()).unwrap();
        let grid = GridSpec::default();
        assert!(SeriesSolver::new(&kernel, DriftField::zero(), 0.0, 0.0, 1.0, &grid, &[]).is_err());
    }
}
