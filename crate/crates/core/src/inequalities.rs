//! Grid scans for the constants in the pointwise kernel inequalities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{envelope, Kernel1d, KernelParams, SpaceTimeArg};
use crate::table::TabulatedKernel;

/// Time axis of every scan.
pub const T_RANGE: (f64, f64) = (1e-2, 1e2);
/// Range of `|x|`; `x = 0` and both signs are always included.
pub const X_RANGE: (f64, f64) = (1e-2, 50.0);
/// Reports whose last two levels differ by more than this are unstable.
pub const STABILITY: f64 = 0.05;
/// Growth of the axis length between refinement levels.
const GROWTH: f64 = 1.5;

/// Number of refinement levels and the axis length at the first one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanLevels {
    pub base: usize,
    pub levels: usize,
}

impl ScanLevels {
    /// Levels for scans over `(t, x)`.
    pub const PLANE: ScanLevels = ScanLevels { base: 24, levels: 3 };
    /// Levels for scans over `(u, x, r, y)`, kept under a million points.
    pub const PAIRS: ScanLevels = ScanLevels { base: 10, levels: 3 };

    /// Axis length per level.
    pub fn sizes(&self) -> Result<Vec<usize>> {
        if self.base < 2 || self.levels < 2 {
            return Err(Error::InvalidParams("scans need base >= 2 and at least two levels".into()));
        }
        Ok((0..self.levels).map(|l| (self.base as f64 * GROWTH.powi(l as i32)).round() as usize).collect())
    }
}

fn log_axis(range: (f64, f64), n: usize) -> Vec<f64> {
    let (a, b) = (range.0.ln(), range.1.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Log-spaced times.
pub fn time_axis(n: usize) -> Vec<f64> {
    log_axis(T_RANGE, n)
}

/// `-|x|_n, ..., -|x|_1, 0, |x|_1, ..., |x|_n`, so opposite-sign pairs
/// sum to exactly zero.
pub fn space_axis(n: usize) -> Vec<f64> {
    let pos = log_axis(X_RANGE, n);
    let mut v: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    v.push(0.0);
    v.extend(pos);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioScanReport {
    pub sup_ratio: f64,
    /// Grid point of the supremum on the finest level.
    pub argmax: Vec<f64>,
    /// Supremum per refinement level.
    pub refinement_history: Vec<f64>,
    /// Infimum and its history for two-sided scans.
    pub inf_ratio: Option<f64>,
    pub argmin: Option<Vec<f64>>,
    pub inf_history: Option<Vec<f64>>,
    pub stable: bool,
    pub points: usize,
}

impl RatioScanReport {
    pub fn passed(&self) -> bool {
        self.stable && self.sup_ratio.is_finite() && self.inf_ratio.map_or(true, |v| v.is_finite() && v > 0.0)
    }
}

fn settled(history: &[f64]) -> bool {
    let k = history.len();
    let (a, b) = (history[k - 2], history[k - 1]);
    a.is_finite() && b.is_finite() && (b - a).abs() <= STABILITY * b.abs().max(a.abs())
}

/// First strictly largest and smallest entries, in index order.
fn extremes(values: &[f64]) -> ((f64, usize), (f64, usize)) {
    let mut hi = (f64::NEG_INFINITY, 0);
    let mut lo = (f64::INFINITY, 0);
    for (i, &v) in values.iter().enumerate() {
        if v > hi.0 || v.is_nan() {
            hi = (if v.is_nan() { f64::INFINITY } else { v }, i);
        }
        if v < lo.0 {
            lo = (v, i);
        }
    }
    (hi, lo)
}

struct Level {
    values: Vec<f64>,
    points: Vec<Vec<f64>>,
}

fn report(levels: Vec<Level>, two_sided: bool) -> RatioScanReport {
    let mut sups = Vec::new();
    let mut infs = Vec::new();
    let mut argmax = Vec::new();
    let mut argmin = Vec::new();
    let mut points = 0;
    for level in &levels {
        let ((hi, ih), (lo, il)) = extremes(&level.values);
        sups.push(hi);
        infs.push(lo);
        argmax = level.points[ih].clone();
        argmin = level.points[il].clone();
        points = level.values.len();
    }
    let stable = settled(&sups) && (!two_sided || settled(&infs));
    RatioScanReport {
        sup_ratio: *sups.last().expect("at least two levels"),
        argmax,
        refinement_history: sups,
        inf_ratio: two_sided.then(|| *infs.last().expect("at least two levels")),
        argmin: two_sided.then_some(argmin),
        inf_history: two_sided.then_some(infs),
        stable,
        points,
    }
}

fn scan_plane<F: Fn(f64, f64) -> f64 + Sync>(levels: ScanLevels, two_sided: bool, f: F) -> Result<RatioScanReport> {
    let mut out = Vec::new();
    for n in levels.sizes()? {
        let ts = time_axis(n);
        let xs = space_axis(n);
        let pts: Vec<Vec<f64>> = ts.iter().flat_map(|&t| xs.iter().map(move |&x| vec![t, x])).collect();
        let values = pts.par_iter().map(|p| f(p[0], p[1])).collect();
        out.push(Level { values, points: pts });
    }
    Ok(report(out, two_sided))
}

/// Scan over `(u, x, r, y)`; `f` gets a slice of the kernel at `u + r`.
fn scan_pairs<F>(kernel: &TabulatedKernel, levels: ScanLevels, f: F) -> Result<RatioScanReport>
where
    F: Fn(&Values, usize, usize, usize, usize, &dyn Fn(f64) -> f64) -> f64 + Sync,
{
    let mut out = Vec::new();
    for n in levels.sizes()? {
        let vals = Values::new(kernel, n);
        let (nt, nx) = (vals.ts.len(), vals.xs.len());
        let blocks: Vec<Vec<f64>> = (0..nt * nt)
            .into_par_iter()
            .map(|ik| {
                let (i, k) = (ik / nt, ik % nt);
                let slice = kernel.slice(vals.ts[i] + vals.ts[k]);
                let joint = |z: f64| slice.density(z);
                let mut block = Vec::with_capacity(nx * nx);
                for j in 0..nx {
                    for l in 0..nx {
                        block.push(f(&vals, i, j, k, l, &joint));
                    }
                }
                block
            })
            .collect();
        let mut values = Vec::with_capacity(nt * nt * nx * nx);
        let mut points = Vec::with_capacity(values.capacity());
        for i in 0..nt {
            for j in 0..nx {
                for k in 0..nt {
                    for l in 0..nx {
                        values.push(blocks[i * nt + k][j * nx + l]);
                        points.push(vec![vals.ts[i], vals.xs[j], vals.ts[k], vals.xs[l]]);
                    }
                }
            }
        }
        out.push(Level { values, points });
    }
    Ok(report(out, false))
}

/// Densities and hat kernels on one `(t, x)` level.
struct Values {
    ts: Vec<f64>,
    xs: Vec<f64>,
    p: Vec<f64>,
    hat: Vec<f64>,
    params: KernelParams,
}

impl Values {
    fn new(kernel: &TabulatedKernel, n: usize) -> Self {
        let ts = time_axis(n);
        let xs = space_axis(n);
        let params = *kernel.params();
        let p: Vec<f64> = ts
            .par_iter()
            .flat_map_iter(|&t| {
                let slice = kernel.slice(t);
                xs.iter().map(move |&x| slice.density(x)).collect::<Vec<_>>()
            })
            .collect();
        let hat = p
            .iter()
            .enumerate()
            .map(|(k, v)| params.hat_factor(ts[k / xs.len()]) * v)
            .collect();
        Self { ts, xs, p, hat, params }
    }

    fn at(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.xs.len() + j;
        (self.p[k], self.hat[k])
    }
}

/// `sup |grad p| / p-hat` over `(t, x)`.
pub fn scan_gradient_bound(kernel: &TabulatedKernel, levels: ScanLevels) -> Result<RatioScanReport> {
    scan_plane(levels, false, |t, x| gradient_ratio(kernel, t, x))
}

pub fn gradient_ratio<K: Kernel1d>(kernel: &K, t: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    kernel.gradient(t, x).abs() / kernel.hat(t, x)
}

/// `sup (p-hat(u,x) ^ p-hat(r,y)) / p-hat(u+r, x+y)`.
pub fn scan_3p_hat(kernel: &TabulatedKernel, levels: ScanLevels) -> Result<RatioScanReport> {
    scan_pairs(kernel, levels, |v, i, j, k, l, joint| {
        let (_, h1) = v.at(i, j);
        let (_, h2) = v.at(k, l);
        let t = v.ts[i] + v.ts[k];
        h1.min(h2) / (v.params.hat_factor(t) * joint(v.xs[j] + v.xs[l]))
    })
}

/// `sup (p(u,x) ^ p(r,y)) / p(u+r, x+y)`.
pub fn scan_3p_plain(kernel: &TabulatedKernel, levels: ScanLevels) -> Result<RatioScanReport> {
    scan_pairs(kernel, levels, |v, i, j, k, l, joint| {
        let (p1, _) = v.at(i, j);
        let (p2, _) = v.at(k, l);
        p1.min(p2) / joint(v.xs[j] + v.xs[l])
    })
}

/// Both orientations of the product inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhpReport {
    /// `p(u,x) p-hat(r,y) / [p(u+r,x+y) (p-hat(u,x) + p-hat(r,y))]`.
    pub forward: RatioScanReport,
    /// The same with `(u,x)` and `(r,y)` exchanged.
    pub swapped: RatioScanReport,
}

impl PhpReport {
    pub fn passed(&self) -> bool {
        self.forward.passed() && self.swapped.passed()
    }
}

pub fn scan_php(kernel: &TabulatedKernel, levels: ScanLevels) -> Result<PhpReport> {
    let ratio = |swap: bool| {
        move |v: &Values, i: usize, j: usize, k: usize, l: usize, joint: &dyn Fn(f64) -> f64| {
            let (p1, h1) = v.at(i, j);
            let (p2, h2) = v.at(k, l);
            let (p, h) = if swap { (p2, h1) } else { (p1, h2) };
            p * h / (joint(v.xs[j] + v.xs[l]) * (h1 + h2))
        }
    };
    Ok(PhpReport { forward: scan_pairs(kernel, levels, ratio(false))?, swapped: scan_pairs(kernel, levels, ratio(true))? })
}

/// Two-sided scan of `p / envelope`.
pub fn scan_envelope(kernel: &TabulatedKernel, levels: ScanLevels) -> Result<RatioScanReport> {
    let params = *kernel.params();
    scan_plane(levels, true, |t, x| kernel.density(t, x) / envelope(&params, &SpaceTimeArg::scalar(t, x)))
}

/// Largest `|x| (t^(-2/alpha) ^ t^(-2/beta) ^ |x|^(-2)) / (t^(-1/alpha) ^ t^(-1/beta))`
/// over the plane grid; at most one.
pub fn factor_inequality(params: &KernelParams, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for t in time_axis(n) {
        let m = t.powf(-1.0 / params.alpha).min(t.powf(-1.0 / params.beta));
        for x in space_axis(n) {
            let lhs = if x == 0.0 { 0.0 } else { x.abs() * (m * m).min(x.powi(-2)) };
            worst = worst.max(lhs / m);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes() {
        let xs = space_axis(5);
        assert_eq!(xs.len(), 11);
        assert_eq!(xs[5], 0.0);
        assert_eq!(xs[0], -xs[10]);
        assert!((xs[10] - 50.0).abs() < 1e-12);
        let ts = time_axis(5);
        assert!((ts[0] - 1e-2).abs() < 1e-15 && (ts[4] - 1e2).abs() < 1e-10);
    }

    #[test]
    fn ties_resolve_to_first_index() {
        let ((hi, ih), (lo, il)) = extremes(&[1.0, 3.0, 3.0, 0.5, 0.5]);
        assert_eq!((hi, ih, lo, il), (3.0, 1, 0.5, 3));
    }

    #[test]
    fn factor_inequality_holds() {
        let p = KernelParams::new(1.5, 1.2, 1.0, 1).unwrap();
        assert!(factor_inequality(&p, 60) <= 1.0 + 1e-12);
    }

    #[test]
    fn stable_gradient_scan() {
        let k = TabulatedKernel::new(KernelParams::stable(1.5, 1).unwrap()).unwrap();
        let r = scan_gradient_bound(&k, ScanLevels::PLANE).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(gradient_ratio(&k, 1.0, 0.0), 0.0);
    }
}
