//! Drift fields `b(u, z)` for one-dimensional perturbations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel1d, KernelParams};
use crate::table::TabulatedKernel;

/// Orientation of a radial drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Towards the origin.
    #[default]
    Inward,
    /// Away from the origin.
    Outward,
}

impl Direction {
    fn sign(self, z: f64) -> f64 {
        let s = if z > 0.0 {
            1.0
        } else if z < 0.0 {
            -1.0
        } else {
            0.0
        };
        match self {
            Direction::Inward => -s,
            Direction::Outward => s,
        }
    }
}

#[derive(Debug, Clone)]
pub enum DriftFamily {
    Zero,
    Constant { c: f64 },
    /// `|b(z)| = |z|^(1 - alpha + epsilon)`, radial, `b(0) = 0`.
    PowerLaw { epsilon: f64, alpha: f64, direction: Direction },
    /// `|b(u, z)| = p(u, z)^(alpha - 1)` for the base kernel.
    KernelPower { kernel: TabulatedKernel, direction: Direction },
    /// Time-independent drift, linear between knots and constant outside.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

/// A drift in dimension one.
#[derive(Debug, Clone)]
pub struct DriftField {
    family: DriftFamily,
}

impl DriftField {
    pub fn zero() -> Self {
        Self { family: DriftFamily::Zero }
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !c.is_finite() {
            return Err(Error::InvalidParams("constant drift must be finite".into()));
        }
        Ok(Self { family: DriftFamily::Constant { c } })
    }

    /// The power-law family for a kernel with the given parameters.
    pub fn power_law(params: &KernelParams, epsilon: f64, direction: Direction) -> Result<Self> {
        let upper = if params.a > 0.0 { params.alpha - params.beta } else { params.alpha - 1.0 };
        if !(epsilon > 0.0 && epsilon < upper) {
            return Err(Error::InvalidParams(format!("power-law epsilon must lie in (0, {upper})")));
        }
        Ok(Self { family: DriftFamily::PowerLaw { epsilon, alpha: params.alpha, direction } })
    }

    pub fn kernel_power(params: &KernelParams, direction: Direction) -> Result<Self> {
        let kernel = TabulatedKernel::new(*params)?;
        Ok(Self { family: DriftFamily::KernelPower { kernel, direction } })
    }

    pub fn tabulated(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::InvalidParams("tabulated drift needs matching, non-empty knots and values".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("tabulated drift knots must increase".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("tabulated drift values must be finite".into()));
        }
        Ok(Self { family: DriftFamily::Tabulated { knots, values } })
    }

    pub fn family(&self) -> &DriftFamily {
        &self.family
    }

    /// `b(u, z)`.
    pub fn value(&self, u: f64, z: f64) -> f64 {
        match &self.family {
            DriftFamily::Zero => 0.0,
            DriftFamily::Constant { c } => *c,
            DriftFamily::PowerLaw { epsilon, alpha, direction } => {
                if z == 0.0 {
                    0.0
                } else {
                    direction.sign(z) * z.abs().powf(1.0 - alpha + epsilon)
                }
            }
            DriftFamily::KernelPower { kernel, direction } => {
                if u > 0.0 {
                    let p = kernel.density(u, z);
                    direction.sign(z) * p.powf(kernel.params().alpha - 1.0)
                } else {
                    0.0
                }
            }
            DriftFamily::Tabulated { knots, values } => interpolate(knots, values, z),
        }
    }

    /// `|b(u, z)|`.
    pub fn magnitude(&self, u: f64, z: f64) -> f64 {
        self.value(u, z).abs()
    }

    pub fn is_zero(&self) -> bool {
        match &self.family {
            DriftFamily::Zero => true,
            DriftFamily::Constant { c } => *c == 0.0,
            DriftFamily::Tabulated { values, .. } => values.iter().all(|v| *v == 0.0),
            _ => false,
        }
    }

    /// The velocity of a drift invariant under space-time translations.
    pub fn translation_invariant(&self) -> Option<f64> {
        match &self.family {
            DriftFamily::Zero => Some(0.0),
            DriftFamily::Constant { c } => Some(*c),
            _ => None,
        }
    }

    pub fn time_independent(&self) -> bool {
        !matches!(self.family, DriftFamily::KernelPower { .. })
    }

    /// Spatial points where `b` is singular or non-smooth.
    pub fn singular_points(&self) -> Vec<f64> {
        match &self.family {
            DriftFamily::PowerLaw { .. } | DriftFamily::KernelPower { .. } => vec![0.0],
            DriftFamily::Tabulated { knots, .. } => knots.clone(),
            _ => Vec::new(),
        }
    }

    /// Exponent `sigma` with `|b(z)| ~ |z - z0|^(-sigma)` at the singular
    /// points; zero for bounded drifts.
    pub fn singular_order(&self) -> f64 {
        match &self.family {
            DriftFamily::PowerLaw { epsilon, alpha, .. } => (alpha - 1.0 - epsilon).max(0.0),
            _ => 0.0,
        }
    }

    /// Copy with every value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match &self.family {
            DriftFamily::Zero => Ok(Self::zero()),
            DriftFamily::Constant { c } => Self::constant(c * factor),
            DriftFamily::Tabulated { knots, values } => {
                Self::tabulated(knots.clone(), values.iter().map(|v| v * factor).collect())
            }
            _ => Err(Error::InvalidParams("only constant and tabulated drifts can be rescaled".into())),
        }
    }
}

fn interpolate(knots: &[f64], values: &[f64], z: f64) -> f64 {
    let n = knots.len();
    if z <= knots[0] {
        return values[0];
    }
    if z >= knots[n - 1] {
        return values[n - 1];
    }
    let i = knots.partition_point(|&k| k <= z) - 1;
    let w = (z - knots[i]) / (knots[i + 1] - knots[i]);
    values[i] + w * (values[i + 1] - values[i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_shape() {
        let p = KernelParams::new(1.5, 1.2, 1.0, 1).unwrap();
        let b = DriftField::power_law(&p, 0.1, Direction::Inward).unwrap();
        assert_eq!(b.value(0.3, 0.0), 0.0);
        let v = b.value(0.0, 2.0);
        assert!((v + 2f64.powf(-0.4)).abs() < 1e-15);
        assert!((b.value(0.0, -2.0) - 2f64.powf(-0.4)).abs() < 1e-15);
        assert!(DriftField::power_law(&p, 0.35, Direction::Inward).is_err());
    }

    #[test]
    fn tabulated_interpolates() {
        let b = DriftField::tabulated(vec![0.0, 1.0, 3.0], vec![1.0, 3.0, -1.0]).unwrap();
        assert_eq!(b.value(0.0, -5.0), 1.0);
        assert_eq!(b.value(0.0, 0.5), 2.0);
        assert_eq!(b.value(0.0, 2.0), 1.0);
        assert_eq!(b.value(0.0, 9.0), -1.0);
        assert!(DriftField::tabulated(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn kernel_power_matches_density() {
        let p = KernelParams::stable(1.5, 1).unwrap();
        let b = DriftField::kernel_power(&p, Direction::Outward).unwrap();
        let k = crate::kernel::ExactKernel::new(p).unwrap();
        let expected = k.density(0.5, 0.7).powf(0.5);
        assert!((b.value(0.5, 0.7) / expected - 1.0).abs() < 1e-7);
        assert_eq!(b.value(0.0, 0.7), 0.0);
    }
}
