//! Experiment configuration files.

use std::path::{Path, PathBuf};

use kp_core::bounds::{BoundMode, TabulatedF};
use kp_core::conditions::{ControlPair, QForm, SampleSet};
use kp_core::drift::{Direction, DriftField};
use kp_core::inequalities::ScanLevels;
use kp_core::kernel::KernelParams;
use kp_core::quadrature::GridSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub a: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
}

fn default_beta() -> f64 {
    1.2
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    #[default]
    Zero,
    Constant,
    PowerLaw,
    KernelPower,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    #[serde(default)]
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub knots: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// `[u, F(u-), F(u+)]` triples.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f_knots: Vec<[f64; 3]>,
    #[serde(default = "default_mode")]
    pub mode: BoundMode,
}

fn default_mode() -> BoundMode {
    BoundMode::NClass
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_time: usize,
    pub n_space: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub grading: f64,
    pub tol: f64,
    pub max_refine: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSpec::default().into()
    }
}

impl From<GridSpec> for GridSection {
    fn from(g: GridSpec) -> Self {
        Self { n_time: g.n_time, n_space: g.n_space, l: g.l, grading: g.grading, tol: g.tol, max_refine: g.max_refine }
    }
}

impl From<GridSection> for GridSpec {
    fn from(g: GridSection) -> Self {
        GridSpec { n_time: g.n_time, n_space: g.n_space, l: g.l, grading: g.grading, tol: g.tol, max_refine: g.max_refine }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesSection {
    /// Start time.
    #[serde(default)]
    pub s: f64,
    /// End times.
    #[serde(default = "default_times")]
    pub t: Vec<f64>,
    #[serde(default = "default_points")]
    pub x: Vec<f64>,
    #[serde(default = "default_points")]
    pub y: Vec<f64>,
    /// Highest series order.
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_times() -> Vec<f64> {
    vec![0.5]
}

fn default_points() -> Vec<f64> {
    vec![-1.0, 0.0, 1.0]
}

fn default_order() -> usize {
    8
}

impl Default for SamplesSection {
    fn default() -> Self {
        Self { s: 0.0, t: default_times(), x: default_points(), y: default_points(), order: default_order() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConditionsSection {
    /// Target for the class-P window search; skipped when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_target: Option<f64>,
    /// Exponents for the Kato-class indicator; defaults to `[alpha, beta]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gammas: Vec<f64>,
    /// Pairs for the class-P search; defaults to the built-in sample set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub s: f64,
    pub t: f64,
    pub theta: f64,
    /// Origin of `F(u) = Q(s0, u)`; defaults to `s`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    Gradient,
    ThreePHat,
    ThreePPlain,
    Php,
    Envelope,
}

impl ScanKind {
    pub const ALL: [ScanKind; 5] =
        [ScanKind::Gradient, ScanKind::ThreePHat, ScanKind::ThreePPlain, ScanKind::Php, ScanKind::Envelope];

    pub fn name(self) -> &'static str {
        match self {
            ScanKind::Gradient => "gradient",
            ScanKind::ThreePHat => "3p-hat",
            ScanKind::ThreePPlain => "3p-plain",
            ScanKind::Php => "php",
            ScanKind::Envelope => "envelope",
        }
    }

    fn pairwise(self) -> bool {
        matches!(self, ScanKind::ThreePHat | ScanKind::ThreePPlain | ScanKind::Php)
    }

    pub fn levels(self, section: &ScanSection) -> ScanLevels {
        let default = if self.pairwise() { ScanLevels::PAIRS } else { ScanLevels::PLANE };
        ScanLevels { base: section.base.unwrap_or(default.base), levels: section.levels.unwrap_or(default.levels) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default = "all_scans")]
    pub kinds: Vec<ScanKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
}

fn all_scans() -> Vec<ScanKind> {
    ScanKind::ALL.to_vec()
}

impl Default for ScanSection {
    fn default() -> Self {
        Self { kinds: all_scans(), base: None, levels: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct KernelTableSection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Criterion numbers to run; all when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub criteria: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// File stem for reports and tables; defaults to the command name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSection,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub samples: SamplesSection,
    #[serde(default)]
    pub kernel_table: KernelTableSection,
    #[serde(default)]
    pub conditions: ConditionsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionSection>,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates everything that does not depend on the command.
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.kernel_params()?;
        cfg.grid_spec().validate().map_err(CliError::from_config)?;
        cfg.drift_field()?;
        cfg.control_pair()?;
        if let Some(c) = &cfg.control {
            if !(c.eta >= 0.0) {
                return Err(CliError::Config(format!("control.eta = {} must be >= 0", c.eta)));
            }
        }
        if cfg.samples.t.iter().any(|&t| !(t > cfg.samples.s)) {
            return Err(CliError::Config("samples.t must all exceed samples.s".into()));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialise")
    }

    pub fn kernel_params(&self) -> CliResult<KernelParams> {
        let k = &self.kernel;
        KernelParams::new(k.alpha, k.beta, k.a, k.dim).map_err(CliError::from_config)
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.into()
    }

    pub fn drift_field(&self) -> CliResult<DriftField> {
        let d = &self.drift;
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| CliError::Config(format!("drift.{key} is required")));
        let field = match d.family {
            FamilyName::Zero => Ok(DriftField::zero()),
            FamilyName::Constant => DriftField::constant(need(d.c, "c")?),
            FamilyName::PowerLaw => DriftField::power_law(&self.kernel_params()?, need(d.epsilon, "epsilon")?, d.direction),
            FamilyName::KernelPower => DriftField::kernel_power(&self.kernel_params()?, d.direction),
            FamilyName::Tabulated => DriftField::tabulated(d.knots.clone(), d.values.clone()),
        };
        field.map_err(CliError::from_config)
    }

    pub fn control_pair(&self) -> CliResult<Option<ControlPair>> {
        let Some(c) = &self.control else { return Ok(None) };
        let q = match (c.rate, c.f_knots.is_empty()) {
            (Some(rate), true) if rate >= 0.0 => QForm::Rate { rate },
            (Some(rate), true) => return Err(CliError::Config(format!("control.rate = {rate} must be >= 0"))),
            (None, false) => {
                let knots = c.f_knots.iter().map(|k| (k[0], k[1], k[2])).collect();
                QForm::TabulatedF(TabulatedF::new(knots).map_err(CliError::from_config)?)
            }
            (None, true) => QForm::Rate { rate: 0.0 },
            (Some(_), false) => return Err(CliError::Config("give either control.rate or control.f_knots".into())),
        };
        Ok(Some(ControlPair { eta: c.eta, q }))
    }

    /// Control pair for commands that evaluate bound factors.
    pub fn bound_control(&self) -> CliResult<Option<(ControlPair, BoundMode)>> {
        let Some(pair) = self.control_pair()? else { return Ok(None) };
        let mode = self.control.as_ref().map_or(BoundMode::NClass, |c| c.mode);
        if !(pair.eta < 0.5) {
            return Err(CliError::Config(format!("control.eta = {} must be below 1/2 for bound checks", pair.eta)));
        }
        if mode == BoundMode::PClass && !(pair.eta > 0.0) {
            return Err(CliError::Config("class-P bounds need control.eta > 0".into()));
        }
        Ok(Some((pair, mode)))
    }

    pub fn sample_set(&self) -> SampleSet {
        let c = &self.conditions;
        let mut set = SampleSet::default();
        if !c.pairs.is_empty() {
            set.pairs = c.pairs.iter().map(|p| (p[0], p[1])).collect();
        }
        if !c.anchors.is_empty() {
            set.anchors = c.anchors.clone();
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
[kernel]
alpha = 1.5
a = 0.0

[drift]
family = "constant"
c = 0.3

[control]
eta = 0.25
rate = 0.5
"#;

    #[test]
    fn echo_round_trips() {
        let cfg = ExperimentConfig::parse(BASIC).unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.grid_spec(), GridSpec::default());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::parse("[kernel]\nalpha = 2.5\n").is_err());
        assert!(ExperimentConfig::parse("[kernel]\nalpha = 1.5\n[drift]\nfamily = \"constant\"\n").is_err());
        assert!(ExperimentConfig::parse("[kernel]\nalpha = 1.5\nbogus = 1\n").is_err());
        let cfg = ExperimentConfig::parse(&BASIC.replace("eta = 0.25", "eta = 0.5")).unwrap();
        assert!(matches!(cfg.bound_control(), Err(CliError::Config(_))));
    }

    #[test]
    fn tabulated_control() {
        let text = "[kernel]\nalpha = 1.5\n[control]\neta = 0.1\nf_knots = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.5], [1.0, 0.5, 0.5]]\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let pair = cfg.control_pair().unwrap().unwrap();
        assert!((pair.q_value(0.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
