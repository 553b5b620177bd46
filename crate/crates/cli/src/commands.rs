use std::collections::BTreeMap;

use clap::ValueEnum;
use kp_core::bounds::{bound_margins, control_to_f, greedy_partition, Monotone};
use kp_core::conditions::{estimate_class_p, kato_class_indicator, split_bound, to_class_n, PROBE_RADII};
use kp_core::inequalities::{
    factor_inequality, scan_3p_hat, scan_3p_plain, scan_envelope, scan_gradient_bound, scan_php, RatioScanReport,
};
use kp_core::kernel::{envelope, eval_density, eval_gradient, hat_kernel, KernelParams, SpaceTimeArg};
use kp_core::perturbation::{series_sum_many, SeriesResult};
use kp_core::table::TabulatedKernel;
use log::info;
use serde_json::json;

use crate::acceptance;
use crate::config::{ExperimentConfig, ScanKind};
use crate::error::{CliError, CliResult};
use crate::report::{Report, Table, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Kernel,
    Series,
    Conditions,
    Partition,
    Scan,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Series => "series",
            Command::Conditions => "conditions",
            Command::Partition => "partition",
            Command::Scan => "scan",
            Command::Verify => "verify",
        }
    }
}

pub type Outcome = (Report, Vec<Table>);

pub fn run(command: Command, cfg: &ExperimentConfig) -> CliResult<Outcome> {
    info!("running {}", command.name());
    match command {
        Command::Kernel => cmd_kernel(cfg),
        Command::Series => cmd_series(cfg),
        Command::Conditions => cmd_conditions(cfg),
        Command::Partition => cmd_partition(cfg),
        Command::Scan => cmd_scan(cfg),
        Command::Verify => cmd_verify(cfg),
    }
}

fn scalar_kernel(cfg: &ExperimentConfig) -> CliResult<(KernelParams, TabulatedKernel)> {
    let params = cfg.kernel_params()?;
    if params.dim != 1 {
        return Err(CliError::Config("this command needs kernel.dim = 1".into()));
    }
    Ok((params, TabulatedKernel::new(params).map_err(CliError::from_config)?))
}

fn cmd_kernel(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let params = cfg.kernel_params()?;
    let times = if cfg.kernel_table.t.is_empty() { vec![0.1, 0.5, 1.0, 2.0, 5.0] } else { cfg.kernel_table.t.clone() };
    let xs: Vec<f64> =
        if cfg.kernel_table.x.is_empty() { (0..=20).map(|i| -5.0 + 0.5 * i as f64).collect() } else { cfg.kernel_table.x.clone() };
    let with_gradient = params.dim == 1;
    let mut header = vec!["t", "x", "density"];
    if with_gradient {
        header.push("gradient");
    }
    header.extend(["envelope", "hat"]);
    let mut table = Table::new("kernel", &header);
    let mut negative = 0usize;
    let mut wrong_sign = 0usize;
    let mut max_density: f64 = 0.0;
    for &t in &times {
        for &x in &xs {
            let mut coords = vec![0.0; params.dim];
            coords[0] = x;
            let arg = SpaceTimeArg::new(t, coords);
            let p = eval_density(&params, &arg)?;
            negative += usize::from(p < 0.0);
            max_density = max_density.max(p);
            let mut row = vec![t, x, p];
            if with_gradient {
                let g = eval_gradient(&params, &arg)?[0];
                wrong_sign += usize::from(x > 0.0 && g > 0.0 || x < 0.0 && g < 0.0);
                row.push(g);
            }
            row.extend([envelope(&params, &arg), hat_kernel(&params, &arg)?]);
            table.push(row);
        }
    }
    let mut verdicts = vec![Verdict::new("nonnegative density", negative == 0, format!("{negative} negative values"))];
    if with_gradient {
        verdicts.push(Verdict::new("gradient points inward", wrong_sign == 0, format!("{wrong_sign} sign errors")));
    }
    let results = json!({ "points": table.rows.len(), "max_density": max_density });
    Ok((Report::new("kernel", cfg, results, verdicts), vec![table]))
}

/// Series from every `x` to every `y` at every end time.
fn series_results(cfg: &ExperimentConfig, kernel: &TabulatedKernel) -> CliResult<Vec<SeriesResult>> {
    let drift = cfg.drift_field()?;
    let grid = cfg.grid_spec();
    let sm = &cfg.samples;
    let mut out = Vec::new();
    for &t in &sm.t {
        if drift.translation_invariant().is_some() {
            // one solve from the origin covers every pair
            let mut offsets: Vec<f64> = sm.x.iter().flat_map(|&x| sm.y.iter().map(move |&y| y - x)).collect();
            offsets.sort_by(f64::total_cmp);
            offsets.dedup();
            let solved = series_sum_many(sm.order, sm.s, 0.0, t, &offsets, &drift, kernel, &grid)?;
            for &x in &sm.x {
                for &y in &sm.y {
                    let i = offsets.partition_point(|&d| d < y - x);
                    let mut r = solved[i].clone();
                    r.x = x;
                    r.y = y;
                    out.push(r);
                }
            }
        } else {
            for &x in &sm.x {
                out.extend(series_sum_many(sm.order, sm.s, x, t, &sm.y, &drift, kernel, &grid)?);
            }
        }
    }
    Ok(out)
}

fn cmd_series(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let (_, kernel) = scalar_kernel(cfg)?;
    let control = cfg.bound_control()?;
    let zero_drift = cfg.drift_field()?.is_zero();
    let mut results = series_results(cfg, &kernel)?;
    let mut verdicts = Vec::new();
    if let Some((pair, mode)) = &control {
        let mut failed = 0;
        for r in &mut results {
            let q = pair.q_value(r.s, r.t);
            let verdict = bound_margins(std::slice::from_ref(r), pair.eta, q, *mode, cfg.grid.tol)?;
            failed += usize::from(!verdict.passed);
            r.bound_check = Some(verdict);
        }
        verdicts.push(Verdict::new("two-sided bounds", failed == 0, format!("{failed} of {} samples outside", results.len())));
    }
    let diverged = results.iter().filter(|r| !r.converged).count();
    verdicts.push(Verdict::new("tail ratio below one", diverged == 0, format!("{diverged} samples without convergence")));
    if zero_drift {
        let nonzero = results.iter().filter(|r| r.terms.iter().skip(1).any(|&v| v != 0.0)).count();
        verdicts.push(Verdict::new("zero drift leaves the kernel unchanged", nonzero == 0, format!("{nonzero} nonzero corrections")));
    }
    let mut terms = Table::new("terms", &["s", "x", "t", "y", "n", "term", "partial_sum"]);
    let mut summary = Table::new("summary", &["s", "x", "t", "y", "base", "sum", "tail_ratio", "tail_estimate", "quadrature_error"]);
    for r in &results {
        for (n, (v, ps)) in r.terms.iter().zip(&r.partial_sums).enumerate() {
            terms.push(vec![r.s, r.x, r.t, r.y, n as f64, *v, *ps]);
        }
        summary.push(vec![r.s, r.x, r.t, r.y, r.base, r.sum(), r.tail_ratio, r.tail_estimate, r.quadrature_error]);
    }
    let results = serde_json::to_value(&results).expect("results serialise");
    Ok((Report::new("series", cfg, results, verdicts), vec![terms, summary]))
}

fn cmd_conditions(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let (params, kernel) = scalar_kernel(cfg)?;
    let drift = cfg.drift_field()?;
    let grid = cfg.grid_spec();
    let sm = &cfg.samples;
    let mut table = Table::new("kato", &["s", "x", "t", "y", "kato", "split", "ratio"]);
    let mut infinite = 0usize;
    for &t in &sm.t {
        for &x in &sm.x {
            for &y in &sm.y {
                let b = split_bound(sm.s, x, t, y, &drift, &kernel, &grid)?;
                infinite += usize::from(!(b.kato.is_finite() && b.value.is_finite()));
                table.push(vec![sm.s, x, t, y, b.kato, b.value, b.ratio]);
            }
        }
    }
    let mut verdicts = vec![Verdict::new("finite functionals", infinite == 0, format!("{infinite} infinite values"))];
    let mut results = BTreeMap::new();
    let ratios: Vec<f64> = table.rows.iter().map(|r| r[6]).filter(|r| *r > 0.0).collect();
    if !ratios.is_empty() {
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        results.insert("split_ratio_range", json!([lo, hi]));
    }
    if let Some(eta) = cfg.conditions.eta_target {
        let estimate = estimate_class_p(&drift, &kernel, eta, &cfg.sample_set(), &grid)?;
        verdicts.push(Verdict::new("class-P window", estimate.h().is_some(), format!("{estimate:?}")));
        if let Some(h) = estimate.h() {
            results.insert("class_n", serde_json::to_value(to_class_n(eta, h)?).expect("serialisable"));
        }
        results.insert("class_p", serde_json::to_value(&estimate).expect("serialisable"));
    }
    if drift.time_independent() {
        let gammas = if cfg.conditions.gammas.is_empty() {
            let mut g = vec![params.alpha];
            if params.a > 0.0 && params.beta > 1.0 {
                g.push(params.beta);
            }
            g
        } else {
            cfg.conditions.gammas.clone()
        };
        let mut indicators = Vec::new();
        for gamma in gammas {
            let ind = kato_class_indicator(&drift, gamma, &PROBE_RADII).map_err(CliError::from_config)?;
            indicators.push(ind);
        }
        results.insert("kato_class", serde_json::to_value(&indicators).expect("serialisable"));
    }
    results.insert("samples", json!(table.rows.len()));
    Ok((Report::new("conditions", cfg, json!(results), verdicts), vec![table]))
}

fn cmd_partition(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let part = cfg.partition.as_ref().ok_or_else(|| CliError::Config("the [partition] section is required".into()))?;
    let pair = cfg.control_pair()?.ok_or_else(|| CliError::Config("the [control] section is required".into()))?;
    let f = control_to_f(&pair, part.s0.unwrap_or(part.s));
    let result = greedy_partition(&f, part.s, part.t, part.theta)?;
    let mut table = Table::new("partition", &["i", "t_i", "f_right", "f_left_next"]);
    for (i, w) in result.points.windows(2).enumerate() {
        table.push(vec![i as f64, w[0], f.right(w[0]), f.left(w[1])]);
    }
    let verdicts = vec![
        Verdict::new("m <= k", result.m <= result.k, format!("m = {}, k = {}", result.m, result.k)),
        Verdict::new(
            "jumps within theta",
            result.max_jump <= result.theta * (1.0 + 1e-12),
            format!("largest {} against {}", result.max_jump, result.theta),
        ),
    ];
    let results = serde_json::to_value(&result).expect("serialisable");
    Ok((Report::new("partition", cfg, results, verdicts), vec![table]))
}

fn cmd_scan(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let (params, kernel) = scalar_kernel(cfg)?;
    let mut reports: Vec<(String, RatioScanReport)> = Vec::new();
    for &kind in &cfg.scan.kinds {
        let levels = kind.levels(&cfg.scan);
        info!("scan {} with {levels:?}", kind.name());
        match kind {
            ScanKind::Gradient => reports.push((kind.name().into(), scan_gradient_bound(&kernel, levels)?)),
            ScanKind::ThreePHat => reports.push((kind.name().into(), scan_3p_hat(&kernel, levels)?)),
            ScanKind::ThreePPlain => reports.push((kind.name().into(), scan_3p_plain(&kernel, levels)?)),
            ScanKind::Envelope => reports.push((kind.name().into(), scan_envelope(&kernel, levels)?)),
            ScanKind::Php => {
                let php = scan_php(&kernel, levels)?;
                reports.push(("php".into(), php.forward));
                reports.push(("php-swapped".into(), php.swapped));
            }
        }
    }
    let mut verdicts: Vec<Verdict> = reports
        .iter()
        .map(|(name, r)| Verdict::new(format!("{name} stable"), r.passed(), format!("history {:?}", r.refinement_history)))
        .collect();
    let mut table = Table::new("levels", &["scan", "level", "sup", "inf"]);
    for (k, (_, r)) in reports.iter().enumerate() {
        for (level, sup) in r.refinement_history.iter().enumerate() {
            let inf = r.inf_history.as_ref().map_or(f64::NAN, |h| h[level]);
            table.push(vec![k as f64, level as f64, *sup, inf]);
        }
    }
    let mut results: BTreeMap<String, serde_json::Value> =
        reports.iter().map(|(n, r)| (n.clone(), serde_json::to_value(r).expect("serialisable"))).collect();
    if params.a == 1.0 {
        let n = cfg.scan.base.unwrap_or(kp_core::inequalities::ScanLevels::PLANE.base);
        let factor = factor_inequality(&params, n);
        verdicts.push(Verdict::new("factor inequality", factor <= 1.0 + acceptance::FACTOR_SLACK, format!("max {factor}")));
        results.insert("factor_inequality".into(), json!(factor));
    }
    Ok((Report::new("scan", cfg, json!(results), verdicts), vec![table]))
}

fn cmd_verify(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    let outcomes = acceptance::run_all(&cfg.verify.criteria)?;
    let verdicts = outcomes
        .iter()
        .map(|o| Verdict::new(format!("criterion {} {}", o.id, o.title), o.passed, o.detail.clone()))
        .collect();
    let mut table = Table::new("criteria", &["id", "passed", "measured", "threshold"]);
    for o in &outcomes {
        table.push(vec![o.id as f64, f64::from(u8::from(o.passed)), o.measured, o.threshold]);
    }
    let results = serde_json::to_value(&outcomes).expect("serialisable");
    Ok((Report::new("verify", cfg, results, verdicts), vec![table]))
}
