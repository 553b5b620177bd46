use approx::assert_relative_eq;
use kp_core::bounds::{
    binomial_term_bound, class_p_bounds, control_to_f, greedy_partition, lower_bound_factor, upper_bound_factor, Monotone,
    TabulatedF,
};
use kp_core::conditions::{to_class_n, ControlPair, QForm};
use kp_core::kernel::{envelope, eval_density, hat_kernel, scale_to_unit, KernelParams, SpaceTimeArg};
use kp_core::quadrature::{integrate_1d, integrate_1d_weighted, integrate_spacetime, GridSpec, SingularWeight};
use proptest::prelude::*;

fn mixed() -> KernelParams {
    KernelParams::new(1.5, 1.2, 1.0, 1).unwrap()
}

#[test]
fn bound_factor_values() {
    assert_relative_eq!(upper_bound_factor(0.25, 0.0).unwrap(), 2.0, max_relative = 1e-15);
    assert_relative_eq!(upper_bound_factor(0.0, 1.0).unwrap(), std::f64::consts::E, max_relative = 1e-15);
    assert_eq!(upper_bound_factor(0.0, 0.0).unwrap(), 1.0);
    let (lo, hi) = class_p_bounds(0.25, 0.0, 1.0).unwrap();
    assert_relative_eq!(hi, 4.0 / 3.0, max_relative = 1e-15);
    assert_relative_eq!(lo, 2.0 / 3.0, max_relative = 1e-15);
    assert!(upper_bound_factor(0.5, 0.0).is_err());
    assert!(lower_bound_factor(0.49999, 0.0).unwrap() < 1e-4);
}

#[test]
fn binomial_series_with_two_parts() {
    let theta = 0.6;
    let sum: f64 = (0..400).map(|n| binomial_term_bound(n, 2, theta)).sum();
    assert_relative_eq!(sum, 1.0 / ((1.0 - theta) * (1.0 - theta)), max_relative = 1e-12);
    assert_eq!(binomial_term_bound(0, 4, 0.3), 1.0);
    assert_relative_eq!(binomial_term_bound(7, 1, 0.3), 0.3f64.powi(7), max_relative = 1e-12);
}

#[test]
fn rate_control_reduction() {
    let pair = to_class_n(0.25, 0.5).unwrap();
    assert_eq!(pair.q, QForm::Rate { rate: 0.5 });
    let f = control_to_f(&pair, 0.0);
    assert_eq!(f.value(2.0), 1.0);
    assert_eq!(f.value(-1.0), 0.0);
}

#[test]
fn quadrature_examples() {
    assert_relative_eq!(integrate_1d(|x| x * x, 0.0, 1.0, 1e-12).unwrap().value, 1.0 / 3.0, max_relative = 1e-12);
    assert_relative_eq!(integrate_1d(f64::sin, 0.0, std::f64::consts::PI, 1e-12).unwrap().value, 2.0, max_relative = 1e-12);
    let w = SingularWeight::new(0.5).unwrap();
    let v = integrate_1d_weighted(|x| x.powf(-0.5), 0.0, 1.0, w, 1e-10).unwrap().value;
    assert_relative_eq!(v, 2.0, max_relative = 1e-8);
    let grid = GridSpec { l: 1.0, ..GridSpec::default() };
    let area = integrate_spacetime(|_, _| 1.0, 0.0, 1.0, &grid, SingularWeight::NONE).unwrap().value;
    assert_relative_eq!(area, 2.0, max_relative = 1e-12);
}

#[test]
fn hat_and_envelope_at_unit_time() {
    let p = KernelParams::stable(1.5, 1).unwrap();
    let arg = SpaceTimeArg::scalar(1.0, 0.7);
    assert_relative_eq!(hat_kernel(&p, &arg).unwrap(), eval_density(&p, &arg).unwrap(), max_relative = 1e-15);
    assert_eq!(envelope(&p, &SpaceTimeArg::scalar(1.0, 0.0)), 1.0);
    let unit = scale_to_unit(&mixed(), &arg).unwrap();
    assert_eq!(unit.prefactor, 1.0);
    assert_eq!(unit.arg, arg);
    let two = KernelParams { a: 2.0, ..mixed() };
    assert_relative_eq!(scale_to_unit(&two, &arg).unwrap().prefactor, 16.0, max_relative = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tabulated_control_is_additive(r in 0.0f64..1.0, du in 0.0f64..1.0, dv in 0.0f64..1.0) {
        let table = TabulatedF::new(vec![(0.2, 0.0, 0.3), (0.9, 0.5, 0.5), (1.6, 0.9, 1.4)]).unwrap();
        let pair = ControlPair { eta: 0.1, q: QForm::TabulatedF(table) };
        let (u, v) = (r + du, r + du + dv);
        let lhs = pair.q_value(r, u) + pair.q_value(u, v);
        prop_assert!((lhs - pair.q_value(r, v)).abs() < 1e-12);
        let f = control_to_f(&pair, r);
        prop_assert!(f.value(u) <= f.value(v) + 1e-15);
    }

    #[test]
    fn factors_bracket_one(eta in 0.0f64..0.49, q in 0.0f64..3.0) {
        let lo = lower_bound_factor(eta, q).unwrap();
        let hi = upper_bound_factor(eta, q).unwrap();
        prop_assert!(lo > 0.0 && lo <= 1.0 && hi >= 1.0);
        prop_assert!(lower_bound_factor(eta, q + 0.5).unwrap() <= lo * (1.0 + 1e-12));
    }

    #[test]
    fn partitions_respect_the_bound(rate in 0.01f64..5.0, t in 0.1f64..4.0, theta in 0.05f64..1.0) {
        let f = control_to_f(&ControlPair { eta: 0.1, q: QForm::Rate { rate } }, 0.0);
        let p = greedy_partition(&f, 0.0, t, theta).unwrap();
        prop_assert!(p.m <= p.k);
        prop_assert!(p.points.windows(2).all(|w| w[0] < w[1] && f.left(w[1]) - f.right(w[0]) <= theta * (1.0 + 1e-12)));
    }

    #[test]
    fn envelope_decreases_in_distance(t in 0.1f64..10.0, x in 0.0f64..20.0, dx in 0.0f64..5.0) {
        let p = mixed();
        prop_assert!(envelope(&p, &SpaceTimeArg::scalar(t, x + dx)) <= envelope(&p, &SpaceTimeArg::scalar(t, x)));
    }
}

#[test]
fn density_is_even() {
    let p = mixed();
    for (t, x) in [(0.3, 0.4), (2.0, 5.0), (0.05, 1.0)] {
        let a = eval_density(&p, &SpaceTimeArg::scalar(t, x)).unwrap();
        let b = eval_density(&p, &SpaceTimeArg::scalar(t, -x)).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(eval_density(&p, &SpaceTimeArg::scalar(0.0, 1.0)).unwrap(), 0.0);
}
