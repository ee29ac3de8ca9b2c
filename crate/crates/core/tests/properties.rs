//! Invariants checked over random inputs.

use std::sync::Arc;

use cgo_biharmonic::biharmonic_core::Field;
use cgo_biharmonic::density_approx::check_nesting;
use cgo_biharmonic::geometry::{ConformalMap, Domain, Shape, SigmaSpec};
use cgo_biharmonic::linearized_dn::{bilinear_form, PerturbationQ};
use cgo_biharmonic::recovery::{isotropic_decompose, Coefficient, MomentOracle};
use cgo_biharmonic::segal_bargmann::transform_real;
use cgo_biharmonic::special_solutions::{cgo_phase, AmplitudeTag, IsotropicVector};
use cgo_biharmonic::verification::{bump, reference_nesting};
use cgo_biharmonic::C64;
use proptest::prelude::*;

fn disk(res: usize) -> Arc<Domain> {
    Arc::new(Domain::build(Shape::disk([-1.0, 0.0], 1.0), res, SigmaSpec::arc([0.0, 0.0], 2.0)).unwrap())
}

fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol * (1.0 + a.norm().max(b.norm()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decomposition_is_isotropic_and_exact(
        a in 0.5f64..20.0, eps in 0.01f64..0.2, r in 0.0f64..0.999,
        d in prop::array::uniform4(-1.0f64..1.0),
    ) {
        let len = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let s = 2.0 * eps * a * r / len;
        let z = [C64::new(d[0] * s, 2.0 * a + d[1] * s), C64::new(d[2] * s, d[3] * s)];
        let dec = isotropic_decompose(z, a, eps).unwrap();
        prop_assert!(dec.in_tube);
        let scale = 1e-12 * a * a;
        prop_assert!(dec.xi.self_dot().norm() <= scale && dec.eta.self_dot().norm() <= scale);
        for k in 0..2 {
            prop_assert!(close(dec.xi.0[k] + dec.eta.0[k], z[k], 1e-13));
        }
    }

    #[test]
    fn direction_constructor_is_isotropic(t in 0.0f64..std::f64::consts::TAU, s in 0.01f64..50.0) {
        let xi = IsotropicVector::from_direction([t.cos(), t.sin()], s);
        prop_assert!(xi.self_dot().norm() <= 1e-12 * s * s);
        prop_assert!((xi.norm() - s * 2f64.sqrt()).abs() <= 1e-12 * s);
    }

    #[test]
    fn phase_modulus_follows_imaginary_part(
        t in 0.0f64..std::f64::consts::TAU, s in 0.1f64..3.0, h in 0.05f64..1.0,
        x in prop::array::uniform2(-2.0f64..2.0),
    ) {
        let xi = IsotropicVector::from_direction([t.cos(), t.sin()], s);
        let im = xi.im();
        let want = (x[0] * im[0] + x[1] * im[1]) / h;
        prop_assert!((cgo_phase(&xi, h, x).norm().ln() - want).abs() <= 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn inversion_is_involutive_and_fixes_its_circle(
        c in prop::array::uniform2(-3.0f64..3.0), r in 0.1f64..3.0, t in 0.0f64..std::f64::consts::TAU,
        x in prop::array::uniform2(-3.0f64..3.0),
    ) {
        let map = ConformalMap::new(c, r, [t.cos(), t.sin()]).unwrap();
        let d = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
        prop_assume!(d > 1e-3);
        let y = map.apply(map.apply(x));
        prop_assert!((y[0] - x[0]).abs() + (y[1] - x[1]).abs() <= 1e-9 * (1.0 + (r / d).powi(2)));
        let p = map.fixed_point();
        let q = map.apply(p);
        prop_assert!((q[0] - p[0]).abs() + (q[1] - p[1]).abs() <= 1e-12 * (1.0 + r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bilinear_form_is_linear_in_each_slot(
        w in prop::array::uniform4(-2.0f64..2.0), t in -3.0f64..3.0,
    ) {
        let d = disk(32);
        let q1 = PerturbationQ::from_fns(&d, |p| w[0] * p[0], |p| [p[1], w[1]], |p| 1.0 + w[2] * p[1] * p[1]);
        let q2 = PerturbationQ::from_fns(&d, |p| p[1].sin(), |_| [w[3], -w[0]], |p| w[1] * p[0]);
        let u = Field::from_real_fn(&d, |p| (p[0] + 1.0) * p[1] + w[2]);
        let u2 = Field::from_real_fn(&d, |p| p[0] * p[0] - w[3] * p[1]);
        let v = Field::from_real_fn(&d, |p| bump(p, [-1.0, 0.0], 0.8));
        let sum_q = bilinear_form(&q1.add(&q2.scale(t)).unwrap(), &u, &v).unwrap();
        let parts_q = bilinear_form(&q1, &u, &v).unwrap() + t * bilinear_form(&q2, &u, &v).unwrap();
        prop_assert!(close(sum_q, parts_q, 1e-12));
        let tc = C64::new(t, 0.5);
        let sum_u = bilinear_form(&q1, &u.combine(C64::new(1.0, 0.0), &u2, tc).unwrap(), &v).unwrap();
        let parts_u = bilinear_form(&q1, &u, &v).unwrap() + tc * bilinear_form(&q1, &u2, &v).unwrap();
        prop_assert!(close(sum_u, parts_u, 1e-12));
    }

    #[test]
    fn transform_is_linear(w in prop::array::uniform2(-2.0f64..2.0), h in 0.05f64..0.2) {
        let d = disk(32);
        let f = Field::from_real_fn(&d, |p| bump(p, [-1.0, 0.0], 0.6));
        let g = Field::from_real_fn(&d, |p| p[0] * p[1]);
        let (a, b) = (C64::new(w[0], 0.0), C64::new(0.0, w[1]));
        let lhs = transform_real(&f.combine(a, &g, b).unwrap(), h).unwrap().restrict(&f);
        let tf = transform_real(&f, h).unwrap().restrict(&f);
        let tg = transform_real(&g, h).unwrap().restrict(&f);
        let rhs = tf.combine(a, &tg, b).unwrap();
        prop_assert!(lhs.combine(C64::new(1.0, 0.0), &rhs, C64::new(-1.0, 0.0)).unwrap().max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn zero_perturbation_has_zero_moments(
        t in 0.0f64..std::f64::consts::TAU, s in 0.5f64..1.5, h in 0.4f64..1.0,
    ) {
        let d = disk(32);
        let oracle = MomentOracle::synthetic(PerturbationQ::zero(&d));
        let xi = IsotropicVector::from_direction([t.cos(), t.sin()], s);
        let eta = IsotropicVector::from_direction([-t.cos(), t.sin()], s);
        let pairs = [(AmplitudeTag::One, AmplitudeTag::One), (AmplitudeTag::Coord(0), AmplitudeTag::NormSq)];
        for m in oracle.pairings(&pairs, &xi, &eta, h).unwrap() {
            prop_assert_eq!(m, C64::new(0.0, 0.0));
        }
        let z = [xi.0[0] + eta.0[0], xi.0[1] + eta.0[1]];
        for c in [Coefficient::A2, Coefficient::A1(0), Coefficient::A1(1), Coefficient::A0] {
            prop_assert_eq!(oracle.direct_moment(c, z, h), C64::new(0.0, 0.0));
        }
    }
}

#[test]
fn green_potential_is_linear_and_nesting_holds() {
    let nested = reference_nesting(48, 2).unwrap();
    assert!(check_nesting(&nested));
    let a = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(-0.5, 0.25)];
    let b = [C64::new(0.0, 0.0), C64::new(2.0, -1.0), C64::new(0.3, 0.0)];
    let (s, t) = (C64::new(0.7, 0.2), C64::new(-1.3, 0.0));
    let mix: Vec<C64> = a.iter().zip(&b).map(|(x, y)| s * x + t * y).collect();
    let lhs = nested.green_potential(&mix).unwrap();
    let rhs = nested.green_potential(&a).unwrap().combine(s, &nested.green_potential(&b).unwrap(), t).unwrap();
    let diff = lhs.combine(C64::new(1.0, 0.0), &rhs, C64::new(-1.0, 0.0)).unwrap();
    assert!(diff.max_abs() <= 1e-12 * rhs.max_abs().max(1e-300));
    assert!(nested.green_potential(&[C64::new(0.0, 0.0); 3]).unwrap().max_abs() == 0.0);
}
