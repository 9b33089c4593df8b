use dvarint_core::mechanics::*;
use dvarint_core::models::{make_mechanics, ModelSpec};
use dvarint_core::verify::*;
use dvarint_core::SolverSettings;
use nalgebra::DVector;
use proptest::prelude::*;

fn model(name: &str) -> (DiscreteLagrangian, HamiltonianSystem) {
    make_mechanics(&ModelSpec::new(name)).unwrap()
}

fn vec4() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symplectic_area_is_bilinear_and_antisymmetric(x in vec4(), y in vec4(), w in vec4(), a in -3.0f64..3.0) {
        let lhs = symplectic_area(&x.iter().zip(&w).map(|(p, q)| a * p + q).collect::<Vec<_>>(), &y).unwrap();
        let rhs = a * symplectic_area(&x, &y).unwrap() + symplectic_area(&w, &y).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-14 * (1.0 + lhs.abs()) * 10.0);
        prop_assert_eq!(symplectic_area(&x, &y).unwrap(), -symplectic_area(&y, &x).unwrap());
    }

    #[test]
    fn steppers_satisfy_their_residuals(p in -1.5f64..1.5, q in -1.5f64..1.5, tau in 0.01f64..0.3) {
        let s = SolverSettings::default();
        for name in ["pendulum", "quartic"] {
            let (_, h) = model(name);
            let z = PhasePoint::from_pq(&[p], &[q]);
            let m = midpoint_step(&h, &z, tau, &s).unwrap();
            prop_assert!(midpoint_residual(&h, &z, &m, tau).unwrap().norm() <= 1e-12);
            let f = fourth_order_step(&h, &z, tau, &s).unwrap();
            prop_assert!(fourth_order_residual(&h, &z, &f, tau).unwrap().norm() <= 1e-12);
            let (qn, pn) = canonical_step(&h, &[q], &[p], tau, &s).unwrap();
            let c = canonical_residual(&h, &z, &PhasePoint::from_pq(&pn, &qn), tau).unwrap();
            prop_assert!(c.norm() <= 1e-12);
        }
    }

    #[test]
    fn midpoint_preserves_quadratic_energy(p in -2.0f64..2.0, q in -2.0f64..2.0, tau in 0.01f64..0.5) {
        let (_, h) = model("harmonic");
        let z = PhasePoint::from_pq(&[p], &[q]);
        let next = midpoint_step(&h, &z, tau, &SolverSettings::default()).unwrap();
        prop_assert!((h.energy(&next) - h.energy(&z)).abs() <= 1e-13);
    }

    #[test]
    fn tracked_area_is_conserved(p in -1.0f64..1.0, q in -1.0f64..1.0, xi in vec4()) {
        let (_, h) = model("pendulum");
        let z = PhasePoint::from_pq(&[p], &[q]);
        let tangents = vec![DVector::from_column_slice(&xi[..2]), DVector::from_column_slice(&xi[2..])];
        // the fourth-order map has finite-difference tangents only
        for (map, tol) in [
            (StepMap::Midpoint(&h), 1e-10),
            (StepMap::Canonical(&h), 1e-10),
            (StepMap::FourthOrder(&h), 1e-8),
        ] {
            let t = integrate(map, z.clone(), tangents.clone(), 0.1, 50, SolverSettings::default()).unwrap();
            let r = symplectic_residual_series(&t).unwrap();
            prop_assert!(r.max_abs() <= tol, "{:?}: {}", map.scheme(), r.max_abs());
        }
    }

    #[test]
    fn canonical_identity_holds_everywhere(w in vec4(), xi in vec4(), eta in vec4(), tau in 0.01f64..1.0) {
        let (_, h) = model("quartic");
        let form = CanonicalForm { system: &h, tau };
        let r = cohomology_identity_residual(&form, &w, &xi, &eta, DerivativeMode::Analytic).unwrap();
        prop_assert!(r.abs() <= 1e-10 * (1.0 / tau));
        let r = cohomology_identity_residual(&form, &w, &xi, &eta, DerivativeMode::FiniteDifference).unwrap();
        prop_assert!(r.abs() <= 5e-6 * (1.0 / tau));
    }

    #[test]
    fn el_forms_are_linear_in_the_variation(w in vec4(), xi in vec4(), eta in vec4(), a in -2.0f64..2.0) {
        let (_, h) = model("pendulum");
        let form = MidpointForm { system: &h, tau: 0.1 };
        let comb: Vec<f64> = xi.iter().zip(&eta).map(|(x, y)| a * x + y).collect();
        let lhs = form.value(&w, &comb).unwrap();
        let rhs = a * form.value(&w, &xi).unwrap() + form.value(&w, &eta).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()) * 100.0);
    }

    #[test]
    fn coboundaries_do_not_change_closedness(w in vec4(), xi in vec4(), eta in vec4()) {
        let (_, h) = model("pendulum");
        let form = MidpointForm { system: &h, tau: 0.1 };
        let shifted = SumForm(form, ExactForm::new(4, |v: &[f64]| (v[0] * v[3]).cos() + v[1] * v[2].powi(2)));
        let mode = DerivativeMode::FiniteDifferenceStep(1e-4);
        let a = el_form_exterior_derivative(&form, &w, &xi, &eta, mode).unwrap();
        let b = el_form_exterior_derivative(&shifted, &w, &xi, &eta, mode).unwrap();
        prop_assert!((a - b).abs() <= 5e-6, "{a} {b}");
    }
}

#[test]
fn lagrangian_and_canonical_trajectories_coincide() {
    let s = SolverSettings::default();
    let (l, h) = model("pendulum");
    let tau = 0.05;
    let (mut q_prev, mut q_cur) = (vec![1.0], vec![1.02]);
    let mut p = discrete_legendre(&l, &q_prev, &q_cur, tau).unwrap();
    let mut q = q_cur.clone();
    for _ in 0..1000 {
        let next = del_step(&l, &q_prev, &q_cur, tau, &s).unwrap();
        let (qn, pn) = canonical_step(&h, &q, &p, tau, &s).unwrap();
        assert!((qn[0] - next[0]).abs() <= 1e-12);
        q_prev = q_cur;
        q_cur = next;
        q = qn;
        p = pn;
    }
}
