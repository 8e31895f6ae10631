use carleman_core::basis::QuadBasis;
use carleman_core::sim::{integrate, Excitation, SimOptions};
use carleman_core::sparse::{
    admm_solve, admm_step, augmented_lagrangian, cardinality, soft_threshold, AdmmConfig, AdmmState,
};
use carleman_core::{CarlemanModel, MonomialBasis, PolynomialPlant};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn sym(dim: usize, v: &[f64]) -> DMatrix<f64> {
    let m = DMatrix::from_fn(dim, dim, |i, j| v[(i * dim + j) % v.len()]);
    (&m + m.transpose()) * 0.5
}

fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |i, j| v[(i * c + j) % v.len()])
}

proptest! {
    #[test]
    fn quadratic_form_survives_vectorization(
        n in 1usize..=3, order in 1usize..=3,
        v in prop::collection::vec(-2.0f64..2.0, 40),
        x in prop::collection::vec(-1.5f64..1.5, 3),
    ) {
        let basis = MonomialBasis::full(n, order).unwrap();
        let qb = QuadBasis::new(&basis);
        let p = sym(basis.len(), &v);
        let psi = basis.lift(&x[..n]).unwrap();
        let psibar = qb.lift_extended(&x[..n]).unwrap();
        let pbar = qb.vectorize(&p).unwrap();
        let direct = (psi.transpose() * &p * &psi)[0];
        prop_assert!((psibar.dot(&pbar) - direct).abs() <= 1e-10 * (1.0 + direct.abs()));

        let back = qb.unvectorize(&pbar).unwrap();
        prop_assert!((qb.vectorize(&back).unwrap() - &pbar).amax() < 1e-12);
        // ψᵀP = p̄ᵀβ(ψ) for the unvectorized P.
        let lhs = psi.transpose() * &back;
        let rhs = pbar.transpose() * qb.beta(&psi);
        prop_assert!((lhs - rhs).amax() < 1e-10 * (1.0 + pbar.amax()));
        let w = DVector::from_fn(basis.len(), |i, _| v[i % v.len()]);
        prop_assert!((qb.beta_times(&psi, &w) - qb.beta(&psi) * &w).amax() < 1e-12);
    }

    #[test]
    fn soft_threshold_is_odd_and_nonexpansive(a in -5.0f64..5.0, b in -5.0f64..5.0, mu in 0.0f64..3.0) {
        prop_assert_eq!(soft_threshold(-a, mu), -soft_threshold(a, mu));
        prop_assert!((soft_threshold(a, mu) - soft_threshold(b, mu)).abs() <= (a - b).abs() + 1e-15);
        prop_assert!(soft_threshold(a, mu).abs() <= a.abs());
    }

    #[test]
    fn admm_without_penalty_returns_to_pi(v in prop::collection::vec(-3.0f64..3.0, 27)) {
        let pi = mat(3, 3, &v[..9]);
        let mut s = AdmmState { k: mat(3, 3, &v[9..18]), l: mat(3, 3, &v[18..]), lambda: mat(3, 3, &v[4..13]) };
        let w = DMatrix::from_element(3, 3, 1.0);
        for _ in 0..200 {
            s = admm_step(&s, 1.0, 0.0, &w, &pi).unwrap();
        }
        prop_assert!((&s.k - &pi).amax() < 1e-10);
        prop_assert!(s.l.amax() < 1e-10);
        prop_assert!(s.lambda.amax() < 1e-10);
    }

    #[test]
    fn primal_half_step_never_increases_the_lagrangian(
        v in prop::collection::vec(-3.0f64..3.0, 36),
        gamma in 0.0f64..2.0, rho in 0.1f64..10.0,
    ) {
        let pi = mat(3, 4, &v[..12]);
        let w = DMatrix::from_fn(3, 4, |i, j| 0.5 + v[(i + 4 * j) % 36].abs());
        let mut s = AdmmState { k: mat(3, 4, &v[12..24]), l: mat(3, 4, &v[24..]), lambda: mat(3, 4, &v[6..18]) };
        for _ in 0..20 {
            let before = augmented_lagrangian(&s, rho, gamma, &w, &pi).unwrap();
            let next = admm_step(&s, rho, gamma, &w, &pi).unwrap();
            let primal = AdmmState { k: next.k.clone(), l: next.l.clone(), lambda: s.lambda.clone() };
            let after = augmented_lagrangian(&primal, rho, gamma, &w, &pi).unwrap();
            prop_assert!(after <= before + 1e-10, "{after} > {before}");
            s = next;
        }
    }

    #[test]
    fn cardinality_falls_with_gamma(v in prop::collection::vec(-2.0f64..2.0, 24)) {
        let pi = mat(4, 6, &v);
        let mut last = usize::MAX;
        for gamma in [0.0, 0.1, 0.3, 0.6, 1.0, 1.5, 2.5] {
            let (s, _) = admm_solve(&pi, &AdmmConfig::new(gamma)).unwrap();
            let c = cardinality(&s.k);
            prop_assert!(c <= last);
            last = c;
        }
        prop_assert_eq!(last, 0);
    }

    #[test]
    fn feedback_matrix_is_exact_for_linear_gains(
        n in 1usize..=3, order in 1usize..=3,
        v in prop::collection::vec(-1.0f64..1.0, 30),
        x in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let a = mat(n, n, &v);
        let b = mat(n, 2, &v[9..]);
        let plant = PolynomialPlant::linear(a, b).unwrap();
        let basis = MonomialBasis::full(n, order).unwrap();
        let model = CarlemanModel::from_plant(&plant, &basis).unwrap();
        let mut k = DMatrix::zeros(2, basis.len());
        for c in 0..n {
            k[(0, c)] = v[20 + c];
            k[(1, c)] = v[25 + c % 5];
        }
        let psi = basis.lift(&x[..n]).unwrap();
        let (kk, _) = model.closed_loop_matrix(&k).unwrap();
        let exact = model.eval_input_matrix(&psi).unwrap() * (&k * &psi);
        prop_assert!((kk * &psi - exact).amax() < 1e-12);
    }
}

#[test]
fn rk4_is_fourth_order() {
    let plant = PolynomialPlant::linear(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 0.0)).unwrap();
    let err = |dt: f64| {
        let traj = integrate(&plant, &[1.0], SimOptions::new(dt, 2.0), |_, _| vec![0.0], &Excitation::zero(1)).unwrap();
        (traj.final_state()[0] - (-2f64).exp()).abs()
    };
    let ratio = err(0.1) / err(0.05);
    assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
}
