use carleman_core::learn::*;
use carleman_core::plant::*;
use carleman_core::sim::*;
use carleman_core::*;
use nalgebra::DMatrix;

const HORIZON: f64 = 20.0;

fn weights() -> CostWeights {
    CostWeights::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        DMatrix::identity(1, 1),
    )
    .unwrap()
}

fn learn(order: usize, x0: &[f64]) -> Learned {
    let plant = oscillator_plant();
    let w = weights();
    let model = CarlemanModel::from_plant(&plant, &MonomialBasis::full(2, order).unwrap()).unwrap();
    let k0 = initial_gain(&model, &w).unwrap();
    let mut cfg = LearningConfig::new(2.0, 0.1, ExcitationSpec::sinusoids(0.1, 1));
    cfg.substeps = 10;
    cfg.quadrature = Quadrature::Simpson;
    cfg.max_iters = 10;
    cfg.require_convergence = false;
    run_on_policy(&plant, &model, &w, &cfg, &k0, x0).result.unwrap()
}

// ‖x − x_ref‖ over ‖x_ref‖, summed over the whole horizon.
fn relative_gap(x0: &[f64], gain: &Learned, reference: &Trajectory) -> (f64, f64) {
    let plant = oscillator_plant();
    let sim = SimOptions { substeps: 10, ..SimOptions::new(0.1, HORIZON) };
    let tr = integrate(&plant, x0, sim, gain.gain.controller(), &Excitation::zero(1)).unwrap();
    let num: f64 = tr
        .states
        .iter()
        .zip(&reference.states)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum();
    let den: f64 = reference.states.iter().map(|b| b[0] * b[0] + b[1] * b[1]).sum();
    ((num / den).sqrt(), cost_functional(&tr, &weights(), HORIZON).unwrap())
}

fn hjb(x0: &[f64]) -> Trajectory {
    let sim = SimOptions { substeps: 10, ..SimOptions::new(0.1, HORIZON) };
    integrate(&oscillator_plant(), x0, sim, |_, x| vec![hjb_oscillator_control(x)], &Excitation::zero(1))
        .unwrap()
}

#[test]
fn second_order_lift_recovers_the_optimal_controller() {
    let x0 = [0.8, 0.7];
    let learned = learn(2, &x0);
    // u* = −x2 − x1·x2 in the basis (x1, x2, x1², x1x2, x2²)
    let expected = [0.0, 1.0, 0.0, 1.0, 0.0];
    for (k, e) in learned.gain.k.iter().zip(expected) {
        assert!((k - e).abs() < 1e-4, "{}", learned.gain.k);
    }
    let reference = hjb(&x0);
    let (gap, j) = relative_gap(&x0, &learned, &reference);
    let jh = cost_functional(&reference, &weights(), HORIZON).unwrap();
    assert!(gap < 1e-3, "gap {gap}");
    assert!((j - jh).abs() < 1e-3 * jh);
}

#[test]
fn linear_lift_lags_at_large_deviation() {
    let x0 = [0.8, 0.7];
    let reference = hjb(&x0);
    let (g1, j1) = relative_gap(&x0, &learn(1, &x0), &reference);
    let (g2, j2) = relative_gap(&x0, &learn(2, &x0), &reference);
    assert!(g2 < g1, "{g2} vs {g1}");
    assert!(j2 <= j1);
}

#[test]
fn all_orders_agree_near_the_origin() {
    let x0 = [0.08, 0.06];
    let reference = hjb(&x0);
    for order in [1, 2] {
        let (gap, _) = relative_gap(&x0, &learn(order, &x0), &reference);
        assert!(gap < 0.05, "N={order} gap {gap}");
    }
}
