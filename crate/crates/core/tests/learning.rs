mod support;

use carleman_core::learn::{initial_gain, policy_iteration, run_off_policy, run_on_policy, FeedbackGain, GainSource};
use carleman_core::{CarlemanModel, CostWeights, Execution, MonomialBasis, PolynomialPlant};
use nalgebra::DMatrix;
use support::riccati::{are_equivalence, config};

#[test]
fn random_linear_systems_match_kleinman() {
    for o in are_equivalence(7, 20) {
        let id = format!("case {} {}", o.case, o.learner);
        assert!(o.failure.is_none(), "{id}: {:?}", o.failure);
        assert!(o.converged, "{id} did not converge");
        assert!(o.error < 1e-4, "{id}: relative error {:.2e}", o.error);
        assert!(o.monotonicity >= -1e-8, "{id}: certificate increased ({:.2e})", o.monotonicity);
    }
}

fn scalar() -> (PolynomialPlant, CarlemanModel, CostWeights) {
    let plant = PolynomialPlant::linear(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let model = CarlemanModel::from_plant(&plant, &MonomialBasis::full(1, 1).unwrap()).unwrap();
    let w = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
    (plant, model, w)
}

#[test]
fn scalar_learners_reach_the_riccati_solution() {
    let (plant, model, w) = scalar();
    let k0 = FeedbackGain::new(DMatrix::zeros(1, 1), GainSource::Initial, &model.basis).unwrap();
    let cfg = config(3);
    let target = 2f64.sqrt() - 1.0;
    for out in [
        run_on_policy(&plant, &model, &w, &cfg, &k0, &[1.0]),
        run_off_policy(&plant, &model, &w, &cfg, &k0, &[1.0]),
    ] {
        let learned = out.result.unwrap();
        assert!((learned.certificate.p[(0, 0)] - target).abs() < 1e-8);
        assert!((learned.gain.k[(0, 0)] - target).abs() < 1e-8);
        assert_eq!(out.log.p_snapshots.len(), out.log.iterations + 1);
    }
}

#[test]
fn starting_from_the_optimum_converges_immediately() {
    let (plant, model, w) = scalar();
    let k0 = initial_gain(&model, &w).unwrap();
    let out = run_off_policy(&plant, &model, &w, &config(4), &k0, &[1.0]);
    assert!(out.result.is_ok());
    assert_eq!(out.log.iterations, 1);
}

#[test]
fn destabilizing_gain_is_reported() {
    // u = +2x makes ẋ = x unstable; the window diverges or the fit is indefinite.
    let (plant, model, w) = scalar();
    let k0 = FeedbackGain::new(DMatrix::from_element(1, 1, -2.0), GainSource::Initial, &model.basis).unwrap();
    let mut cfg = config(5);
    cfg.update_interval = 20.0;
    let out = run_on_policy(&plant, &model, &w, &cfg, &k0, &[1.0]);
    assert!(out.result.is_err());
}

#[test]
fn exhausted_budget_is_an_error_when_required() {
    let (plant, model, w) = scalar();
    let k0 = FeedbackGain::new(DMatrix::zeros(1, 1), GainSource::Initial, &model.basis).unwrap();
    let mut cfg = config(6);
    cfg.max_iters = 1;
    cfg.require_convergence = true;
    let mut ev = carleman_core::learn::OffPolicyEvaluator::new(&plant, &model, &w, &cfg, &[1.0]).unwrap();
    let (log, res) = policy_iteration(&mut ev, &model, &w, &cfg, &k0);
    assert!(matches!(res, Err(carleman_core::Error::NotConverged { iterations: 1, .. })));
    assert_eq!(log.p_snapshots.len(), 2);
}

#[test]
fn sequential_and_parallel_runs_are_bit_identical() {
    let plant = PolynomialPlant::linear(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )
    .unwrap();
    let model = CarlemanModel::from_plant(&plant, &MonomialBasis::full(2, 2).unwrap()).unwrap();
    let w = CostWeights::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
    let k0 = initial_gain(&model, &w).unwrap();
    let run = |exec| {
        let mut cfg = config(5);
        cfg.execution = exec;
        cfg.max_iters = 4;
        let out = run_off_policy(&plant, &model, &w, &cfg, &k0, &[0.5, -0.3]);
        out.log.p_snapshots
    };
    let seq = run(Execution::Sequential);
    let par = run(Execution::Parallel);
    assert!(!seq.is_empty());
    assert_eq!(seq, par);
}
