use carleman_core::learn::{initial_gain, policy_iteration, LearningConfig, OffPolicyEvaluator, Quadrature};
use carleman_core::plant::{tugboat_basis, tugboat_plant, tugboat_weights, TugboatFleet};
use carleman_core::sparse::{bandwidth_metric, run_sparse, AdmmConfig, AgentGrouping};
use carleman_core::structured::{structured_model_based, structured_model_free, StructureMask, StructuredConfig};
use carleman_core::{CarlemanModel, ExcitationSpec};

// Two boats, linear basis, learned from a small near-linear excitation batch.
fn setup() -> (TugboatFleet, CarlemanModel, LearningConfig, Vec<f64>) {
    let fleet = TugboatFleet::new(2).unwrap();
    let model = CarlemanModel::from_plant(&tugboat_plant(2, 1).unwrap(), &tugboat_basis(2, 1).unwrap()).unwrap();
    let noise = ExcitationSpec::AlternatingPulse {
        amplitude: 1e-3,
        period: 3.0,
        jitter: 0.5,
        seed: 3,
    };
    let mut cfg = LearningConfig::new(30.0, 0.1, noise);
    cfg.substeps = 10;
    cfg.quadrature = Quadrature::Simpson;
    let mut x0 = vec![0.0; 12];
    x0[0] = 1e-3;
    x0[7] = -8e-4;
    (fleet, model, cfg, x0)
}

#[test]
fn zero_gamma_sparse_equals_dense_learner() {
    let (fleet, model, cfg, x0) = setup();
    let w = tugboat_weights(2);
    let k0 = initial_gain(&model, &w).unwrap();
    let mut ev = OffPolicyEvaluator::new(&fleet, &model, &w, &cfg, &x0).unwrap();
    let dense = policy_iteration(&mut ev, &model, &w, &cfg, &k0).1.unwrap();
    let sparse = run_sparse(&mut ev, &model, &w, &cfg, &AdmmConfig::new(0.0), &k0).result.unwrap();
    assert!((&dense.gain.k - &sparse.gain.k).amax() < 1e-12);
}

#[test]
fn dense_mask_structured_equals_dense_learner() {
    let (fleet, model, cfg, x0) = setup();
    let w = tugboat_weights(2);
    let k0 = initial_gain(&model, &w).unwrap();
    let mut ev = OffPolicyEvaluator::new(&fleet, &model, &w, &cfg, &x0).unwrap();
    let dense = policy_iteration(&mut ev, &model, &w, &cfg, &k0).1.unwrap();
    let mask = StructureMask::dense(model.k(), model.dim());
    let s = structured_model_free(&mut ev, &model, &w, &mask, &cfg, &StructuredConfig::default(), &k0);
    let k = s.result.unwrap().gain.k;
    assert!((&dense.gain.k - &k).amax() < 1e-6 * dense.gain.k.amax());
}

#[test]
fn removing_the_only_link_decouples_the_boats() {
    let model = CarlemanModel::from_plant(&tugboat_plant(2, 2).unwrap(), &tugboat_basis(2, 2).unwrap()).unwrap();
    let grouping = AgentGrouping::uniform(2, 6, 3);
    let mask = StructureMask::from_removed_links(&model.basis, &grouping, &[(0, 1)]).unwrap();
    let out = structured_model_based(&model, &tugboat_weights(2), &mask, &StructuredConfig::default());
    let learned = out.result.unwrap();
    assert!(mask.violation(&learned.gain.k).unwrap() < 1e-8);
    assert_eq!(bandwidth_metric(&learned.gain, &grouping, 12).unwrap().total, 0);
}
