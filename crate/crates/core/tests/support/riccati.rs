//! Random stabilizable linear systems checked against model-based Kleinman.

use carleman_core::learn::{run_off_policy, run_on_policy, FeedbackGain, GainSource, LearningConfig, Quadrature};
use carleman_core::linalg::{kleinman, min_sym_eigenvalue, stabilizing_gain};
use carleman_core::{CarlemanModel, CostWeights, ExcitationSpec, MonomialBasis, PolynomialPlant};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub plant: PolynomialPlant,
    pub model: CarlemanModel,
    pub weights: CostWeights,
    pub k0: FeedbackGain,
    pub p_star: DMatrix<f64>,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    loop {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=n.min(2));
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let Ok(k0) = stabilizing_gain(&a, &b) else { continue };
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(m, m);
        let Ok(oracle) = kleinman(&a, &b, &q, &r, &k0, 1e-13, 200) else { continue };
        if k0.amax() > 20.0 {
            continue;
        }
        let plant = PolynomialPlant::linear(a, b).unwrap();
        let model = CarlemanModel::from_plant(&plant, &MonomialBasis::full(n, 1).unwrap()).unwrap();
        let k0 = FeedbackGain::new(k0, GainSource::Initial, &model.basis).unwrap();
        return Case {
            plant,
            model,
            weights: CostWeights::new(q, r).unwrap(),
            k0,
            p_star: oracle.p,
        };
    }
}

/// Learning setup for the linear comparisons: Simpson over 20 substeps and
/// a tight tolerance, so the learner lands on the Kleinman fixed point.
pub fn config(seed: u64) -> LearningConfig {
    let mut cfg = LearningConfig::new(2.0, 0.05, ExcitationSpec::sinusoids(0.5, seed));
    cfg.substeps = 20;
    cfg.quadrature = Quadrature::Simpson;
    cfg.tol = 1e-7;
    cfg.max_iters = 30;
    cfg.ridge = 0.0;
    cfg.require_convergence = false;
    cfg
}

pub struct Outcome {
    pub case: usize,
    pub learner: &'static str,
    pub converged: bool,
    /// `‖P − P*‖_F / ‖P*‖_F`; infinite when learning failed.
    pub error: f64,
    /// `min_i λ_min(P_{i−1} − P_i)`.
    pub monotonicity: f64,
    pub failure: Option<String>,
}

/// On- and off-policy learning on `count` random systems.
pub fn are_equivalence(seed: u64, count: u64) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..count {
        let c = random_case(&mut rng);
        let cfg = config(100 + case);
        let x0 = vec![1.0; c.model.n()];
        for (learner, run) in [
            ("on-policy", run_on_policy(&c.plant, &c.model, &c.weights, &cfg, &c.k0, &x0)),
            ("off-policy", run_off_policy(&c.plant, &c.model, &c.weights, &cfg, &c.k0, &x0)),
        ] {
            let monotonicity = run
                .log
                .p_snapshots
                .windows(2)
                .map(|w| min_sym_eigenvalue(&(&w[0] - &w[1])))
                .fold(f64::INFINITY, f64::min);
            let (error, failure) = match &run.result {
                Ok(l) => ((&l.certificate.p - &c.p_star).norm() / c.p_star.norm(), None),
                Err(e) => (f64::INFINITY, Some(e.to_string())),
            };
            out.push(Outcome {
                case: case as usize,
                learner,
                converged: run.log.converged,
                error,
                monotonicity,
                failure,
            });
        }
    }
    out
}
