//! Seeded ADMM checks: the soft-threshold table, the `γ = 0` fixed point and
//! descent of the augmented Lagrangian over the primal half-step.

use carleman_core::sparse::{admm_step, augmented_lagrangian, soft_threshold, AdmmState};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `(w, μ, expected)`: above, inside and below the dead zone, and both edges.
pub const SOFT_THRESHOLD_TABLE: [(f64, f64, f64); 7] = [
    (0.5, 0.2, 0.3),
    (-0.75, 0.25, -0.5),
    (0.1, 0.2, 0.0),
    (-0.1, 0.2, 0.0),
    (0.2, 0.2, 0.0),
    (-0.2, 0.2, 0.0),
    (1.3, 0.0, 1.3),
];

pub fn soft_threshold_mismatches() -> usize {
    SOFT_THRESHOLD_TABLE
        .iter()
        .filter(|(w, mu, e)| soft_threshold(*w, *mu) != *e)
        .count()
}

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-3.0..3.0))
}

/// Largest `‖K − Π‖_max` after 200 steps with `γ = 0` from random starts.
pub fn zero_gamma_fixed_point(seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (r, c) = (rng.random_range(1..=4), rng.random_range(1..=6));
        let pi = random(&mut rng, r, c);
        let mut s = AdmmState {
            k: random(&mut rng, r, c),
            l: random(&mut rng, r, c),
            lambda: random(&mut rng, r, c),
        };
        let w = DMatrix::from_element(r, c, 1.0);
        for _ in 0..200 {
            s = admm_step(&s, 1.0, 0.0, &w, &pi).unwrap();
        }
        worst = worst.max((&s.k - &pi).amax()).max(s.l.amax());
    }
    worst
}

/// Largest increase of the augmented Lagrangian over one primal half-step
/// (fixed `ρ` and `Λ`), over random instances and 20 steps each.
pub fn lagrangian_increase(seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..count {
        let (r, c) = (rng.random_range(1..=4), rng.random_range(1..=6));
        let pi = random(&mut rng, r, c);
        let w = DMatrix::from_fn(r, c, |_, _| rng.random_range(0.5..3.0));
        let gamma = rng.random_range(0.0..2.0);
        let rho = rng.random_range(0.1..10.0);
        let mut s = AdmmState {
            k: random(&mut rng, r, c),
            l: random(&mut rng, r, c),
            lambda: random(&mut rng, r, c),
        };
        for _ in 0..20 {
            let before = augmented_lagrangian(&s, rho, gamma, &w, &pi).unwrap();
            let next = admm_step(&s, rho, gamma, &w, &pi).unwrap();
            let primal = AdmmState {
                k: next.k.clone(),
                l: next.l.clone(),
                lambda: s.lambda.clone(),
            };
            worst = worst.max(augmented_lagrangian(&primal, rho, gamma, &w, &pi).unwrap() - before);
            s = next;
        }
    }
    worst
}
