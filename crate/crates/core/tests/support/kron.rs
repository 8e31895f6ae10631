//! Reduced-basis lifting against an explicit Kronecker-power construction.

use carleman_core::basis::monomials_of_degree;
use carleman_core::lift::lift_consistency_check;
use carleman_core::plant::oscillator_plant;
use carleman_core::poly::PolyVector;
use carleman_core::sim::{integrate, Excitation, SimOptions};
use carleman_core::{CarlemanModel, ExcitationSpec, Monomial, MonomialBasis, PolynomialPlant};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tuples(n: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |i| {
                    let mut t = t.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

fn monomial_of(n: usize, t: &[usize]) -> Monomial {
    let mut e = vec![0; n];
    for &i in t {
        e[i] += 1;
    }
    Monomial::new(e)
}

fn pow(n: usize, d: usize) -> usize {
    n.pow(d as u32)
}

/// `Σ_i I^{⊗i} ⊗ F ⊗ I^{⊗(d−1−i)}` for `F` of shape `n × n^j`.
fn kron_block(f: &DMatrix<f64>, n: usize, d: usize) -> DMatrix<f64> {
    let j_cols = f.ncols();
    let mut acc: Option<DMatrix<f64>> = None;
    for i in 0..d {
        let left = DMatrix::<f64>::identity(pow(n, i), pow(n, i));
        let right = DMatrix::<f64>::identity(pow(n, d - 1 - i), pow(n, d - 1 - i));
        let term = left.kronecker(&f.kronecker(&right));
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    acc.unwrap_or_else(|| DMatrix::zeros(0, j_cols))
}

/// `x^{⊗d} = S ψ_d` over the unique monomials of degree `d`.
fn expansion(n: usize, d: usize) -> DMatrix<f64> {
    let monos = monomials_of_degree(n, d as u32);
    let mut s = DMatrix::zeros(pow(n, d), monos.len());
    for (r, t) in tuples(n, d).iter().enumerate() {
        let m = monomial_of(n, t);
        let c = monos.iter().position(|x| *x == m).unwrap();
        s[(r, c)] = 1.0;
    }
    s
}

/// Picks one Kronecker row per unique monomial.
fn selection(n: usize, d: usize) -> DMatrix<f64> {
    let monos = monomials_of_degree(n, d as u32);
    let all = tuples(n, d);
    let mut t = DMatrix::zeros(monos.len(), pow(n, d));
    for (r, m) in monos.iter().enumerate() {
        let c = all.iter().position(|tu| monomial_of(n, tu) == *m).unwrap();
        t[(r, c)] = 1.0;
    }
    t
}

fn poly_from_kron(n: usize, blocks: &[(usize, DMatrix<f64>)]) -> PolyVector {
    let mut p = PolyVector::zeros(n, n);
    for (j, f) in blocks {
        for (c, t) in tuples(n, *j).iter().enumerate() {
            for r in 0..n {
                if f[(r, c)] != 0.0 {
                    p.add_term(r, monomial_of(n, t), f[(r, c)]);
                }
            }
        }
    }
    p
}

/// Reduced block `(d, d + j − 1)` of the oracle for Taylor coefficient `F_j`.
fn oracle_block(f: &DMatrix<f64>, n: usize, d: usize, j: usize) -> DMatrix<f64> {
    selection(n, d) * kron_block(f, n, d) * expansion(n, d + j - 1)
}

/// Largest entrywise deviation of one lifted system from the oracle.
pub struct LiftError {
    pub n: usize,
    pub order: usize,
    pub a: f64,
    pub b0: f64,
    pub b_state: f64,
}

impl LiftError {
    pub fn max(&self) -> f64 {
        self.a.max(self.b0).max(self.b_state)
    }
}

/// Random cubic drifts with quadratic input gains, three per `(n, N)` with
/// `n, N ∈ 1..=3`.
pub fn lift_errors(seed: u64) -> Vec<LiftError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for n in 1..=3 {
        for order in 1..=3 {
            for _ in 0..3 {
                let drift_blocks: Vec<(usize, DMatrix<f64>)> = (1..=3)
                    .map(|j| (j, DMatrix::from_fn(n, pow(n, j), |_, _| rng.random_range(-1.0..1.0))))
                    .collect();
                let k = rng.random_range(1..=2);
                let b0 = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
                let g_blocks: Vec<Vec<(usize, DMatrix<f64>)>> = (0..k)
                    .map(|_| {
                        (1..=2)
                            .map(|l| (l, DMatrix::from_fn(n, pow(n, l), |_, _| rng.random_range(-1.0..1.0))))
                            .collect()
                    })
                    .collect();
                let plant = PolynomialPlant::new(
                    poly_from_kron(n, &drift_blocks),
                    b0.clone(),
                    g_blocks.iter().map(|g| poly_from_kron(n, g)).collect(),
                )
                .unwrap();
                let basis = MonomialBasis::full(n, order).unwrap();
                let model = CarlemanModel::from_plant(&plant, &basis).unwrap();

                let mut expect_a = DMatrix::zeros(basis.len(), basis.len());
                for d in 1..=order {
                    for (j, f) in &drift_blocks {
                        let dc = d + j - 1;
                        if dc > order {
                            continue;
                        }
                        let block = oracle_block(f, n, d, *j);
                        let (r0, c0) = (basis.degree_range(d).start, basis.degree_range(dc).start);
                        let mut v = expect_a.view_mut((r0, c0), block.shape());
                        v += &block;
                    }
                }
                let mut err = LiftError {
                    n,
                    order,
                    a: (&model.a - &expect_a).amax(),
                    b0: 0.0,
                    b_state: 0.0,
                };

                for ch in 0..k {
                    let mut expect_b0 = DMatrix::zeros(basis.len(), 1);
                    let mut expect_bs = DMatrix::zeros(basis.len(), basis.len());
                    let b0_col = DMatrix::from_column_slice(n, 1, b0.column(ch).as_slice());
                    let mut blocks: Vec<(usize, DMatrix<f64>)> = vec![(0, b0_col)];
                    blocks.extend(g_blocks[ch].iter().cloned());
                    for d in 1..=order {
                        for (l, g) in &blocks {
                            let dc = d + l - 1;
                            if dc > order {
                                continue;
                            }
                            let block = selection(n, d) * kron_block(g, n, d) * expansion(n, dc);
                            let r0 = basis.degree_range(d).start;
                            if dc == 0 {
                                let mut v = expect_b0.view_mut((r0, 0), block.shape());
                                v += &block;
                            } else {
                                let c0 = basis.degree_range(dc).start;
                                let mut v = expect_bs.view_mut((r0, c0), block.shape());
                                v += &block;
                            }
                        }
                    }
                    err.b0 = err.b0.max((model.b0.column(ch) - expect_b0.column(0)).amax());
                    err.b_state = err.b_state.max((&model.b_state[ch] - &expect_bs).amax());
                }
                out.push(err);
            }
        }
    }
    out
}

/// Lift-consistency residuals on a small oscillator run, for each order.
pub fn consistency_residuals(orders: &[usize]) -> Vec<Vec<f64>> {
    let plant = oscillator_plant();
    let noise = Excitation::new(&ExcitationSpec::sinusoids(0.05, 2), 1).unwrap();
    let traj = integrate(&plant, &[0.06, 0.08], SimOptions::new(1e-3, 5.0), |_, _| vec![0.0], &noise).unwrap();
    orders
        .iter()
        .map(|&order| {
            let model = CarlemanModel::from_plant(&plant, &MonomialBasis::full(2, order).unwrap()).unwrap();
            lift_consistency_check(&model, &traj).unwrap()
        })
        .collect()
}

/// Norm of the residual over the plain-state rows, shared by every order.
pub fn state_residual(r: &[f64]) -> f64 {
    r[..2].iter().map(|v| v * v).sum::<f64>().sqrt()
}
