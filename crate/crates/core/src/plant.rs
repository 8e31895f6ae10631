//! Plant definitions: polynomial input-affine models and the exact tugboat fleet.

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::basis::{Monomial, MonomialBasis};
use crate::error::{invalid, Result};
use crate::poly::PolyVector;
use crate::sim::CostWeights;

/// Right-hand side `ẋ = f(x) + g(x)u` of a simulated plant.
pub trait Dynamics: Sync {
    fn n(&self) -> usize;
    fn k(&self) -> usize;
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
}

/// `ẋ = f(x) + (B0 + G(x))u` with polynomial `f` and `G`, in deviation
/// coordinates around the equilibrium.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolynomialPlant {
    n: usize,
    k: usize,
    drift: PolyVector,
    #[serde(with = "crate::shaped")]
    input_const: DMatrix<f64>,
    /// State-dependent part of each input column.
    input_state: Vec<PolyVector>,
    pub equilibrium_state: Vec<f64>,
    pub equilibrium_input: Vec<f64>,
}

impl PolynomialPlant {
    pub fn new(drift: PolyVector, input_const: DMatrix<f64>, input_state: Vec<PolyVector>) -> Result<Self> {
        let n = drift.len();
        let k = input_const.ncols();
        if n == 0 || k == 0 {
            return invalid("plant needs at least one state and one input");
        }
        if drift.n_vars() != n {
            return invalid(format!("drift uses {} variables for {} states", drift.n_vars(), n));
        }
        if input_const.nrows() != n {
            return invalid(format!("input matrix has {} rows, expected {n}", input_const.nrows()));
        }
        if input_state.len() != k {
            return invalid(format!("{} state-dependent input columns for {k} inputs", input_state.len()));
        }
        for (i, g) in input_state.iter().enumerate() {
            if g.len() != n || g.n_vars() != n {
                return invalid(format!("state-dependent input column {i} has wrong shape"));
            }
        }
        let has_constant = |p: &PolyVector| (0..p.len()).any(|r| p.terms(r).iter().any(|(m, _)| m.degree() == 0));
        if has_constant(&drift) {
            return invalid("drift must vanish at the origin (use deviation coordinates)");
        }
        if input_state.iter().any(has_constant) {
            return invalid("constant input terms belong in the constant input matrix");
        }
        Ok(PolynomialPlant {
            n,
            k,
            drift,
            input_const,
            input_state,
            equilibrium_state: vec![0.0; n],
            equilibrium_input: vec![0.0; k],
        })
    }

    /// From Taylor blocks: `taylor[j-1]` is `n × C(n+j-1, j)`; `input_blocks[i][l-1]`
    /// holds the degree-`l` coefficients of input column `i`.
    pub fn from_taylor(
        taylor: &[DMatrix<f64>],
        input_const: DMatrix<f64>,
        input_blocks: &[Vec<DMatrix<f64>>],
    ) -> Result<Self> {
        let n = input_const.nrows();
        let drift = PolyVector::from_taylor(n, n, taylor)?;
        let mut input_state = Vec::with_capacity(input_const.ncols());
        for i in 0..input_const.ncols() {
            let blocks = input_blocks.get(i).map(|b| b.as_slice()).unwrap_or(&[]);
            input_state.push(PolyVector::from_taylor(n, n, blocks)?);
        }
        Self::new(drift, input_const, input_state)
    }

    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return invalid("A must be square");
        }
        let k = b.ncols();
        Self::from_taylor(&[a], b, &vec![Vec::new(); k])
    }

    pub fn drift_poly(&self) -> &PolyVector {
        &self.drift
    }

    pub fn input_const(&self) -> &DMatrix<f64> {
        &self.input_const
    }

    pub fn input_state(&self) -> &[PolyVector] {
        &self.input_state
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return invalid(format!("state has length {}, plant has {} states", x.len(), self.n));
        }
        Ok(self.drift.eval(x))
    }

    pub fn input_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if x.len() != self.n {
            return invalid(format!("state has length {}, plant has {} states", x.len(), self.n));
        }
        let mut g = self.input_const.clone();
        for (i, col) in self.input_state.iter().enumerate() {
            for r in 0..self.n {
                g[(r, i)] += col.eval_row(r, x);
            }
        }
        Ok(g)
    }
}

impl Dynamics for PolynomialPlant {
    fn n(&self) -> usize {
        self.n
    }

    fn k(&self) -> usize {
        self.k
    }

    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        self.drift.eval_into(x, dx);
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            for r in 0..self.n {
                let g = self.input_const[(r, i)] + self.input_state[i].eval_row(r, x);
                dx[r] += g * ui;
            }
        }
    }
}

/// `ẋ1 = x2`, `ẋ2 = −x1 + x1x2 + ½x1²x2 + (1 + x1)u`.
pub fn oscillator_plant() -> PolynomialPlant {
    let mut drift = PolyVector::zeros(2, 2);
    drift.add_term(0, Monomial::new(vec![0, 1]), 1.0);
    drift.add_term(1, Monomial::new(vec![1, 0]), -1.0);
    drift.add_term(1, Monomial::new(vec![1, 1]), 1.0);
    drift.add_term(1, Monomial::new(vec![2, 1]), 0.5);
    let b0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let mut g = PolyVector::zeros(2, 2);
    g.add_term(1, Monomial::new(vec![1, 0]), 1.0);
    PolynomialPlant::new(drift, b0, vec![g]).expect("oscillator definition is consistent")
}

/// Optimal feedback for the oscillator with `Q1 = diag(0, 1)`, `R = 1`.
pub fn hjb_oscillator_control(x: &[f64]) -> f64 {
    -(1.0 + x[0]) * x[1]
}

/// `Q1 = diag(0, 1)`, `R = 1`.
pub fn oscillator_weights() -> CostWeights {
    CostWeights {
        q1: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        r: DMatrix::from_element(1, 1, 1.0),
    }
}

pub const TUG_STATES: usize = 6;
pub const TUG_INPUTS: usize = 3;

pub fn tug_mass() -> Matrix3<f64> {
    Matrix3::new(33.8, 1.0948, 0.0, 1.0948, 2.764, 0.0, 0.0, 0.0, 23.8)
}

pub fn tug_damping() -> Matrix3<f64> {
    Matrix3::new(7.0, 0.1, 0.0, 0.1, 0.5, 0.0, 0.0, 0.0, 2.0)
}

pub fn square_targets() -> Vec<[f64; 2]> {
    vec![[10.0, 10.0], [10.0, -10.0], [-10.0, -10.0], [-10.0, 10.0]]
}

/// Tugboats with exact planar kinematics. Each boat contributes
/// `(δx, δy, θ, v1, v2, v3)` (position relative to its target) and three
/// body-frame force inputs.
#[derive(Clone, Debug)]
pub struct TugboatFleet {
    boats: usize,
    minv: Matrix3<f64>,
    minv_d: Matrix3<f64>,
    pub targets: Vec<[f64; 2]>,
}

impl TugboatFleet {
    pub fn new(boats: usize) -> Result<Self> {
        if boats == 0 {
            return invalid("fleet needs at least one boat");
        }
        let minv = tug_mass().try_inverse().expect("mass matrix is invertible");
        let targets = if boats == 4 {
            square_targets()
        } else {
            vec![[0.0, 0.0]; boats]
        };
        Ok(TugboatFleet {
            boats,
            minv,
            minv_d: minv * tug_damping(),
            targets,
        })
    }

    pub fn boats(&self) -> usize {
        self.boats
    }
}

impl Dynamics for TugboatFleet {
    fn n(&self) -> usize {
        self.boats * TUG_STATES
    }

    fn k(&self) -> usize {
        self.boats * TUG_INPUTS
    }

    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        for j in 0..self.boats {
            let s = &x[j * TUG_STATES..(j + 1) * TUG_STATES];
            let tau = Vector3::new(u[3 * j], u[3 * j + 1], u[3 * j + 2]);
            let v = Vector3::new(s[3], s[4], s[5]);
            let (sin, cos) = s[2].sin_cos();
            let d = &mut dx[j * TUG_STATES..(j + 1) * TUG_STATES];
            d[0] = cos * v[0] - sin * v[1];
            d[1] = sin * v[0] + cos * v[1];
            d[2] = v[2];
            let vdot = self.minv * tau - self.minv_d * v;
            d[3] = vdot[0];
            d[4] = vdot[1];
            d[5] = vdot[2];
        }
    }
}

/// Polynomial tugboat model with the rotation truncated at `order` (1..=3):
/// identity, plus `±θ` off the diagonal, plus `−θ²/2` on the diagonal.
pub fn tugboat_plant(boats: usize, order: usize) -> Result<PolynomialPlant> {
    if boats == 0 {
        return invalid("fleet needs at least one boat");
    }
    if !(1..=3).contains(&order) {
        return invalid(format!("tugboat rotation truncation must be 1, 2 or 3 (got {order})"));
    }
    let n = boats * TUG_STATES;
    let k = boats * TUG_INPUTS;
    let minv = tug_mass().try_inverse().expect("mass matrix is invertible");
    let minv_d = minv * tug_damping();
    let mono = |pairs: &[(usize, u32)]| {
        let mut e = vec![0; n];
        for &(i, p) in pairs {
            e[i] += p;
        }
        Monomial::new(e)
    };
    let mut drift = PolyVector::zeros(n, n);
    let mut b0 = DMatrix::zeros(n, k);
    for j in 0..boats {
        let o = j * TUG_STATES;
        let (th, v1, v2, v3) = (o + 2, o + 3, o + 4, o + 5);
        drift.add_term(o, mono(&[(v1, 1)]), 1.0);
        drift.add_term(o + 1, mono(&[(v2, 1)]), 1.0);
        if order >= 2 {
            drift.add_term(o, mono(&[(th, 1), (v2, 1)]), -1.0);
            drift.add_term(o + 1, mono(&[(th, 1), (v1, 1)]), 1.0);
        }
        if order >= 3 {
            drift.add_term(o, mono(&[(th, 2), (v1, 1)]), -0.5);
            drift.add_term(o + 1, mono(&[(th, 2), (v2, 1)]), -0.5);
        }
        drift.add_term(o + 2, mono(&[(v3, 1)]), 1.0);
        for r in 0..3 {
            for c in 0..3 {
                drift.add_term(o + 3 + r, mono(&[(o + 3 + c, 1)]), -minv_d[(r, c)]);
                b0[(o + 3 + r, 3 * j + c)] = minv[(r, c)];
            }
        }
    }
    let input_state = vec![PolyVector::zeros(n, n); k];
    PolynomialPlant::new(drift, b0, input_state)
}

/// Learner basis: all states, plus `θv1, θv2` per boat for order ≥ 2 and
/// `θ²v1, θ²v2` for order 3.
pub fn tugboat_basis(boats: usize, order: usize) -> Result<MonomialBasis> {
    if !(1..=3).contains(&order) {
        return invalid(format!("tugboat basis order must be 1, 2 or 3 (got {order})"));
    }
    let n = boats * TUG_STATES;
    let mut monos: Vec<Monomial> = (0..n).map(|i| Monomial::variable(n, i)).collect();
    for j in 0..boats {
        let o = j * TUG_STATES;
        for p in 1..order as u32 {
            for v in [o + 3, o + 4] {
                let mut e = vec![0; n];
                e[o + 2] = p;
                e[v] = 1;
                monos.push(Monomial::new(e));
            }
        }
    }
    MonomialBasis::from_monomials(n, monos)
}

/// Formation cost: 5 on `δη`, 1 on `v` for every boat, plus the pairwise
/// position-difference penalty; `R = I`.
pub fn tugboat_weights(boats: usize) -> CostWeights {
    let n = boats * TUG_STATES;
    let mut q = DMatrix::zeros(n, n);
    for j in 0..boats {
        let o = j * TUG_STATES;
        for i in 0..3 {
            q[(o + i, o + i)] = 5.0;
            q[(o + 3 + i, o + 3 + i)] = 1.0;
        }
    }
    // Σ_{k<j} (δx_j − δx_k)² is the complete-graph Laplacian on the δx entries.
    for coord in 0..2 {
        for a in 0..boats {
            for b in 0..boats {
                let (ia, ib) = (a * TUG_STATES + coord, b * TUG_STATES + coord);
                q[(ia, ib)] += if a == b { (boats - 1) as f64 } else { -1.0 };
            }
        }
    }
    CostWeights {
        q1: q,
        r: DMatrix::identity(boats * TUG_INPUTS, boats * TUG_INPUTS),
    }
}
