//! Truncated Carleman model of a polynomial plant.
//!
//! For every basis monomial `m`, `d/dt m = Σ_v ∂m/∂x_v · ẋ_v`; each product
//! with a plant term is mapped back to the basis by exponent arithmetic, and
//! products that fall outside the basis are dropped.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::MonomialBasis;
use crate::error::{invalid, Result};
use crate::plant::PolynomialPlant;
use crate::poly::PolyVector;
use crate::sim::Trajectory;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CarlemanModel {
    pub basis: MonomialBasis,
    /// Lifted drift `A_N`.
    #[serde(with = "crate::shaped")]
    pub a: DMatrix<f64>,
    /// Constant input matrix over the lifted state (nonzero only on degree 1).
    #[serde(with = "crate::shaped")]
    pub b0: DMatrix<f64>,
    /// Per input channel, the linear map `ψ ↦` state-dependent part of the column.
    #[serde(with = "crate::shaped::vec")]
    pub b_state: Vec<DMatrix<f64>>,
}

/// `A_N` from a polynomial drift.
pub fn transition_from_poly(drift: &PolyVector, basis: &MonomialBasis) -> Result<DMatrix<f64>> {
    if drift.n_vars() != basis.n() || drift.len() != basis.n() {
        return invalid(format!(
            "drift has {} components in {} variables, basis expects {}",
            drift.len(),
            drift.n_vars(),
            basis.n()
        ));
    }
    let dim = basis.len();
    let mut a = DMatrix::zeros(dim, dim);
    for (i, m) in basis.monomials().iter().enumerate() {
        for v in m.support().collect::<Vec<_>>() {
            let e = m.exponents()[v] as f64;
            let rest = m.div_var(v).expect("variable in support");
            for (mu, c) in drift.terms(v) {
                if let Some(j) = basis.index_of(&rest.mul(mu)) {
                    a[(i, j)] += e * c;
                }
            }
        }
    }
    Ok(a)
}

/// `A_N` from Taylor blocks `taylor[j-1]` (`n × C(n+j-1, j)`).
pub fn build_transition_blocks(taylor: &[DMatrix<f64>], basis: &MonomialBasis) -> Result<DMatrix<f64>> {
    let drift = PolyVector::from_taylor(basis.n(), basis.n(), taylor)?;
    transition_from_poly(&drift, basis)
}

/// Lifted constant input matrix and per-channel state-dependent maps.
pub fn input_from_poly(
    input_const: &DMatrix<f64>,
    input_state: &[PolyVector],
    basis: &MonomialBasis,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let n = basis.n();
    let k = input_const.ncols();
    if input_const.nrows() != n {
        return invalid(format!("input matrix has {} rows, basis expects {n}", input_const.nrows()));
    }
    if input_state.len() != k || input_state.iter().any(|g| g.len() != n || g.n_vars() != n) {
        return invalid("state-dependent input columns do not match the input matrix");
    }
    let dim = basis.len();
    let mut b0 = DMatrix::zeros(dim, k);
    let mut bs = vec![DMatrix::zeros(dim, dim); k];
    for (i, m) in basis.monomials().iter().enumerate() {
        for v in m.support().collect::<Vec<_>>() {
            let e = m.exponents()[v] as f64;
            let rest = m.div_var(v).expect("variable in support");
            for ch in 0..k {
                let c = input_const[(v, ch)];
                if c != 0.0 {
                    if rest.degree() == 0 {
                        b0[(i, ch)] += e * c;
                    } else if let Some(j) = basis.index_of(&rest) {
                        bs[ch][(i, j)] += e * c;
                    }
                }
                for (mu, c) in input_state[ch].terms(v) {
                    if let Some(j) = basis.index_of(&rest.mul(mu)) {
                        bs[ch][(i, j)] += e * c;
                    }
                }
            }
        }
    }
    Ok((b0, bs))
}

/// Input blocks from `B0` (`n × k`) and `b_li[i][l-1]`, the degree-`l`
/// coefficients of input column `i`.
pub fn build_input_blocks(
    b0: &DMatrix<f64>,
    b_li: &[Vec<DMatrix<f64>>],
    basis: &MonomialBasis,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let n = basis.n();
    let mut cols = Vec::with_capacity(b0.ncols());
    for i in 0..b0.ncols() {
        let blocks = b_li.get(i).map(|b| b.as_slice()).unwrap_or(&[]);
        cols.push(PolyVector::from_taylor(n, n, blocks)?);
    }
    input_from_poly(b0, &cols, basis)
}

impl CarlemanModel {
    pub fn from_plant(plant: &PolynomialPlant, basis: &MonomialBasis) -> Result<Self> {
        let a = transition_from_poly(plant.drift_poly(), basis)?;
        let (b0, b_state) = input_from_poly(plant.input_const(), plant.input_state(), basis)?;
        Ok(CarlemanModel {
            basis: basis.clone(),
            a,
            b0,
            b_state,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn k(&self) -> usize {
        self.b0.ncols()
    }

    /// Linear block `(A11, B1)` of the model.
    pub fn linear_part(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n();
        (
            self.a.view((0, 0), (n, n)).into_owned(),
            self.b0.view((0, 0), (n, self.k())).into_owned(),
        )
    }

    /// `B(ψ)`: column `i` is `b0_i + Bs_i ψ`.
    pub fn eval_input_matrix(&self, psi: &DVector<f64>) -> Result<DMatrix<f64>> {
        if psi.len() != self.dim() {
            return invalid(format!("lifted state has length {}, model has {}", psi.len(), self.dim()));
        }
        Ok(self.input_matrix_unchecked(psi))
    }

    pub(crate) fn input_matrix_unchecked(&self, psi: &DVector<f64>) -> DMatrix<f64> {
        let mut b = self.b0.clone();
        for (i, bs) in self.b_state.iter().enumerate() {
            let col = bs * psi;
            for r in 0..self.dim() {
                b[(r, i)] += col[r];
            }
        }
        b
    }

    /// Constant matrix `𝒦` with `B(ψ)Kψ = 𝒦ψ` up to dropped products.
    pub fn feedback_matrix(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        if k.nrows() != self.k() || k.ncols() != dim {
            return invalid(format!(
                "gain is {}x{}, expected {}x{dim}",
                k.nrows(),
                k.ncols(),
                self.k()
            ));
        }
        let mut kk = &self.b0 * k;
        for (ch, bs) in self.b_state.iter().enumerate() {
            for a in 0..dim {
                let ma = self.basis.monomial(a);
                for c in 0..dim {
                    let kc = k[(ch, c)];
                    if kc == 0.0 {
                        continue;
                    }
                    let Some(j) = self.basis.index_of(&ma.mul(self.basis.monomial(c))) else {
                        continue;
                    };
                    for r in 0..dim {
                        let w = bs[(r, a)];
                        if w != 0.0 {
                            kk[(r, j)] += w * kc;
                        }
                    }
                }
            }
        }
        Ok(kk)
    }

    /// `(𝒦, A_N − 𝒦)` for the gain `K` (input `u = −Kψ`).
    pub fn closed_loop_matrix(&self, k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let kk = self.feedback_matrix(k)?;
        let acl = &self.a - &kk;
        Ok((kk, acl))
    }
}

/// Per-degree RMS of `‖dψ/dt − (A_N ψ + B(ψ)u)‖` over a trajectory of the
/// true plant, with central differences for the derivative.
pub fn lift_consistency_check(model: &CarlemanModel, traj: &Trajectory) -> Result<Vec<f64>> {
    let len = traj.len();
    if len < 3 {
        return invalid("consistency check needs at least 3 samples");
    }
    if traj.n_states() != model.n() || traj.n_inputs() != model.k() {
        return invalid("trajectory dimensions do not match the model");
    }
    let order = model.basis.order();
    let mut sums = vec![0.0; order];
    let lifted: Vec<DVector<f64>> = traj
        .states
        .iter()
        .map(|x| model.basis.lift_unchecked(x))
        .collect();
    for r in 1..len - 1 {
        let h = traj.times[r + 1] - traj.times[r - 1];
        let deriv = (&lifted[r + 1] - &lifted[r - 1]) / h;
        let u = DVector::from_iterator(
            model.k(),
            traj.inputs[r - 1].iter().zip(&traj.inputs[r]).map(|(a, b)| 0.5 * (a + b)),
        );
        let pred = &model.a * &lifted[r] + model.input_matrix_unchecked(&lifted[r]) * u;
        let res = deriv - pred;
        for (d, s) in sums.iter_mut().enumerate() {
            let range = model.basis.degree_range(d + 1);
            *s += res.rows(range.start, range.len()).norm_squared();
        }
    }
    let count = (len - 2) as f64;
    Ok(sums.into_iter().map(|s| (s / count).sqrt()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::oscillator_plant;

    fn scalar_plant(a: f64, b: f64) -> PolynomialPlant {
        PolynomialPlant::from_taylor(
            &[DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)],
            DMatrix::from_element(1, 1, 1.0),
            &[],
        )
        .unwrap()
    }

    #[test]
    fn scalar_blocks() {
        let basis = MonomialBasis::full(1, 2).unwrap();
        let m = CarlemanModel::from_plant(&scalar_plant(-0.7, 0.0), &basis).unwrap();
        assert_eq!(m.a.as_slice(), DMatrix::from_row_slice(2, 2, &[-0.7, 0.0, 0.0, -1.4]).as_slice());
        let m = CarlemanModel::from_plant(&scalar_plant(2.0, 3.0), &basis).unwrap();
        assert_eq!(m.a, DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 0.0, 4.0]));
    }

    #[test]
    fn identity_drift_scales_degree_two() {
        let basis = MonomialBasis::full(2, 2).unwrap();
        let a = build_transition_blocks(&[DMatrix::identity(2, 2)], &basis).unwrap();
        let block = a.view((2, 2), (3, 3)).into_owned();
        assert_eq!(block, DMatrix::identity(3, 3) * 2.0);
        assert!(build_transition_blocks(&[DMatrix::identity(2, 3)], &basis).is_err());
    }

    #[test]
    fn oscillator_input_blocks() {
        let basis = MonomialBasis::full(2, 2).unwrap();
        let m = CarlemanModel::from_plant(&oscillator_plant(), &basis).unwrap();
        assert_eq!(m.b0.column(0).as_slice(), &[0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.b_state[0][(1, 0)], 1.0);
        let zero = DVector::zeros(5);
        assert_eq!(m.eval_input_matrix(&zero).unwrap(), m.b0);
        // d(x^[2])/dt input terms at x = (0.8, 0.7):
        // x1² → 0, x1x2 → x1(1+x1), x2² → 2x2(1+x1).
        let psi = basis.lift(&[0.8, 0.7]).unwrap();
        let b = m.eval_input_matrix(&psi).unwrap();
        let expect = [0.0, 1.8, 0.0, 0.8 * 1.8, 2.0 * 0.7 * 1.8];
        for (got, want) in b.column(0).iter().zip(expect) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn scalar_closed_loop() {
        let basis = MonomialBasis::full(1, 2).unwrap();
        let m = CarlemanModel::from_plant(&scalar_plant(-1.0, 0.0), &basis).unwrap();
        let k = DMatrix::from_row_slice(1, 2, &[0.5, 0.0]);
        let (_, acl) = m.closed_loop_matrix(&k).unwrap();
        assert_eq!(acl, DMatrix::from_row_slice(2, 2, &[-1.5, 0.0, 0.0, -3.0]));
        let (kk, acl0) = m.closed_loop_matrix(&DMatrix::zeros(1, 2)).unwrap();
        assert_eq!(acl0, m.a);
        assert_eq!(kk, DMatrix::zeros(2, 2));
        assert!(m.closed_loop_matrix(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn first_order_closed_loop_is_b0_k() {
        let basis = MonomialBasis::full(2, 1).unwrap();
        let m = CarlemanModel::from_plant(&oscillator_plant(), &basis).unwrap();
        let k = DMatrix::from_row_slice(1, 2, &[0.3, 0.9]);
        let (kk, _) = m.closed_loop_matrix(&k).unwrap();
        assert_eq!(kk, &m.b0 * &k);
    }

    #[test]
    fn graded_triangularity() {
        let basis = MonomialBasis::full(2, 3).unwrap();
        let m = CarlemanModel::from_plant(&oscillator_plant(), &basis).unwrap();
        for j in 1..=3 {
            for i in 1..j {
                let rows = basis.degree_range(j);
                let cols = basis.degree_range(i);
                for r in rows.clone() {
                    for c in cols.clone() {
                        assert_eq!(m.a[(r, c)], 0.0);
                    }
                }
            }
        }
    }
}
