//! Sparse multivariate polynomial vectors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{Monomial, MonomialBasis};
use crate::error::{invalid, Result};

/// A vector of polynomials in `n_vars` variables, stored as sparse term lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyVector {
    n_vars: usize,
    rows: Vec<Vec<(Monomial, f64)>>,
}

impl PolyVector {
    pub fn zeros(n_vars: usize, len: usize) -> Self {
        PolyVector {
            n_vars,
            rows: vec![Vec::new(); len],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn terms(&self, row: usize) -> &[(Monomial, f64)] {
        &self.rows[row]
    }

    /// Add `coeff * m` to component `row`, merging with an existing term.
    pub fn add_term(&mut self, row: usize, m: Monomial, coeff: f64) {
        assert_eq!(m.n_vars(), self.n_vars, "monomial arity mismatch");
        if coeff == 0.0 {
            return;
        }
        let terms = &mut self.rows[row];
        if let Some(t) = terms.iter_mut().find(|(e, _)| *e == m) {
            t.1 += coeff;
            if t.1 == 0.0 {
                terms.retain(|(_, c)| *c != 0.0);
            }
        } else {
            terms.push((m, coeff));
        }
    }

    /// Build from coefficient matrices: `blocks[j-1]` has one row per
    /// component and one column per degree-`j` monomial of the full basis.
    pub fn from_taylor(n_vars: usize, len: usize, blocks: &[DMatrix<f64>]) -> Result<Self> {
        let mut out = PolyVector::zeros(n_vars, len);
        if blocks.is_empty() {
            return Ok(out);
        }
        let full = MonomialBasis::full(n_vars, blocks.len())?;
        for (j, block) in blocks.iter().enumerate() {
            let range = full.degree_range(j + 1);
            if block.nrows() != len || block.ncols() != range.len() {
                return invalid(format!(
                    "degree-{} coefficient block is {}x{}, expected {}x{}",
                    j + 1,
                    block.nrows(),
                    block.ncols(),
                    len,
                    range.len()
                ));
            }
            for (c, idx) in range.enumerate() {
                for r in 0..len {
                    out.add_term(r, full.monomial(idx).clone(), block[(r, c)]);
                }
            }
        }
        Ok(out)
    }

    /// Coefficient matrix of the degree-`degree` part over the full basis.
    pub fn taylor_block(&self, degree: u32) -> DMatrix<f64> {
        let cols = crate::basis::monomials_of_degree(self.n_vars, degree);
        let mut out = DMatrix::zeros(self.len(), cols.len());
        for (r, terms) in self.rows.iter().enumerate() {
            for (m, c) in terms {
                if m.degree() == degree {
                    let j = cols.iter().position(|q| q == m).expect("monomial of matching degree");
                    out[(r, j)] += c;
                }
            }
        }
        out
    }

    pub fn max_degree(&self) -> u32 {
        self.rows
            .iter()
            .flat_map(|t| t.iter().map(|(m, _)| m.degree()))
            .max()
            .unwrap_or(0)
    }

    pub fn eval_row(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.eval_row(r, x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_round_trip() {
        let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let a2 = DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let p = PolyVector::from_taylor(2, 2, &[a1.clone(), a2.clone()]).unwrap();
        assert_eq!(p.taylor_block(1), a1);
        assert_eq!(p.taylor_block(2), a2);
        assert_eq!(p.eval(&[1.0, 2.0]), vec![2.0, -1.0 + 2.0]);
        assert_eq!(p.max_degree(), 2);
    }

    #[test]
    fn bad_block_shape() {
        let a1 = DMatrix::zeros(2, 3);
        assert!(PolyVector::from_taylor(2, 2, &[a1]).is_err());
    }

    #[test]
    fn cancelling_terms_vanish() {
        let mut p = PolyVector::zeros(1, 1);
        p.add_term(0, Monomial::new(vec![2]), 1.5);
        p.add_term(0, Monomial::new(vec![2]), -1.5);
        assert!(p.terms(0).is_empty());
    }
}
