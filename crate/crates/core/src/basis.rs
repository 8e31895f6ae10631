//! Monomial bookkeeping for lifted states.
//!
//! A [`MonomialBasis`] lists unique monomials of the state in graded order:
//! all degree-1 monomials first, then degree 2, and so on. Within a degree
//! the order is lexicographic on exponent vectors, largest first, so for
//! `n = 2` the degree-2 block reads `x1^2, x1 x2, x2^2`.
//!
//! [`QuadBasis`] enumerates the distinct products of two basis monomials. It
//! is the coordinate system in which a quadratic form `psi^T P psi` becomes a
//! linear functional `p_bar^T psi_bar`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Exponent vector of a monomial in `n` variables.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn constant(n: usize) -> Self {
        Monomial(vec![0; n])
    }

    /// The monomial `x_i`.
    pub fn variable(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn n_vars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self / x_i`, or `None` when `x_i` does not divide the monomial.
    pub fn div_var(&self, i: usize) -> Option<Monomial> {
        if self.0[i] == 0 {
            return None;
        }
        let mut e = self.0.clone();
        e[i] -= 1;
        Some(Monomial(e))
    }

    /// Indices of the variables that appear with a positive exponent.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &e)| e > 0).map(|(i, _)| i)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &xi)| if e == 1 { xi } else { xi.powi(e as i32) })
            .product()
    }

    /// Graded ordering: lower degree first, then lexicographically larger
    /// exponent vectors first.
    pub fn graded_cmp(&self, other: &Monomial) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, &e) in self.0.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if e == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, e)?;
            }
        }
        if first {
            write!(f, "1")?;
        }
        Ok(())
    }
}

/// All exponent vectors of total degree `degree` in `n` variables, in
/// lexicographically decreasing order.
pub fn monomials_of_degree(n: usize, degree: u32) -> Vec<Monomial> {
    fn rec(n: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Monomial>) {
        if prefix.len() + 1 == n {
            prefix.push(remaining);
            out.push(Monomial(prefix.clone()));
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            rec(n, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    rec(n, degree, &mut Vec::with_capacity(n), &mut out);
    out
}

/// `C(n + k - 1, k)`: number of monomials of degree `k` in `n` variables.
pub fn count_of_degree(n: usize, k: usize) -> usize {
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n + i) as u128 / (i + 1) as u128;
    }
    c as usize
}

/// Ordered set of monomials of degrees `1..=order`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct MonomialBasis {
    n: usize,
    order: usize,
    monomials: Vec<Monomial>,
    /// `degree_offsets[d - 1]` is the first index of degree `d`;
    /// the last entry equals `len()`.
    degree_offsets: Vec<usize>,
    index: HashMap<Monomial, usize>,
}

#[derive(Serialize, Deserialize)]
struct BasisRepr {
    n: usize,
    order: usize,
    exponents: Vec<Vec<u32>>,
    degree_offsets: Vec<usize>,
}

impl TryFrom<BasisRepr> for MonomialBasis {
    type Error = crate::Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        let basis = MonomialBasis::from_monomials(
            r.n,
            r.exponents.into_iter().map(Monomial::new).collect(),
        )?;
        if basis.order != r.order || basis.degree_offsets != r.degree_offsets {
            return invalid("serialized basis metadata does not match its exponent list");
        }
        Ok(basis)
    }
}

impl From<MonomialBasis> for BasisRepr {
    fn from(b: MonomialBasis) -> Self {
        BasisRepr {
            n: b.n,
            order: b.order,
            exponents: b.monomials.into_iter().map(|m| m.0).collect(),
            degree_offsets: b.degree_offsets,
        }
    }
}

impl PartialEq for MonomialBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.monomials == other.monomials
    }
}

impl MonomialBasis {
    /// Every monomial of degree `1..=order` in `n` variables.
    pub fn full(n: usize, order: usize) -> Result<Self> {
        if n == 0 || order == 0 {
            return invalid(format!(
                "monomial basis needs n >= 1 and order >= 1 (got n = {n}, order = {order})"
            ));
        }
        let monomials = (1..=order as u32)
            .flat_map(|d| monomials_of_degree(n, d))
            .collect();
        Self::from_monomials(n, monomials)
    }

    /// A restricted basis. Must contain every degree-1 monomial; the list is
    /// sorted into graded order and deduplicated.
    pub fn from_monomials(n: usize, mut monomials: Vec<Monomial>) -> Result<Self> {
        if n == 0 {
            return invalid("monomial basis needs n >= 1");
        }
        if let Some(m) = monomials.iter().find(|m| m.n_vars() != n) {
            return invalid(format!("monomial {m:?} has {} variables, expected {n}", m.n_vars()));
        }
        if monomials.iter().any(|m| m.degree() == 0) {
            return invalid("the constant monomial cannot be part of a lifted basis");
        }
        monomials.sort_by(|a, b| a.graded_cmp(b));
        monomials.dedup();
        for i in 0..n {
            if !monomials.contains(&Monomial::variable(n, i)) {
                return invalid(format!("basis must contain every linear monomial (missing x{})", i + 1));
            }
        }
        let order = monomials.last().map(|m| m.degree() as usize).unwrap_or(1);
        let mut degree_offsets = Vec::with_capacity(order + 1);
        for d in 1..=order as u32 {
            degree_offsets.push(monomials.iter().take_while(|m| m.degree() < d).count());
        }
        degree_offsets.push(monomials.len());
        let index = monomials.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        Ok(MonomialBasis {
            n,
            order,
            monomials,
            degree_offsets,
            index,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn monomial(&self, i: usize) -> &Monomial {
        &self.monomials[i]
    }

    pub fn degree_offsets(&self) -> &[usize] {
        &self.degree_offsets
    }

    /// Index range of the degree-`d` block.
    pub fn degree_range(&self, d: usize) -> std::ops::Range<usize> {
        assert!(d >= 1 && d <= self.order, "degree {d} outside 1..={}", self.order);
        self.degree_offsets[d - 1]..self.degree_offsets[d]
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Whether every monomial of degree `1..=order` is present.
    pub fn is_full(&self) -> bool {
        (1..=self.order).all(|d| self.degree_range(d).len() == count_of_degree(self.n, d))
    }

    /// Evaluate every basis monomial at `x`.
    pub fn lift(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return invalid(format!("state has length {}, basis expects {}", x.len(), self.n));
        }
        Ok(self.lift_unchecked(x))
    }

    pub(crate) fn lift_unchecked(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.monomials.iter().map(|m| m.eval(x)))
    }
}

/// Distinct pairwise products of a base basis.
#[derive(Clone, Debug)]
pub struct QuadBasis {
    base: MonomialBasis,
    extended: Vec<Monomial>,
    ext_index: HashMap<Monomial, usize>,
    /// `pair_index[a * dim + b]`: extended index of `m_a * m_b`.
    pair_index: Vec<usize>,
    /// Number of ordered pairs `(a, b)` that map to each extended monomial.
    pair_count: Vec<usize>,
    /// One ordered pair per extended monomial, used for fast evaluation.
    representative: Vec<(usize, usize)>,
}

impl QuadBasis {
    pub fn new(base: &MonomialBasis) -> Self {
        let dim = base.len();
        let mut products: Vec<Monomial> = Vec::new();
        for a in 0..dim {
            for b in a..dim {
                products.push(base.monomial(a).mul(base.monomial(b)));
            }
        }
        products.sort_by(|a, b| a.graded_cmp(b));
        products.dedup();
        let ext_index: HashMap<Monomial, usize> =
            products.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let mut pair_index = vec![0; dim * dim];
        let mut pair_count = vec![0; products.len()];
        let mut representative = vec![(usize::MAX, usize::MAX); products.len()];
        for a in 0..dim {
            for b in 0..dim {
                let e = ext_index[&base.monomial(a).mul(base.monomial(b))];
                pair_index[a * dim + b] = e;
                pair_count[e] += 1;
                if representative[e].0 == usize::MAX {
                    representative[e] = (a, b);
                }
            }
        }
        QuadBasis {
            base: base.clone(),
            extended: products,
            ext_index,
            pair_index,
            pair_count,
            representative,
        }
    }

    pub fn base(&self) -> &MonomialBasis {
        &self.base
    }

    pub fn extended(&self) -> &[Monomial] {
        &self.extended
    }

    pub fn len(&self) -> usize {
        self.extended.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extended.is_empty()
    }

    pub fn ext_index_of(&self, m: &Monomial) -> Option<usize> {
        self.ext_index.get(m).copied()
    }

    /// `(extended index, number of ordered pairs sharing it)` for the pair `(a, b)`.
    pub fn index_map(&self, a: usize, b: usize) -> (usize, usize) {
        let e = self.pair_index[a * self.base.len() + b];
        (e, self.pair_count[e])
    }

    pub fn pair_count(&self, e: usize) -> usize {
        self.pair_count[e]
    }

    /// Extended monomials evaluated from an already lifted state.
    pub fn lift_extended_from(&self, psi: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.representative.iter().map(|&(a, b)| psi[a] * psi[b]),
        )
    }

    pub fn lift_extended(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.lift_extended_from(&self.base.lift(x)?))
    }

    /// Coefficients of `psi^T P psi` over the extended monomials.
    pub fn vectorize(&self, p: &DMatrix<f64>) -> Result<DVector<f64>> {
        let dim = self.base.len();
        if p.nrows() != dim || p.ncols() != dim {
            return invalid(format!(
                "P is {}x{}, basis has dimension {dim}",
                p.nrows(),
                p.ncols()
            ));
        }
        let scale = p.amax().max(1.0);
        let asym = (p - p.transpose()).amax();
        if asym > 1e-10 * scale {
            return invalid(format!("P is not symmetric (max |P - P^T| = {asym:.3e})"));
        }
        let mut out = DVector::zeros(self.len());
        for a in 0..dim {
            for b in 0..dim {
                out[self.pair_index[a * dim + b]] += p[(a, b)];
            }
        }
        Ok(out)
    }

    /// Symmetric `P` whose quadratic form has coefficients `p_bar`; each
    /// coefficient is split equally over the ordered pairs producing it.
    pub fn unvectorize(&self, p_bar: &DVector<f64>) -> Result<DMatrix<f64>> {
        if p_bar.len() != self.len() {
            return invalid(format!(
                "coefficient vector has length {}, extended basis has {}",
                p_bar.len(),
                self.len()
            ));
        }
        let dim = self.base.len();
        Ok(DMatrix::from_fn(dim, dim, |a, b| {
            let e = self.pair_index[a * dim + b];
            p_bar[e] / self.pair_count[e] as f64
        }))
    }

    /// The matrix `beta(psi)` with `psi^T P = p_bar^T beta(psi)` for every
    /// `P` produced by [`QuadBasis::unvectorize`].
    pub fn beta(&self, psi: &DVector<f64>) -> DMatrix<f64> {
        let dim = self.base.len();
        let mut out = DMatrix::zeros(self.len(), dim);
        for a in 0..dim {
            if psi[a] == 0.0 {
                continue;
            }
            for b in 0..dim {
                let e = self.pair_index[a * dim + b];
                out[(e, b)] += psi[a] / self.pair_count[e] as f64;
            }
        }
        out
    }

    /// `beta(psi) * v` without forming `beta`.
    pub fn beta_times(&self, psi: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let dim = self.base.len();
        let mut out = DVector::zeros(self.len());
        for a in 0..dim {
            if psi[a] == 0.0 {
                continue;
            }
            for b in 0..dim {
                let e = self.pair_index[a * dim + b];
                out[e] += psi[a] * v[b] / self.pair_count[e] as f64;
            }
        }
        out
    }

    /// `beta(psi) * M` for a `dim x k` matrix, column by column.
    pub fn beta_times_matrix(&self, psi: &DVector<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
        let dim = self.base.len();
        let k = m.ncols();
        let mut out = DMatrix::zeros(self.len(), k);
        for a in 0..dim {
            if psi[a] == 0.0 {
                continue;
            }
            for b in 0..dim {
                let e = self.pair_index[a * dim + b];
                let w = psi[a] / self.pair_count[e] as f64;
                for c in 0..k {
                    out[(e, c)] += w * m[(b, c)];
                }
            }
        }
        out
    }
}
