//! Dense linear algebra used by the learners and their oracles.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

// nalgebra's default Schur iteration has no cap and can cycle on some
// closed-loop matrices; retry with a looser deflation threshold instead.
const SCHUR_EPS: [f64; 3] = [f64::EPSILON, 1e-13, 1e-10];
const SCHUR_MAX_ITERS: usize = 10_000;

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    for eps in SCHUR_EPS {
        if let Some(s) = Schur::try_new(a.clone(), eps, SCHUR_MAX_ITERS) {
            return Ok(s.complex_eigenvalues().iter().copied().collect());
        }
    }
    Err(Error::Numerical("eigenvalue iteration did not converge".into()))
}

/// Largest real part over the eigenvalues of `a`; NaN when the eigenvalue
/// iteration fails, so the matrix never counts as Hurwitz.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    match eigenvalues(a) {
        Ok(ev) => ev.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max),
        Err(_) => f64::NAN,
    }
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < 0.0
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solve `aᵀX + Xa + c = 0` by Bartels–Stewart on the complex Schur form of `a`.
///
/// Fails when `a` and `-a` share an eigenvalue, which for the uses here means
/// `a` is not Hurwitz.
pub fn lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || c.nrows() != n || c.ncols() != n {
        return invalid("lyapunov: a and c must be square of equal size");
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let schur = SCHUR_EPS
        .iter()
        .find_map(|&eps| Schur::try_new(ac.clone(), eps, SCHUR_MAX_ITERS))
        .ok_or_else(|| Error::Numerical("lyapunov: Schur decomposition did not converge".into()))?;
    let (u, t) = schur.unpack();
    let cc = c.map(|v| Complex64::new(v, 0.0));
    let ct = u.adjoint() * cc * &u;
    // Tᴴ Y + Y T = -C̃ with T upper triangular.
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let scale = t.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    for j in 0..n {
        for i in 0..n {
            let mut rhs = -ct[(i, j)];
            for k in 0..i {
                rhs -= t[(k, i)].conj() * y[(k, j)];
            }
            for l in 0..j {
                rhs -= y[(i, l)] * t[(l, j)];
            }
            let d = t[(i, i)].conj() + t[(j, j)];
            if d.norm() <= 1e-13 * scale {
                return invalid("lyapunov: a and -aᵀ share an eigenvalue");
            }
            y[(i, j)] = rhs / d;
        }
    }
    let x = &u * y * u.adjoint();
    Ok(symmetrize(&x.map(|z| z.re)))
}

/// Result of a model-based Kleinman iteration.
#[derive(Clone, Debug)]
pub struct KleinmanResult {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// `P_0, P_1, ...`, the evaluated cost of each successive gain.
    pub history: Vec<DMatrix<f64>>,
}

/// Newton iteration for the continuous ARE
/// `AᵀP + PA + Q − PBR⁻¹BᵀP = 0`, starting from a stabilizing `k0`.
pub fn kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<KleinmanResult> {
    let n = a.nrows();
    let m = b.ncols();
    if b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) || k0.shape() != (m, n) {
        return invalid("kleinman: inconsistent dimensions");
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("kleinman: R is singular".into()))?;
    let mut k = k0.clone();
    let mut history = Vec::new();
    let mut prev: Option<DMatrix<f64>> = None;
    for it in 0..max_iters {
        let acl = a - b * &k;
        if !is_hurwitz(&acl) {
            return Err(Error::Unstabilizable(format!(
                "gain at Kleinman iteration {it} is not stabilizing"
            )));
        }
        let p = lyapunov(&acl, &(q + k.transpose() * r * &k))?;
        k = &r_inv * b.transpose() * &p;
        history.push(p.clone());
        if let Some(pp) = prev {
            let delta = (&p - &pp).norm() / p.norm().max(f64::MIN_POSITIVE);
            if delta <= tol {
                return Ok(KleinmanResult {
                    p,
                    k,
                    iterations: it + 1,
                    history,
                });
            }
        }
        prev = Some(p);
    }
    let last = history.len();
    let delta = if last >= 2 {
        (&history[last - 1] - &history[last - 2]).norm() / history[last - 1].norm()
    } else {
        f64::INFINITY
    };
    Err(Error::NotConverged {
        iterations: max_iters,
        last_delta: delta,
    })
}

/// A stabilizing gain for `(A, B)` by Bass's method; zero when `A` is
/// already Hurwitz.
pub fn stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    let alpha = spectral_abscissa(a);
    if alpha < 0.0 {
        return Ok(DMatrix::zeros(m, n));
    }
    // −(A + βI) must be Hurwitz, so β has to exceed every |Re λ|.
    let beta = eigenvalues(a)?
        .iter()
        .map(|l| l.re.abs())
        .fold(0.0, f64::max)
        + 1.0;
    let shifted = a + DMatrix::identity(n, n) * beta;
    // (A + βI)Z + Z(A + βI)ᵀ = 2BBᵀ
    let z = lyapunov(&(-shifted.transpose()), &(b * b.transpose() * 2.0))
        .map_err(|e| Error::Unstabilizable(e.to_string()))?;
    let z_inv = z
        .try_inverse()
        .ok_or_else(|| Error::Unstabilizable("(A, B) is not controllable; Bass gramian is singular".into()))?;
    let k = b.transpose() * z_inv;
    if !is_hurwitz(&(a - b * &k)) {
        return Err(Error::Unstabilizable("Bass gain failed to stabilize".into()));
    }
    Ok(k)
}

/// Solution of a ridge-regularised least-squares problem.
#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub x: DVector<f64>,
    /// `σ_max / σ_min` of the column-scaled, ridge-augmented design matrix.
    pub condition: f64,
    /// `‖Ax − y‖ / ‖y‖` (absolute residual when `y = 0`).
    pub relative_residual: f64,
}

/// `argmin ‖Ax − y‖² + λ‖D x‖²`, where `D` scales the columns of `A` to unit
/// norm and `λ = ridge`. Solved by SVD of the augmented matrix.
pub fn lstsq_ridge(a: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<LstsqSolution> {
    let (rows, cols) = a.shape();
    if y.len() != rows {
        return invalid("lstsq: right-hand side length does not match rows");
    }
    if rows == 0 || cols == 0 {
        return invalid("lstsq: empty design matrix");
    }
    if !(ridge >= 0.0) {
        return invalid("lstsq: ridge must be non-negative");
    }
    let scales: Vec<f64> = (0..cols)
        .map(|j| {
            let s = a.column(j).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let aug_rows = if ridge > 0.0 { rows + cols } else { rows };
    let mut aug = DMatrix::zeros(aug_rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            aug[(i, j)] = a[(i, j)] / scales[j];
        }
        if ridge > 0.0 {
            aug[(rows + j, j)] = ridge.sqrt();
        }
    }
    let mut rhs = DVector::zeros(aug_rows);
    rhs.rows_mut(0, rows).copy_from(y);
    let svd = aug.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = if aug_rows >= cols {
        svd.singular_values.min()
    } else {
        0.0
    };
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let u = svd.u.as_ref().expect("U requested");
    let vt = svd.v_t.as_ref().expect("Vᵀ requested");
    let tol = smax * f64::EPSILON * aug_rows.max(cols) as f64;
    let uty = u.transpose() * &rhs;
    let mut z = DVector::zeros(cols);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            z[i] = uty[i] / s;
        }
    }
    let xs = vt.transpose() * z;
    let x = DVector::from_iterator(cols, xs.iter().zip(&scales).map(|(v, s)| v / s));
    let res = (a * &x - y).norm();
    let yn = y.norm();
    Ok(LstsqSolution {
        x,
        condition,
        relative_residual: if yn > 0.0 { res / yn } else { res },
    })
}
