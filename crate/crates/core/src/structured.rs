//! Gains with a prescribed zero pattern.
//!
//! With `Π(P)` the truncated improvement of a certificate `P` and
//! `F(Π) = Π ⊙ Ωᶜ`, both iterations below drive `K = Π − L` toward a fixed
//! point `L = F(Π)`, at which `K = Π ⊙ Ω` vanishes off the pattern.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::MonomialBasis;
use crate::error::{invalid, Error, Result};
use crate::learn::{
    check_certificate, extract_gain_matrix, initial_gain, relative_change, FeedbackGain, GainSource, IterationRecord,
    Learned, LearningConfig, LearningLog, PolicyCertificate, PolicyEvaluator,
};
use crate::lift::CarlemanModel;
use crate::linalg::{is_hurwitz, lyapunov, spectral_abscissa};
use crate::sim::CostWeights;
use crate::sparse::AgentGrouping;

/// Binary pattern `Ω` over the gain; `Ω_ij = 0` forces `K_ij = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureMask {
    #[serde(with = "crate::shaped")]
    pub omega: DMatrix<f64>,
}

impl StructureMask {
    pub fn new(omega: DMatrix<f64>) -> Result<Self> {
        if omega.iter().any(|&v| v != 0.0 && v != 1.0) {
            return invalid("structure mask entries must be 0 or 1");
        }
        Ok(StructureMask { omega })
    }

    pub fn dense(k: usize, dim: usize) -> Self {
        StructureMask {
            omega: DMatrix::from_element(k, dim, 1.0),
        }
    }

    /// Remove agent links: for a removed link `(a, b)`, agent `b`'s inputs
    /// may not use any column whose monomial involves a state of `a`, and
    /// vice versa.
    pub fn from_removed_links(
        basis: &MonomialBasis,
        grouping: &AgentGrouping,
        removed: &[(usize, usize)],
    ) -> Result<Self> {
        let k = grouping.input_agent.len();
        grouping.validate(basis.n(), k)?;
        let mut omega = DMatrix::from_element(k, basis.len(), 1.0);
        for &(a, b) in removed {
            if a >= grouping.agents || b >= grouping.agents || a == b {
                return invalid(format!("link ({a}, {b}) is not a link between two distinct agents"));
            }
            for col in 0..basis.len() {
                let owners: Vec<usize> = basis.monomial(col).support().map(|s| grouping.state_agent[s]).collect();
                for row in 0..k {
                    let me = grouping.input_agent[row];
                    let other = if me == a {
                        b
                    } else if me == b {
                        a
                    } else {
                        continue;
                    };
                    if owners.contains(&other) {
                        omega[(row, col)] = 0.0;
                    }
                }
            }
        }
        Ok(StructureMask { omega })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.omega.shape()
    }

    pub fn is_dense(&self) -> bool {
        self.omega.iter().all(|&v| v == 1.0)
    }

    /// Largest gain magnitude off the pattern.
    pub fn violation(&self, k: &DMatrix<f64>) -> Result<f64> {
        Ok(mask_complement(k, self)?.amax())
    }
}

/// `Π ⊙ Ωᶜ`.
pub fn mask_complement(pi: &DMatrix<f64>, mask: &StructureMask) -> Result<DMatrix<f64>> {
    if pi.shape() != mask.shape() {
        return invalid(format!(
            "matrix is {}x{}, mask is {}x{}",
            pi.nrows(),
            pi.ncols(),
            mask.omega.nrows(),
            mask.omega.ncols()
        ));
    }
    Ok(pi.zip_map(&mask.omega, |p, o| p * (1.0 - o)))
}

/// `Π_P`, computed by the same truncated extraction as the learned gain.
pub fn pi_from_p(cert: &PolicyCertificate, model: &CarlemanModel, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    extract_gain_matrix(&cert.p, model, r)
}

fn default_max_iters() -> usize {
    50
}
fn default_inner_tol() -> f64 {
    1e-11
}
fn default_inner_max() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredConfig {
    /// Absolute stop tolerance on `‖L_{i+1} − L_i‖_F`; `None` means
    /// `1e-6 · max(1, ‖L_i‖_F)`.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Relative tolerance of the inner Lyapunov sweeps (model-based only).
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_inner_max")]
    pub inner_max_iters: usize,
}

impl Default for StructuredConfig {
    fn default() -> Self {
        StructuredConfig {
            tol: None,
            max_iters: default_max_iters(),
            inner_tol: default_inner_tol(),
            inner_max_iters: default_inner_max(),
        }
    }
}

impl StructuredConfig {
    fn threshold(&self, l: &DMatrix<f64>) -> f64 {
        self.tol.unwrap_or(1e-6 * l.norm().max(1.0))
    }

    fn validate(&self) -> Result<()> {
        if self.tol.is_some_and(|t| !(t > 0.0)) {
            return invalid("structured tolerance must be positive");
        }
        if self.max_iters == 0 || self.inner_max_iters == 0 {
            return invalid("structured iteration limits must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuredRecord {
    pub iteration: usize,
    pub delta_l: f64,
    /// `‖Π ⊙ Ωᶜ‖_F` for the current certificate.
    pub mask_residual: f64,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct StructuredOutcome {
    pub log: LearningLog,
    pub outer: Vec<StructuredRecord>,
    pub result: Result<Learned>,
}

/// Lifted state weight: `Q1` on the plain-state block.
fn lifted_q(model: &CarlemanModel, q1: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(model.dim(), model.dim());
    q.view_mut((0, 0), (model.n(), model.n())).copy_from(q1);
    q
}

/// Solve the generalized Riccati-like equation with `L` fixed by
/// Lyapunov sweeps `K_j = Π(P_j) − L` on the truncated model.
fn generalized_riccati(
    model: &CarlemanModel,
    weights: &CostWeights,
    q: &DMatrix<f64>,
    l: &DMatrix<f64>,
    k_start: &DMatrix<f64>,
    cfg: &StructuredConfig,
) -> Result<(DMatrix<f64>, usize)> {
    let mut k = k_start.clone();
    let mut prev: Option<DMatrix<f64>> = None;
    for j in 0..cfg.inner_max_iters {
        let (_, acl) = model.closed_loop_matrix(&k)?;
        if !is_hurwitz(&acl) {
            return Err(Error::StructuredInfeasible(format!(
                "lifted closed loop is not Hurwitz at inner sweep {j} (abscissa {:.3e})",
                spectral_abscissa(&acl)
            )));
        }
        let p = lyapunov(&acl, &(q + k.transpose() * &weights.r * &k))
            .map_err(|e| Error::StructuredInfeasible(format!("inner Lyapunov solve failed: {e}")))?;
        k = extract_gain_matrix(&p, model, &weights.r)? - l;
        if let Some(pp) = &prev {
            if relative_change(&p, pp) <= cfg.inner_tol {
                return Ok((p, j + 1));
            }
        }
        prev = Some(p);
    }
    Err(Error::StructuredInfeasible(format!(
        "generalized Riccati sweeps did not converge in {} iterations",
        cfg.inner_max_iters
    )))
}

/// Model-based structured synthesis on the truncated model, started from
/// the LQR gain of the linear part.
pub fn structured_model_based(
    model: &CarlemanModel,
    weights: &CostWeights,
    mask: &StructureMask,
    cfg: &StructuredConfig,
) -> StructuredOutcome {
    let start = std::time::Instant::now();
    let mut log = LearningLog::default();
    let mut outer = Vec::new();
    let result = (|| {
        cfg.validate()?;
        weights.validate()?;
        if mask.shape() != (model.k(), model.dim()) {
            return invalid("mask shape does not match the gain");
        }
        let q = lifted_q(model, &weights.q1);
        let mut k = initial_gain(model, weights)?.k;
        let mut l = DMatrix::zeros(model.k(), model.dim());
        for i in 0..cfg.max_iters {
            let (p, inner) = generalized_riccati(model, weights, &q, &l, &k, cfg)?;
            let pi = extract_gain_matrix(&p, model, &weights.r)?;
            let l_next = mask_complement(&pi, mask)?;
            let delta_l = (&l_next - &l).norm();
            outer.push(StructuredRecord {
                iteration: i,
                delta_l,
                mask_residual: l_next.norm(),
                inner_iterations: inner,
            });
            let delta_p = log.p_snapshots.last().map(|pp| relative_change(&p, pp));
            log.records.push(IterationRecord {
                iteration: i,
                delta_p,
                ..Default::default()
            });
            log.p_snapshots.push(p.clone());
            log.gains.push(k.clone());
            log.iterations = i;
            let converged = delta_l < cfg.threshold(&l);
            l = l_next;
            k = &pi - &l;
            if converged {
                log.converged = true;
                let cert = PolicyCertificate {
                    p,
                    p_bar: Vec::new(),
                    iter: i,
                    residual: 0.0,
                    condition: 0.0,
                };
                return Ok(Learned {
                    gain: FeedbackGain::new(k, GainSource::Structured, &model.basis)?,
                    certificate: cert,
                });
            }
        }
        Err(Error::StructuredInfeasible(format!(
            "mask residual did not settle in {} outer iterations",
            cfg.max_iters
        )))
    })();
    log.wall_seconds = start.elapsed().as_secs_f64();
    StructuredOutcome { log, outer, result }
}

/// Data-driven structured synthesis: `K_{i+1} = Π_i − L_i`,
/// `L_{i+1} = F(Π_i)`. Stops once `L` settles and the certificate change is
/// within the learning tolerance.
pub fn structured_model_free(
    evaluator: &mut dyn PolicyEvaluator,
    model: &CarlemanModel,
    weights: &CostWeights,
    mask: &StructureMask,
    learn: &LearningConfig,
    cfg: &StructuredConfig,
    k0: &FeedbackGain,
) -> StructuredOutcome {
    let start = std::time::Instant::now();
    let mut log = LearningLog::default();
    let mut outer = Vec::new();
    let result = (|| {
        cfg.validate()?;
        if mask.shape() != (model.k(), model.dim()) {
            return invalid("mask shape does not match the gain");
        }
        let mut k = k0.k.clone();
        let mut l = DMatrix::zeros(model.k(), model.dim());
        let mut prev: Option<DMatrix<f64>> = None;
        for i in 0..=cfg.max_iters {
            let (cert, rows) = evaluator.evaluate(&k, i)?;
            let delta_p = prev.as_ref().map(|pp| relative_change(&cert.p, pp));
            log.records.push(IterationRecord {
                iteration: i,
                delta_p,
                residual: cert.residual,
                condition: cert.condition,
                rows,
                timesteps: evaluator.timesteps(),
            });
            log.p_snapshots.push(cert.p.clone());
            log.gains.push(k.clone());
            log.iterations = i;
            log.timesteps = evaluator.timesteps();
            check_certificate(&cert, model.n(), i)?;
            let pi = pi_from_p(&cert, model, &weights.r)?;
            let l_next = mask_complement(&pi, mask)?;
            let delta_l = (&l_next - &l).norm();
            outer.push(StructuredRecord {
                iteration: i,
                delta_l,
                mask_residual: l_next.norm(),
                inner_iterations: 0,
            });
            if delta_l < cfg.threshold(&l) && delta_p.is_some_and(|d| d <= learn.tol) {
                log.converged = true;
                return Ok(Learned {
                    gain: FeedbackGain::new(&pi - &l_next, GainSource::Structured, &model.basis)?,
                    certificate: cert,
                });
            }
            k = &pi - &l;
            l = l_next;
            prev = Some(cert.p);
        }
        Err(Error::StructuredInfeasible(format!(
            "structured learning did not settle in {} iterations",
            cfg.max_iters
        )))
    })();
    log.wall_seconds = start.elapsed().as_secs_f64();
    StructuredOutcome { log, outer, result }
}

/// Spectral abscissa of `A11 − B1 K₁`, with `K₁` the plain-state columns.
pub fn linear_closed_loop_abscissa(model: &CarlemanModel, k: &DMatrix<f64>) -> Result<f64> {
    if k.shape() != (model.k(), model.dim()) {
        return invalid("gain shape does not match the model");
    }
    let (a11, b1) = model.linear_part();
    let k1 = k.columns(0, model.n()).into_owned();
    Ok(spectral_abscissa(&(a11 - b1 * k1)))
}
