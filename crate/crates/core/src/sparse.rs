//! Sparsity-promoting gains by ADMM on a weighted ℓ1 penalty, and link
//! bandwidth accounting for multi-agent gains.
//!
//! For a dense improvement `Π`, the inner problem splits `Π = K + L` and
//! minimizes `½‖L‖² + γ Σ W∘|K|` through the augmented Lagrangian
//!
//! ```text
//! h = ½‖L‖² + γ Σ W∘|K| + ⟨Λ, K + L − Π⟩ + ρ/2 ‖K + L − Π‖²
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learn::{
    check_certificate, extract_gain_matrix, relative_change, FeedbackGain, GainSource, IterationRecord, Learned,
    LearningConfig, LearningLog, PolicyEvaluator,
};
use crate::lift::CarlemanModel;
use crate::sim::CostWeights;

/// Gain entries at or below this magnitude count as zero.
pub const ZERO_THRESHOLD: f64 = 1e-8;
pub const MAX_RHO: f64 = 1e8;

/// Shrink `w` toward zero by `mu`.
pub fn soft_threshold(w: f64, mu: f64) -> f64 {
    if w > mu {
        w - mu
    } else if w < -mu {
        w + mu
    } else {
        0.0
    }
}

/// Number of entries above [`ZERO_THRESHOLD`].
pub fn cardinality(k: &DMatrix<f64>) -> usize {
    k.iter().filter(|v| v.abs() > ZERO_THRESHOLD).count()
}

fn default_rho0() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    1.1
}
fn default_eps() -> f64 {
    1e-6
}
fn default_max_inner() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmConfig {
    pub gamma: f64,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    /// Growth factor applied to `ρ` after every inner step.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Entrywise weights; `None` means all ones.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::shaped::option")]
    pub weights: Option<DMatrix<f64>>,
    #[serde(default = "default_eps")]
    pub eps_k: f64,
    #[serde(default = "default_eps")]
    pub eps_l: f64,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
    /// Replace `W` by `1/(|K| + δ)` of the previous outer gain.
    #[serde(default)]
    pub reweight: bool,
}

impl AdmmConfig {
    pub fn new(gamma: f64) -> Self {
        AdmmConfig {
            gamma,
            rho0: default_rho0(),
            alpha: default_alpha(),
            weights: None,
            eps_k: default_eps(),
            eps_l: default_eps(),
            max_inner: default_max_inner(),
            reweight: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return invalid("gamma must be non-negative");
        }
        if !(self.rho0 > 0.0) {
            return invalid("rho0 must be positive");
        }
        if !(self.alpha >= 1.0) {
            return invalid("alpha must be at least 1");
        }
        if !(self.eps_k > 0.0 && self.eps_l > 0.0) {
            return invalid("ADMM tolerances must be positive");
        }
        if self.max_inner == 0 {
            return invalid("max_inner must be at least 1");
        }
        if let Some(w) = &self.weights {
            if w.iter().any(|v| !(*v >= 0.0)) {
                return invalid("ADMM weights must be non-negative");
            }
        }
        Ok(())
    }

    fn weight_matrix(&self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        match &self.weights {
            None => Ok(DMatrix::from_element(rows, cols, 1.0)),
            Some(w) if w.shape() == (rows, cols) => Ok(w.clone()),
            Some(w) => invalid(format!("ADMM weights are {}x{}, gain is {rows}x{cols}", w.nrows(), w.ncols())),
        }
    }
}

/// ADMM iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub k: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

impl AdmmState {
    /// `K = Π`, `L = 0`, `Λ = 0`.
    pub fn start(pi: &DMatrix<f64>) -> Self {
        let z = DMatrix::zeros(pi.nrows(), pi.ncols());
        AdmmState {
            k: pi.clone(),
            l: z.clone(),
            lambda: z,
        }
    }
}

fn check_shapes(pi: &DMatrix<f64>, others: &[&DMatrix<f64>]) -> Result<()> {
    if others.iter().any(|m| m.shape() != pi.shape()) {
        return invalid("ADMM matrices must share the gain shape");
    }
    Ok(())
}

/// L-step, K-step and dual update.
pub fn admm_step(
    state: &AdmmState,
    rho: f64,
    gamma: f64,
    w: &DMatrix<f64>,
    pi: &DMatrix<f64>,
) -> Result<AdmmState> {
    check_shapes(pi, &[&state.k, &state.l, &state.lambda, w])?;
    if !(rho > 0.0) {
        return invalid("rho must be positive");
    }
    let l = (&state.lambda + (&state.k - pi) * rho) / (-(1.0 + rho));
    let arg = pi - &l - &state.lambda / rho;
    let k = arg.zip_map(w, |a, wi| soft_threshold(a, gamma * wi / rho));
    let lambda = &state.lambda + (&k + &l - pi) * rho;
    Ok(AdmmState { k, l, lambda })
}

/// Augmented Lagrangian `h(K, L, Λ; ρ)`.
pub fn augmented_lagrangian(
    state: &AdmmState,
    rho: f64,
    gamma: f64,
    w: &DMatrix<f64>,
    pi: &DMatrix<f64>,
) -> Result<f64> {
    check_shapes(pi, &[&state.k, &state.l, &state.lambda, w])?;
    let resid = &state.k + &state.l - pi;
    let l1: f64 = state.k.zip_map(w, |k, wi| wi * k.abs()).sum();
    Ok(0.5 * state.l.norm_squared() + gamma * l1 + state.lambda.dot(&resid) + 0.5 * rho * resid.norm_squared())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmmLog {
    pub steps: usize,
    pub converged: bool,
    pub delta_k: Vec<f64>,
    pub delta_l: Vec<f64>,
    pub rho: Vec<f64>,
    pub cardinality: Vec<usize>,
}

/// Inner ADMM loop from `K = Π, L = 0, Λ = 0`; runs while either
/// `‖ΔK‖ > ε1` or `‖ΔL‖ > ε2`, up to `max_inner` steps.
pub fn admm_solve(pi: &DMatrix<f64>, cfg: &AdmmConfig) -> Result<(AdmmState, AdmmLog)> {
    cfg.validate()?;
    let w = cfg.weight_matrix(pi.nrows(), pi.ncols())?;
    admm_solve_weighted(pi, cfg, &w)
}

fn admm_solve_weighted(pi: &DMatrix<f64>, cfg: &AdmmConfig, w: &DMatrix<f64>) -> Result<(AdmmState, AdmmLog)> {
    let mut state = AdmmState::start(pi);
    let mut rho = cfg.rho0;
    let mut log = AdmmLog::default();
    for _ in 0..cfg.max_inner {
        let next = admm_step(&state, rho, cfg.gamma, w, pi)?;
        let dk = (&next.k - &state.k).norm();
        let dl = (&next.l - &state.l).norm();
        log.steps += 1;
        log.delta_k.push(dk);
        log.delta_l.push(dl);
        log.rho.push(rho);
        log.cardinality.push(cardinality(&next.k));
        state = next;
        rho = (rho * cfg.alpha).min(MAX_RHO);
        if dk <= cfg.eps_k && dl <= cfg.eps_l {
            log.converged = true;
            break;
        }
    }
    Ok((state, log))
}

/// Outcome of sparse learning; logs are kept when the run fails.
#[derive(Clone, Debug)]
pub struct SparseOutcome {
    pub log: LearningLog,
    pub inner: Vec<AdmmLog>,
    pub result: Result<Learned>,
}

/// Policy iteration whose improvement step is the ADMM-sparsified `Π(P_i)`.
///
/// Any failure of the outer loop (divergence, an indefinite certificate,
/// exhausted iterations) is reported as [`Error::SparseInfeasible`].
pub fn run_sparse(
    evaluator: &mut dyn PolicyEvaluator,
    model: &CarlemanModel,
    weights: &CostWeights,
    cfg: &LearningConfig,
    admm: &AdmmConfig,
    k0: &FeedbackGain,
) -> SparseOutcome {
    let start = std::time::Instant::now();
    let mut log = LearningLog::default();
    let mut inner = Vec::new();
    let result = (|| {
        admm.validate()?;
        let mut w = admm.weight_matrix(model.k(), model.dim())?;
        let mut k = k0.k.clone();
        let mut prev: Option<DMatrix<f64>> = None;
        let mut i = 0;
        loop {
            let (cert, rows) = evaluator.evaluate(&k, i)?;
            let delta = prev.as_ref().map(|pp| relative_change(&cert.p, pp));
            log.records.push(IterationRecord {
                iteration: i,
                delta_p: delta,
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
            let converged = delta.is_some_and(|d| d <= cfg.tol);
            if !converged && i >= cfg.max_iters {
                return Err(Error::NotConverged {
                    iterations: i,
                    last_delta: delta.unwrap_or(f64::INFINITY),
                });
            }
            let pi = extract_gain_matrix(&cert.p, model, &weights.r)?;
            if admm.reweight && i > 0 {
                w = k.map(|v| 1.0 / (v.abs() + 1e-3));
            }
            let (state, ilog) = admm_solve_weighted(&pi, admm, &w)?;
            inner.push(ilog);
            if converged {
                log.converged = true;
                return Ok(Learned {
                    gain: FeedbackGain::new(state.k, GainSource::Sparse, &model.basis)?,
                    certificate: cert,
                });
            }
            prev = Some(cert.p);
            k = state.k;
            i += 1;
        }
    })()
    .map_err(|e| match e {
        Error::InvalidArgument(_) | Error::SparseInfeasible { .. } => e,
        other => Error::SparseInfeasible {
            gamma: admm.gamma,
            reason: other.to_string(),
        },
    });
    log.wall_seconds = start.elapsed().as_secs_f64();
    SparseOutcome { log, inner, result }
}

/// Assignment of plant states and inputs to agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentGrouping {
    pub agents: usize,
    pub state_agent: Vec<usize>,
    pub input_agent: Vec<usize>,
}

impl AgentGrouping {
    /// Agents own consecutive, equally sized blocks of states and inputs.
    pub fn uniform(agents: usize, states_per: usize, inputs_per: usize) -> Self {
        AgentGrouping {
            agents,
            state_agent: (0..agents * states_per).map(|i| i / states_per).collect(),
            input_agent: (0..agents * inputs_per).map(|i| i / inputs_per).collect(),
        }
    }

    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.state_agent.len() != n || self.input_agent.len() != k {
            return invalid(format!(
                "grouping covers {} states and {} inputs, plant has {n} and {k}",
                self.state_agent.len(),
                self.input_agent.len()
            ));
        }
        if self.state_agent.iter().chain(&self.input_agent).any(|&a| a >= self.agents) {
            return invalid("grouping refers to an agent index out of range");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkUsage {
    pub a: usize,
    pub b: usize,
    /// States sent in either direction.
    pub states: usize,
    pub over_capacity: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub total: usize,
    pub links: Vec<LinkUsage>,
}

/// States each link has to carry for the gain to be implemented.
///
/// State `s` of agent `a` is sent to agent `b` when some nonzero entry in a
/// row of `b` sits on a column whose monomial contains `s`.
pub fn bandwidth_metric(gain: &FeedbackGain, grouping: &AgentGrouping, per_link_capacity: usize) -> Result<Bandwidth> {
    let basis = &gain.basis;
    grouping.validate(basis.n(), gain.k.nrows())?;
    let m = grouping.agents;
    // needs[b][s]: agent b's inputs depend on state s.
    let mut needs = vec![vec![false; basis.n()]; m];
    for row in 0..gain.k.nrows() {
        let b = grouping.input_agent[row];
        for col in 0..gain.k.ncols() {
            if gain.k[(row, col)].abs() > ZERO_THRESHOLD {
                for s in basis.monomial(col).support() {
                    needs[b][s] = true;
                }
            }
        }
    }
    let mut links = Vec::new();
    let mut total = 0;
    for a in 0..m {
        for b in a + 1..m {
            let count = (0..basis.n())
                .filter(|&s| {
                    let owner = grouping.state_agent[s];
                    (owner == a && needs[b][s]) || (owner == b && needs[a][s])
                })
                .count();
            total += count;
            links.push(LinkUsage {
                a,
                b,
                states: count,
                over_capacity: count > per_link_capacity,
            });
        }
    }
    Ok(Bandwidth { total, links })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::MonomialBasis;

    #[test]
    fn soft_threshold_cases() {
        assert!((soft_threshold(0.5, 0.2) - 0.3).abs() < 1e-15);
        assert_eq!(soft_threshold(-0.1, 0.2), 0.0);
        assert_eq!(soft_threshold(-0.75, 0.25), -0.5);
        assert_eq!(soft_threshold(1.3, 0.0), 1.3);
    }

    #[test]
    fn scalar_step() {
        let pi = DMatrix::from_element(1, 1, 1.0);
        let s = AdmmState::start(&pi);
        let w = DMatrix::from_element(1, 1, 1.0);
        let n = admm_step(&s, 1.0, 0.5, &w, &pi).unwrap();
        assert_eq!((n.l[(0, 0)], n.k[(0, 0)], n.lambda[(0, 0)]), (0.0, 0.5, -0.5));
    }

    #[test]
    fn zero_gamma_is_a_fixed_point() {
        let pi = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let (s, log) = admm_solve(&pi, &AdmmConfig::new(0.0)).unwrap();
        assert_eq!(s.k, pi);
        assert!(log.converged && log.steps == 1);
    }

    #[test]
    fn lasso_solution_at_convergence() {
        // The inner problem is a lasso around Π: K* = S(Π, γW).
        let pi = DMatrix::from_row_slice(1, 3, &[1.0, -0.05, 0.3]);
        let (s, log) = admm_solve(&pi, &AdmmConfig::new(0.1)).unwrap();
        assert!(log.converged);
        let expect = pi.map(|v| soft_threshold(v, 0.1));
        assert!((s.k - expect).amax() < 1e-5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let pi = DMatrix::zeros(2, 2);
        let s = AdmmState::start(&DMatrix::zeros(2, 3));
        assert!(admm_step(&s, 1.0, 0.0, &DMatrix::zeros(2, 2), &pi).is_err());
    }

    #[test]
    fn bandwidth_rules() {
        let basis = MonomialBasis::full(4, 2).unwrap();
        let grouping = AgentGrouping::uniform(2, 2, 1);
        let mut k = DMatrix::zeros(2, basis.len());
        let g = |k: &DMatrix<f64>| {
            bandwidth_metric(&FeedbackGain::new(k.clone(), GainSource::Sparse, &basis).unwrap(), &grouping, 4)
                .unwrap()
                .total
        };
        assert_eq!(g(&k), 0);
        // Agent 0 uses its own state only.
        k[(0, 0)] = 1.0;
        assert_eq!(g(&k), 0);
        // Agent 1 uses the product x0·x2: only x0 crosses the link.
        let mut e = vec![0; 4];
        e[0] = 1;
        e[2] = 1;
        let col = basis.index_of(&crate::basis::Monomial::new(e)).unwrap();
        k[(1, col)] = 1e-3;
        assert_eq!(g(&k), 1);
        k[(1, col)] = 1e-9;
        assert_eq!(g(&k), 0);
        assert_eq!(g(&DMatrix::from_element(2, basis.len(), 1.0)), 4);
    }
}
