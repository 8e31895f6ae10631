//! Data-driven policy iteration on the lifted state.
//!
//! A policy `u = −Kψ` is evaluated by fitting `V(x) = ψᵀPψ` to sampled data:
//! for each data row over `[t_r, t_{r+1}]`
//!
//! ```text
//! p̄ᵀ(ψ̄(t_r) − ψ̄(t_{r+1})) + ∫ 2 p̄ᵀβ(ψ) B(ψ)(u + Kψ) dt = ∫ (xᵀQ1x + ψᵀKᵀRKψ) dt
//! ```
//!
//! where `u` is the input actually applied. The improved gain is read off
//! `R⁻¹B(ψ)ᵀPψ` truncated to the basis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{MonomialBasis, QuadBasis};
use crate::error::{invalid, Error, Result};
use crate::lift::CarlemanModel;
use crate::linalg::{kleinman, lstsq_ridge, min_sym_eigenvalue, stabilizing_gain};
use crate::par::{map_range, Execution};
use crate::plant::Dynamics;
use crate::sim::{integrate, CostWeights, Excitation, ExcitationSpec, SimOptions, Trajectory};

/// Condition number above which the least-squares fit is rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Composite Simpson over the integration substeps of each row
    /// (needs an even number of substeps).
    Simpson,
}

fn default_substeps() -> usize {
    1
}
fn default_max_iters() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-4
}
fn default_ridge() -> f64 {
    0.0
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningConfig {
    /// Length `T` of each evaluation window (on-policy) or of the single
    /// excitation batch (off-policy), in seconds.
    pub update_interval: f64,
    /// Sample step `δt`: one data row and one controller update per step.
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub quadrature: Quadrature,
    /// Maximum number of policy improvements.
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop when `‖P_i − P_{i−1}‖_F ≤ tol · ‖P_i‖_F`.
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Tikhonov weight on the column-scaled problem. Any value comparable
    /// to `σ_min²` biases the weakly excited higher-degree coefficients.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    pub noise: ExcitationSpec,
    /// Treat an exhausted iteration budget as an error.
    #[serde(default = "default_true")]
    pub require_convergence: bool,
    #[serde(default)]
    pub execution: Execution,
}

impl LearningConfig {
    pub fn new(update_interval: f64, dt: f64, noise: ExcitationSpec) -> Self {
        LearningConfig {
            update_interval,
            dt,
            substeps: 1,
            quadrature: Quadrature::Trapezoid,
            max_iters: default_max_iters(),
            tol: default_tol(),
            ridge: default_ridge(),
            noise,
            require_convergence: true,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let opts = self.window_options(0.0);
        opts.intervals()?;
        if !(self.tol > 0.0) {
            return invalid("convergence tolerance must be positive");
        }
        if !(self.ridge >= 0.0) {
            return invalid("ridge must be non-negative");
        }
        if self.quadrature == Quadrature::Simpson && !self.substeps.is_multiple_of(2) {
            return invalid("Simpson quadrature needs an even number of substeps");
        }
        Ok(())
    }

    fn window_options(&self, t0: f64) -> SimOptions {
        SimOptions {
            dt: self.dt,
            substeps: self.substeps,
            t0,
            duration: self.update_interval,
        }
    }
}

/// Value certificate `V = ψᵀPψ` of a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCertificate {
    #[serde(with = "crate::shaped")]
    pub p: DMatrix<f64>,
    pub p_bar: Vec<f64>,
    pub iter: usize,
    pub residual: f64,
    pub condition: f64,
}

impl PolicyCertificate {
    /// Smallest eigenvalue of the block acting on the plain state.
    pub fn linear_block_min_eigenvalue(&self, n: usize) -> f64 {
        min_sym_eigenvalue(&self.p.view((0, 0), (n, n)).into_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainSource {
    Initial,
    Learned,
    Structured,
    Sparse,
}

/// Feedback `u = −Kψ(x)` together with the basis it acts on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackGain {
    #[serde(with = "crate::shaped")]
    pub k: DMatrix<f64>,
    pub source: GainSource,
    pub basis: MonomialBasis,
}

impl FeedbackGain {
    pub fn new(k: DMatrix<f64>, source: GainSource, basis: &MonomialBasis) -> Result<Self> {
        if k.ncols() != basis.len() {
            return invalid(format!("gain has {} columns, basis has {}", k.ncols(), basis.len()));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return invalid("gain has non-finite entries");
        }
        Ok(FeedbackGain {
            k,
            source,
            basis: basis.clone(),
        })
    }

    pub fn control(&self, x: &[f64]) -> Vec<f64> {
        let psi = self.basis.lift_unchecked(x);
        (-(&self.k * psi)).as_slice().to_vec()
    }

    pub fn controller(&self) -> impl FnMut(f64, &[f64]) -> Vec<f64> + '_ {
        move |_, x| self.control(x)
    }

    /// Entries with magnitude above `1e-8`.
    pub fn cardinality(&self) -> usize {
        self.k.iter().filter(|v| v.abs() > crate::sparse::ZERO_THRESHOLD).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Relative change `‖P_i − P_{i−1}‖_F / ‖P_i‖_F`; absent for the first evaluation.
    pub delta_p: Option<f64>,
    pub residual: f64,
    pub condition: f64,
    pub rows: usize,
    /// Plant samples consumed so far.
    pub timesteps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningLog {
    pub records: Vec<IterationRecord>,
    #[serde(with = "crate::shaped::vec")]
    pub p_snapshots: Vec<DMatrix<f64>>,
    /// Gain evaluated at each iteration.
    #[serde(with = "crate::shaped::vec")]
    pub gains: Vec<DMatrix<f64>>,
    pub converged: bool,
    /// Number of policy improvements performed.
    pub iterations: usize,
    pub timesteps: usize,
    pub wall_seconds: f64,
}

impl LearningLog {
    pub fn delta_sequence(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.delta_p).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Learned {
    pub certificate: PolicyCertificate,
    pub gain: FeedbackGain,
}

/// Outcome of a learning run; the log is kept even when the run fails.
#[derive(Clone, Debug)]
pub struct LearningOutcome {
    pub log: LearningLog,
    /// Plant data gathered while learning.
    pub trajectory: Trajectory,
    pub result: Result<Learned>,
}

/// Sample data of one window, preprocessed for the data equation.
#[derive(Clone, Debug)]
pub struct DataWindow {
    psi: Vec<DVector<f64>>,
    psibar: Vec<DVector<f64>>,
    input_mat: Vec<DMatrix<f64>>,
    state_cost: Vec<f64>,
    inputs: Vec<DVector<f64>>,
    noise: Vec<DVector<f64>>,
    hold: usize,
    weights: Vec<f64>,
    rows: usize,
}

impl DataWindow {
    pub fn new(
        traj: &Trajectory,
        model: &CarlemanModel,
        qb: &QuadBasis,
        q1: &DMatrix<f64>,
        quadrature: Quadrature,
        exec: Execution,
    ) -> Result<Self> {
        let hold = traj.hold.max(1);
        if traj.len() < 2 {
            return invalid("data window needs at least 2 samples");
        }
        if !(traj.len() - 1).is_multiple_of(hold) {
            return invalid("data window is not aligned to the hold interval");
        }
        if traj.n_states() != model.n() || traj.n_inputs() != model.k() {
            return invalid("trajectory dimensions do not match the model");
        }
        if q1.nrows() != model.n() {
            return invalid("Q1 does not match the state dimension");
        }
        if quadrature == Quadrature::Simpson && !hold.is_multiple_of(2) {
            return invalid("Simpson quadrature needs an even number of samples per row");
        }
        let h = traj.step();
        let weights: Vec<f64> = match quadrature {
            Quadrature::Trapezoid => (0..=hold)
                .map(|j| if j == 0 || j == hold { 0.5 * h } else { h })
                .collect(),
            Quadrature::Simpson => (0..=hold)
                .map(|j| {
                    let w = if j == 0 || j == hold {
                        1.0
                    } else if j % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    w * h / 3.0
                })
                .collect(),
        };
        let per_sample = map_range(exec, traj.len(), |i| {
            let x = &traj.states[i];
            let psi = model.basis.lift_unchecked(x);
            let psibar = qb.lift_extended_from(&psi);
            let input_mat = model.input_matrix_unchecked(&psi);
            let xv = DVector::from_column_slice(x);
            let state_cost = (xv.transpose() * q1 * &xv)[0];
            (psi, psibar, input_mat, state_cost)
        });
        let mut w = DataWindow {
            psi: Vec::with_capacity(traj.len()),
            psibar: Vec::with_capacity(traj.len()),
            input_mat: Vec::with_capacity(traj.len()),
            state_cost: Vec::with_capacity(traj.len()),
            inputs: traj.inputs.iter().map(|u| DVector::from_column_slice(u)).collect(),
            noise: traj.noise.iter().map(|u| DVector::from_column_slice(u)).collect(),
            hold,
            weights,
            rows: (traj.len() - 1) / hold,
        };
        for (psi, psibar, input_mat, state_cost) in per_sample {
            w.psi.push(psi);
            w.psibar.push(psibar);
            w.input_mat.push(input_mat);
            w.state_cost.push(state_cost);
        }
        Ok(w)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn samples(&self) -> usize {
        self.psi.len()
    }

    fn row_samples(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let start = r * self.hold;
        self.weights.iter().enumerate().map(move |(j, &w)| (start + j, w))
    }

    /// Differences `ψ̄(t_r) − ψ̄(t_{r+1})` and cost integrals for gain `k`.
    pub fn batch(&self, k: &DMatrix<f64>, r_mat: &DMatrix<f64>, exec: Execution) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.psibar[0].len();
        let rows = map_range(exec, self.rows, |r| {
            let s0 = r * self.hold;
            let diff = &self.psibar[s0] - &self.psibar[s0 + self.hold];
            let mut y = 0.0;
            for (s, w) in self.row_samples(r) {
                let kp = k * &self.psi[s];
                y += w * (self.state_cost[s] + (kp.transpose() * r_mat * &kp)[0]);
            }
            (diff, y)
        });
        assemble(rows, m)
    }

    /// `∫ 2β(ψ)B(ψ)v(t) dt` per row, with `v` supplied per (row, sample).
    fn correction<F>(&self, qb: &QuadBasis, exec: Execution, v: F) -> DMatrix<f64>
    where
        F: Fn(usize, usize) -> DVector<f64> + Sync + Send,
    {
        let m = qb.len();
        let rows = map_range(exec, self.rows, |r| {
            let mut acc = DVector::zeros(m);
            for (s, w) in self.row_samples(r) {
                let g = &self.input_mat[s] * v(r, s);
                acc += qb.beta_times(&self.psi[s], &g) * (2.0 * w);
            }
            (acc, 0.0)
        });
        assemble(rows, m).0
    }

    /// Correction for the exploration signal alone.
    pub fn noise_correction(&self, qb: &QuadBasis, exec: Execution) -> DMatrix<f64> {
        self.correction(qb, exec, |r, _| self.noise[r * self.hold].clone())
    }

    /// Correction for an arbitrary applied input evaluated against gain `k`:
    /// `v(t) = u_held + Kψ(t)`.
    pub fn policy_correction(&self, qb: &QuadBasis, k: &DMatrix<f64>, exec: Execution) -> DMatrix<f64> {
        self.correction(qb, exec, |r, s| &self.inputs[r * self.hold] + k * &self.psi[s])
    }
}

fn assemble(rows: Vec<(DVector<f64>, f64)>, m: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut psi = DMatrix::zeros(rows.len(), m);
    let mut y = DVector::zeros(rows.len());
    for (i, (row, v)) in rows.into_iter().enumerate() {
        psi.row_mut(i).copy_from(&row.transpose());
        y[i] = v;
    }
    (psi, y)
}

/// Data matrices `(Ψ, Y)` of a trajectory segment under gain `k`.
pub fn collect_batch(
    traj: &Trajectory,
    k: &DMatrix<f64>,
    weights: &CostWeights,
    model: &CarlemanModel,
    qb: &QuadBasis,
    quadrature: Quadrature,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let w = DataWindow::new(traj, model, qb, &weights.q1, quadrature, Execution::Sequential)?;
    check_gain_shape(k, model)?;
    Ok(w.batch(k, &weights.r, Execution::Sequential))
}

/// `Ψ + ∫2β(ψ)B(ψ)u_noise dt` using the recorded exploration.
pub fn noise_correction_onpolicy(
    psi: &DMatrix<f64>,
    traj: &Trajectory,
    model: &CarlemanModel,
    qb: &QuadBasis,
    quadrature: Quadrature,
) -> Result<DMatrix<f64>> {
    if traj.noise.len() != traj.len() || traj.noise.iter().any(|w| w.len() != model.k()) {
        return invalid("trajectory has no exploration record matching the inputs");
    }
    let w = DataWindow::new(traj, model, qb, &DMatrix::zeros(model.n(), model.n()), quadrature, Execution::Sequential)?;
    if psi.shape() != (w.rows(), qb.len()) {
        return invalid("Ψ does not match the trajectory segment");
    }
    Ok(psi + w.noise_correction(qb, Execution::Sequential))
}

/// `Ψ + ∫2β(ψ)B(ψ)(u + Kψ) dt` for data recorded under an arbitrary input.
pub fn offpolicy_correction(
    psi: &DMatrix<f64>,
    traj: &Trajectory,
    model: &CarlemanModel,
    qb: &QuadBasis,
    k: &DMatrix<f64>,
    quadrature: Quadrature,
) -> Result<DMatrix<f64>> {
    check_gain_shape(k, model)?;
    let w = DataWindow::new(traj, model, qb, &DMatrix::zeros(model.n(), model.n()), quadrature, Execution::Sequential)?;
    if psi.shape() != (w.rows(), qb.len()) {
        return invalid("Ψ does not match the trajectory segment");
    }
    Ok(psi + w.policy_correction(qb, k, Execution::Sequential))
}

fn check_gain_shape(k: &DMatrix<f64>, model: &CarlemanModel) -> Result<()> {
    if k.shape() != (model.k(), model.dim()) {
        return invalid(format!(
            "gain is {}x{}, expected {}x{}",
            k.nrows(),
            k.ncols(),
            model.k(),
            model.dim()
        ));
    }
    Ok(())
}

/// Least-squares fit of `p̄` and the symmetric `P` it induces.
pub fn solve_p(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    qb: &QuadBasis,
    ridge: f64,
    iteration: usize,
) -> Result<PolicyCertificate> {
    if psi.nrows() == 0 {
        return invalid("no data rows");
    }
    if psi.ncols() != qb.len() {
        return invalid(format!("Ψ has {} columns, extended basis has {}", psi.ncols(), qb.len()));
    }
    let sol = lstsq_ridge(psi, y, ridge)?;
    if !(sol.condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            condition: sol.condition,
            iteration,
        });
    }
    let p = qb.unvectorize(&sol.x)?;
    Ok(PolicyCertificate {
        p,
        p_bar: sol.x.as_slice().to_vec(),
        iter: iteration,
        residual: sol.relative_residual,
        condition: sol.condition,
    })
}

fn diagonal_r(r: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    if r.shape() != (k, k) {
        return invalid(format!("R must be {k}x{k}"));
    }
    let scale = r.amax();
    for i in 0..k {
        for j in 0..k {
            if i != j && r[(i, j)].abs() > 1e-12 * scale {
                return invalid("gain extraction is implemented for diagonal R only");
            }
        }
    }
    let d: Vec<f64> = (0..k).map(|i| r[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return invalid("R must have a positive diagonal");
    }
    Ok(d)
}

/// Visit every `(channel, Bs[a,c]·P[a,b], c, b)` contribution of `ψᵀBs_iᵀPψ`.
fn for_each_state_term<F: FnMut(usize, f64, usize, usize)>(p: &DMatrix<f64>, model: &CarlemanModel, mut f: F) {
    let dim = model.dim();
    for (ch, bs) in model.b_state.iter().enumerate() {
        for a in 0..dim {
            for c in 0..dim {
                let w = bs[(a, c)];
                if w == 0.0 {
                    continue;
                }
                for b in 0..dim {
                    let pab = p[(a, b)];
                    if pab != 0.0 {
                        f(ch, w * pab, c, b);
                    }
                }
            }
        }
    }
}

/// Truncated improvement `K` with `Kψ ≈ R⁻¹B(ψ)ᵀPψ`; products outside the
/// basis are dropped.
pub fn extract_gain_matrix(p: &DMatrix<f64>, model: &CarlemanModel, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = model.dim();
    if p.shape() != (dim, dim) {
        return invalid(format!("P must be {dim}x{dim}"));
    }
    let rd = diagonal_r(r, model.k())?;
    let mut k = model.b0.transpose() * p;
    let basis = &model.basis;
    for_each_state_term(p, model, |ch, v, c, b| {
        if let Some(j) = basis.index_of(&basis.monomial(c).mul(basis.monomial(b))) {
            k[(ch, j)] += v;
        }
    });
    for (ch, rii) in rd.iter().enumerate() {
        k.row_mut(ch).scale_mut(1.0 / rii);
    }
    Ok(k)
}

pub fn extract_gain(cert: &PolicyCertificate, model: &CarlemanModel, r: &DMatrix<f64>) -> Result<FeedbackGain> {
    FeedbackGain::new(extract_gain_matrix(&cert.p, model, r)?, GainSource::Learned, &model.basis)
}

/// The part of `R⁻¹B(ψ)ᵀPψ` dropped by [`extract_gain_matrix`], per channel.
pub fn eval_trunc_term(p: &DMatrix<f64>, model: &CarlemanModel, x: &[f64], r: &DMatrix<f64>) -> Result<Vec<f64>> {
    let dim = model.dim();
    if p.shape() != (dim, dim) {
        return invalid(format!("P must be {dim}x{dim}"));
    }
    let rd = diagonal_r(r, model.k())?;
    let psi = model.basis.lift(x)?;
    let basis = &model.basis;
    let mut eps = vec![0.0; model.k()];
    for_each_state_term(p, model, |ch, v, c, b| {
        if basis.index_of(&basis.monomial(c).mul(basis.monomial(b))).is_none() {
            eps[ch] += v * psi[c] * psi[b];
        }
    });
    Ok(eps.into_iter().zip(rd).map(|(e, r)| e / r).collect())
}

/// LQR gain of the linear part, zero-padded over the higher-degree columns.
pub fn initial_gain(model: &CarlemanModel, weights: &CostWeights) -> Result<FeedbackGain> {
    let (a11, b1) = model.linear_part();
    let n = model.n();
    if weights.q1.nrows() != n || weights.r.nrows() != model.k() {
        return invalid("cost weights do not match the model");
    }
    let k_stab = stabilizing_gain(&a11, &b1)?;
    let res = kleinman(&a11, &b1, &weights.q1, &weights.r, &k_stab, 1e-12, 100).map_err(|e| match e {
        Error::NotConverged { .. } | Error::Unstabilizable(_) => {
            Error::Unstabilizable(format!("LQR of the linear part failed: {e}"))
        }
        other => other,
    })?;
    let mut k = DMatrix::zeros(model.k(), model.dim());
    k.view_mut((0, 0), (model.k(), n)).copy_from(&res.k);
    FeedbackGain::new(k, GainSource::Initial, &model.basis)
}

/// Produces a certificate for a given gain, from whatever data the evaluator owns.
pub trait PolicyEvaluator {
    fn evaluate(&mut self, k: &DMatrix<f64>, iteration: usize) -> Result<(PolicyCertificate, usize)>;
    /// Plant samples consumed so far.
    fn timesteps(&self) -> usize;
    fn trajectory(&self) -> &Trajectory;
}

/// Actuates each candidate gain on the plant for one window and fits its value.
pub struct OnPolicyEvaluator<'a> {
    plant: &'a dyn Dynamics,
    model: &'a CarlemanModel,
    qb: QuadBasis,
    weights: &'a CostWeights,
    cfg: &'a LearningConfig,
    excitation: Excitation,
    x: Vec<f64>,
    t: f64,
    traj: Trajectory,
}

impl<'a> OnPolicyEvaluator<'a> {
    pub fn new(
        plant: &'a dyn Dynamics,
        model: &'a CarlemanModel,
        weights: &'a CostWeights,
        cfg: &'a LearningConfig,
        x0: &[f64],
    ) -> Result<Self> {
        cfg.validate()?;
        check_plant(plant, model, x0)?;
        Ok(OnPolicyEvaluator {
            plant,
            model,
            qb: QuadBasis::new(&model.basis),
            weights,
            cfg,
            excitation: Excitation::new(&cfg.noise, model.k())?,
            x: x0.to_vec(),
            t: 0.0,
            traj: Trajectory::default(),
        })
    }
}

fn check_plant(plant: &dyn Dynamics, model: &CarlemanModel, x0: &[f64]) -> Result<()> {
    if plant.n() != model.n() || plant.k() != model.k() {
        return invalid("plant and model dimensions differ");
    }
    if x0.len() != plant.n() {
        return invalid("initial state has the wrong length");
    }
    Ok(())
}

impl PolicyEvaluator for OnPolicyEvaluator<'_> {
    fn evaluate(&mut self, k: &DMatrix<f64>, iteration: usize) -> Result<(PolicyCertificate, usize)> {
        check_gain_shape(k, self.model)?;
        let basis = &self.model.basis;
        let window = integrate(
            self.plant,
            &self.x,
            self.cfg.window_options(self.t),
            |_, x| (-(k * basis.lift_unchecked(x))).as_slice().to_vec(),
            &self.excitation,
        )?;
        let exec = self.cfg.execution;
        let data = DataWindow::new(&window, self.model, &self.qb, &self.weights.q1, self.cfg.quadrature, exec)?;
        let (diff, y) = data.batch(k, &self.weights.r, exec);
        let psi = diff + data.policy_correction(&self.qb, k, exec);
        self.x = window.final_state().to_vec();
        self.t = *window.times.last().expect("nonempty window");
        self.traj.extend(window);
        let cert = solve_p(&psi, &y, &self.qb, self.cfg.ridge, iteration)?;
        Ok((cert, data.rows()))
    }

    fn timesteps(&self) -> usize {
        self.traj.len().saturating_sub(1)
    }

    fn trajectory(&self) -> &Trajectory {
        &self.traj
    }
}

/// Fits every candidate gain against one stored excitation batch.
pub struct OffPolicyEvaluator<'a> {
    model: &'a CarlemanModel,
    qb: QuadBasis,
    weights: &'a CostWeights,
    cfg: &'a LearningConfig,
    data: DataWindow,
    traj: Trajectory,
}

impl<'a> OffPolicyEvaluator<'a> {
    /// Runs the excitation phase `u = u_noise` from `x0`.
    pub fn new(
        plant: &'a dyn Dynamics,
        model: &'a CarlemanModel,
        weights: &'a CostWeights,
        cfg: &'a LearningConfig,
        x0: &[f64],
    ) -> Result<Self> {
        cfg.validate()?;
        check_plant(plant, model, x0)?;
        let excitation = Excitation::new(&cfg.noise, model.k())?;
        let k = model.k();
        let traj = integrate(plant, x0, cfg.window_options(0.0), |_, _| vec![0.0; k], &excitation)?;
        Self::from_trajectory(model, weights, cfg, traj)
    }

    pub fn from_trajectory(
        model: &'a CarlemanModel,
        weights: &'a CostWeights,
        cfg: &'a LearningConfig,
        traj: Trajectory,
    ) -> Result<Self> {
        let qb = QuadBasis::new(&model.basis);
        let data = DataWindow::new(&traj, model, &qb, &weights.q1, cfg.quadrature, cfg.execution)?;
        Ok(OffPolicyEvaluator {
            model,
            qb,
            weights,
            cfg,
            data,
            traj,
        })
    }
}

impl PolicyEvaluator for OffPolicyEvaluator<'_> {
    fn evaluate(&mut self, k: &DMatrix<f64>, iteration: usize) -> Result<(PolicyCertificate, usize)> {
        check_gain_shape(k, self.model)?;
        let exec = self.cfg.execution;
        let (diff, y) = self.data.batch(k, &self.weights.r, exec);
        let psi = diff + self.data.policy_correction(&self.qb, k, exec);
        let cert = solve_p(&psi, &y, &self.qb, self.cfg.ridge, iteration)?;
        Ok((cert, self.data.rows()))
    }

    fn timesteps(&self) -> usize {
        self.traj.len().saturating_sub(1)
    }

    fn trajectory(&self) -> &Trajectory {
        &self.traj
    }
}

/// Certificate must be positive definite on the plain-state block.
pub(crate) fn check_certificate(cert: &PolicyCertificate, n: usize, iteration: usize) -> Result<()> {
    let min = cert.linear_block_min_eigenvalue(n);
    if !(min > 0.0) {
        return Err(Error::NotStabilizing {
            iteration,
            min_eigenvalue: min,
        });
    }
    Ok(())
}

pub(crate) fn relative_change(p: &DMatrix<f64>, prev: &DMatrix<f64>) -> f64 {
    (p - prev).norm() / p.norm().max(f64::MIN_POSITIVE)
}

/// Policy-iteration loop shared by the on- and off-policy learners.
pub fn policy_iteration(
    evaluator: &mut dyn PolicyEvaluator,
    model: &CarlemanModel,
    weights: &CostWeights,
    cfg: &LearningConfig,
    k0: &FeedbackGain,
) -> (LearningLog, Result<Learned>) {
    let start = std::time::Instant::now();
    let mut log = LearningLog::default();
    let result = (|| {
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
            let next = extract_gain_matrix(&cert.p, model, &weights.r)?;
            if delta.is_some_and(|d| d <= cfg.tol) {
                log.converged = true;
                return Ok(Learned {
                    gain: FeedbackGain::new(next, GainSource::Learned, &model.basis)?,
                    certificate: cert,
                });
            }
            if i >= cfg.max_iters {
                if cfg.require_convergence {
                    return Err(Error::NotConverged {
                        iterations: i,
                        last_delta: delta.unwrap_or(f64::INFINITY),
                    });
                }
                return Ok(Learned {
                    gain: FeedbackGain::new(next, GainSource::Learned, &model.basis)?,
                    certificate: cert,
                });
            }
            prev = Some(cert.p);
            k = next;
            i += 1;
        }
    })();
    log.wall_seconds = start.elapsed().as_secs_f64();
    (log, result)
}

/// Algorithm: actuate `K_i` plus exploration for one window, fit `P_i`,
/// improve, repeat.
pub fn run_on_policy(
    plant: &dyn Dynamics,
    model: &CarlemanModel,
    weights: &CostWeights,
    cfg: &LearningConfig,
    k0: &FeedbackGain,
    x0: &[f64],
) -> LearningOutcome {
    let mut ev = match OnPolicyEvaluator::new(plant, model, weights, cfg, x0) {
        Ok(ev) => ev,
        Err(e) => return failed(e),
    };
    let (log, result) = policy_iteration(&mut ev, model, weights, cfg, k0);
    LearningOutcome {
        log,
        trajectory: ev.traj,
        result,
    }
}

/// One excitation batch with `u = u_noise`, then all iterations offline.
pub fn run_off_policy(
    plant: &dyn Dynamics,
    model: &CarlemanModel,
    weights: &CostWeights,
    cfg: &LearningConfig,
    k0: &FeedbackGain,
    x0: &[f64],
) -> LearningOutcome {
    let mut ev = match OffPolicyEvaluator::new(plant, model, weights, cfg, x0) {
        Ok(ev) => ev,
        Err(e) => return failed(e),
    };
    let (log, result) = policy_iteration(&mut ev, model, weights, cfg, k0);
    LearningOutcome {
        log,
        trajectory: ev.traj,
        result,
    }
}

fn failed(e: Error) -> LearningOutcome {
    LearningOutcome {
        log: LearningLog::default(),
        trajectory: Trajectory::default(),
        result: Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{oscillator_plant, PolynomialPlant};

    fn scalar_model(order: usize) -> (PolynomialPlant, CarlemanModel) {
        let plant = PolynomialPlant::linear(DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let model = CarlemanModel::from_plant(&plant, &MonomialBasis::full(1, order).unwrap()).unwrap();
        (plant, model)
    }

    #[test]
    fn scalar_gain_from_are() {
        let (_, model) = scalar_model(1);
        let p = DMatrix::from_element(1, 1, 2f64.sqrt() - 1.0);
        let k = extract_gain_matrix(&p, &model, &DMatrix::identity(1, 1)).unwrap();
        assert!((k[(0, 0)] - 0.414214).abs() < 1e-6);
    }

    #[test]
    fn oscillator_gain_structure() {
        let model = CarlemanModel::from_plant(&oscillator_plant(), &MonomialBasis::full(2, 2).unwrap()).unwrap();
        let mut p = DMatrix::zeros(5, 5);
        p[(0, 0)] = 1.0;
        p[(1, 1)] = 1.0;
        let k = extract_gain_matrix(&p, &model, &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(k.as_slice(), &[0.0, 1.0, 0.0, 1.0, 0.0]);
        let eps = eval_trunc_term(&p, &model, &[0.8, 0.7], &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(eps, vec![0.0]);
    }

    #[test]
    fn non_diagonal_r_rejected() {
        let plant = PolynomialPlant::linear(DMatrix::identity(2, 2) * -1.0, DMatrix::identity(2, 2)).unwrap();
        let model = CarlemanModel::from_plant(&plant, &MonomialBasis::full(2, 1).unwrap()).unwrap();
        let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        assert!(extract_gain_matrix(&DMatrix::identity(2, 2), &model, &r).is_err());
    }

    #[test]
    fn initial_gain_scalar() {
        let (_, model) = scalar_model(3);
        let w = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let k0 = initial_gain(&model, &w).unwrap();
        assert!((k0.k[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-10);
        assert_eq!(k0.k[(0, 1)], 0.0);
        assert_eq!(k0.k[(0, 2)], 0.0);
    }

    #[test]
    fn single_row_batch() {
        let (plant, model) = scalar_model(1);
        let qb = QuadBasis::new(&model.basis);
        let w = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let traj = integrate(&plant, &[1.0], SimOptions { substeps: 200, ..SimOptions::new(0.1, 0.1) }, |_, _| vec![0.0], &Excitation::zero(1)).unwrap();
        let (psi, y) = collect_batch(&traj, &DMatrix::zeros(1, 1), &w, &model, &qb, Quadrature::Simpson).unwrap();
        assert_eq!(psi.shape(), (1, 1));
        assert!((psi[(0, 0)] - (1.0 - (-0.2f64).exp())).abs() < 1e-12);
        assert!((y[0] - 0.5 * (1.0 - (-0.2f64).exp())).abs() < 1e-12);
        let cert = solve_p(&psi, &y, &qb, 0.0, 0).unwrap();
        assert!((cert.p[(0, 0)] - y[0] / psi[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn zero_rows_with_ridge_give_zero() {
        let qb = QuadBasis::new(&MonomialBasis::full(1, 2).unwrap());
        let cert = solve_p(&DMatrix::zeros(4, 3), &DVector::zeros(4), &qb, 1e-8, 0).unwrap();
        assert!(cert.p_bar.iter().all(|&v| v == 0.0));
        assert!(matches!(
            solve_p(&DMatrix::zeros(4, 3), &DVector::zeros(4), &qb, 0.0, 2),
            Err(Error::IllConditioned { iteration: 2, .. })
        ));
    }
}
