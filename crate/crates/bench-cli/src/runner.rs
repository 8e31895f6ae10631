use std::fs;
use std::path::Path;

use anyhow::Context;
use carleman_core::learn::{
    initial_gain, policy_iteration, FeedbackGain, LearningConfig, LearningLog, OffPolicyEvaluator, OnPolicyEvaluator,
    PolicyEvaluator,
};
use carleman_core::plant::{
    hjb_oscillator_control, oscillator_plant, oscillator_weights, tugboat_basis, tugboat_plant, tugboat_weights,
    TUG_STATES,
};
use carleman_core::sim::{integrate, integrated_cost};
use carleman_core::sparse::{bandwidth_metric, run_sparse, AgentGrouping, Bandwidth};
use carleman_core::structured::{structured_model_based, structured_model_free, StructureMask};
use carleman_core::{
    CarlemanModel, CostWeights, Dynamics, Error, Excitation, MonomialBasis, PolynomialPlant, SimOptions, Trajectory,
    TugboatFleet,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{matrix, ExperimentConfig, Learner, Mode, PlantConfig};
use crate::{write_json, UsageError, TOOL_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    /// Simulation left the divergence guard.
    Diverged,
    /// Closed loop finished farther from the origin than it started.
    Unstable,
    /// Learning or synthesis failed (conditioning, convergence, feasibility).
    Infeasible,
    Invalid,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Invalid => 2,
            Status::Diverged | Status::Unstable => 3,
            Status::Infeasible => 4,
        }
    }

    fn of(e: &Error) -> Status {
        match e {
            Error::InvalidArgument(_) => Status::Invalid,
            Error::Diverged { .. } => Status::Diverged,
            _ => Status::Infeasible,
        }
    }
}

/// Contents of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub tool_version: String,
    pub name: String,
    pub mode: Mode,
    pub plant: String,
    pub order: usize,
    pub seed: u64,
    pub status: Status,
    pub exit_code: i32,
    pub error: Option<String>,
    pub horizon: f64,
    /// Reported cost over the horizon: halved for the oscillator and linear
    /// plants, unhalved for the tugboat formation.
    pub j: Option<f64>,
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub timesteps: Option<usize>,
    pub cardinality: Option<usize>,
    pub bandwidth: Option<usize>,
    pub mask_violation: Option<f64>,
    /// Largest final distance of a boat from its target.
    pub terminal_position_error: Option<f64>,
    pub initial_norm: f64,
    pub final_norm: Option<f64>,
}

impl RunResult {
    fn new(cfg: &ExperimentConfig) -> Self {
        RunResult {
            tool_version: TOOL_VERSION.to_string(),
            name: cfg.name.clone(),
            mode: cfg.mode,
            plant: cfg.plant.label().to_string(),
            order: cfg.order(),
            seed: cfg.seed,
            status: Status::Ok,
            exit_code: 0,
            error: None,
            horizon: cfg.simulation.horizon,
            j: None,
            converged: None,
            iterations: None,
            timesteps: None,
            cardinality: None,
            bandwidth: None,
            mask_violation: None,
            terminal_position_error: None,
            initial_norm: norm(&cfg.simulation.initial_state),
            final_norm: None,
        }
    }

    fn fail(&mut self, status: Status, msg: String) {
        self.status = status;
        self.exit_code = status.exit_code();
        self.error = Some(msg);
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Plant, lifted model and weights of one experiment.
pub struct Setup {
    pub dynamics: Box<dyn Dynamics>,
    pub model: Option<CarlemanModel>,
    /// Weights used for reporting.
    pub eval_weights: CostWeights,
    /// Weights the learner optimizes (`Q1` scaled by `cost.q_scale`).
    pub learn_weights: CostWeights,
    pub grouping: AgentGrouping,
    cost_factor: f64,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, Error> {
        let order = cfg.order();
        let needs_model = cfg.model.is_some();
        let (dynamics, model, defaults, cost_factor): (Box<dyn Dynamics>, _, _, _) = match &cfg.plant {
            PlantConfig::Oscillator => {
                let plant = oscillator_plant();
                let model = needs_model
                    .then(|| CarlemanModel::from_plant(&plant, &MonomialBasis::full(2, order)?))
                    .transpose()?;
                (Box::new(plant), model, oscillator_weights(), 0.5)
            }
            PlantConfig::Tugboat { boats } => {
                let model = needs_model
                    .then(|| CarlemanModel::from_plant(&tugboat_plant(*boats, order)?, &tugboat_basis(*boats, order)?))
                    .transpose()?;
                (Box::new(TugboatFleet::new(*boats)?), model, tugboat_weights(*boats), 1.0)
            }
            PlantConfig::Linear { a, b } => {
                let a = matrix(a, "plant.a").map_err(|e| Error::InvalidArgument(e.0))?;
                let b = matrix(b, "plant.b").map_err(|e| Error::InvalidArgument(e.0))?;
                let n = a.nrows();
                let k = b.ncols();
                let plant = PolynomialPlant::linear(a, b)?;
                let model = needs_model
                    .then(|| CarlemanModel::from_plant(&plant, &MonomialBasis::full(n, order)?))
                    .transpose()?;
                let w = CostWeights {
                    q1: DMatrix::identity(n, n),
                    r: DMatrix::identity(k, k),
                };
                (Box::new(plant), model, w, 0.5)
            }
        };
        let as_matrix = |m: &Option<Vec<Vec<f64>>>, path: &str, fallback: DMatrix<f64>| match m {
            Some(rows) => matrix(rows, path).map_err(|e| Error::InvalidArgument(e.0)),
            None => Ok(fallback),
        };
        let eval_weights = CostWeights::new(
            as_matrix(&cfg.cost.q1, "cost.q1", defaults.q1)?,
            as_matrix(&cfg.cost.r, "cost.r", defaults.r)?,
        )?;
        let learn_weights = eval_weights.scaled_q(cfg.cost.q_scale);
        let grouping = match cfg.plant {
            PlantConfig::Tugboat { boats } => AgentGrouping::uniform(boats, TUG_STATES, carleman_core::plant::TUG_INPUTS),
            _ => AgentGrouping::uniform(1, dynamics.n(), dynamics.k()),
        };
        Ok(Setup {
            dynamics,
            model,
            eval_weights,
            learn_weights,
            grouping,
            cost_factor,
        })
    }

    pub fn cost(&self, traj: &Trajectory, horizon: f64) -> Result<f64, Error> {
        Ok(self.cost_factor * integrated_cost(traj, &self.eval_weights, horizon)?)
    }
}

enum Controller {
    Zero,
    Hjb,
    Gain(FeedbackGain),
}

/// Everything a synthesis mode produces besides the gain.
#[derive(Default)]
struct Artifacts {
    log: Option<LearningLog>,
    data: Option<Trajectory>,
    extra: serde_json::Map<String, serde_json::Value>,
    mask: Option<StructureMask>,
}

fn evaluator<'a>(
    learner: Learner,
    setup: &'a Setup,
    model: &'a CarlemanModel,
    learn: &'a LearningConfig,
    x0: &[f64],
) -> Result<Box<dyn PolicyEvaluator + 'a>, Error> {
    let plant = &*setup.dynamics;
    let w = &setup.learn_weights;
    Ok(match learner {
        Learner::OnPolicy => Box::new(OnPolicyEvaluator::new(plant, model, w, learn, x0)?),
        Learner::OffPolicy => Box::new(OffPolicyEvaluator::new(plant, model, w, learn, x0)?),
        Learner::ModelBased => return Err(Error::InvalidArgument("model-based learner needs no data".into())),
    })
}

fn synthesize(cfg: &ExperimentConfig, setup: &Setup, art: &mut Artifacts) -> Result<Controller, Error> {
    let model = match cfg.mode {
        Mode::OpenLoop => return Ok(Controller::Zero),
        Mode::HjbBaseline => return Ok(Controller::Hjb),
        _ => setup.model.as_ref().expect("validated: learning modes have a model"),
    };
    let w = &setup.learn_weights;
    let learn = cfg.learning.as_ref().map(|l| l.to_core(cfg.seed));
    let x0 = cfg
        .learning
        .as_ref()
        .and_then(|l| l.initial_state.clone())
        .unwrap_or_else(|| cfg.simulation.initial_state.clone());
    let k0 = initial_gain(model, w)?;
    let learner = match cfg.mode {
        Mode::OnPolicy => Learner::OnPolicy,
        Mode::OffPolicy => Learner::OffPolicy,
        Mode::Structured => cfg.structured.as_ref().expect("validated").learner,
        Mode::Sparse => cfg.sparse.as_ref().expect("validated").learner,
        Mode::OpenLoop | Mode::HjbBaseline => unreachable!(),
    };
    let mut ev = match (&learn, learner) {
        (Some(l), Learner::OnPolicy | Learner::OffPolicy) => Some(evaluator(learner, setup, model, l, &x0)?),
        _ => None,
    };
    let result = match cfg.mode {
        Mode::OnPolicy | Mode::OffPolicy => {
            let ev = ev.as_deref_mut().expect("data learner");
            let (log, result) = policy_iteration(ev, model, w, learn.as_ref().expect("validated"), &k0);
            art.log = Some(log);
            result
        }
        Mode::Structured => {
            let section = cfg.structured.as_ref().expect("validated");
            let mask = StructureMask::from_removed_links(&model.basis, &setup.grouping, &section.links())?;
            let scfg = section.to_core();
            let out = match ev.as_deref_mut() {
                Some(ev) => structured_model_free(ev, model, w, &mask, learn.as_ref().expect("data"), &scfg, &k0),
                None => structured_model_based(model, w, &mask, &scfg),
            };
            art.log = Some(out.log);
            art.extra.insert("structured".into(), json!(out.outer));
            art.mask = Some(mask);
            out.result
        }
        Mode::Sparse => {
            let admm = cfg.sparse.as_ref().expect("validated").to_core();
            let ev = ev.as_deref_mut().expect("data learner");
            let out = run_sparse(ev, model, w, learn.as_ref().expect("validated"), &admm, &k0);
            art.log = Some(out.log);
            art.extra.insert("admm".into(), json!(out.inner));
            out.result
        }
        Mode::OpenLoop | Mode::HjbBaseline => unreachable!(),
    };
    if let Some(ev) = &ev {
        art.data = Some(ev.trajectory().clone());
    }
    Ok(Controller::Gain(result?.gain))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.11e}")).unwrap_or_default()
}

pub fn learning_csv(log: &LearningLog) -> String {
    let mut s = String::from("iteration,delta_p,residual,condition,rows,timesteps\n");
    for r in &log.records {
        s.push_str(&format!(
            "{},{},{:.11e},{:.11e},{},{}\n",
            r.iteration,
            fmt_opt(r.delta_p),
            r.residual,
            r.condition,
            r.rows,
            r.timesteps
        ));
    }
    s
}

fn write(dir: &Path, file: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    let path = dir.join(file);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn terminal_position_error(x: &[f64], boats: usize) -> f64 {
    (0..boats)
        .map(|j| x[j * TUG_STATES].hypot(x[j * TUG_STATES + 1]))
        .fold(0.0, f64::max)
}

/// Run one experiment and write its bundle into `dir`. Failures of the
/// experiment itself are recorded in the bundle; only I/O errors and
/// invalid configs are returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> anyhow::Result<RunResult> {
    cfg.validate()?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(dir, "config.toml", cfg.to_toml_string())?;
    let mut res = RunResult::new(cfg);
    let setup = match Setup::new(cfg) {
        Ok(s) => s,
        Err(Error::InvalidArgument(msg)) => return Err(UsageError(msg).into()),
        Err(e) => {
            res.fail(Status::of(&e), e.to_string());
            write_json(&dir.join("result.json"), &res)?;
            return Ok(res);
        }
    };

    let mut art = Artifacts::default();
    let controller = synthesize(cfg, &setup, &mut art);
    if let Some(log) = &art.log {
        res.converged = Some(log.converged);
        res.iterations = Some(log.iterations);
        res.timesteps = Some(log.timesteps);
        write(dir, "learning.csv", learning_csv(log))?;
        let mut doc = serde_json::Map::new();
        doc.insert("learning".into(), json!(log));
        doc.extend(art.extra);
        write_json(&dir.join("log.json"), &doc)?;
    }
    if let Some(data) = art.data.as_ref().filter(|d| !d.is_empty()) {
        write(dir, "learning_data.csv", data.to_csv_string())?;
    }
    if let Some(mask) = &art.mask {
        write_json(&dir.join("mask.json"), mask)?;
    }

    let controller = match controller {
        Ok(c) => c,
        Err(e) => {
            res.fail(Status::of(&e), e.to_string());
            write_json(&dir.join("result.json"), &res)?;
            return Ok(res);
        }
    };
    if let Controller::Gain(gain) = &controller {
        write_json(&dir.join("gain.json"), gain)?;
        res.cardinality = Some(gain.cardinality());
        let cap = cfg.sparse.as_ref().map_or(12, |s| s.per_link_capacity);
        let bw: Bandwidth = bandwidth_metric(gain, &setup.grouping, cap)?;
        res.bandwidth = Some(bw.total);
        write_json(&dir.join("bandwidth.json"), &bw)?;
        if let Some(mask) = &art.mask {
            res.mask_violation = Some(mask.violation(&gain.k)?);
        }
    }

    let sim = &cfg.simulation;
    let opts = SimOptions {
        dt: sim.dt,
        substeps: sim.substeps,
        t0: 0.0,
        duration: sim.horizon,
    };
    let plant = &*setup.dynamics;
    let quiet = Excitation::zero(plant.k());
    let k = plant.k();
    let traj = match &controller {
        Controller::Zero => integrate(plant, &sim.initial_state, opts, |_, _| vec![0.0; k], &quiet),
        Controller::Hjb => integrate(plant, &sim.initial_state, opts, |_, x| vec![hjb_oscillator_control(x)], &quiet),
        Controller::Gain(g) => integrate(plant, &sim.initial_state, opts, g.controller(), &quiet),
    };
    let traj = match traj {
        Ok(t) => t,
        Err(e) => {
            res.fail(Status::of(&e), e.to_string());
            write_json(&dir.join("result.json"), &res)?;
            return Ok(res);
        }
    };
    write(dir, "trajectory.csv", traj.to_csv_string())?;
    let last = traj.final_state();
    res.final_norm = Some(norm(last));
    res.j = Some(setup.cost(&traj, sim.horizon)?);
    if let PlantConfig::Tugboat { boats } = cfg.plant {
        res.terminal_position_error = Some(terminal_position_error(last, boats));
    }
    if cfg.mode != Mode::OpenLoop && norm(last) > res.initial_norm {
        res.fail(
            Status::Unstable,
            format!(
                "closed loop ends at |x| = {:.3e}, above the initial {:.3e}",
                norm(last),
                res.initial_norm
            ),
        );
    }
    write_json(&dir.join("result.json"), &res)?;
    Ok(res)
}
