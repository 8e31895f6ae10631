//! Fixed-step simulation, exploration signals and quadratic costs.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::plant::Dynamics;

pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Sampled trajectory. `inputs[r]` and `noise[r]` are held on `[t_r, t_{r+1})`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Total applied input (controller plus exploration).
    pub inputs: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    /// Number of samples per zero-order-hold interval.
    pub hold: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn step(&self) -> f64 {
        if self.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Append `other`, dropping its first sample when it repeats our last one.
    pub fn extend(&mut self, other: Trajectory) {
        let skip = match (self.times.last(), other.times.first()) {
            (Some(a), Some(b)) if (a - b).abs() <= 1e-9 * a.abs().max(1.0) => 1,
            _ => 0,
        };
        if self.is_empty() {
            self.hold = other.hold;
        }
        if skip == 1 {
            // The joining sample keeps the input that is actually applied next.
            *self.inputs.last_mut().expect("nonempty") = other.inputs[0].clone();
            *self.noise.last_mut().expect("nonempty") = other.noise[0].clone();
        }
        self.times.extend(other.times.into_iter().skip(skip));
        self.states.extend(other.states.into_iter().skip(skip));
        self.inputs.extend(other.inputs.into_iter().skip(skip));
        self.noise.extend(other.noise.into_iter().skip(skip));
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.n_states();
        let k = self.n_inputs();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=k).map(|i| format!("u{i}")));
        header.extend((1..=k).map(|i| format!("noise{i}")));
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.len() {
            let mut line = format!("{:.11e}", self.times[r]);
            for v in self.states[r].iter().chain(&self.inputs[r]).chain(&self.noise[r]) {
                line.push_str(&format!(",{v:.11e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Description of an exploration signal; realized per channel from a seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExcitationSpec {
    None,
    /// `amplitude · Σ sin(ω t + φ)` with `count` frequencies drawn in `[min_freq, max_freq]` rad/s.
    SumOfSinusoids {
        amplitude: f64,
        count: usize,
        min_freq: f64,
        max_freq: f64,
        seed: u64,
    },
    /// `±amplitude` switching every `period · (1 + jitter·U(−1,1))` seconds with a random phase.
    AlternatingPulse {
        amplitude: f64,
        period: f64,
        jitter: f64,
        seed: u64,
    },
}

impl ExcitationSpec {
    pub fn sinusoids(amplitude: f64, seed: u64) -> Self {
        ExcitationSpec::SumOfSinusoids {
            amplitude,
            count: 5,
            min_freq: 0.5,
            max_freq: 5.0,
            seed,
        }
    }

    pub fn pulses(seed: u64) -> Self {
        ExcitationSpec::AlternatingPulse {
            amplitude: 1.0,
            period: 3.0,
            jitter: 0.5,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
enum Channel {
    Zero,
    Sines { amplitude: f64, freqs: Vec<f64>, phases: Vec<f64> },
    Pulse { amplitude: f64, period: f64, phase: f64 },
}

/// A realized exploration signal, optionally switched off after `until`.
#[derive(Clone, Debug)]
pub struct Excitation {
    channels: Vec<Channel>,
    until: Option<f64>,
}

impl Excitation {
    pub fn zero(k: usize) -> Self {
        Excitation {
            channels: vec![Channel::Zero; k],
            until: None,
        }
    }

    pub fn new(spec: &ExcitationSpec, k: usize) -> Result<Self> {
        let channels = match *spec {
            ExcitationSpec::None => vec![Channel::Zero; k],
            ExcitationSpec::SumOfSinusoids {
                amplitude,
                count,
                min_freq,
                max_freq,
                seed,
            } => {
                if count == 0 || !(min_freq > 0.0) || max_freq < min_freq {
                    return invalid("sum-of-sinusoids needs count >= 1 and 0 < min_freq <= max_freq");
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..k)
                    .map(|_| {
                        let freqs = (0..count).map(|_| rng.random_range(min_freq..=max_freq)).collect();
                        let phases = (0..count).map(|_| rng.random_range(0.0..TAU)).collect();
                        Channel::Sines {
                            amplitude,
                            freqs,
                            phases,
                        }
                    })
                    .collect()
            }
            ExcitationSpec::AlternatingPulse {
                amplitude,
                period,
                jitter,
                seed,
            } => {
                if !(period > 0.0) || !(0.0..1.0).contains(&jitter) {
                    return invalid("alternating pulse needs period > 0 and 0 <= jitter < 1");
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..k)
                    .map(|_| {
                        let p = if jitter > 0.0 {
                            period * (1.0 + jitter * rng.random_range(-1.0..=1.0))
                        } else {
                            period
                        };
                        let phase = rng.random_range(0.0..p);
                        Channel::Pulse {
                            amplitude,
                            period: p,
                            phase,
                        }
                    })
                    .collect()
            }
        };
        Ok(Excitation { channels, until: None })
    }

    /// Switch the signal off from time `t` on.
    pub fn until(mut self, t: f64) -> Self {
        self.until = Some(t);
        self
    }

    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        if self.until.is_some_and(|end| t >= end - 1e-12) {
            return vec![0.0; self.channels.len()];
        }
        self.channels
            .iter()
            .map(|c| match c {
                Channel::Zero => 0.0,
                Channel::Sines {
                    amplitude,
                    freqs,
                    phases,
                } => amplitude * freqs.iter().zip(phases).map(|(w, p)| (w * t + p).sin()).sum::<f64>(),
                Channel::Pulse {
                    amplitude,
                    period,
                    phase,
                } => {
                    if ((t + phase) / period).floor().rem_euclid(2.0) < 0.5 {
                        *amplitude
                    } else {
                        -amplitude
                    }
                }
            })
            .collect()
    }
}

/// Step and horizon of a fixed-step run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOptions {
    /// Zero-order-hold interval: controller and noise are updated once per `dt`.
    pub dt: f64,
    /// Integration steps per hold interval.
    pub substeps: usize,
    pub t0: f64,
    pub duration: f64,
}

impl SimOptions {
    pub fn new(dt: f64, duration: f64) -> Self {
        SimOptions {
            dt,
            substeps: 1,
            t0: 0.0,
            duration,
        }
    }

    pub fn intervals(&self) -> Result<usize> {
        if !(self.dt > 0.0) || self.substeps == 0 {
            return invalid("time step must be positive and substeps at least 1");
        }
        if !(self.duration > 0.0) {
            return invalid("duration must be positive");
        }
        let steps = (self.duration / self.dt).round();
        if (steps * self.dt - self.duration).abs() > 1e-9 * self.duration.max(1.0) {
            return invalid(format!(
                "duration {} is not a multiple of the step {}",
                self.duration, self.dt
            ));
        }
        Ok(steps as usize)
    }
}

fn rk4_step(plant: &dyn Dynamics, x: &mut [f64], u: &[f64], h: f64, scratch: &mut [Vec<f64>; 5]) {
    let n = x.len();
    let [k1, k2, k3, k4, tmp] = scratch;
    plant.rhs(x, u, k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    plant.rhs(tmp, u, k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    plant.rhs(tmp, u, k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    plant.rhs(tmp, u, k4);
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Classical RK4 with the input held over each `dt`. The controller sees
/// `(t, x)` at the start of every hold interval; exploration is added on top
/// and recorded separately.
pub fn integrate<C>(
    plant: &dyn Dynamics,
    x0: &[f64],
    opts: SimOptions,
    mut controller: C,
    noise: &Excitation,
) -> Result<Trajectory>
where
    C: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let n = plant.n();
    let k = plant.k();
    if x0.len() != n {
        return invalid(format!("initial state has length {}, plant has {n} states", x0.len()));
    }
    if noise.k() != k {
        return invalid(format!("exploration has {} channels, plant has {k} inputs", noise.k()));
    }
    let intervals = opts.intervals()?;
    let s = opts.substeps;
    let h = opts.dt / s as f64;
    let total = intervals * s;
    let mut traj = Trajectory {
        times: Vec::with_capacity(total + 1),
        states: Vec::with_capacity(total + 1),
        inputs: Vec::with_capacity(total + 1),
        noise: Vec::with_capacity(total + 1),
        hold: s,
    };
    let mut x = x0.to_vec();
    let mut scratch: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut held = (vec![0.0; k], vec![0.0; k]);
    let check = |x: &[f64], t: f64, last_norm: f64| -> Result<f64> {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_BOUND {
            return Err(Error::Diverged { time: t, norm: last_norm });
        }
        Ok(norm)
    };
    let mut last_norm = check(&x, opts.t0, 0.0)?;
    let mut last_t = opts.t0;
    for step in 0..=total {
        let t = opts.t0 + step as f64 * h;
        if step % s == 0 {
            let mut u = controller(t, &x);
            if u.len() != k {
                return invalid(format!("controller returned {} inputs, plant has {k}", u.len()));
            }
            let w = noise.value(t);
            for (ui, wi) in u.iter_mut().zip(&w) {
                *ui += wi;
            }
            held = (u, w);
        }
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.inputs.push(held.0.clone());
        traj.noise.push(held.1.clone());
        if step == total {
            break;
        }
        rk4_step(plant, &mut x, &held.0, h, &mut scratch);
        match check(&x, t + h, last_norm) {
            Ok(norm) => {
                last_norm = norm;
                last_t = t + h;
            }
            Err(_) => {
                return Err(Error::Diverged {
                    time: last_t,
                    norm: last_norm,
                })
            }
        }
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    #[serde(with = "crate::shaped")]
    pub q1: DMatrix<f64>,
    #[serde(with = "crate::shaped")]
    pub r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q1: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let w = CostWeights { q1, r };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("Q1", &self.q1), ("R", &self.r)] {
            if m.nrows() != m.ncols() {
                return invalid(format!("{name} must be square"));
            }
            let scale = m.amax().max(1.0);
            if (m - m.transpose()).amax() > 1e-12 * scale {
                return invalid(format!("{name} must be symmetric"));
            }
        }
        if crate::linalg::min_sym_eigenvalue(&self.q1) < -1e-12 {
            return invalid("Q1 must be positive semidefinite");
        }
        if self.r.nrows() == 0 || crate::linalg::min_sym_eigenvalue(&self.r) <= 0.0 {
            return invalid("R must be positive definite");
        }
        Ok(())
    }

    pub fn scaled_q(&self, factor: f64) -> Self {
        CostWeights {
            q1: &self.q1 * factor,
            r: self.r.clone(),
        }
    }
}

fn quad(m: &DMatrix<f64>, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    (v.transpose() * m * &v)[0]
}

/// `∫ (xᵀQ1x + uᵀRu) dt` over `[t0, t0 + horizon]`, trapezoidal in `x`, with
/// the policy input (exploration removed) held per interval.
pub fn integrated_cost(traj: &Trajectory, weights: &CostWeights, horizon: f64) -> Result<f64> {
    if traj.is_empty() {
        return invalid("empty trajectory");
    }
    if traj.n_states() != weights.q1.nrows() || traj.n_inputs() != weights.r.nrows() {
        return invalid("cost weights do not match the trajectory dimensions");
    }
    let t0 = traj.times[0];
    let t_end = *traj.times.last().expect("nonempty");
    if horizon < 0.0 || t0 + horizon > t_end + 1e-9 * t_end.abs().max(1.0) {
        return invalid(format!(
            "horizon {horizon} exceeds the trajectory length {}",
            t_end - t0
        ));
    }
    let stop = t0 + horizon + 1e-9 * horizon.max(1.0);
    let mut total = 0.0;
    let mut prev_x = quad(&weights.q1, &traj.states[0]);
    for r in 0..traj.len() - 1 {
        if traj.times[r + 1] > stop {
            break;
        }
        let h = traj.times[r + 1] - traj.times[r];
        let next_x = quad(&weights.q1, &traj.states[r + 1]);
        let u: Vec<f64> = traj.inputs[r].iter().zip(&traj.noise[r]).map(|(a, b)| a - b).collect();
        total += 0.5 * h * (prev_x + next_x) + h * quad(&weights.r, &u);
        prev_x = next_x;
    }
    Ok(total)
}

/// `J = ½ ∫ (xᵀQ1x + uᵀRu) dt`.
pub fn cost_functional(traj: &Trajectory, weights: &CostWeights, horizon: f64) -> Result<f64> {
    Ok(0.5 * integrated_cost(traj, weights, horizon)?)
}

/// Formation cost of a four-boat run: the unhalved integral with the
/// formation weights and `R = I`.
pub fn tugboat_cost(traj: &Trajectory, boats: usize, horizon: f64) -> Result<f64> {
    if boats != 4 {
        return invalid(format!("the formation scenario has 4 boats (got {boats})"));
    }
    integrated_cost(traj, &crate::plant::tugboat_weights(boats), horizon)
}
