//! Per-tick data harvesting from cart-pole trials, a GP dynamics model
//! learned from those transitions, and random-shooting model-predictive
//! control on top of it.

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::gp::{optimize_shared_hyperparams, GpModel, HyperOptConfig, KernelSpec, KernelVariant, PriorMean};
use crate::rng::{child_rng, SimRng};
use crate::testbeds::{CartPole, CartState};

pub const TICK_SECONDS: f64 = 0.01;
pub const THETA_LIMIT: f64 = 0.21;
pub const X_LIMIT: f64 = 2.4;
const STATE_DIM: usize = 4;
const THETA: usize = 2;

/// Pole beyond ±0.21 rad or cart beyond ±2.4 m.
pub fn is_failure(state: &[f64]) -> bool {
    state[THETA].abs() > THETA_LIMIT || state[0].abs() > X_LIMIT
}

pub fn reward(state: &[f64]) -> f64 {
    state[THETA].cos()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// State before the action.
    pub state: CartState,
    pub action: f64,
    /// `cos θ` of the state after the action.
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub tick_seconds: f64,
    pub steps: Vec<Step>,
    pub final_state: CartState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: f64,
    pub next: Vec<f64>,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn failed(&self) -> bool {
        is_failure(&self.final_state)
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// One transition per step.
    pub fn transitions(&self) -> Vec<Transition> {
        let nexts = self
            .steps
            .iter()
            .skip(1)
            .map(|s| s.state)
            .chain(std::iter::once(self.final_state));
        self.steps
            .iter()
            .zip(nexts)
            .map(|(s, next)| Transition {
                state: s.state.to_vec(),
                action: s.action,
                next: next.to_vec(),
            })
            .collect()
    }

    /// CSV with header `t,x,xdot,theta,thetadot,action,reward`, one row per
    /// step; `t` is the step start time.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io {
            path: "<episode log>".into(),
            source: e.into(),
        };
        w.write_record(["t", "x", "xdot", "theta", "thetadot", "action", "reward"])
            .map_err(io)?;
        let mut buf = ryu::Buffer::new();
        for (i, s) in self.steps.iter().enumerate() {
            let mut row = vec![buf.format(i as f64 * self.tick_seconds).to_owned()];
            row.extend(s.state.iter().map(|v| buf.format(*v).to_owned()));
            row.push(buf.format(s.action).to_owned());
            row.push(buf.format(s.reward).to_owned());
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("<episode log>", e))?;
        Ok(())
    }
}

pub type Policy<'a> = dyn FnMut(&CartState, &mut SimRng) -> f64 + 'a;

/// Upright with independent `U(−0.05, 0.05)` noise on every coordinate.
pub fn initial_state<R: Rng + ?Sized>(rng: &mut R) -> CartState {
    std::array::from_fn(|_| rng.random_range(-0.05..0.05))
}

pub fn record_episode(
    system: &CartPole,
    policy: &mut Policy<'_>,
    horizon: usize,
    tick: f64,
    rng: &mut SimRng,
) -> Result<EpisodeLog> {
    let start = initial_state(rng);
    record_episode_from(system, start, policy, horizon, tick, rng)
}

/// Runs `policy` for `horizon` ticks from `start`, ending early on the
/// first failing state. Actions are clamped to the actuator range.
pub fn record_episode_from(
    system: &CartPole,
    start: CartState,
    policy: &mut Policy<'_>,
    horizon: usize,
    tick: f64,
    rng: &mut SimRng,
) -> Result<EpisodeLog> {
    if horizon == 0 || !(tick > 0.0 && tick.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} and tick {tick} must be positive"
        )));
    }
    ensure_finite(&start, "start state")?;
    let mut state = start;
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let action = policy(&state, rng);
        if !action.is_finite() {
            return Err(Error::non_finite("policy action"));
        }
        let action = system.clamp_force(action);
        let next = system.step(&state, action, tick);
        steps.push(Step {
            state,
            action,
            reward: reward(&next),
        });
        state = next;
        if is_failure(&state) {
            break;
        }
    }
    Ok(EpisodeLog {
        tick_seconds: tick,
        steps,
        final_state: state,
    })
}

/// One-step dynamics used by the planner.
pub trait TransitionModel: Sync {
    fn state_dim(&self) -> usize;
    fn next_state(&self, state: &[f64], action: f64, out: &mut [f64]);
}

/// The true simulator, for oracle comparisons.
#[derive(Clone, Copy, Debug)]
pub struct ExactModel {
    pub system: CartPole,
    pub tick: f64,
}

impl TransitionModel for ExactModel {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn next_state(&self, state: &[f64], action: f64, out: &mut [f64]) {
        let s: CartState = state.try_into().expect("cart-pole state has 4 coordinates");
        out.copy_from_slice(&self.system.step(&s, action, self.tick));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsConfig {
    /// Training-set cap; larger sets are subsampled uniformly.
    pub max_points: usize,
    /// Points used for hyperparameter fitting, drawn from the training set.
    pub hyperopt_points: usize,
    pub kernel: KernelVariant,
    pub hyperopt: HyperOptConfig,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            max_points: 300,
            hyperopt_points: 120,
            kernel: KernelVariant::SquaredExponential,
            hyperopt: HyperOptConfig {
                restarts: 2,
                max_iters: 40,
                ..HyperOptConfig::default()
            },
        }
    }
}

/// Independent GPs per state coordinate over standardized
/// `(state, action)` inputs, predicting standardized `next − state`.
/// All outputs share training inputs and hyperparameters.
#[derive(Clone, Debug)]
pub struct DynamicsModel {
    state_dim: usize,
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    target_mean: Vec<f64>,
    target_std: Vec<f64>,
    models: Vec<GpModel>,
    /// Training inputs divided by the length-scales, row-major `n × (d+1)`.
    scaled_rows: Vec<f64>,
    /// Weights `α` of all outputs, row-major `n × d`.
    weights: Vec<f64>,
}

fn mean_std(cols: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = cols.clone().count() as f64;
    let mean = cols.clone().sum::<f64>() / n;
    let var = cols.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    // Constant columns keep unit scale.
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl DynamicsModel {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn training_size(&self) -> usize {
        self.models[0].len()
    }

    /// Per-output GP in standardized coordinates.
    pub fn gp(&self, output: usize) -> &GpModel {
        &self.models[output]
    }

    pub fn hyperparams(&self) -> (&KernelSpec, f64) {
        (self.models[0].kernel(), self.models[0].noise_variance())
    }

    fn standardize(&self, state: &[f64], action: f64) -> Vec<f64> {
        state
            .iter()
            .chain(std::iter::once(&action))
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    /// Predicted mean `next − state`, via the per-output GP models.
    pub fn predict_delta(&self, state: &[f64], action: f64) -> Result<Vec<f64>> {
        ensure_dim(self.state_dim, state.len())?;
        ensure_finite(state, "state")?;
        ensure_finite(&[action], "action")?;
        let z = self.standardize(state, action);
        self.models
            .iter()
            .zip(self.target_mean.iter().zip(&self.target_std))
            .map(|(m, (tm, ts))| Ok(tm + ts * m.predict_mean(&z)?))
            .collect()
    }

    /// Same as [`predict_delta`](Self::predict_delta), sharing one kernel
    /// vector across outputs and writing into `out`.
    pub fn predict_delta_into(&self, state: &[f64], action: f64, out: &mut [f64]) {
        let d_in = self.state_dim + 1;
        let kernel = self.models[0].kernel();
        let mut z = [0.0; 16];
        for (i, v) in state.iter().chain(std::iter::once(&action)).enumerate() {
            z[i] = (v - self.input_mean[i]) / self.input_std[i] / kernel.length_scales[i];
        }
        let z = &z[..d_in];
        out.fill(0.0);
        for (row, w) in self
            .scaled_rows
            .chunks_exact(d_in)
            .zip(self.weights.chunks_exact(self.state_dim))
        {
            let r2: f64 = row.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = kernel.of_scaled_sq_dist(r2);
            for (o, wi) in out.iter_mut().zip(w) {
                *o += k * wi;
            }
        }
        for (o, (tm, ts)) in out.iter_mut().zip(self.target_mean.iter().zip(&self.target_std)) {
            *o = tm + ts * *o;
        }
    }
}

impl TransitionModel for DynamicsModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn next_state(&self, state: &[f64], action: f64, out: &mut [f64]) {
        self.predict_delta_into(state, action, out);
        for (o, s) in out.iter_mut().zip(state) {
            *o += s;
        }
    }
}

pub fn fit_dynamics(
    logs: &[EpisodeLog],
    config: &DynamicsConfig,
    warm_start: Option<&DynamicsModel>,
    rng: &mut SimRng,
) -> Result<DynamicsModel> {
    let transitions: Vec<Transition> = logs.iter().flat_map(|l| l.transitions()).collect();
    fit_transitions(&transitions, config, warm_start, rng)
}

/// Fits a [`DynamicsModel`] to `transitions`, subsampled uniformly to at
/// most `config.max_points`. Hyperparameters are fitted on a further
/// subsample of `config.hyperopt_points`; `warm_start` seeds the first
/// restart with an earlier model's hyperparameters.
pub fn fit_transitions(
    transitions: &[Transition],
    config: &DynamicsConfig,
    warm_start: Option<&DynamicsModel>,
    rng: &mut SimRng,
) -> Result<DynamicsModel> {
    if transitions.is_empty() {
        return Err(Error::EmptyData);
    }
    if config.max_points == 0 || config.hyperopt_points == 0 {
        return Err(Error::InvalidConfig("dynamics point caps must be positive".into()));
    }
    let d = transitions[0].state.len();
    if d == 0 || d + 1 > 16 {
        return Err(Error::InvalidConfig(format!("state dimension {d} unsupported")));
    }
    for t in transitions {
        ensure_dim(d, t.state.len())?;
        ensure_dim(d, t.next.len())?;
        ensure_finite(&t.state, "transition state")?;
        ensure_finite(&t.next, "transition next state")?;
        ensure_finite(&[t.action], "transition action")?;
    }
    let chosen = subsample(transitions.len(), config.max_points, rng);
    let data: Vec<&Transition> = chosen.iter().map(|&i| &transitions[i]).collect();

    let raw_inputs: Vec<Vec<f64>> = data
        .iter()
        .map(|t| t.state.iter().copied().chain(std::iter::once(t.action)).collect())
        .collect();
    let raw_targets: Vec<Vec<f64>> = data
        .iter()
        .map(|t| t.next.iter().zip(&t.state).map(|(n, s)| n - s).collect())
        .collect();
    let (input_mean, input_std): (Vec<f64>, Vec<f64>) =
        (0..=d).map(|j| mean_std(raw_inputs.iter().map(move |r| r[j]))).unzip();
    let (target_mean, target_std): (Vec<f64>, Vec<f64>) =
        (0..d).map(|j| mean_std(raw_targets.iter().map(move |r| r[j]))).unzip();
    let inputs: Vec<Vec<f64>> = raw_inputs
        .iter()
        .map(|r| {
            r.iter()
                .zip(input_mean.iter().zip(&input_std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        })
        .collect();
    let targets: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            raw_targets
                .iter()
                .map(|r| (r[j] - target_mean[j]) / target_std[j])
                .collect()
        })
        .collect();

    let hyper_idx = subsample(inputs.len(), config.hyperopt_points, rng);
    let hyper_inputs: Vec<Vec<f64>> = hyper_idx.iter().map(|&i| inputs[i].clone()).collect();
    let hyper_targets: Vec<Vec<f64>> = targets
        .iter()
        .map(|col| hyper_idx.iter().map(|&i| col[i]).collect())
        .collect();
    let warm = warm_start
        .filter(|m| m.state_dim == d)
        .map(|m| (m.models[0].kernel(), m.models[0].noise_variance()));
    let fitted = optimize_shared_hyperparams(
        config.kernel,
        &PriorMean::Constant(0.0),
        &hyper_inputs,
        &hyper_targets,
        warm,
        &config.hyperopt,
        rng,
    )?;

    let models = targets
        .into_iter()
        .map(|t| {
            GpModel::fit(
                fitted.kernel.clone(),
                fitted.noise_variance,
                PriorMean::Constant(0.0),
                inputs.clone(),
                t,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let scaled_rows = inputs
        .iter()
        .flat_map(|r| r.iter().zip(&fitted.kernel.length_scales).map(|(v, l)| v / l))
        .collect();
    let n = inputs.len();
    let mut weights = vec![0.0; n * d];
    for (j, m) in models.iter().enumerate() {
        for (i, a) in m.alpha().iter().enumerate() {
            weights[i * d + j] = *a;
        }
    }
    Ok(DynamicsModel {
        state_dim: d,
        input_mean,
        input_std,
        target_mean,
        target_std,
        models,
        scaled_rows,
        weights,
    })
}

/// Sorted indices of `min(n, cap)` distinct draws from `0..n`.
fn subsample(n: usize, cap: usize, rng: &mut SimRng) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub horizon: usize,
    pub samples: usize,
    /// Actions are drawn uniformly from `[−force_limit, force_limit]`.
    pub force_limit: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            horizon: 25,
            samples: 200,
            force_limit: 10.0,
        }
    }
}

/// Random-shooting planner: draws `samples` action sequences of length
/// `horizon` (sequence by sequence, action by action), rolls each out under
/// the model's mean prediction, and returns the first action of the
/// sequence with the largest summed `cos θ`. Reward stops accruing once a
/// rollout enters a failing state. The first best sequence wins ties.
pub fn shoot_plan(model: &dyn TransitionModel, state: &[f64], config: &PlanConfig, rng: &mut SimRng) -> Result<f64> {
    ensure_dim(STATE_DIM, model.state_dim())?;
    ensure_dim(STATE_DIM, state.len())?;
    ensure_finite(state, "planning state")?;
    if config.horizon == 0 || config.samples == 0 || !(config.force_limit > 0.0 && config.force_limit.is_finite()) {
        return Err(Error::InvalidConfig(format!("bad plan config {config:?}")));
    }
    let f = config.force_limit;
    let mut actions = vec![0.0; config.horizon];
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut cur = [0.0; STATE_DIM];
    let mut next = [0.0; STATE_DIM];
    for _ in 0..config.samples {
        for a in actions.iter_mut() {
            *a = rng.random_range(-f..=f);
        }
        cur.copy_from_slice(state);
        let mut total = 0.0;
        for &a in &actions {
            model.next_state(&cur, a, &mut next);
            if next.iter().any(|v| !v.is_finite()) || is_failure(&next) {
                break;
            }
            total += reward(&next);
            cur = next;
        }
        if total > best.0 {
            best = (total, actions[0]);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeLoopConfig {
    pub max_episodes: usize,
    /// Ticks per episode.
    pub horizon: usize,
    /// Consecutive non-failing ticks that count as success.
    pub success_steps: usize,
    pub tick_seconds: f64,
    pub system: CartPole,
    pub plan: PlanConfig,
    pub dynamics: DynamicsConfig,
}

impl Default for EpisodeLoopConfig {
    fn default() -> Self {
        EpisodeLoopConfig {
            max_episodes: 10,
            horizon: 500,
            success_steps: 500,
            tick_seconds: TICK_SECONDS,
            system: CartPole::default(),
            plan: PlanConfig::default(),
            dynamics: DynamicsConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeLoopResult {
    pub episodes_used: usize,
    pub success: bool,
    pub logs: Vec<EpisodeLog>,
    /// Model fitted after the last episode, if any was fitted.
    pub model: Option<DynamicsModel>,
}

impl EpisodeLoopResult {
    pub fn transition_count(&self) -> usize {
        self.logs.iter().map(EpisodeLog::len).sum()
    }
}

/// Episode `e` (0-based) draws its start state from stream `3e`, its model
/// fit from `3e + 1` and its actions from `3e + 2`.
fn stream(episode: usize, slot: u64) -> u64 {
    3 * episode as u64 + slot
}

/// Alternates trials and model refits: episode 1 applies uniform random
/// forces; every later episode replans with [`shoot_plan`] at each tick on
/// the model fitted to all earlier episodes. Stops at the first episode that
/// survives `success_steps` ticks, or after `max_episodes`.
pub fn episode_loop(config: &EpisodeLoopConfig, seed: u64) -> Result<EpisodeLoopResult> {
    if config.max_episodes == 0 || config.success_steps == 0 || config.success_steps > config.horizon {
        return Err(Error::InvalidConfig(format!(
            "need max_episodes ≥ 1 and 1 ≤ success_steps ≤ horizon, got {config:?}"
        )));
    }
    let system = config.system;
    let mut logs: Vec<EpisodeLog> = Vec::new();
    let mut model: Option<DynamicsModel> = None;
    for e in 0..config.max_episodes {
        let start = initial_state(&mut child_rng(seed, stream(e, 0)));
        let mut act_rng = child_rng(seed, stream(e, 2));
        let log = match &model {
            None => {
                let f = config.plan.force_limit;
                let mut random = |_: &CartState, rng: &mut SimRng| rng.random_range(-f..=f);
                record_episode_from(
                    &system,
                    start,
                    &mut random,
                    config.horizon,
                    config.tick_seconds,
                    &mut act_rng,
                )?
            }
            Some(m) => {
                let mut mpc = |s: &CartState, rng: &mut SimRng| shoot_plan(m, s, &config.plan, rng).unwrap_or(0.0);
                record_episode_from(
                    &system,
                    start,
                    &mut mpc,
                    config.horizon,
                    config.tick_seconds,
                    &mut act_rng,
                )?
            }
        };
        let success = !log.failed() && log.len() >= config.success_steps;
        logs.push(log);
        if success {
            return Ok(EpisodeLoopResult {
                episodes_used: e + 1,
                success: true,
                logs,
                model,
            });
        }
        let mut fit_rng = child_rng(seed, stream(e, 1));
        model = Some(fit_dynamics(&logs, &config.dynamics, model.as_ref(), &mut fit_rng)?);
    }
    Ok(EpisodeLoopResult {
        episodes_used: config.max_episodes,
        success: false,
        logs,
        model,
    })
}
