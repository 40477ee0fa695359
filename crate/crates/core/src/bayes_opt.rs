//! Bayesian optimization: acquisition functions, continuous and discrete
//! proposal, and the sequential select–test–update loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RunAborted};
use crate::gp::{optimize_hyperparams, GpModel, HyperOptConfig, KernelSpec, KernelVariant, PriorMean};
use crate::rng::{child_rng, SimRng};
use crate::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Acquisition {
    /// Expected improvement over the incumbent plus margin `xi`.
    Ei { xi: f64 },
    /// Upper confidence bound `μ + κσ`.
    Ucb { kappa: f64 },
    /// Probability of improving on the incumbent plus margin `xi`.
    Pi { xi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSpec {
    pub function: Acquisition,
    /// Objective sense; when false, lower values are better.
    pub maximize: bool,
}

impl AcquisitionSpec {
    pub fn ei(xi: f64) -> Self {
        AcquisitionSpec {
            function: Acquisition::Ei { xi },
            maximize: true,
        }
    }

    pub fn ucb(kappa: f64) -> Self {
        AcquisitionSpec {
            function: Acquisition::Ucb { kappa },
            maximize: true,
        }
    }

    pub fn pi(xi: f64) -> Self {
        AcquisitionSpec {
            function: Acquisition::Pi { xi },
            maximize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = match self.function {
            Acquisition::Ei { xi } | Acquisition::Pi { xi } => xi,
            Acquisition::Ucb { kappa } => kappa,
        };
        if p.is_finite() && p >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "acquisition parameter must be finite and >= 0, got {p}"
            )))
        }
    }

    /// Best observed value in the objective sense.
    pub fn incumbent(&self, values: &[f64]) -> Option<f64> {
        let it = values.iter().copied();
        if self.maximize {
            it.reduce(f64::max)
        } else {
            it.reduce(f64::min)
        }
    }

    fn better(&self, a: f64, b: f64) -> bool {
        if self.maximize {
            a > b
        } else {
            a < b
        }
    }
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec::ei(0.01)
    }
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Acquisition score of a posterior `N(mean, variance)` given the incumbent
/// `best`. Larger is always more promising, whatever the objective sense.
pub fn acquisition_value(spec: &AcquisitionSpec, mean: f64, variance: f64, best: f64) -> Result<f64> {
    if !(mean.is_finite() && variance.is_finite() && best.is_finite()) {
        return Err(Error::non_finite("acquisition input"));
    }
    if variance < 0.0 {
        return Err(Error::InvalidConfig(format!("negative variance {variance}")));
    }
    let (mean, best) = if spec.maximize { (mean, best) } else { (-mean, -best) };
    let sigma = variance.sqrt();
    let v = match spec.function {
        Acquisition::Ei { xi } => {
            let gain = mean - best - xi;
            if sigma == 0.0 {
                gain.max(0.0)
            } else {
                let z = gain / sigma;
                (gain * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
            }
        }
        Acquisition::Pi { xi } => {
            let gain = mean - best - xi;
            if sigma == 0.0 {
                if gain > 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                normal_cdf(gain / sigma)
            }
        }
        Acquisition::Ucb { kappa } => mean + kappa * sigma,
    };
    Ok(v)
}

fn model_incumbent(model: &GpModel, spec: &AcquisitionSpec) -> f64 {
    spec.incumbent(model.targets()).unwrap_or(0.0)
}

fn acquisition_at(model: &GpModel, spec: &AcquisitionSpec, best: f64, x: &[f64]) -> Result<f64> {
    let p = model.predict(x)?;
    acquisition_value(spec, p.mean, p.variance, best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposeConfig {
    /// Uniform random points scored before local refinement.
    pub random_samples: usize,
    /// Best random points refined by local ascent.
    pub local_starts: usize,
    pub local_iters: usize,
}

impl Default for ProposeConfig {
    fn default() -> Self {
        ProposeConfig {
            random_samples: 1000,
            local_starts: 5,
            local_iters: 60,
        }
    }
}

/// Maximizes the acquisition over the box `bounds`.
///
/// Scores `random_samples` uniform points, then refines the best
/// `local_starts` of them by projected gradient ascent on finite-difference
/// gradients, accepting only improving steps.
pub fn propose_continuous<R: Rng + ?Sized>(
    model: &GpModel,
    acq: &AcquisitionSpec,
    bounds: &[(f64, f64)],
    config: &ProposeConfig,
    rng: &mut R,
) -> Result<(ParamVector, f64)> {
    acq.validate()?;
    if bounds.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: bounds.len(),
        });
    }
    if bounds
        .iter()
        .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(Error::InvalidConfig(
            "proposal bounds must be finite with lo <= hi".into(),
        ));
    }
    let best = model_incumbent(model, acq);
    let f = |x: &[f64]| acquisition_at(model, acq, best, x);

    let n = config.random_samples.max(1);
    let mut scored = Vec::with_capacity(n);
    for _ in 0..n {
        let x: ParamVector = bounds
            .iter()
            .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        let v = f(&x)?;
        scored.push((v, x));
    }
    // Stable sort keeps draw order among equal scores.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best_x = scored[0].1.clone();
    let mut best_v = scored[0].0;
    for (v0, x0) in scored.into_iter().take(config.local_starts) {
        let (x, v) = local_ascent(&f, x0, v0, bounds, config.local_iters)?;
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }
    Ok((best_x, best_v))
}

fn local_ascent(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    mut x: ParamVector,
    mut fx: f64,
    bounds: &[(f64, f64)],
    iters: usize,
) -> Result<(ParamVector, f64)> {
    const H: f64 = 1e-6;
    let width = bounds.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let mut step = 0.05 * width;
    let min_step = 1e-10 * width.max(1.0);
    let mut probe = x.clone();
    for _ in 0..iters {
        let mut grad = vec![0.0; x.len()];
        for i in 0..x.len() {
            let (lo, hi) = bounds[i];
            let up = (x[i] + H).min(hi);
            let dn = (x[i] - H).max(lo);
            if up <= dn {
                continue;
            }
            probe.copy_from_slice(&x);
            probe[i] = up;
            let fu = f(&probe)?;
            probe[i] = dn;
            let fd = f(&probe)?;
            let g = (fu - fd) / (up - dn);
            let blocked = (x[i] <= lo && g < 0.0) || (x[i] >= hi && g > 0.0);
            grad[i] = if blocked || !g.is_finite() { 0.0 } else { g };
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let mut moved = false;
        while step >= min_step {
            let cand: ParamVector = x
                .iter()
                .zip(&grad)
                .zip(bounds)
                .map(|((v, g), (lo, hi))| (v + step * g / norm).clamp(*lo, *hi))
                .collect();
            let fc = f(&cand)?;
            if fc > fx {
                x = cand;
                fx = fc;
                step = (2.0 * step).min(0.5 * width);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok((x, fx))
}

/// Index of the candidate with the highest acquisition; ties go to the
/// lowest index.
pub fn propose_discrete(model: &GpModel, acq: &AcquisitionSpec, candidates: &[ParamVector]) -> Result<usize> {
    acq.validate()?;
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let best = model_incumbent(model, acq);
    let mut arg = 0;
    let mut top = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let v = acquisition_at(model, acq, best, c)?;
        if v > top {
            top = v;
            arg = i;
        }
    }
    Ok(arg)
}

/// Latin hypercube sample of `n` points in `[0, 1]^d`.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<ParamVector> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(rng);
        for (p, &s) in pts.iter_mut().zip(&strata) {
            p[j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoConfig {
    pub acquisition: AcquisitionSpec,
    pub kernel: KernelVariant,
    pub initial_length_scale: f64,
    pub initial_signal_variance: f64,
    pub initial_noise_variance: f64,
    pub hyperopt: HyperOptConfig,
    pub propose: ProposeConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            acquisition: AcquisitionSpec::ei(0.01),
            kernel: KernelVariant::SquaredExponential,
            initial_length_scale: 0.2,
            initial_signal_variance: 1.0,
            initial_noise_variance: 1e-6,
            // Restart 0 is warm-started from the previous iteration's fit,
            // so a few restarts per iteration suffice.
            hyperopt: HyperOptConfig {
                restarts: 3,
                max_iters: 60,
                ..HyperOptConfig::default()
            },
            propose: ProposeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoRecord {
    /// 1-based evaluation number.
    pub iteration: usize,
    pub params: ParamVector,
    pub value: f64,
    pub best_so_far: f64,
    /// `None` during the space-filling phase.
    pub acquisition: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub dim: usize,
    pub budget: usize,
    pub seed: u64,
    pub config: BoConfig,
    pub records: Vec<BoRecord>,
    /// False when the run aborted on a non-finite objective value.
    pub valid: bool,
}

impl BoTrace {
    pub fn best(&self) -> Option<f64> {
        self.records.last().map(|r| r.best_so_far)
    }
}

/// Number of space-filling points evaluated before the model takes over.
pub fn initial_design_size(dim: usize) -> usize {
    dim.max(3)
}

/// Sequential Bayesian optimization of `objective` over `[0, 1]^dim`.
///
/// The first `max(3, dim)` evaluations follow a seeded Latin hypercube; every
/// later point maximizes the acquisition under a GP whose hyperparameters
/// are re-fitted (warm-started from the previous fit) before each proposal.
/// The GP prior mean is the mean of the observations.
#[allow(clippy::result_large_err)] // the partial trace is the point of the error
pub fn bo_run(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    dim: usize,
    budget: usize,
    config: &BoConfig,
    seed: u64,
) -> Result<BoTrace, RunAborted<BoTrace>> {
    let mut trace = BoTrace {
        dim,
        budget,
        seed,
        config: config.clone(),
        records: Vec::with_capacity(budget),
        valid: true,
    };
    let abort = |mut trace: BoTrace, error: Error| {
        trace.valid = false;
        RunAborted { error, partial: trace }
    };
    if budget == 0 || dim == 0 {
        return Err(abort(trace, Error::InvalidConfig("budget and dim must be >= 1".into())));
    }
    if let Err(e) = config.acquisition.validate() {
        return Err(abort(trace, e));
    }
    let acq = config.acquisition;
    let mut init_rng = child_rng(seed, 0);
    let mut hyper_rng = child_rng(seed, 1);
    let mut propose_rng = child_rng(seed, 2);

    let mut xs: Vec<ParamVector> = Vec::with_capacity(budget);
    let mut ys: Vec<f64> = Vec::with_capacity(budget);
    let mut best = None::<f64>;
    let mut hyper: Option<(KernelSpec, f64)> = None;

    let n_init = initial_design_size(dim).min(budget);
    let mut design = latin_hypercube(n_init, dim, &mut init_rng).into_iter();
    let bounds = vec![(0.0, 1.0); dim];

    for iteration in 1..=budget {
        let (x, acq_value) = match design.next() {
            Some(x) => (x, None),
            None => {
                let (model, fitted) = match fit_bo_model(config, &xs, &ys, hyper.as_ref(), &mut hyper_rng) {
                    Ok(m) => m,
                    Err(e) => return Err(abort(trace, e)),
                };
                hyper = Some(fitted);
                match propose_continuous(&model, &acq, &bounds, &config.propose, &mut propose_rng) {
                    Ok((x, v)) => (x, Some(v)),
                    Err(e) => return Err(abort(trace, e)),
                }
            }
        };
        let y = objective(&x);
        if !y.is_finite() {
            return Err(abort(trace, Error::ObjectiveReturnedNaN { evaluation: iteration }));
        }
        let b = match best {
            Some(b) if !acq.better(y, b) => b,
            _ => y,
        };
        best = Some(b);
        trace.records.push(BoRecord {
            iteration,
            params: x.clone(),
            value: y,
            best_so_far: b,
            acquisition: acq_value,
        });
        xs.push(x);
        ys.push(y);
    }
    Ok(trace)
}

fn fit_bo_model(
    config: &BoConfig,
    xs: &[ParamVector],
    ys: &[f64],
    warm: Option<&(KernelSpec, f64)>,
    rng: &mut SimRng,
) -> Result<(GpModel, (KernelSpec, f64))> {
    let dim = xs[0].len();
    let prior = PriorMean::Constant(ys.iter().sum::<f64>() / ys.len() as f64);
    let default_kernel = KernelSpec::isotropic(
        config.kernel,
        dim,
        config.initial_length_scale,
        config.initial_signal_variance,
    )?;
    let start = match warm {
        Some((k, n)) => (k, *n),
        None => (&default_kernel, config.initial_noise_variance),
    };
    let res = optimize_hyperparams(config.kernel, &prior, xs, ys, Some(start), &config.hyperopt, rng)?;
    Ok((res.model, (res.kernel, res.noise_variance)))
}

/// Uniform random search with the same trace format as [`bo_run`].
#[allow(clippy::result_large_err)] // the partial trace is the point of the error
pub fn random_search(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    dim: usize,
    budget: usize,
    maximize: bool,
    seed: u64,
) -> Result<BoTrace, RunAborted<BoTrace>> {
    let config = BoConfig {
        acquisition: AcquisitionSpec {
            maximize,
            ..AcquisitionSpec::default()
        },
        ..BoConfig::default()
    };
    let acq = config.acquisition;
    let mut trace = BoTrace {
        dim,
        budget,
        seed,
        config,
        records: Vec::with_capacity(budget),
        valid: true,
    };
    let mut rng = child_rng(seed, 0);
    let mut best = None::<f64>;
    for iteration in 1..=budget {
        let x: ParamVector = (0..dim).map(|_| rng.random()).collect();
        let y = objective(&x);
        if !y.is_finite() {
            trace.valid = false;
            return Err(RunAborted {
                error: Error::ObjectiveReturnedNaN { evaluation: iteration },
                partial: trace,
            });
        }
        let b = match best {
            Some(b) if !acq.better(y, b) => b,
            _ => y,
        };
        best = Some(b);
        trace.records.push(BoRecord {
            iteration,
            params: x,
            value: y,
            best_so_far: b,
            acquisition: None,
        });
    }
    Ok(trace)
}
