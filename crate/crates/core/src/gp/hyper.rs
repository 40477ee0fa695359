use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelSpec, KernelVariant};
use super::model::{GpModel, PriorMean};
use crate::error::{Error, Result};
use crate::ParamVector;

/// Box constraints in natural-log space. Equal ends pin a hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperBounds {
    pub log_signal_variance: (f64, f64),
    pub log_length_scale: (f64, f64),
    pub log_noise_variance: (f64, f64),
}

impl Default for HyperBounds {
    fn default() -> Self {
        HyperBounds {
            log_signal_variance: (1e-3f64.ln(), 1e3f64.ln()),
            log_length_scale: (1e-2f64.ln(), 1e1f64.ln()),
            log_noise_variance: (1e-8f64.ln(), 1e-1f64.ln()),
        }
    }
}

impl HyperBounds {
    fn boxes(&self, dim: usize) -> Vec<(f64, f64)> {
        let mut b = Vec::with_capacity(dim + 2);
        b.push(self.log_signal_variance);
        b.extend(std::iter::repeat_n(self.log_length_scale, dim));
        b.push(self.log_noise_variance);
        b
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("log_signal_variance", self.log_signal_variance),
            ("log_length_scale", self.log_length_scale),
            ("log_noise_variance", self.log_noise_variance),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("bad bounds for {name}: ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperOptConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Relative improvement below which an ascent run is considered converged.
    pub tol: f64,
    pub bounds: HyperBounds,
}

impl Default for HyperOptConfig {
    fn default() -> Self {
        HyperOptConfig {
            restarts: 8,
            max_iters: 100,
            tol: 1e-7,
            bounds: HyperBounds::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HyperOptResult {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub lml: f64,
    pub model: GpModel,
    /// Log marginal likelihood at each restart's starting point
    /// (`None` if that start could not be factorized).
    pub start_lml: Vec<Option<f64>>,
}

fn unpack(variant: KernelVariant, theta: &[f64]) -> (KernelSpec, f64) {
    let d = theta.len() - 2;
    let kernel = KernelSpec {
        variant,
        signal_variance: theta[0].exp(),
        length_scales: theta[1..=d].iter().map(|v| v.exp()).collect(),
    };
    (kernel, theta[d + 1].exp())
}

fn pack(kernel: &KernelSpec, noise_variance: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(kernel.dim() + 2);
    t.push(kernel.signal_variance.ln());
    t.extend(kernel.length_scales.iter().map(|l| l.ln()));
    t.push(noise_variance.ln());
    t
}

/// Result of fitting several outputs under one set of hyperparameters.
#[derive(Clone, Debug)]
pub struct SharedHyperOptResult {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    /// Sum of the per-output log marginal likelihoods.
    pub lml: f64,
    /// One model per target vector, in input order.
    pub models: Vec<GpModel>,
    pub start_lml: Vec<Option<f64>>,
}

struct Evaluated {
    theta: Vec<f64>,
    lml: f64,
    models: Vec<GpModel>,
}

/// Maximizes the log marginal likelihood over `[log σ_f², log ℓ, log σ_n²]`
/// within `config.bounds`.
///
/// Each restart runs projected, normalized gradient ascent with a
/// backtracking step. Restart 0 begins at `initial` (clamped into the
/// bounds) or at the box centre; the rest begin uniformly at random.
/// Only improving steps are accepted, so the result is never worse than any
/// start.
pub fn optimize_hyperparams<R: Rng + ?Sized>(
    variant: KernelVariant,
    prior_mean: &PriorMean,
    inputs: &[ParamVector],
    targets: &[f64],
    initial: Option<(&KernelSpec, f64)>,
    config: &HyperOptConfig,
    rng: &mut R,
) -> Result<HyperOptResult> {
    let mut res = optimize_shared_hyperparams(variant, prior_mean, inputs, &[targets.to_vec()], initial, config, rng)?;
    Ok(HyperOptResult {
        kernel: res.kernel,
        noise_variance: res.noise_variance,
        lml: res.lml,
        model: res.models.pop().expect("one target vector"),
        start_lml: res.start_lml,
    })
}

/// [`optimize_hyperparams`] for several target vectors over the same inputs,
/// maximizing the summed log marginal likelihood under tied hyperparameters.
pub fn optimize_shared_hyperparams<R: Rng + ?Sized>(
    variant: KernelVariant,
    prior_mean: &PriorMean,
    inputs: &[ParamVector],
    targets: &[Vec<f64>],
    initial: Option<(&KernelSpec, f64)>,
    config: &HyperOptConfig,
    rng: &mut R,
) -> Result<SharedHyperOptResult> {
    if inputs.is_empty() || targets.is_empty() {
        return Err(Error::EmptyModel);
    }
    config.bounds.validate()?;
    let dim = inputs[0].len();
    let boxes = config.bounds.boxes(dim);
    let clamp = |t: &mut [f64]| {
        for (v, (lo, hi)) in t.iter_mut().zip(&boxes) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let evaluate = |theta: &[f64]| -> Result<Evaluated> {
        let (kernel, noise) = unpack(variant, theta);
        let mut models = Vec::with_capacity(targets.len());
        let mut lml = 0.0;
        for t in targets {
            let model = GpModel::fit(kernel.clone(), noise, prior_mean.clone(), inputs.to_vec(), t.clone())?;
            let l = model.log_marginal_likelihood()?;
            if !l.is_finite() {
                return Err(Error::FactorizationFailure { jitter: model.jitter() });
            }
            lml += l;
            models.push(model);
        }
        Ok(Evaluated {
            theta: theta.to_vec(),
            lml,
            models,
        })
    };

    let restarts = config.restarts.max(1);
    let mut best: Option<Evaluated> = None;
    let mut start_lml = Vec::with_capacity(restarts);
    let mut last_err = None;
    for r in 0..restarts {
        let mut theta = if r == 0 {
            match initial {
                Some((k, noise)) => pack(k, noise.max(f64::MIN_POSITIVE)),
                None => boxes.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
            }
        } else {
            boxes
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                .collect()
        };
        clamp(&mut theta);
        let start = match evaluate(&theta) {
            Ok(e) => e,
            Err(e) => {
                start_lml.push(None);
                last_err = Some(e);
                continue;
            }
        };
        start_lml.push(Some(start.lml));
        let end = ascend(start, &boxes, config, &evaluate);
        if best.as_ref().is_none_or(|b| end.lml > b.lml) {
            best = Some(end);
        }
    }

    let best = match best {
        Some(b) => b,
        None => {
            return Err(last_err.unwrap_or(Error::FactorizationFailure {
                jitter: super::JITTER_MAX,
            }))
        }
    };
    let (kernel, noise_variance) = unpack(variant, &best.theta);
    Ok(SharedHyperOptResult {
        kernel,
        noise_variance,
        lml: best.lml,
        models: best.models,
        start_lml,
    })
}

fn summed_gradient(models: &[GpModel]) -> Result<Vec<f64>> {
    let mut total = models[0].lml_gradient()?;
    for m in &models[1..] {
        for (t, g) in total.iter_mut().zip(m.lml_gradient()?) {
            *t += g;
        }
    }
    Ok(total)
}

fn ascend(
    mut cur: Evaluated,
    boxes: &[(f64, f64)],
    config: &HyperOptConfig,
    evaluate: &dyn Fn(&[f64]) -> Result<Evaluated>,
) -> Evaluated {
    const MAX_STEP: f64 = 2.0;
    const MIN_STEP: f64 = 1e-8;
    let mut step = 0.5;
    for _ in 0..config.max_iters {
        let Ok(mut grad) = summed_gradient(&cur.models) else {
            break;
        };
        // Project: drop components that push against an active bound.
        for (g, (&t, &(lo, hi))) in grad.iter_mut().zip(cur.theta.iter().zip(boxes)) {
            if (t <= lo && *g < 0.0) || (t >= hi && *g > 0.0) || hi <= lo || !g.is_finite() {
                *g = 0.0;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-10 {
            break;
        }
        let mut accepted = None;
        while step >= MIN_STEP {
            let cand: Vec<f64> = cur
                .theta
                .iter()
                .zip(&grad)
                .zip(boxes)
                .map(|((t, g), (lo, hi))| (t + step * g / norm).clamp(*lo, *hi))
                .collect();
            match evaluate(&cand) {
                Ok(e) if e.lml > cur.lml => {
                    accepted = Some(e);
                    break;
                }
                _ => step *= 0.5,
            }
        }
        let Some(next) = accepted else {
            break;
        };
        let gain = next.lml - cur.lml;
        cur = next;
        step = (step * 2.0).min(MAX_STEP);
        if gain < config.tol * (1.0 + cur.lml.abs()) {
            break;
        }
    }
    cur
}
