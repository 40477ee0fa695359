use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::kernel::KernelSpec;
use super::linalg::{cholesky_in_place, cholesky_inverse, cholesky_solve, solve_lower_in_place};
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::ParamVector;

/// First jitter tried after a failed factorization.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Scalar function of an input point.
pub type ScalarFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Prior mean function of a GP.
#[derive(Clone)]
pub enum PriorMean {
    Constant(f64),
    Function(Arc<ScalarFn>),
}

impl PriorMean {
    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        PriorMean::Function(Arc::new(f))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            PriorMean::Constant(c) => *c,
            PriorMean::Function(f) => f(x),
        }
    }
}

impl Default for PriorMean {
    fn default() -> Self {
        PriorMean::Constant(0.0)
    }
}

impl fmt::Debug for PriorMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriorMean::Constant(c) => write!(f, "Constant({c})"),
            PriorMean::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Latent-function variance, clamped to be non-negative.
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A fitted Gaussian process. Immutable once built; refitting produces a new
/// model.
#[derive(Clone, Debug)]
pub struct GpModel {
    kernel: KernelSpec,
    noise_variance: f64,
    prior_mean: PriorMean,
    inputs: Vec<ParamVector>,
    targets: Vec<f64>,
    /// Inputs divided by the length-scales, row-major `n × d`.
    scaled_inputs: Vec<f64>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Conditions the GP on `(inputs[i], targets[i])`.
    ///
    /// The Gram matrix `K + noise·I` is factorized first without jitter; on
    /// failure the diagonal is bumped by 1e-10, growing ×10 per retry up to
    /// 1e-6 before [`Error::FactorizationFailure`] is returned.
    pub fn fit(
        kernel: KernelSpec,
        noise_variance: f64,
        prior_mean: PriorMean,
        inputs: Vec<ParamVector>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        kernel.validate()?;
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be finite and non-negative, got {noise_variance}"
            )));
        }
        ensure_dim(inputs.len(), targets.len())?;
        ensure_finite(&targets, "GP target")?;
        let d = kernel.dim();
        for x in &inputs {
            ensure_dim(d, x.len())?;
            ensure_finite(x, "GP input")?;
        }

        let n = inputs.len();
        let scaled_inputs: Vec<f64> = inputs
            .iter()
            .flat_map(|x| x.iter().zip(&kernel.length_scales).map(|(v, l)| v / l))
            .collect();

        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.of_scaled_sq_dist(sq_dist(
                    &scaled_inputs[i * d..(i + 1) * d],
                    &scaled_inputs[j * d..(j + 1) * d],
                ));
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
            gram[(i, i)] += noise_variance;
        }

        let mut jitter = 0.0;
        let chol = loop {
            let mut l = gram.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    l[(i, i)] += jitter;
                }
            }
            if cholesky_in_place(&mut l) {
                break l;
            }
            jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
            // Guard against 1e-10 * 10^4 landing a hair above 1e-6.
            if jitter > JITTER_MAX * (1.0 + 1e-9) {
                return Err(Error::FactorizationFailure { jitter: JITTER_MAX });
            }
        };

        let residuals: Vec<f64> = inputs
            .iter()
            .zip(&targets)
            .map(|(x, y)| y - prior_mean.eval(x))
            .collect();
        let alpha = cholesky_solve(&chol, &residuals);

        Ok(GpModel {
            kernel,
            noise_variance,
            prior_mean,
            inputs,
            targets,
            scaled_inputs,
            chol,
            alpha,
            jitter,
        })
    }

    /// Refits with the same data and prior mean under new hyperparameters.
    pub fn refit(&self, kernel: KernelSpec, noise_variance: f64) -> Result<Self> {
        GpModel::fit(
            kernel,
            noise_variance,
            self.prior_mean.clone(),
            self.inputs.clone(),
            self.targets.clone(),
        )
    }

    /// Returns a new model with one more observation.
    pub fn with_observation(&self, x: ParamVector, y: f64) -> Result<Self> {
        let mut inputs = self.inputs.clone();
        let mut targets = self.targets.clone();
        inputs.push(x);
        targets.push(y);
        GpModel::fit(
            self.kernel.clone(),
            self.noise_variance,
            self.prior_mean.clone(),
            inputs,
            targets,
        )
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn prior_mean(&self) -> &PriorMean {
        &self.prior_mean
    }

    pub fn inputs(&self) -> &[ParamVector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Jitter that was added to the diagonal to make the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor of `K + (noise + jitter)·I`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Weights `(K + σ²I)⁻¹ (y − m(X))`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Largest observed target, if any.
    pub fn best_target(&self) -> Option<f64> {
        self.targets.iter().copied().reduce(f64::max)
    }

    fn scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.kernel.length_scales).map(|(v, l)| v / l).collect()
    }

    fn cross_covariances(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.dim();
        self.scaled_inputs
            .chunks_exact(d)
            .map(|row| self.kernel.of_scaled_sq_dist(sq_dist(row, xs)))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        ensure_dim(self.dim(), x.len())?;
        ensure_finite(x, "GP query")?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> Prediction {
        let prior = self.prior_mean.eval(x);
        let kxx = self.kernel.signal_variance;
        if self.is_empty() {
            return Prediction {
                mean: prior,
                variance: kxx,
            };
        }
        let mut v = self.cross_covariances(&self.scaled(x));
        let mean = prior + v.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum::<f64>();
        solve_lower_in_place(&self.chol, &mut v);
        let variance = (kxx - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        Prediction { mean, variance }
    }

    /// Posterior mean only; O(n) per query instead of O(n²).
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        ensure_dim(self.dim(), x.len())?;
        Ok(self.predict_mean_unchecked(x))
    }

    pub(crate) fn predict_mean_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut xs = [0.0; 16];
        let xs: &[f64] = if d <= xs.len() {
            for (slot, (v, l)) in xs.iter_mut().zip(x.iter().zip(&self.kernel.length_scales)) {
                *slot = v / l;
            }
            &xs[..d]
        } else {
            return self.predict_unchecked(x).mean;
        };
        let mut acc = 0.0;
        for (row, a) in self.scaled_inputs.chunks_exact(d).zip(self.alpha.iter()) {
            acc += a * self.kernel.of_scaled_sq_dist(sq_dist(row, xs));
        }
        self.prior_mean.eval(x) + acc
    }

    /// `log p(y | X, θ)` of the training targets.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyModel);
        }
        let n = self.len() as f64;
        let fit: f64 = self
            .inputs
            .iter()
            .zip(&self.targets)
            .zip(self.alpha.iter())
            .map(|((x, y), a)| (y - self.prior_mean.eval(x)) * a)
            .sum();
        let log_det_half: f64 = (0..self.len()).map(|i| self.chol[(i, i)].ln()).sum();
        Ok(-0.5 * fit - log_det_half - 0.5 * n * (2.0 * PI).ln())
    }

    /// Gradient of [`log_marginal_likelihood`](Self::log_marginal_likelihood)
    /// with respect to `[log σ_f², log ℓ_1, …, log ℓ_d, log σ_n²]`.
    ///
    /// Uses `∂L/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)`; the jitter is held fixed.
    pub fn lml_gradient(&self) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyModel);
        }
        let n = self.len();
        let d = self.dim();
        let kinv = cholesky_inverse(&self.chol);
        let mut grad = vec![0.0; d + 2];
        let mut kg = vec![0.0; d + 1];
        for i in 0..n {
            for j in 0..=i {
                let w = self.alpha[i] * self.alpha[j] - kinv[(i, j)];
                let w = if i == j { w } else { 2.0 * w };
                self.kernel
                    .eval_with_log_grad(&self.inputs[i], &self.inputs[j], &mut kg);
                for (g, k) in grad.iter_mut().zip(&kg) {
                    *g += w * k;
                }
            }
        }
        let noise_term: f64 = (0..n).map(|i| self.alpha[i] * self.alpha[i] - kinv[(i, i)]).sum();
        grad[d + 1] = self.noise_variance * noise_term;
        grad.iter_mut().for_each(|g| *g *= 0.5);
        Ok(grad)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelVariant;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn default_kernel(d: usize) -> KernelSpec {
        KernelSpec::isotropic(KernelVariant::SquaredExponential, d, 0.2, 1.0).unwrap()
    }

    #[test]
    fn empty_model_predicts_prior() {
        let m = GpModel::fit(
            default_kernel(2),
            1e-6,
            PriorMean::from_fn(|x| x[0] + 2.0 * x[1]),
            vec![],
            vec![],
        )
        .unwrap();
        let p = m.predict(&[0.25, 0.5]).unwrap();
        assert_eq!(p.mean, 1.25);
        assert_eq!(p.variance, 1.0);
        assert!(matches!(m.log_marginal_likelihood(), Err(Error::EmptyModel)));
        assert!(matches!(m.lml_gradient(), Err(Error::EmptyModel)));
    }

    #[test]
    fn noise_free_point_is_interpolated() {
        let m = GpModel::fit(default_kernel(1), 0.0, PriorMean::default(), vec![vec![0.3]], vec![0.7]).unwrap();
        let p = m.predict(&[0.3]).unwrap();
        assert!((p.mean - 0.7).abs() < 1e-12);
        assert!(p.variance < 1e-8);
    }

    #[test]
    fn one_point_lml_is_gaussian_log_density() {
        let (sf2, sn2) = (1.3, 0.2);
        let k = KernelSpec::isotropic(KernelVariant::SquaredExponential, 2, 0.4, sf2).unwrap();
        let m = GpModel::fit(k, sn2, PriorMean::default(), vec![vec![0.1, 0.2]], vec![0.0]).unwrap();
        let expected = -0.5 * (2.0 * PI * (sf2 + sn2)).ln();
        assert!((m.log_marginal_likelihood().unwrap() - expected).abs() < 1e-12);
        assert_eq!(m.lml_gradient().unwrap().len(), 4);
    }

    #[test]
    fn duplicate_noise_free_points_go_through_jitter() {
        let m = GpModel::fit(
            default_kernel(1),
            0.0,
            PriorMean::default(),
            vec![vec![0.5], vec![0.5]],
            vec![0.4, 0.4],
        )
        .unwrap();
        assert!(m.jitter() >= JITTER_START && m.jitter() <= JITTER_MAX);
        assert!((m.predict(&[0.5]).unwrap().mean - 0.4).abs() < 1e-6);
    }

    #[test]
    fn non_finite_targets_rejected() {
        let r = GpModel::fit(
            default_kernel(1),
            1e-6,
            PriorMean::default(),
            vec![vec![0.1]],
            vec![f64::NAN],
        );
        assert!(matches!(r, Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn cholesky_reproduces_regularized_gram() {
        let mut rng = rng_from_seed(5);
        let xs: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.random(), rng.random()]).collect();
        let ys: Vec<f64> = (0..15).map(|_| rng.random()).collect();
        let k = default_kernel(2);
        let m = GpModel::fit(k.clone(), 1e-6, PriorMean::default(), xs.clone(), ys).unwrap();
        let l = m.cholesky_factor();
        let back = l * l.transpose();
        for i in 0..15 {
            for j in 0..15 {
                let mut g = k.eval(&xs[i], &xs[j]).unwrap();
                if i == j {
                    g += 1e-6 + m.jitter();
                }
                assert!((back[(i, j)] - g).abs() <= 1e-10 * g.abs().max(1.0));
            }
        }
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let m = GpModel::fit(
            default_kernel(1),
            1e-6,
            PriorMean::Constant(0.3),
            vec![vec![0.0], vec![0.1]],
            vec![1.0, -1.0],
        )
        .unwrap();
        let p = m.predict(&[0.1 + 20.0 * 0.2]).unwrap();
        assert!((p.mean - 0.3).abs() < 1e-12);
        assert!((p.variance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_fast_path_agrees_with_full_prediction() {
        let mut rng = rng_from_seed(8);
        let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| rng.random()).collect()).collect();
        let ys: Vec<f64> = (0..30).map(|_| rng.random()).collect();
        let m = GpModel::fit(default_kernel(5), 1e-4, PriorMean::Constant(0.2), xs, ys).unwrap();
        for _ in 0..20 {
            let q: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            let a = m.predict(&q).unwrap().mean;
            let b = m.predict_mean(&q).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
