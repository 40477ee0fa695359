use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    SquaredExponential,
    Matern52,
}

/// Stationary ARD covariance function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub variant: KernelVariant,
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
}

const SQRT5: f64 = 2.236_067_977_499_79;

impl KernelSpec {
    pub fn new(variant: KernelVariant, signal_variance: f64, length_scales: Vec<f64>) -> Result<Self> {
        let spec = KernelSpec {
            variant,
            signal_variance,
            length_scales,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same length-scale along every input dimension.
    pub fn isotropic(variant: KernelVariant, dim: usize, length_scale: f64, signal_variance: f64) -> Result<Self> {
        Self::new(variant, signal_variance, vec![length_scale; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.length_scales.is_empty() {
            return Err(Error::InvalidConfig("kernel needs at least one length-scale".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_variance) || !self.length_scales.iter().all(|&l| positive(l)) {
            return Err(Error::InvalidConfig(format!(
                "kernel hyperparameters must be finite and positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        ensure_dim(self.dim(), x.len())?;
        ensure_dim(self.dim(), y.len())?;
        ensure_finite(x, "kernel argument")?;
        ensure_finite(y, "kernel argument")?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2 = x
            .iter()
            .zip(y)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let u = (a - b) / l;
                u * u
            })
            .sum();
        self.of_scaled_sq_dist(r2)
    }

    /// Covariance as a function of the length-scale-normalized squared distance.
    #[inline]
    pub(crate) fn of_scaled_sq_dist(&self, r2: f64) -> f64 {
        match self.variant {
            KernelVariant::SquaredExponential => self.signal_variance * (-0.5 * r2).exp(),
            KernelVariant::Matern52 => {
                let r = r2.sqrt();
                self.signal_variance * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp()
            }
        }
    }

    /// Evaluates k(x, y) and writes dk/d(log signal_variance) followed by
    /// dk/d(log length_scale_j) for each j into `grad` (length 1 + dim).
    pub(crate) fn eval_with_log_grad(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(grad.len(), d + 1);
        let mut r2 = 0.0;
        for j in 0..d {
            let u = (x[j] - y[j]) / self.length_scales[j];
            grad[j + 1] = u * u;
            r2 += u * u;
        }
        let k = self.of_scaled_sq_dist(r2);
        grad[0] = k;
        // dk/dlog(l_j) = g(r) * u_j^2 where g depends on the variant.
        let g = match self.variant {
            KernelVariant::SquaredExponential => k,
            KernelVariant::Matern52 => {
                let r = r2.sqrt();
                self.signal_variance * 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp()
            }
        };
        for gj in &mut grad[1..] {
            *gj *= g;
        }
        k
    }
}

/// `k(x, y)` for the given kernel, with dimension and finiteness checks.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn se(ls: Vec<f64>) -> KernelSpec {
        KernelSpec::new(KernelVariant::SquaredExponential, 1.0, ls).unwrap()
    }

    #[test]
    fn se_self_covariance_is_signal_variance() {
        let k = se(vec![1.0, 1.0]);
        assert_eq!(k.eval(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 1.0);
    }

    #[test]
    fn se_unit_distance() {
        let k = se(vec![1.0]);
        let v = k.eval(&[0.0], &[1.0]).unwrap();
        assert!((v - 0.606_530_659_712_633_4).abs() < 1e-12);
    }

    #[test]
    fn matern52_matches_scalar_formula() {
        let mut rng = rng_from_seed(11);
        for _ in 0..100 {
            let d = rng.random_range(1..5);
            let ls: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..2.0)).collect();
            let sf2 = rng.random_range(0.1..3.0);
            let k = KernelSpec::new(KernelVariant::Matern52, sf2, ls.clone()).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            // Textbook form: sf2 * (1 + sqrt(5) r + 5 r^2 / 3) * exp(-sqrt(5) r)
            let mut r = 0.0;
            for j in 0..d {
                r += ((x[j] - y[j]) / ls[j]).powi(2);
            }
            let r = r.sqrt();
            let s5 = 5f64.sqrt();
            let expected = sf2 * (1.0 + s5 * r + 5.0 * r * r / 3.0) * (-s5 * r).exp();
            let got = k.eval(&x, &y).unwrap();
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let k = se(vec![1.0, 1.0]);
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn symmetric_and_decays() {
        for variant in [KernelVariant::SquaredExponential, KernelVariant::Matern52] {
            let k = KernelSpec::isotropic(variant, 2, 0.2, 1.5).unwrap();
            let a = [0.1, 0.9];
            let b = [0.7, 0.2];
            assert_eq!(k.eval(&a, &b).unwrap(), k.eval(&b, &a).unwrap());
            assert!(k.eval(&[0.0, 0.0], &[100.0, 0.0]).unwrap() < 1e-12);
            let v = k.eval(&a, &b).unwrap();
            assert!(v > 0.0 && v <= 1.5);
        }
    }

    #[test]
    fn log_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        for variant in [KernelVariant::SquaredExponential, KernelVariant::Matern52] {
            let k = KernelSpec::new(variant, 0.7, vec![0.3, 0.8]).unwrap();
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let y = [rng.random::<f64>(), rng.random::<f64>()];
            let mut g = [0.0; 3];
            k.eval_with_log_grad(&x, &y, &mut g);
            let h = 1e-6;
            let bump = |idx: usize, delta: f64| {
                let mut kk = k.clone();
                if idx == 0 {
                    kk.signal_variance *= delta.exp();
                } else {
                    kk.length_scales[idx - 1] *= delta.exp();
                }
                kk.eval_unchecked(&x, &y)
            };
            for (idx, &gi) in g.iter().enumerate() {
                let fd = (bump(idx, h) - bump(idx, -h)) / (2.0 * h);
                assert!((fd - gi).abs() < 1e-7, "{variant:?} {idx}: {fd} vs {gi}");
            }
        }
    }
}
