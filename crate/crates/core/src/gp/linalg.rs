//! Dense lower-triangular routines for the GP factorization.

use nalgebra::{DMatrix, DVector};

/// In-place Cholesky: on success the lower triangle of `a` holds `L` with
/// `L Lᵀ = a` and the strict upper triangle is zeroed. Fails when a pivot is
/// below 1e-12 of the largest diagonal entry.
pub(crate) fn cholesky_in_place(a: &mut DMatrix<f64>) -> bool {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = max_diag * 1e-12;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if d <= floor || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    true
}

/// Solves `L y = b` in place.
pub(crate) fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `Lᵀ x = y` in place.
pub(crate) fn solve_upper_t_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &[f64]) -> DVector<f64> {
    let mut x = b.to_vec();
    solve_lower_in_place(l, &mut x);
    solve_upper_t_in_place(l, &mut x);
    DVector::from_vec(x)
}

/// `(L Lᵀ)⁻¹`, symmetric.
pub(crate) fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    // Invert L column by column, then form L⁻ᵀ L⁻¹.
    let mut linv = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        solve_lower_in_place(l, &mut e);
        for r in c..n {
            linv[(r, c)] = e[r];
        }
    }
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            // (L⁻ᵀ L⁻¹)_ij = Σ_k L⁻¹_ki L⁻¹_kj, nonzero only for k ≥ max(i, j) = i.
            let mut s = 0.0;
            for k in i..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn factor_reproduces_matrix() {
        let a = random_spd(12, 1);
        let mut l = a.clone();
        assert!(cholesky_in_place(&mut l));
        let back = &l * l.transpose();
        assert!((back - &a).abs().max() < 1e-12 * a.abs().max());
    }

    #[test]
    fn singular_matrix_fails() {
        let mut a = DMatrix::from_element(2, 2, 1.0);
        assert!(!cholesky_in_place(&mut a));
    }

    #[test]
    fn solve_and_inverse_agree_with_lu() {
        let a = random_spd(9, 2);
        let mut l = a.clone();
        assert!(cholesky_in_place(&mut l));
        let b: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let x = cholesky_solve(&l, &b);
        let x_lu = a.clone().lu().solve(&DVector::from_vec(b)).unwrap();
        assert!((x - x_lu).abs().max() < 1e-10);
        let inv = cholesky_inverse(&l);
        let inv_lu = a.lu().try_inverse().unwrap();
        assert!((inv - inv_lu).abs().max() < 1e-10);
    }
}
