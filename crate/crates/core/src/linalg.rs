//! Small dense-matrix helpers shared by the rest of the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices. Systems in this
//! crate are desk-scale (p, r <= 10 or so), so the helpers favor clarity and
//! certified inequalities over speed.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex<f64>>;

/// Operator 2-norm (largest singular value).
pub fn op_norm_2(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Operator infinity-norm (max absolute row sum) of a complex matrix.
pub fn inf_norm_c(m: &CMatrix) -> f64 {
    (0..m.nrows())
        .map(|i| m.row(i).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Certified upper bound on the (infinity -> 2) operator norm.
///
/// For `v` with unit sup-norm, the i-th entry of `Mv` is at most the i-th
/// absolute row sum, so the Euclidean norm of the row-sum vector dominates
/// the true norm. The bound is exact for diagonal matrices (in particular
/// `I`, where it evaluates to sqrt(p)).
pub fn inf_to_2_norm_ub_c(m: &CMatrix) -> f64 {
    (0..m.nrows())
        .map(|i| {
            let s: f64 = m.row(i).iter().map(|z| z.norm()).sum();
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

/// Real-matrix variant of [`inf_to_2_norm_ub_c`].
pub fn inf_to_2_norm_ub(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| {
            let s: f64 = m.row(i).iter().map(|x| x.abs()).sum();
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

pub fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() == m.ncols() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// Symmetrizes `m` in place; returns the operator norm of the asymmetric part.
pub fn symmetrize(m: &mut DMatrix<f64>) -> f64 {
    let sym = (m.clone() + m.transpose()) * 0.5;
    let skew = op_norm_2(&(m.clone() - &sym));
    *m = sym;
    skew
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn sym_lambda_min(m: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(m).first().unwrap()
}

pub fn sym_lambda_max(m: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(m).last().unwrap()
}

/// Symmetric PSD square root via eigendecomposition.
///
/// Eigenvalues in `[-neg_tol, 0)` are clipped to zero; anything below
/// `-neg_tol` is rejected as genuinely indefinite. `neg_tol` is scaled by the
/// largest eigenvalue magnitude so the guard tracks the matrix scale.
pub fn sym_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m, "matrix for square root")?;
    let eig = m.clone().symmetric_eigen();
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let neg_tol = 1e-12 * lam_max.max(1.0);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -neg_tol {
            return Err(Error::Numerical(format!(
                "matrix is not positive semidefinite: eigenvalue {v}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&vals);
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// x' M x for square M.
pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Stacks `[I_p; L]` into the (p+r) x p extended feedback matrix.
pub fn extended_feedback(l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = l.ncols();
    let r = l.nrows();
    let mut out = DMatrix::zeros(p + r, p);
    out.view_mut((0, 0), (p, p)).copy_from(&DMatrix::identity(p, p));
    out.view_mut((p, 0), (r, p)).copy_from(l);
    out
}

/// Real matrix promoted to complex entries.
pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| Complex::new(m[(i, j)], 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inf_to_2_bound_is_exact_for_identity() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert_relative_eq!(inf_to_2_norm_ub(&id), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn inf_to_2_bound_dominates_monte_carlo_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0));
            let ub = inf_to_2_norm_ub(&m);
            for _ in 0..200 {
                let v = DVector::from_fn(3, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
                assert!((&m * &v).norm() <= ub + 1e-12);
            }
        }
    }

    #[test]
    fn sqrt_roundtrip() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = sym_sqrt_psd(&m).unwrap();
        assert_relative_eq!((&s * &s - &m).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(sym_sqrt_psd(&m).is_err());
    }

    #[test]
    fn extended_feedback_stacks_identity_on_top() {
        let l = DMatrix::from_row_slice(1, 2, &[0.3, -0.4]);
        let ext = extended_feedback(&l);
        assert_eq!(ext.shape(), (3, 2));
        assert_eq!(ext[(0, 0)], 1.0);
        assert_eq!(ext[(1, 1)], 1.0);
        assert_eq!(ext[(0, 1)], 0.0);
        assert_eq!(ext[(2, 0)], 0.3);
        assert_eq!(ext[(2, 1)], -0.4);
    }
}
