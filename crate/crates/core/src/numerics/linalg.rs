//! Symmetric positive-definite kernels. Every inversion goes through Cholesky.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`SpdMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive-definite matrix together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    /// Validates symmetry and positive definiteness; `what` names the matrix in errors.
    pub fn new(matrix: DMatrix<f64>, what: &str) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "`{what}` is {}x{}, expected square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let asym = asymmetry(&matrix);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                what: what.to_owned(),
                asymmetry: asym,
            });
        }
        let matrix = symmetrize(&matrix);
        let chol = cholesky(&matrix, what)?;
        Ok(Self { matrix, chol })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Lower-triangular Cholesky factor `G` with `G Gᵀ = A`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }
}

/// Relative asymmetry `max|A - Aᵀ| / max(1, max|A|)`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() / scale
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// In-place `(A + Aᵀ) / 2`.
pub fn symmetrize_mut(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            what: format!("{what} (non-finite entries)"),
        });
    }
    Cholesky::new(a.clone()).ok_or_else(|| Error::NotPositiveDefinite { what: what.to_owned() })
}

/// `A⁻¹ B` for symmetric positive-definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "`{what}` is {}x{} but right-hand side has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    Ok(cholesky(a, what)?.solve(b))
}

/// Symmetrized inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(a, what)?.inverse()))
}

/// Covariance downdate `P - P Lᵀ (S + L P Lᵀ)⁻¹ L P`, symmetrized.
///
/// This is the posterior covariance of a Gaussian prior with covariance `P`
/// after observing `L x` with noise covariance `S`.
pub fn woodbury_downdate(p: &DMatrix<f64>, l: &DMatrix<f64>, s: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if l.ncols() != p.nrows() || s.nrows() != l.nrows() {
        return Err(Error::Dimension(format!(
            "`{what}`: P is {}x{}, L is {}x{}, S is {}x{}",
            p.nrows(),
            p.ncols(),
            l.nrows(),
            l.ncols(),
            s.nrows(),
            s.ncols()
        )));
    }
    let pl = p * l.transpose();
    let inner = s + l * &pl;
    let gain_t = spd_solve(&symmetrize(&inner), &pl.transpose(), what)?;
    let mut out = p - pl * gain_t;
    symmetrize_mut(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let g = DMatrix::from_fn(d, d, |_, _| next());
        &g * g.transpose() + DMatrix::identity(d, d) * 0.5
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let b = DMatrix::from_vec(3, 1, vec![1.0, -2.0, 3.5]);
        let x = spd_solve(&DMatrix::identity(3, 3), &b, "I").unwrap();
        assert_eq!(x, b);

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let inv = spd_solve(&a, &DMatrix::identity(2, 2), "diag").unwrap();
        assert!((inv[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((inv[(1, 1)] - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(inv[(0, 1)], 0.0);
    }

    #[test]
    fn solve_residual_random() {
        let a = random_spd(5, 7);
        let b = DMatrix::from_fn(5, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.3));
        let x = spd_solve(&a, &b, "A").unwrap();
        let resid = (&a * &x - &b).norm() / b.norm();
        assert!(resid < 1e-10, "residual {resid}");
    }

    #[test]
    fn non_spd_is_named() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match spd_solve(&a, &DMatrix::identity(2, 2), "Sigma[3]") {
            Err(Error::NotPositiveDefinite { what }) => assert_eq!(what, "Sigma[3]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spd_matrix_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(SpdMatrix::new(a, "A"), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn woodbury_no_information() {
        let p = random_spd(3, 1);
        let l = DMatrix::zeros(2, 3);
        let s = DMatrix::identity(2, 2);
        let out = woodbury_downdate(&p, &l, &s, "jump").unwrap();
        assert!((out - p).amax() < 1e-15);
    }

    #[test]
    fn woodbury_full_noiseless_limit() {
        let p = random_spd(3, 2);
        let l = DMatrix::identity(3, 3);
        for k in [4, 8, 12] {
            let s = DMatrix::identity(3, 3) * 10f64.powi(-k);
            let out = woodbury_downdate(&p, &l, &s, "jump").unwrap();
            assert!(out.amax() < 2.0 * 10f64.powi(-k));
        }
    }

    #[test]
    fn woodbury_matches_information_form() {
        let p = random_spd(3, 3);
        let s = random_spd(2, 4);
        let l = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 0.5, 1.1, 0.0, -0.7]);
        let out = woodbury_downdate(&p, &l, &s, "jump").unwrap();
        let info = p.clone().try_inverse().unwrap() + l.transpose() * s.clone().try_inverse().unwrap() * &l;
        let direct = info.try_inverse().unwrap();
        assert!((out - direct).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn woodbury_output_symmetric_psd(
            seed in 0u64..10_000,
            rows in prop::collection::vec(-3.0f64..3.0, 6),
        ) {
            let p = random_spd(3, seed);
            let s = random_spd(2, seed.wrapping_add(17));
            let l = DMatrix::from_row_slice(2, 3, &rows);
            let out = woodbury_downdate(&p, &l, &s, "jump").unwrap();
            prop_assert_eq!(asymmetry(&out), 0.0);
            let eig = out.symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-10);
        }

        #[test]
        fn spd_solve_residual_moderate_condition(seed in 0u64..10_000, log_cond in 0.0f64..6.0) {
            let q = random_spd(4, seed).qr().q();
            let eigs = DVector::from_fn(4, |i, _| 10f64.powf(-log_cond * i as f64 / 3.0));
            let a = symmetrize(&(&q * DMatrix::from_diagonal(&eigs) * q.transpose()));
            let b = DMatrix::from_fn(4, 2, |i, j| ((i * 3 + j) as f64).sin());
            let x = spd_solve(&a, &b, "A").unwrap();
            let resid = (&a * &x - &b).norm() / b.norm();
            prop_assert!(resid <= 1e-10, "residual {}", resid);
        }
    }
}
