//! Dense linear-algebra kernels shared by the filters.
//!
//! Everything here works on `nalgebra` dynamic matrices. Only symmetric
//! matrix functions are provided: every square root evaluated by the
//! analyses is taken of a symmetric positive semi-definite matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// Relative asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as roundoff and clamped to zero.
pub const PSD_CLAMP: f64 = 1e-10;
/// Default relative singular-value cutoff for [`pinv`].
pub const PINV_RTOL: f64 = 1e-10;

/// Eigendecomposition `A = G D Gᵀ` of a symmetric matrix, eigenvalues sorted
/// in descending order.
#[derive(Debug, Clone)]
pub struct SpdFactorization {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpdFactorization {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Evaluates `G f(D) Gᵀ`.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let g = &self.eigenvectors;
        let mut scaled = g.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[j]);
        }
        scaled * g.transpose()
    }

    /// Evaluates `G f(D) Gᵀ b` without forming the matrix function.
    pub fn apply<F: Fn(f64) -> f64>(&self, f: F, b: &DMatrix<f64>) -> DMatrix<f64> {
        let g = &self.eigenvectors;
        let mut coeffs = g.tr_mul(b);
        for (i, mut row) in coeffs.row_iter_mut().enumerate() {
            row *= f(self.eigenvalues[i]);
        }
        g * coeffs
    }

    pub fn apply_vec<F: Fn(f64) -> f64>(&self, f: F, b: &DVector<f64>) -> DVector<f64> {
        let g = &self.eigenvectors;
        let mut coeffs = g.tr_mul(b);
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c *= f(self.eigenvalues[i]);
        }
        g * coeffs
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|d| d)
    }
}

fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    (a - a.transpose()).norm() / scale
}

/// Symmetric eigendecomposition.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<SpdFactorization> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "sym_eig expects a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = relative_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(SpdFactorization {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SpdFactorization {
        eigenvalues,
        eigenvectors,
    })
}

/// Symmetric eigendecomposition of a positive semi-definite matrix, with
/// roundoff-level negative eigenvalues clamped to zero.
pub fn psd_eig(a: &DMatrix<f64>) -> Result<SpdFactorization> {
    let mut fact = sym_eig(a)?;
    let scale = fact.eigenvalues.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for v in fact.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_CLAMP * scale {
                return Err(Error::Indefinite { eigenvalue: *v });
            }
            *v = 0.0;
        }
    }
    Ok(fact)
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(psd_eig(a)?.map(f64::sqrt))
}

/// Moore–Penrose pseudo-inverse; singular values below `rtol * σ_max` are
/// treated as zero.
///
/// The singular triplets are read off the symmetric eigendecomposition of
/// `[0 A; Aᵀ 0]`, whose eigenpairs are `±σ_i` with vectors `[u_i; ±v_i]/√2`.
/// nalgebra's bidiagonal SVD loses accuracy on exactly rank-deficient input.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, m);
    }
    let mut aug = DMatrix::zeros(m + n, m + n);
    aug.view_mut((0, m), (m, n)).copy_from(a);
    aug.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    let eig = aug.symmetric_eigen();
    let smax = eig.eigenvalues.max();
    if smax <= 0.0 {
        return DMatrix::zeros(n, m);
    }
    let cutoff = rtol.max(0.0) * smax;
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        if s > cutoff {
            let w = eig.eigenvectors.column(k);
            let u = w.rows(0, m);
            let v = w.rows(m, n);
            out.ger(2.0 / s, &v, &u, 1.0);
        }
    }
    out
}

/// Row means `M1/N`, dividing the row sum so that identical entries give an exact mean.
pub fn row_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.ncols() as f64;
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum() / n))
}

/// Entrywise product of two matrices of equal shape.
pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.component_mul(b)
}

/// Gaspari–Cohn fifth-order piecewise rational taper, supported on `[0, 2)`.
pub fn gaspari_cohn(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!(
            "Gaspari-Cohn argument must be nonnegative, got {x}"
        )));
    }
    Ok(gc_unchecked(x))
}

#[inline]
pub(crate) fn gc_unchecked(x: f64) -> f64 {
    if x >= 2.0 {
        0.0
    } else if x <= 1.0 {
        let x2 = x * x;
        let x3 = x2 * x;
        1.0 - 5.0 / 3.0 * x2 + 5.0 / 8.0 * x3 + 0.5 * x2 * x2 - 0.25 * x2 * x3
    } else {
        let x2 = x * x;
        let x3 = x2 * x;
        let v = 4.0 - 5.0 * x + 5.0 / 3.0 * x2 + 5.0 / 8.0 * x3 - 0.5 * x2 * x2
            + x2 * x3 / 12.0
            - 2.0 / (3.0 * x);
        v.max(0.0)
    }
}

/// Draws `mean + diag(std) ξ`, `ξ ~ N(0, I)`.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &[f64], diag_std: &[f64], rng: &mut R) -> Vec<f64> {
    assert_eq!(mean.len(), diag_std.len(), "mean/std length mismatch");
    mean.iter()
        .zip(diag_std)
        .map(|(&m, &s)| {
            let xi: f64 = rng.sample(StandardNormal);
            m + s * xi
        })
        .collect()
}

/// Frobenius norm of `a - b` relative to the norm of `b` (absolute when `b` vanishes).
pub fn relative_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let s = b.norm();
    if s > 0.0 {
        d / s
    } else {
        d
    }
}
