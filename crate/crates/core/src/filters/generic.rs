use nalgebra::{DMatrix, DVector};

use super::{AnalysisOutput, Filter, Prepared, Transform};
use crate::augmented::AugmentedEnsemble;
use crate::error::{Error, Result};
use crate::numkit::relative_diff;
use crate::obs::{ObsBatch, ObsOperator};

/// Global EnSRF on the whole augmented state, in observation space:
/// `T_y = I + YYᵀ`, `Δz̄ = ZYᵀ T_y⁻¹ δ`, `ΔZ = -ZYᵀ (T_y + T_y^{1/2})⁻¹ Y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ensrf;

impl Filter for Ensrf {
    fn name(&self) -> &'static str {
        "ensrf"
    }

    fn analyse(&self, ens: &AugmentedEnsemble, obs: &ObsBatch, op: &dyn ObsOperator) -> Result<AnalysisOutput> {
        let prep = Prepared::new(ens, obs, op)?;
        if obs.is_empty() {
            return prep.unchanged();
        }
        let y = &prep.y;
        let t = Transform::new(&(DMatrix::identity(y.nrows(), y.nrows()) + y * y.transpose()))?;
        let s = &prep.stats.anomalies * y.transpose();
        let dmean = &s * t.solve_vec(&prep.delta);
        let dz = -(&s * t.solve_shifted(y));
        prep.finish(dmean, dz, t.condition())
    }
}

/// Global ETKF: `T_e = I + YᵀY`, `w = T_e⁻¹ Yᵀ δ`, `Δz̄ = Zw`, `ΔZ = Z(T_e^{-1/2} - I)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Etkf;

impl Filter for Etkf {
    fn name(&self) -> &'static str {
        "etkf"
    }

    fn analyse(&self, ens: &AugmentedEnsemble, obs: &ObsBatch, op: &dyn ObsOperator) -> Result<AnalysisOutput> {
        let prep = Prepared::new(ens, obs, op)?;
        if obs.is_empty() {
            return prep.unchanged();
        }
        let y = &prep.y;
        let n_e = y.ncols();
        let t = Transform::new(&(DMatrix::identity(n_e, n_e) + y.transpose() * y))?;
        let w = t.solve_vec(&(y.transpose() * &prep.delta));
        let z = &prep.stats.anomalies;
        prep.finish(z * w, z * t.inv_sqrt_minus_identity(), t.condition())
    }
}

/// Principal inverse square root of a matrix with real positive spectrum,
/// by the Denman–Beavers iteration. Used only as a full-space reference.
fn inv_sqrt_general(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().ok_or_else(|| Error::Analysis("singular iterate".into()))?;
        let zi = z.clone().try_inverse().ok_or_else(|| Error::Analysis("singular iterate".into()))?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let step = (&z_next - &z).norm() / z_next.norm();
        y = y_next;
        z = z_next;
        if step < 1e-15 {
            break;
        }
    }
    Ok(z)
}

/// Compares the full-space perturbation update `(I + BHᵀR⁻¹H)^{-1/2} Z` with
/// the observation-space form `Z - BHᵀR^{-1/2}(T_y + T_y^{1/2})⁻¹R^{-1/2}HZ`,
/// `B = ZZᵀ`, `T_y = I + R^{-1/2}HBHᵀR^{-1/2}`. Returns the relative
/// difference and whether it is within `tol`.
pub fn matrix_shift_equivalence_check(
    z: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r_diag: &DVector<f64>,
    tol: f64,
) -> Result<(f64, bool)> {
    if h.ncols() != z.nrows() || h.nrows() != r_diag.len() {
        return Err(Error::Dimension("inconsistent system".into()));
    }
    let n_z = z.nrows();
    let n_y = h.nrows();
    let b = z * z.transpose();
    let r_inv = DMatrix::from_diagonal(&r_diag.map(|r| 1.0 / r));
    let full = inv_sqrt_general(&(DMatrix::identity(n_z, n_z) + &b * h.transpose() * &r_inv * h))? * z;

    let s = DMatrix::from_diagonal(&r_diag.map(|r| 1.0 / r.sqrt()));
    let a = &s * h;
    let t = Transform::new(&(DMatrix::identity(n_y, n_y) + &a * &b * a.transpose()))?;
    let obs_space = z - &b * a.transpose() * t.solve_shifted(&(&a * z));
    let d = relative_diff(&full, &obs_space);
    Ok((d, d <= tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmented::PartitionLayout;
    use crate::obs::LocalObsOperator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_system(b: f64, innovation: f64) -> (AugmentedEnsemble, ObsBatch) {
        // two members at ±√(b/2) give sample variance b
        let s = (b / 2.0).sqrt();
        let l = PartitionLayout::new(1, 0, 0).unwrap();
        let e = AugmentedEnsemble::new(l, DMatrix::from_row_slice(1, 2, &[-s, s])).unwrap();
        let obs = ObsBatch::new(DVector::from_vec(vec![innovation]), DVector::from_vec(vec![1.0]), 0).unwrap();
        (e, obs)
    }

    #[test]
    fn scalar_kalman_gain() {
        let b = 3.0;
        let (e, obs) = scalar_system(b, 2.0);
        let op = LocalObsOperator::identity(1);
        for f in [&Ensrf as &dyn Filter, &Etkf] {
            let out = f.analyse(&e, &obs, &op).unwrap();
            let s = out.ensemble.stats().unwrap();
            assert!((s.mean[0] - 2.0 * b / (1.0 + b)).abs() < 1e-14);
            let spread = s.anomalies[(0, 1)] / e.stats().unwrap().anomalies[(0, 1)];
            assert!((spread - (1.0 + b).powf(-0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_inputs_leave_ensemble() {
        let l = PartitionLayout::new(2, 1, 0).unwrap();
        let e = AugmentedEnsemble::new(l, DMatrix::from_fn(3, 4, |i, _| i as f64)).unwrap();
        let op = LocalObsOperator::identity(2);
        let obs = ObsBatch::new(DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![1.0, 1.0]), 0).unwrap();
        for f in [&Ensrf as &dyn Filter, &Etkf] {
            assert_eq!(f.analyse(&e, &obs, &op).unwrap().ensemble, e);
        }
    }

    fn random_system(seed: u64) -> (AugmentedEnsemble, ObsBatch, LocalObsOperator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = PartitionLayout::new(4, 1, 1).unwrap();
        let e = AugmentedEnsemble::new(l, DMatrix::from_fn(6, 4, |_, _| rng.random_range(-2.0..2.0))).unwrap();
        let sites = vec![0, 2, 3];
        let coeffs = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
        let op = LocalObsOperator::new(4, sites, coeffs).unwrap();
        let y = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let r = DVector::from_fn(3, |_, _| rng.random_range(0.5..2.0));
        (e, ObsBatch::new(y, r, 0).unwrap(), op)
    }

    #[test]
    fn ensrf_matches_full_space_update() {
        for seed in 0..10 {
            let (e, obs, op) = random_system(seed);
            let out = Ensrf.analyse(&e, &obs, &op).unwrap().ensemble.stats().unwrap();
            let s = e.stats().unwrap();
            let b = &s.anomalies * s.anomalies.transpose();
            let mut h = DMatrix::zeros(3, 6);
            h.view_mut((0, 0), (3, 4)).copy_from(&crate::obs::tangent(&op));
            let r_inv = DMatrix::from_diagonal(&obs.r_diag.map(|r| 1.0 / r));
            let innov = &obs.y - &h * &s.mean;
            let gain_denominator = (&h * &b * h.transpose() + DMatrix::from_diagonal(&obs.r_diag))
                .try_inverse()
                .unwrap();
            let mean = &s.mean + &b * h.transpose() * gain_denominator * innov;
            assert!((&mean - &out.mean).amax() < 1e-10);
            let full = inv_sqrt_general(&(DMatrix::identity(6, 6) + &b * h.transpose() * &r_inv * &h)).unwrap()
                * &s.anomalies;
            assert!(relative_diff(&full, &out.anomalies) < 1e-10);
        }
    }

    #[test]
    fn etkf_equals_ensrf() {
        for seed in 0..20 {
            let (e, obs, op) = random_system(seed);
            let a = Ensrf.analyse(&e, &obs, &op).unwrap().ensemble.members;
            let b = Etkf.analyse(&e, &obs, &op).unwrap().ensemble.members;
            assert!(relative_diff(&a, &b) < 1e-10);
        }
    }

    #[test]
    fn shift_lemma_cases() {
        let r = DVector::from_vec(vec![1.0, 2.0]);
        let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let (d, ok) = matrix_shift_equivalence_check(&DMatrix::zeros(3, 4), &h, &r, 1e-9).unwrap();
        assert!(ok && d == 0.0);
        // scalar: (1 + b/r)^{-1/2} z
        let z = DMatrix::from_row_slice(1, 2, &[0.5, -0.5]);
        let (d, ok) = matrix_shift_equivalence_check(&z, &DMatrix::identity(1, 1), &DVector::from_vec(vec![2.0]), 1e-12).unwrap();
        assert!(ok, "{d}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = DMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
        let h = DMatrix::from_fn(5, 8, |_, _| rng.random_range(-1.0..1.0));
        let r = DVector::from_fn(5, |_, _| rng.random_range(0.5..2.0));
        let (d, ok) = matrix_shift_equivalence_check(&z, &h, &r, 1e-9).unwrap();
        assert!(ok, "{d}");
    }
}
