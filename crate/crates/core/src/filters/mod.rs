//! Deterministic ensemble analyses on the augmented state.
//!
//! Every filter maps a forecast ensemble to an analysis ensemble through the
//! increments `Δz̄` and `ΔZ`, returning `E^a = (z̄ + Δz̄)1ᵀ + √(N_e-1)(Z + ΔZ)`.
//! Observation errors are uncorrelated (`R` diagonal).

mod generic;
mod l2ensrf;
mod lensrf;
mod letkf;

pub use generic::{matrix_shift_equivalence_check, Ensrf, Etkf};
pub use l2ensrf::L2Ensrf;
pub use lensrf::{Lensrf, LensrfObsSpace};
pub use letkf::{Letkf, LetkfAksoy};

use nalgebra::{DMatrix, DVector};

use crate::augmented::{AugmentedEnsemble, EnsembleStats, PartitionLayout};
use crate::error::{Error, Result};
use crate::numkit::{psd_eig, SpdFactorization};
use crate::obs::{obs_anomalies, ObsBatch, ObsOperator};

/// Result of one analysis.
#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub ensemble: AugmentedEnsemble,
    pub diagnostics: AnalysisDiagnostics,
}

/// Increment norms per block `(x, p, q)` and the largest condition number
/// among the transform matrices that were factorised.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisDiagnostics {
    pub mean_increment: [f64; 3],
    pub anomaly_increment: [f64; 3],
    pub max_condition: f64,
}

pub trait Filter: Sync {
    fn name(&self) -> &'static str;

    fn analyse(
        &self,
        ens: &AugmentedEnsemble,
        obs: &ObsBatch,
        op: &dyn ObsOperator,
    ) -> Result<AnalysisOutput>;
}

/// Forecast statistics and the normalised observation-space quantities
/// `Y = R^{-1/2} H(Z)` and `δ = R^{-1/2}(y - H(x̄))`.
pub(crate) struct Prepared {
    pub layout: PartitionLayout,
    pub stats: EnsembleStats,
    pub y: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub r_inv_sqrt: DVector<f64>,
    forecast: DMatrix<f64>,
}

impl Prepared {
    pub fn new(ens: &AugmentedEnsemble, obs: &ObsBatch, op: &dyn ObsOperator) -> Result<Self> {
        let layout = ens.layout;
        if op.n_state() != layout.n_x {
            return Err(Error::Dimension(format!(
                "operator expects {} state variables, ensemble has {}",
                op.n_state(),
                layout.n_x
            )));
        }
        if op.n_obs() != obs.len() {
            return Err(Error::Dimension(format!(
                "operator yields {} observations, batch has {}",
                op.n_obs(),
                obs.len()
            )));
        }
        let stats = ens.stats()?;
        let ex = ens.members.rows_range(layout.x_range()).into_owned();
        let r_inv_sqrt = obs.r_inv_sqrt();
        let mut y = obs_anomalies(op, &ex)?;
        for (mut row, s) in y.row_iter_mut().zip(r_inv_sqrt.iter()) {
            row *= *s;
        }
        let xbar: Vec<f64> = stats.mean.rows_range(layout.x_range()).iter().copied().collect();
        let mut hx = vec![0.0; op.n_obs()];
        op.apply_into(&xbar, &mut hx);
        let delta = DVector::from_iterator(
            obs.len(),
            obs.y.iter().zip(&hx).zip(r_inv_sqrt.iter()).map(|((yo, h), s)| s * (yo - h)),
        );
        Ok(Self {
            layout,
            stats,
            y,
            delta,
            r_inv_sqrt,
            forecast: ens.members.clone(),
        })
    }

    pub fn zx(&self) -> DMatrix<f64> {
        self.stats.anomalies.rows_range(self.layout.x_range()).into_owned()
    }

    pub fn zp(&self) -> DMatrix<f64> {
        self.stats.anomalies.rows_range(self.layout.p_range()).into_owned()
    }

    pub fn zq(&self) -> DMatrix<f64> {
        self.stats.anomalies.rows_range(self.layout.q_range()).into_owned()
    }

    /// `A = R^{-1/2} H_x` as sparse rows.
    pub fn scaled_tangent(&self, op: &dyn ObsOperator) -> Vec<Vec<(usize, f64)>> {
        op.tangent_rows()
            .into_iter()
            .zip(self.r_inv_sqrt.iter())
            .map(|(row, s)| row.into_iter().map(|(n, w)| (n, w * s)).collect())
            .collect()
    }

    pub fn unchanged(&self) -> Result<AnalysisOutput> {
        let n_z = self.layout.n_z();
        let n_e = self.stats.n_e();
        self.finish(DVector::zeros(n_z), DMatrix::zeros(n_z, n_e), 1.0)
    }

    /// Assembles `E^a` from full-length increments.
    pub fn finish(&self, dmean: DVector<f64>, dz: DMatrix<f64>, max_condition: f64) -> Result<AnalysisOutput> {
        if !dmean.iter().chain(dz.iter()).all(|v| v.is_finite()) {
            return Err(Error::Analysis("non-finite increment".into()));
        }
        let l = self.layout;
        let norms = |r: std::ops::Range<usize>| {
            (
                dmean.rows_range(r.clone()).norm(),
                dz.rows_range(r).norm(),
            )
        };
        let (mx, ax) = norms(l.x_range());
        let (mp, ap) = norms(l.p_range());
        let (mq, aq) = norms(l.q_range());
        // E^a = E^f + Δz̄1ᵀ + √(N_e-1)ΔZ, so rows without increments stay bit-identical
        let scale = ((self.stats.n_e() - 1) as f64).sqrt();
        let mut members = self.forecast.clone();
        for (mut col, dcol) in members.column_iter_mut().zip(dz.column_iter()) {
            for i in 0..col.len() {
                col[i] += dmean[i] + scale * dcol[i];
            }
        }
        Ok(AnalysisOutput {
            ensemble: AugmentedEnsemble::new(l, members)?,
            diagnostics: AnalysisDiagnostics {
                mean_increment: [mx, mp, mq],
                anomaly_increment: [ax, ap, aq],
                max_condition,
            },
        })
    }
}

/// Eigendecomposition of a symmetric transform matrix `T ≥ I`, reused for every
/// matrix function of `T` needed by an analysis.
pub(crate) struct Transform {
    fact: SpdFactorization,
}

impl Transform {
    pub fn new(t: &DMatrix<f64>) -> Result<Self> {
        let fact = psd_eig(t).map_err(|e| Error::Analysis(format!("transform factorisation: {e}")))?;
        if fact.eigenvalues.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Analysis("singular transform matrix".into()));
        }
        Ok(Self { fact })
    }

    pub fn condition(&self) -> f64 {
        let e = &self.fact.eigenvalues;
        e.max() / e.min()
    }

    /// `T^{-1} b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.fact.apply_vec(|l| 1.0 / l, b)
    }

    /// `(T + T^{1/2})^{-1} B`.
    pub fn solve_shifted(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.fact.apply(|l| 1.0 / (l + l.sqrt()), b)
    }

    /// `T^{-1/2} - I`, evaluated as `G (λ^{-1/2} - 1) Gᵀ` to avoid cancellation.
    pub fn inv_sqrt_minus_identity(&self) -> DMatrix<f64> {
        self.fact.map(|l| 1.0 / l.sqrt() - 1.0)
    }
}

/// `A M` for sparse-row `A`.
pub(crate) fn sparse_left(a: &[Vec<(usize, f64)>], m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.len(), m.ncols());
    for (p, row) in a.iter().enumerate() {
        for &(n, w) in row {
            for j in 0..m.ncols() {
                out[(p, j)] += w * m[(n, j)];
            }
        }
    }
    out
}

/// `M Aᵀ` for sparse-row `A`.
pub(crate) fn sparse_right_t(m: &DMatrix<f64>, a: &[Vec<(usize, f64)>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), a.len());
    for (p, row) in a.iter().enumerate() {
        let mut col = out.column_mut(p);
        for &(n, w) in row {
            col.axpy(w, &m.column(n), 1.0);
        }
    }
    out
}

/// `Aᵀ v` for sparse-row `A` with `n_cols` columns.
pub(crate) fn sparse_t_vec(a: &[Vec<(usize, f64)>], v: &DVector<f64>, n_cols: usize) -> DVector<f64> {
    let mut out = DVector::zeros(n_cols);
    for (p, row) in a.iter().enumerate() {
        for &(n, w) in row {
            out[n] += w * v[p];
        }
    }
    out
}

/// `Aᵀ M` for sparse-row `A` with `n_cols` columns.
pub(crate) fn sparse_t_mat(a: &[Vec<(usize, f64)>], m: &DMatrix<f64>, n_cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n_cols, m.ncols());
    for (p, row) in a.iter().enumerate() {
        for &(n, w) in row {
            for j in 0..m.ncols() {
                out[(n, j)] += w * m[(p, j)];
            }
        }
    }
    out
}

fn check_taper(name: &str, zeta: f64) -> Result<()> {
    if zeta >= 0.0 && zeta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be non-negative, got {zeta}")))
    }
}
