use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_taper, sparse_left, sparse_right_t, AnalysisOutput, Filter, Prepared, Transform};
use crate::augmented::AugmentedEnsemble;
use crate::error::{Error, Result};
use crate::localisation::{ring_distance, taper};
use crate::obs::{ObsBatch, ObsOperator};

/// Hybrid localisation EnSRF on a layer-major column grid: domain
/// localisation over the `n_h` horizontal columns (radius `r_h`), covariance
/// localisation in the vertical through `ρ_xx`, `ρ_px` and `ρ_qx`. Local
/// parameters are attached to the column given by `q_columns`; global
/// parameters are updated once from the assembled state-space increments.
#[derive(Debug, Clone)]
pub struct L2Ensrf {
    pub rho_xx: DMatrix<f64>,
    pub rho_px: DMatrix<f64>,
    pub rho_qx: DMatrix<f64>,
    pub n_h: usize,
    pub q_columns: Vec<usize>,
    pub r_h: f64,
    pub zeta_p: f64,
    pub zeta_q: f64,
}

struct ColumnAnalysis {
    local: Vec<usize>,
    a: DVector<f64>,
    aa: DMatrix<f64>,
    condition: f64,
}

impl L2Ensrf {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rho_xx: DMatrix<f64>,
        rho_px: DMatrix<f64>,
        rho_qx: DMatrix<f64>,
        n_h: usize,
        q_columns: Vec<usize>,
        r_h: f64,
        zeta_p: f64,
        zeta_q: f64,
    ) -> Result<Self> {
        if !(r_h > 0.0) {
            return Err(Error::Domain(format!("horizontal radius must be positive, got {r_h}")));
        }
        if n_h == 0 || rho_xx.nrows() % n_h != 0 {
            return Err(Error::Dimension(format!("{} state variables do not fill {n_h} columns", rho_xx.nrows())));
        }
        if let Some(c) = q_columns.iter().find(|&&c| c >= n_h) {
            return Err(Error::Dimension(format!("local parameter column {c} outside the grid")));
        }
        check_taper("zeta_p", zeta_p)?;
        check_taper("zeta_q", zeta_q)?;
        Ok(Self {
            rho_xx,
            rho_px,
            rho_qx,
            n_h,
            q_columns,
            r_h,
            zeta_p,
            zeta_q,
        })
    }

    /// All-ones localisation, no horizontal localisation, unit tapering.
    pub fn unlocalised(n_x: usize, n_p: usize, n_h: usize, q_columns: Vec<usize>) -> Result<Self> {
        let n_q = q_columns.len();
        Self::new(
            DMatrix::from_element(n_x, n_x, 1.0),
            DMatrix::from_element(n_p, n_x, 1.0),
            DMatrix::from_element(n_q, n_x, 1.0),
            n_h,
            q_columns,
            f64::INFINITY,
            1.0,
            1.0,
        )
    }

    fn check(&self, ens: &AugmentedEnsemble) -> Result<()> {
        let l = ens.layout;
        let ok = self.rho_xx.shape() == (l.n_x, l.n_x)
            && self.rho_px.shape() == (l.n_p, l.n_x)
            && self.rho_qx.shape() == (l.n_q, l.n_x)
            && self.q_columns.len() == l.n_q;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "localisation matrices do not match layout ({}, {}, {})",
                l.n_x, l.n_p, l.n_q
            )))
        }
    }
}

impl Filter for L2Ensrf {
    fn name(&self) -> &'static str {
        "l2ensrf_hml"
    }

    fn analyse(&self, ens: &AugmentedEnsemble, obs: &ObsBatch, op: &dyn ObsOperator) -> Result<AnalysisOutput> {
        self.check(ens)?;
        let cols = op
            .obs_columns(self.n_h)
            .ok_or_else(|| Error::UnsupportedOperator("observations are not attached to columns".into()))?;
        let prep = Prepared::new(ens, obs, op)?;
        if obs.is_empty() {
            return prep.unchanged();
        }
        let l = prep.layout;
        let n_e = prep.stats.n_e();
        let n_h = self.n_h;

        let a = prep.scaled_tangent(op);
        let zx = prep.zx();
        let b_xx = (&zx * zx.transpose()).component_mul(&self.rho_xx);
        let bat = sparse_right_t(&b_xx, &a);
        let aba = sparse_left(&a, &bat);
        let b_qx_at = sparse_right_t(&(prep.zq() * zx.transpose()).component_mul(&self.rho_qx), &a);

        let columns: Vec<Result<Option<ColumnAnalysis>>> = (0..n_h)
            .into_par_iter()
            .map(|h| {
                let (local, w): (Vec<usize>, Vec<f64>) = cols
                    .iter()
                    .enumerate()
                    .map(|(p, &c)| (p, taper(ring_distance(c, h, n_h) as f64, self.r_h).sqrt()))
                    .filter(|(_, w)| *w > 0.0)
                    .unzip();
                if local.is_empty() {
                    return Ok(None);
                }
                let k = local.len();
                let t = DMatrix::from_fn(k, k, |i, j| {
                    let v = w[i] * aba[(local[i], local[j])] * w[j];
                    if i == j {
                        1.0 + v
                    } else {
                        v
                    }
                });
                let t = Transform::new(&t)?;
                let wd = DVector::from_fn(k, |i, _| w[i] * prep.delta[local[i]]);
                let wy = DMatrix::from_fn(k, n_e, |i, j| w[i] * prep.y[(local[i], j)]);
                let mut av = t.solve_vec(&wd);
                let mut aa = -t.solve_shifted(&wy);
                for i in 0..k {
                    av[i] *= w[i];
                    aa.row_mut(i).scale_mut(w[i]);
                }
                Ok(Some(ColumnAnalysis {
                    local,
                    a: av,
                    aa,
                    condition: t.condition(),
                }))
            })
            .collect();

        let mut dmean = DVector::zeros(l.n_z());
        let mut dz = DMatrix::zeros(l.n_z(), n_e);
        let mut v_x = DVector::zeros(l.n_x);
        let mut vv_x = DMatrix::zeros(l.n_x, n_e);
        let mut condition = 1.0f64;
        for (h, col) in columns.into_iter().enumerate() {
            let Some(col) = col? else { continue };
            condition = condition.max(col.condition);
            let gather = |src: &DMatrix<f64>, row: usize| {
                DVector::from_iterator(col.local.len(), col.local.iter().map(|&p| src[(row, p)]))
            };
            for n in (h..l.n_x).step_by(n_h) {
                let g = gather(&bat, n);
                dmean[n] = g.dot(&col.a);
                dz.row_mut(n).copy_from(&(g.transpose() * &col.aa));
            }
            for (m, _) in self.q_columns.iter().enumerate().filter(|(_, &c)| c == h) {
                let g = gather(&b_qx_at, m) * self.zeta_q;
                let row = l.n_x + l.n_p + m;
                dmean[row] = g.dot(&col.a);
                dz.row_mut(row).copy_from(&(g.transpose() * &col.aa));
            }
            // rows of Aᵀ a_h and Aᵀ A_h falling in column h
            for (i, &p) in col.local.iter().enumerate() {
                for &(n, wt) in &a[p] {
                    if n % n_h == h {
                        v_x[n] += wt * col.a[i];
                        let r = col.aa.row(i) * wt;
                        let mut dst = vv_x.row_mut(n);
                        dst += r;
                    }
                }
            }
        }
        let b_px = (prep.zp() * zx.transpose()).component_mul(&self.rho_px);
        dmean.rows_range_mut(l.p_range()).copy_from(&(&b_px * v_x * self.zeta_p));
        dz.rows_range_mut(l.p_range()).copy_from(&(&b_px * vv_x * self.zeta_p));
        prep.finish(dmean, dz, condition)
    }
}
