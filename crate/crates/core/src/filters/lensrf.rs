use nalgebra::DMatrix;

use super::{check_taper, sparse_left, sparse_right_t, AnalysisOutput, Filter, Prepared, Transform};
use crate::augmented::{AugmentedEnsemble, PartitionLayout};
use crate::error::{Error, Result};
use crate::obs::{ObsBatch, ObsOperator};

fn check_shapes(layout: &PartitionLayout, rho_xx: &DMatrix<f64>, rho_qx: &DMatrix<f64>) -> Result<()> {
    if rho_xx.shape() != (layout.n_x, layout.n_x) {
        return Err(Error::Dimension(format!(
            "rho_xx is {:?}, state has {} variables",
            rho_xx.shape(),
            layout.n_x
        )));
    }
    if rho_qx.shape() != (layout.n_q, layout.n_x) {
        return Err(Error::Dimension(format!(
            "rho_qx is {:?}, expected ({}, {})",
            rho_qx.shape(),
            layout.n_q,
            layout.n_x
        )));
    }
    Ok(())
}

fn assemble(
    layout: PartitionLayout,
    dx: (nalgebra::DVector<f64>, DMatrix<f64>),
    dp: (nalgebra::DVector<f64>, DMatrix<f64>),
    dq: (nalgebra::DVector<f64>, DMatrix<f64>),
    n_e: usize,
) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
    let n_z = layout.n_z();
    let mut dmean = nalgebra::DVector::zeros(n_z);
    let mut dz = DMatrix::zeros(n_z, n_e);
    for (range, (m, z)) in [(layout.x_range(), dx), (layout.p_range(), dp), (layout.q_range(), dq)] {
        dmean.rows_range_mut(range.clone()).copy_from(&m);
        dz.rows_range_mut(range).copy_from(&z);
    }
    (dmean, dz)
}

/// Covariance-localised EnSRF on the augmented state with a tangent-linear
/// observation operator. `ρ_xx` localises the state block, `ρ_qx` the local
/// parameters; global parameters are updated without localisation and
/// tapered by `ζ_p`, local parameters tapered by `ζ_q`.
#[derive(Debug, Clone)]
pub struct Lensrf {
    pub rho_xx: DMatrix<f64>,
    pub rho_qx: DMatrix<f64>,
    pub zeta_p: f64,
    pub zeta_q: f64,
}

impl Lensrf {
    pub fn new(rho_xx: DMatrix<f64>, rho_qx: DMatrix<f64>, zeta_p: f64, zeta_q: f64) -> Result<Self> {
        check_taper("zeta_p", zeta_p)?;
        check_taper("zeta_q", zeta_q)?;
        Ok(Self {
            rho_xx,
            rho_qx,
            zeta_p,
            zeta_q,
        })
    }

    /// All-ones localisation with unit tapering.
    pub fn unlocalised(n_x: usize, n_q: usize) -> Self {
        Self {
            rho_xx: DMatrix::from_element(n_x, n_x, 1.0),
            rho_qx: DMatrix::from_element(n_q, n_x, 1.0),
            zeta_p: 1.0,
            zeta_q: 1.0,
        }
    }
}

impl Filter for Lensrf {
    fn name(&self) -> &'static str {
        "lensrf_hml"
    }

    fn analyse(&self, ens: &AugmentedEnsemble, obs: &ObsBatch, op: &dyn ObsOperator) -> Result<AnalysisOutput> {
        check_shapes(&ens.layout, &self.rho_xx, &self.rho_qx)?;
        let prep = Prepared::new(ens, obs, op)?;
        if obs.is_empty() {
            return prep.unchanged();
        }
        let n_x = prep.layout.n_x;
        let a = prep.scaled_tangent(op);
        let zx = prep.zx();
        let b_xx = (&zx * zx.transpose()).component_mul(&self.rho_xx);
        let bat = sparse_right_t(&b_xx, &a);
        let aba = sparse_left(&a, &bat);
        let n_y = aba.nrows();
        let t = Transform::new(&(DMatrix::identity(n_y, n_y) + aba))?;
        let ty_delta = t.solve_vec(&prep.delta);
        let ty_y = -t.solve_shifted(&prep.y);

        // u_x = Aᵀ T⁻¹ δ, U_x = -Aᵀ (T + T^{1/2})⁻¹ Y
        let u_x = super::sparse_t_vec(&a, &ty_delta, n_x);
        let uu_x = super::sparse_t_mat(&a, &ty_y, n_x);

        let dx = (&bat * &ty_delta, &bat * &ty_y);
        let zp = prep.zp();
        let zxt_u = zx.transpose() * &u_x;
        let zxt_uu = zx.transpose() * &uu_x;
        let dp = (&zp * zxt_u * self.zeta_p, &zp * zxt_uu * self.zeta_p);
        let zq = prep.zq();
        let b_qx = (&zq * zx.transpose()).component_mul(&self.rho_qx);
        let dq = (&b_qx * &u_x * self.zeta_q, &b_qx * &uu_x * self.zeta_q);

        let (dmean, dz) = assemble(prep.layout, dx, dp, dq, prep.stats.n_e());
        prep.finish(dmean, dz, t.condition())
    }
}

/// The same analysis written entirely in observation space, transposing the
/// localisation through the observation map `h`. Requires a fully local
/// operator.
#[derive(Debug, Clone)]
pub struct LensrfObsSpace {
    pub rho_xx: DMatrix<f64>,
    pub rho_qx: DMatrix<f64>,
    pub zeta_p: f64,
    pub zeta_q: f64,
}

impl LensrfObsSpace {
    pub fn new(rho_xx: DMatrix<f64>, rho_qx: DMatrix<f64>, zeta_p: f64, zeta_q: f64) -> Result<Self> {
        check_taper("zeta_p", zeta_p)?;
        check_taper("zeta_q", zeta_q)?;
        Ok(Self {
            rho_xx,
            rho_qx,
            zeta_p,
            zeta_q,
        })
    }

    pub fn unlocalised(n_x: usize, n_q: usize) -> Self {
        let l = Lensrf::unlocalised(n_x, n_q);
        Self {
            rho_xx: l.rho_xx,
            rho_qx: l.rho_qx,
            zeta_p: 1.0,
            zeta_q: 1.0,
        }
    }
}

impl Filter for LensrfObsSpace {
    fn name(&self) -> &'static str {
        "lensrf_hml_obs"
    }

    fn analyse(&self, ens: &AugmentedEnsemble, obs: &ObsBatch, op: &dyn ObsOperator) -> Result<AnalysisOutput> {
        let map = op
            .local_map()
            .ok_or_else(|| Error::UnsupportedOperator("observation-space analysis needs a local operator".into()))?
            .to_vec();
        check_shapes(&ens.layout, &self.rho_xx, &self.rho_qx)?;
        let prep = Prepared::new(ens, obs, op)?;
        if obs.is_empty() {
            return prep.unchanged();
        }
        let n_y = map.len();
        let y = &prep.y;
        let rho_yy = DMatrix::from_fn(n_y, n_y, |p, q| self.rho_xx[(map[p], map[q])]);
        let t = Transform::new(&(DMatrix::identity(n_y, n_y) + (y * y.transpose()).component_mul(&rho_yy)))?;
        let u_y = t.solve_vec(&prep.delta);
        let uu_y = -t.solve_shifted(y);

        let zx = prep.zx();
        let rho_xy = DMatrix::from_fn(prep.layout.n_x, n_y, |n, p| self.rho_xx[(n, map[p])]);
        let b_xy = (&zx * y.transpose()).component_mul(&rho_xy);
        let dx = (&b_xy * &u_y, &b_xy * &uu_y);
        let b_py = prep.zp() * y.transpose();
        let dp = (&b_py * &u_y * self.zeta_p, &b_py * &uu_y * self.zeta_p);
        let rho_qy = DMatrix::from_fn(prep.layout.n_q, n_y, |m, p| self.rho_qx[(m, map[p])]);
        let b_qy = (prep.zq() * y.transpose()).component_mul(&rho_qy);
        let dq = (&b_qy * &u_y * self.zeta_q, &b_qy * &uu_y * self.zeta_q);

        let (dmean, dz) = assemble(prep.layout, dx, dp, dq, prep.stats.n_e());
        prep.finish(dmean, dz, t.condition())
    }
}
