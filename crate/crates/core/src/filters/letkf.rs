use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_taper, AnalysisOutput, Filter, Prepared, Transform};
use crate::augmented::AugmentedEnsemble;
use crate::error::{Error, Result};
use crate::localisation::{taper, Geometry};
use crate::obs::{ObsBatch, ObsOperator};

/// Domain-localised settings shared by the LETKF variants.
#[derive(Debug, Clone)]
pub struct Letkf {
    pub geometry: Geometry,
    /// Localisation radius; `f64::INFINITY` disables localisation.
    pub radius: f64,
    /// Grid site of each local parameter.
    pub q_sites: Vec<usize>,
    pub zeta_p: f64,
    pub zeta_q: f64,
}

/// LETKF in which global parameters are estimated by averaging the local
/// ensemble transforms over all sites.
#[derive(Debug, Clone)]
pub struct LetkfAksoy(pub Letkf);

struct SiteAnalysis {
    site: usize,
    w: DVector<f64>,
    /// `T_n^{-1/2} - I`
    t_isqm: DMatrix<f64>,
    /// owned observation index with its rows of `u_y` and `U_y`
    owned: Vec<(usize, f64, DVector<f64>)>,
    condition: f64,
}

impl Letkf {
    pub fn new(geometry: Geometry, radius: f64, q_sites: Vec<usize>, zeta_p: f64, zeta_q: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain(format!("localisation radius must be positive, got {radius}")));
        }
        if let Some(&s) = q_sites.iter().find(|&&s| s >= geometry.n_x()) {
            return Err(Error::Dimension(format!("local parameter site {s} outside the grid")));
        }
        check_taper("zeta_p", zeta_p)?;
        check_taper("zeta_q", zeta_q)?;
        Ok(Self {
            geometry,
            radius,
            q_sites,
            zeta_p,
            zeta_q,
        })
    }

    fn check(&self, ens: &AugmentedEnsemble) -> Result<()> {
        let l = ens.layout;
        if self.geometry.n_x() != l.n_x || self.q_sites.len() != l.n_q {
            return Err(Error::Dimension(format!(
                "filter set up for {} state variables and {} local parameters, ensemble has {} and {}",
                self.geometry.n_x(),
                self.q_sites.len(),
                l.n_x,
                l.n_q
            )));
        }
        Ok(())
    }

    fn site_analyses(&self, prep: &Prepared, map: &[usize]) -> Result<Vec<SiteAnalysis>> {
        let n_e = prep.stats.n_e();
        let sites: Vec<Result<Option<SiteAnalysis>>> = (0..self.geometry.n_x())
            .into_par_iter()
            .map(|n| {
                let local: Vec<(usize, f64)> = map
                    .iter()
                    .enumerate()
                    .map(|(p, &s)| (p, taper(self.geometry.distance(s, n), self.radius).sqrt()))
                    .filter(|(_, w)| *w > 0.0)
                    .collect();
                if local.is_empty() {
                    return Ok(None);
                }
                let yn = DMatrix::from_fn(local.len(), n_e, |i, j| local[i].1 * prep.y[(local[i].0, j)]);
                let dn = DVector::from_iterator(local.len(), local.iter().map(|&(p, w)| w * prep.delta[p]));
                let t = Transform::new(&(DMatrix::identity(n_e, n_e) + yn.transpose() * &yn))?;
                let w = t.solve_vec(&(yn.transpose() * &dn));
                let owned_rows: Vec<usize> = (0..local.len()).filter(|&i| map[local[i].0] == n).collect();
                let owned = if owned_rows.is_empty() {
                    Vec::new()
                } else {
                    let y_owned = DMatrix::from_fn(owned_rows.len(), n_e, |k, j| yn[(owned_rows[k], j)]);
                    // (T_n + T_n^{1/2})⁻¹ is symmetric, so rows of Y_n (T_n + T_n^{1/2})⁻¹
                    // are columns of (T_n + T_n^{1/2})⁻¹ Y_nᵀ
                    let shifted = t.solve_shifted(&y_owned.transpose());
                    owned_rows
                        .iter()
                        .enumerate()
                        .map(|(k, &i)| {
                            let u = dn[i] - yn.row(i).dot(&w.transpose());
                            (local[i].0, u, -shifted.column(k).into_owned())
                        })
                        .collect()
                };
                Ok(Some(SiteAnalysis {
                    site: n,
                    w,
                    t_isqm: t.inv_sqrt_minus_identity(),
                    owned,
                    condition: t.condition(),
                }))
            })
            .collect();
        let mut out = Vec::with_capacity(sites.len());
        for s in sites {
            if let Some(s) = s? {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// State and local-parameter increments from the per-site transforms.
    fn local_increments(&self, prep: &Prepared, sites: &[SiteAnalysis], dmean: &mut DVector<f64>, dz: &mut DMatrix<f64>) {
        let l = prep.layout;
        let z = &prep.stats.anomalies;
        let mut by_site: Vec<Option<&SiteAnalysis>> = vec![None; l.n_x];
        for s in sites {
            by_site[s.site] = Some(s);
        }
        let rows = (0..l.n_x)
            .map(|n| (n, n, 1.0))
            .chain(self.q_sites.iter().enumerate().map(|(m, &s)| (l.n_x + l.n_p + m, s, self.zeta_q)));
        for (row, site, scale) in rows {
            if let Some(s) = by_site[site] {
                let zr = z.row(row);
                dmean[row] = scale * zr.dot(&s.w.transpose());
                dz.row_mut(row).copy_from(&(zr * &s.t_isqm * scale));
            }
        }
    }

    fn prepare<'a>(&self, ens: &AugmentedEnsemble, obs: &ObsBatch, op: &'a dyn ObsOperator) -> Result<(Prepared, &'a [usize])> {
        self.check(ens)?;
        let map = op
            .local_map()
            .ok_or_else(|| Error::UnsupportedOperator("domain localisation needs a local operator".into()))?;
        Ok((Prepared::new(ens, obs, op)?, map))
    }
}

fn max_condition(sites: &[SiteAnalysis]) -> f64 {
    sites.iter().map(|s| s.condition).fold(1.0, f64::max)
}

impl Filter for Letkf {
    fn name(&self) -> &'static str {
        "letkf_hml"
    }

    fn analyse(&self, ens: &AugmentedEnsemble, obs: &ObsBatch, op: &dyn ObsOperator) -> Result<AnalysisOutput> {
        let (prep, map) = self.prepare(ens, obs, op)?;
        if obs.is_empty() {
            return prep.unchanged();
        }
        let sites = self.site_analyses(&prep, map)?;
        let l = prep.layout;
        let n_e = prep.stats.n_e();
        let mut dmean = DVector::zeros(l.n_z());
        let mut dz = DMatrix::zeros(l.n_z(), n_e);
        self.local_increments(&prep, &sites, &mut dmean, &mut dz);

        let n_y = obs.len();
        let mut u_y = DVector::zeros(n_y);
        let mut uu_y = DMatrix::zeros(n_y, n_e);
        for s in &sites {
            for (p, u, row) in &s.owned {
                u_y[*p] = *u;
                uu_y.row_mut(*p).copy_from(&row.transpose());
            }
        }
        let zp_yt = prep.zp() * prep.y.transpose();
        dmean.rows_range_mut(l.p_range()).copy_from(&(&zp_yt * u_y * self.zeta_p));
        dz.rows_range_mut(l.p_range()).copy_from(&(&zp_yt * uu_y * self.zeta_p));
        prep.finish(dmean, dz, max_condition(&sites))
    }
}

impl Filter for LetkfAksoy {
    fn name(&self) -> &'static str {
        "letkf_aksoy"
    }

    fn analyse(&self, ens: &AugmentedEnsemble, obs: &ObsBatch, op: &dyn ObsOperator) -> Result<AnalysisOutput> {
        let f = &self.0;
        let (prep, map) = f.prepare(ens, obs, op)?;
        if obs.is_empty() {
            return prep.unchanged();
        }
        let sites = f.site_analyses(&prep, map)?;
        let l = prep.layout;
        let n_e = prep.stats.n_e();
        let mut dmean = DVector::zeros(l.n_z());
        let mut dz = DMatrix::zeros(l.n_z(), n_e);
        f.local_increments(&prep, &sites, &mut dmean, &mut dz);

        // sites without observations contribute the identity transform
        let mut w = DVector::zeros(n_e);
        let mut t = DMatrix::zeros(n_e, n_e);
        for s in &sites {
            w += &s.w;
            t += &s.t_isqm;
        }
        let n = l.n_x as f64;
        let zp = prep.zp();
        dmean.rows_range_mut(l.p_range()).copy_from(&(&zp * w * (f.zeta_p / n)));
        dz.rows_range_mut(l.p_range()).copy_from(&(&zp * t * (f.zeta_p / n)));
        prep.finish(dmean, dz, max_condition(&sites))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augmented::PartitionLayout;
    use crate::filters::{Etkf, Lensrf};
    use crate::numkit::{pinv, relative_diff};
    use crate::obs::LocalObsOperator;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(seed: u64, n_x: usize, n_p: usize, n_q: usize, n_e: usize, all: bool) -> (AugmentedEnsemble, ObsBatch, LocalObsOperator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = PartitionLayout::new(n_x, n_p, n_q).unwrap();
        let e = AugmentedEnsemble::new(l, DMatrix::from_fn(l.n_z(), n_e, |_, _| rng.random_range(-2.0..2.0))).unwrap();
        let sites: Vec<usize> = (0..n_x).filter(|_| all || rng.random_bool(0.7)).collect();
        let coeffs = sites.iter().map(|_| if all { 1.0 } else { rng.random_range(0.5..2.0) }).collect();
        let op = LocalObsOperator::new(n_x, sites, coeffs).unwrap();
        let n_y = op.n_obs();
        let y = DVector::from_fn(n_y, |_, _| rng.random_range(-2.0..2.0));
        let r = DVector::from_fn(n_y, |_, _| if all { 1.0 } else { rng.random_range(0.5..2.0) });
        (e, ObsBatch::new(y, r, 0).unwrap(), op)
    }

    fn unlocalised(n_x: usize, n_q: usize) -> Letkf {
        Letkf::new(Geometry::Ring { n: n_x }, f64::INFINITY, (0..n_q).map(|m| m % n_x).collect(), 1.0, 1.0).unwrap()
    }

    #[test]
    fn unlocalised_equals_global() {
        for seed in 0..10 {
            let (e, obs, op) = system(seed, 8, 3, 4, 5, false);
            let a = Etkf.analyse(&e, &obs, &op).unwrap().ensemble.members;
            let b = unlocalised(8, 4).analyse(&e, &obs, &op).unwrap().ensemble.members;
            assert!(relative_diff(&a, &b) < 1e-10, "{}", relative_diff(&a, &b));
        }
    }

    #[test]
    fn parameter_update_matches_pseudo_inverse_form() {
        // Δp̄ = Z_p (Z_x)⁺ Δx̄ without localisation when Z_x has full column rank
        for seed in 0..10 {
            let (e, obs, op) = system(seed, 8, 3, 0, 5, false);
            let out = unlocalised(8, 0).analyse(&e, &obs, &op).unwrap().ensemble.stats().unwrap();
            let s = e.stats().unwrap();
            let l = e.layout;
            let zx = s.anomalies.rows_range(l.x_range()).into_owned();
            let zp = s.anomalies.rows_range(l.p_range()).into_owned();
            let dx = out.mean.rows_range(l.x_range()) - s.mean.rows_range(l.x_range());
            let dp = out.mean.rows_range(l.p_range()) - s.mean.rows_range(l.p_range());
            let oracle = &zp * pinv(&zx, 1e-12) * dx;
            assert!((&oracle - &dp).amax() < 1e-9 * (1.0 + dp.amax()));
            let dzx = out.anomalies.rows_range(l.x_range()) - &zx;
            let dzp = out.anomalies.rows_range(l.p_range()) - &zp;
            assert!((&zp * pinv(&zx, 1e-12) * dzx - dzp).amax() < 1e-9);
        }
    }

    #[test]
    fn compact_support_single_site() {
        let (e, _, _) = system(2, 20, 1, 0, 6, true);
        let op = LocalObsOperator::new(20, vec![7], vec![1.0]).unwrap();
        let obs = ObsBatch::new(DVector::from_element(1, 3.0), DVector::from_element(1, 1.0), 0).unwrap();
        let f = Letkf::new(Geometry::Ring { n: 20 }, 0.5, vec![], 1.0, 1.0).unwrap();
        let out = f.analyse(&e, &obs, &op).unwrap().ensemble;
        for n in 0..20 {
            let changed = out.members.row(n) != e.members.row(n);
            assert_eq!(changed, n == 7, "site {n}");
        }
    }

    #[test]
    fn matches_lensrf_without_localisation() {
        for seed in 0..5 {
            let (e, obs, op) = system(seed, 10, 2, 3, 6, false);
            let a = Lensrf::unlocalised(10, 3).analyse(&e, &obs, &op).unwrap().ensemble.members;
            let b = unlocalised(10, 3).analyse(&e, &obs, &op).unwrap().ensemble.members;
            assert!(relative_diff(&a, &b) < 1e-10);
        }
    }

    #[test]
    fn aksoy_collapses_without_localisation() {
        for seed in 0..5 {
            let (e, obs, op) = system(seed, 8, 3, 0, 5, false);
            let a = Etkf.analyse(&e, &obs, &op).unwrap().ensemble.members;
            let b = LetkfAksoy(unlocalised(8, 0)).analyse(&e, &obs, &op).unwrap().ensemble.members;
            assert!(relative_diff(&a, &b) < 1e-10);
        }
    }

    #[test]
    fn aksoy_state_update_and_freezing() {
        let (e, obs, op) = system(9, 16, 2, 0, 6, true);
        let f = Letkf::new(Geometry::Ring { n: 16 }, 5.0, vec![], 0.0, 1.0).unwrap();
        let a = f.analyse(&e, &obs, &op).unwrap().ensemble;
        let b = LetkfAksoy(f).analyse(&e, &obs, &op).unwrap().ensemble;
        assert_eq!(a.x_block(), b.x_block());
        assert_eq!(b.p_block(), e.p_block());
        assert_eq!(a.p_block(), e.p_block());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (e, obs, op) = system(4, 40, 3, 40, 10, true);
        let f = Letkf::new(Geometry::Ring { n: 40 }, 6.0, (0..40).collect(), 0.5, 0.7).unwrap();
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let parallel = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = serial.install(|| f.analyse(&e, &obs, &op).unwrap().ensemble);
        let b = parallel.install(|| f.analyse(&e, &obs, &op).unwrap().ensemble);
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_setup() {
        assert!(Letkf::new(Geometry::Ring { n: 4 }, 0.0, vec![], 1.0, 1.0).is_err());
        assert!(Letkf::new(Geometry::Ring { n: 4 }, 1.0, vec![4], 1.0, 1.0).is_err());
        let (e, obs, op) = system(1, 8, 1, 2, 4, true);
        assert!(unlocalised(8, 3).analyse(&e, &obs, &op).is_err());
    }
}
