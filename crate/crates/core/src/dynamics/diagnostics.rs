use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::integrate::{integrate, Rk4, Rk4Work};
use super::surrogate::{Forcing, SurrogateParams};
use super::Tendency;
use crate::error::{Error, Result};

/// Free-run statistics of a model.
#[derive(Debug, Clone)]
pub struct Climatology {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// State at the end of the run, on the attractor.
    pub final_state: Vec<f64>,
}

impl Climatology {
    /// Average of the per-variable standard deviations.
    pub fn mean_std(&self) -> f64 {
        self.std.iter().sum::<f64>() / self.std.len() as f64
    }
}

/// Per-variable mean and standard deviation over `steps` steps after `spinup`.
pub fn climatology<T: Tendency + ?Sized>(
    model: &T,
    x0: &[f64],
    rk: &Rk4,
    spinup: usize,
    steps: usize,
) -> Result<Climatology> {
    let n = model.dim();
    let mut x = x0.to_vec();
    integrate(model, rk, &mut x, spinup)?;
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut w = Rk4Work::default();
    for _ in 0..steps {
        rk.step_with(model, &mut x, &mut w);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        for i in 0..n {
            sum[i] += x[i];
            sq[i] += x[i] * x[i];
        }
    }
    let k = steps.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / k).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / k - m * m).max(0.0).sqrt())
        .collect();
    Ok(Climatology {
        mean,
        std,
        final_state: x,
    })
}

/// Which coefficients are perturbed in a skill experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbedBlock {
    Monomials,
    Forcing,
}

#[derive(Debug, Clone)]
pub struct SkillConfig {
    pub lead_time: f64,
    pub trials: usize,
    pub block: PerturbedBlock,
    pub sigma: f64,
    /// Model steps between successive initial conditions on the reference trajectory.
    pub spacing: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SkillReport {
    /// Mean normalised RMSE over the trials that did not diverge.
    pub mean_rmse: f64,
    pub trial_rmse: Vec<f64>,
    pub diverged_trials: usize,
}

impl SkillReport {
    pub fn diverged(&self) -> bool {
        self.diverged_trials > 0
    }
}

fn perturb_params(p: &SurrogateParams, block: PerturbedBlock, sigma: f64, rng: &mut ChaCha8Rng) -> SurrogateParams {
    let mut q = p.clone();
    let mut jitter = |v: &mut [f64]| {
        for c in v.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *c += sigma * e;
        }
    };
    match block {
        PerturbedBlock::Monomials => jitter(&mut q.monomials),
        PerturbedBlock::Forcing => match &mut q.forcing {
            Forcing::Local(f) => jitter(f),
            Forcing::Separable {
                vertical,
                horizontal,
            } => {
                jitter(vertical);
                jitter(horizontal);
            }
        },
    }
    q
}

/// Normalised forecast error beyond which a trial counts as diverged. Two
/// unrelated states on the attractor are about √2 apart.
const BLOWUP_RMSE: f64 = 100.0;

/// Forecast error of the surrogate with randomly perturbed coefficients,
/// against the reference model, normalised per variable by the climatological std.
pub fn forecast_skill<T: Tendency + ?Sized>(
    params: &SurrogateParams,
    reference: &T,
    clim: &Climatology,
    rk: &Rk4,
    cfg: &SkillConfig,
) -> Result<SkillReport> {
    let steps = (cfg.lead_time / rk.dt).round() as usize;
    let mut x = clim.final_state.clone();
    let mut starts = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        integrate(reference, rk, &mut x, cfg.spacing)?;
        starts.push(x.clone());
    }
    let results: Vec<Option<f64>> = starts
        .into_par_iter()
        .enumerate()
        .map(|(trial, x0)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(trial as u64);
            let perturbed = perturb_params(params, cfg.block, cfg.sigma, &mut rng);
            let mut xt = x0.clone();
            let mut xs = x0;
            integrate(reference, rk, &mut xt, steps).ok()?;
            integrate(&perturbed, rk, &mut xs, steps).ok()?;
            let msq = xs
                .iter()
                .zip(&xt)
                .zip(&clim.std)
                .map(|((a, b), s)| ((a - b) / s).powi(2))
                .sum::<f64>()
                / xs.len() as f64;
            let rmse = msq.sqrt();
            (rmse <= BLOWUP_RMSE).then_some(rmse)
        })
        .collect();
    let trial_rmse: Vec<f64> = results.iter().flatten().copied().collect();
    let diverged_trials = results.len() - trial_rmse.len();
    let mean_rmse = if trial_rmse.is_empty() {
        f64::NAN
    } else {
        trial_rmse.iter().sum::<f64>() / trial_rmse.len() as f64
    };
    Ok(SkillReport {
        mean_rmse,
        trial_rmse,
        diverged_trials,
    })
}

/// Leading Lyapunov exponents (descending, per unit model time) by
/// finite-difference tangent propagation of the RK4 resolvent with QR
/// re-orthonormalisation every step. The first `transient` steps only align
/// the tangent basis and are not averaged.
pub fn lyapunov_spectrum<T: Tendency + ?Sized>(
    model: &T,
    x0: &[f64],
    rk: &Rk4,
    n_exponents: usize,
    steps: usize,
    transient: usize,
) -> Result<Vec<f64>> {
    let n = model.dim();
    if n_exponents == 0 || n_exponents > n {
        return Err(Error::Domain(format!(
            "cannot compute {n_exponents} exponents of a {n}-dimensional system"
        )));
    }
    let mut x = x0.to_vec();
    let mut q = DMatrix::<f64>::identity(n, n_exponents);
    let mut sums = vec![0.0; n_exponents];
    let mut w = Rk4Work::default();
    for step in 0..transient + steps {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let eps = 1e-6 * norm.max(1.0);
        let mut base = x.clone();
        rk.step_with(model, &mut base, &mut w);
        let cols: Vec<Vec<f64>> = (0..n_exponents)
            .into_par_iter()
            .map_init(Rk4Work::default, |w, j| {
                let mut xp: Vec<f64> = x.iter().zip(q.column(j).iter()).map(|(a, d)| a + eps * d).collect();
                rk.step_with(model, &mut xp, w);
                xp.iter().zip(&base).map(|(a, b)| (a - b) / eps).collect()
            })
            .collect();
        let mq = DMatrix::from_fn(n, n_exponents, |i, j| cols[j][i]);
        if !mq.iter().all(|v| v.is_finite()) || !base.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let qr = mq.qr();
        if step >= transient {
            let r = qr.r();
            for (k, s) in sums.iter_mut().enumerate() {
                *s += r[(k, k)].abs().ln();
            }
        }
        q = qr.q();
        x = base;
    }
    let t = steps as f64 * rk.dt;
    let mut out: Vec<f64> = sums.into_iter().map(|s| s / t).collect();
    out.sort_by(|a, b| b.total_cmp(a));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FnTendency, L96iModel};

    #[test]
    fn decay_exponent() {
        let m = FnTendency::new(1, |x: &[f64], o: &mut [f64]| o[0] = -x[0]);
        let ex = lyapunov_spectrum(&m, &[1.0], &Rk4::new(0.05), 1, 200, 0).unwrap();
        assert!((ex[0] + 1.0).abs() < 1e-4, "{ex:?}");
    }

    #[test]
    fn climatology_of_l96i_is_nondegenerate() {
        let m = L96iModel::new(40);
        let x0: Vec<f64> = (0..40).map(|i| 8.0 + if i == 0 { 0.01 } else { 0.0 }).collect();
        let c = climatology(&m, &x0, &Rk4::default(), 500, 2000).unwrap();
        assert!(c.std.iter().all(|s| *s > 1.0 && *s < 8.0));
    }

    fn skill(sigma: f64, block: PerturbedBlock, seed: u64) -> SkillReport {
        let m = L96iModel::new(40);
        let x0: Vec<f64> = (0..40).map(|i| 8.0 + if i == 0 { 0.01 } else { 0.0 }).collect();
        let rk = Rk4::default();
        let c = climatology(&m, &x0, &rk, 500, 2000).unwrap();
        let p = SurrogateParams::for_l96i(&m, 2);
        let cfg = SkillConfig {
            lead_time: 0.5,
            trials: 20,
            block,
            sigma,
            spacing: 20,
            seed,
        };
        forecast_skill(&p, &m, &c, &rk, &cfg).unwrap()
    }

    #[test]
    fn exact_model_has_no_skill_loss() {
        let r = skill(0.0, PerturbedBlock::Monomials, 1);
        assert!(r.mean_rmse < 1e-10);
    }

    #[test]
    fn skill_is_reproducible() {
        let a = skill(0.1, PerturbedBlock::Forcing, 9);
        let b = skill(0.1, PerturbedBlock::Forcing, 9);
        assert_eq!(a.trial_rmse, b.trial_rmse);
    }
}
