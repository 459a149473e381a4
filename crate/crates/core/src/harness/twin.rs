use std::ops::Range;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::{Block, ExperimentConfig, FilterKind, ModelKind, ObsKind};
use super::rmse;
use crate::augmented::{forecast, inflate, init_ensemble, AugmentedEnsemble, PartitionLayout};
use crate::dynamics::{climatology, integrate, Forcing, L96iModel, ML96Model, Rk4, SurrogateParams, Tendency};
use crate::error::{Error, Result};
use crate::filters::{Ensrf, Etkf, Filter, L2Ensrf, Lensrf, LensrfObsSpace, Letkf, LetkfAksoy};
use crate::localisation::{rho_qx, rho_xx, taper, Geometry};
use crate::obs::{apply, calibrate_kernels, perturb, KernelObsOperator, LocalObsOperator, ObsOperator};

/// Analysis errors at one cycle. Empty blocks score zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CycleScores {
    pub state: f64,
    pub global_param: f64,
    pub local_param: f64,
    /// Error of the monomial coefficients, when they are estimated.
    pub monomial: f64,
}

/// One repetition of a twin experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub repetition: usize,
    pub seed: u64,
    /// Error of the initial ensemble mean, before any analysis.
    pub initial: CycleScores,
    /// Analysis errors, one entry per completed cycle.
    pub series: Vec<CycleScores>,
    /// Cycle at which the run was declared diverged.
    pub diverged_at: Option<usize>,
    pub wall_time: Duration,
}

impl RunResult {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    fn averaged(&self, spinup: usize, f: impl Fn(&CycleScores) -> f64) -> f64 {
        if self.diverged() {
            return f64::NAN;
        }
        let tail = &self.series[spinup.min(self.series.len())..];
        if tail.is_empty() {
            return f(&self.initial);
        }
        tail.iter().map(f).sum::<f64>() / tail.len() as f64
    }

    /// Time-averaged analysis state error after `spinup` cycles; NaN if diverged.
    pub fn time_avg_state(&self, spinup: usize) -> f64 {
        self.averaged(spinup, |s| s.state)
    }

    pub fn time_avg_global(&self, spinup: usize) -> f64 {
        self.averaged(spinup, |s| s.global_param)
    }

    pub fn time_avg_local(&self, spinup: usize) -> f64 {
        self.averaged(spinup, |s| s.local_param)
    }

    pub fn last(&self) -> CycleScores {
        self.series.last().copied().unwrap_or(self.initial)
    }
}

/// All repetitions of one configuration, in repetition order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
}

impl ExperimentResult {
    pub fn diverged_count(&self) -> usize {
        self.runs.iter().filter(|r| r.diverged()).count()
    }

    pub fn all_diverged(&self) -> bool {
        self.diverged_count() == self.runs.len()
    }

    /// Mean and standard deviation over the converged repetitions.
    pub fn state_stats(&self) -> (f64, f64) {
        mean_std(self.runs.iter().map(|r| r.time_avg_state(self.config.spinup)))
    }

    pub fn global_stats(&self) -> (f64, f64) {
        mean_std(self.runs.iter().map(|r| r.time_avg_global(self.config.spinup)))
    }

    pub fn local_stats(&self) -> (f64, f64) {
        mean_std(self.runs.iter().map(|r| r.time_avg_local(self.config.spinup)))
    }

    /// Tuning score: mean time-averaged state error, infinite if any
    /// repetition diverged.
    pub fn score(&self) -> f64 {
        if self.diverged_count() > 0 {
            f64::INFINITY
        } else {
            self.state_stats().0
        }
    }
}

pub(crate) fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

enum Truth {
    Ring(L96iModel),
    Stack(ML96Model),
}

impl Tendency for Truth {
    fn dim(&self) -> usize {
        match self {
            Truth::Ring(m) => m.dim(),
            Truth::Stack(m) => m.dim(),
        }
    }

    fn tendency(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Truth::Ring(m) => m.tendency(x, out),
            Truth::Stack(m) => m.tendency(x, out),
        }
    }
}

impl Truth {
    fn forcing(&self) -> &[f64] {
        match self {
            Truth::Ring(m) => &m.forcing,
            Truth::Stack(m) => &m.forcing,
        }
    }
}

fn block_values(p: &SurrogateParams, b: Block) -> Vec<f64> {
    match (b, &p.forcing) {
        (Block::A, _) => p.monomials.clone(),
        (Block::F, Forcing::Local(f)) => f.clone(),
        (Block::FV, Forcing::Separable { vertical, .. }) => vertical.clone(),
        (Block::FH, Forcing::Separable { horizontal, .. }) => horizontal.clone(),
        _ => unreachable!("block validated against the model"),
    }
}

fn write_block(p: &mut SurrogateParams, b: Block, v: &[f64]) {
    match (b, &mut p.forcing) {
        (Block::A, _) => p.monomials.copy_from_slice(v),
        (Block::F, Forcing::Local(f)) => f.copy_from_slice(v),
        (Block::FV, Forcing::Separable { vertical, .. }) => vertical.copy_from_slice(v),
        (Block::FH, Forcing::Separable { horizontal, .. }) => horizontal.copy_from_slice(v),
        _ => unreachable!("block validated against the model"),
    }
}

/// Everything shared by the repetitions of one configuration.
struct Setup {
    cfg: ExperimentConfig,
    truth: Truth,
    base: SurrogateParams,
    layout: PartitionLayout,
    /// `(block, range within p or q)`
    global: Vec<(Block, Range<usize>)>,
    local: Vec<(Block, Range<usize>)>,
    op: Box<dyn ObsOperator>,
    filter: Box<dyn Filter>,
    rk: Rk4,
}

fn ranges(cfg: &ExperimentConfig, blocks: &[Block]) -> Vec<(Block, Range<usize>)> {
    let mut start = 0;
    blocks
        .iter()
        .map(|&b| {
            let len = cfg.block_len(b);
            start += len;
            (b, start - len..start)
        })
        .collect()
}

/// Site of each local parameter on the grid (ring site or column).
fn local_sites(cfg: &ExperimentConfig) -> Vec<usize> {
    cfg.local
        .iter()
        .flat_map(|&b| 0..cfg.block_len(b))
        .collect()
}

fn build_filter(cfg: &ExperimentConfig, layout: PartitionLayout) -> Result<Box<dyn Filter>> {
    let n_x = layout.n_x;
    let ring = Geometry::Ring { n: n_x };
    let sites = local_sites(cfg);
    Ok(match cfg.filter {
        FilterKind::Ensrf => Box::new(Ensrf),
        FilterKind::Etkf => Box::new(Etkf),
        FilterKind::LensrfHml => Box::new(Lensrf::new(
            rho_xx(ring, cfg.r)?,
            rho_qx(ring, &sites, cfg.r)?,
            cfg.zeta_p,
            cfg.zeta_q,
        )?),
        FilterKind::LensrfHmlObs => Box::new(LensrfObsSpace::new(
            rho_xx(ring, cfg.r)?,
            rho_qx(ring, &sites, cfg.r)?,
            cfg.zeta_p,
            cfg.zeta_q,
        )?),
        FilterKind::LetkfHml => Box::new(Letkf::new(ring, cfg.r, sites, cfg.zeta_p, cfg.zeta_q)?),
        FilterKind::LetkfAksoy => Box::new(LetkfAksoy(Letkf::new(ring, cfg.r, sites, cfg.zeta_p, cfg.zeta_q)?)),
        FilterKind::L2ensrfHml => {
            let n_h = match cfg.model {
                ModelKind::L96i => n_x,
                ModelKind::Ml96 => cfg.n_h,
            };
            let vertical = |a: usize, b: usize| taper(a.abs_diff(b) as f64, cfg.r_v);
            let rho_xx = DMatrix::from_fn(n_x, n_x, |i, j| vertical(i / n_h, j / n_h));
            let rows: Vec<Vec<f64>> = cfg
                .global
                .iter()
                .flat_map(|&b| {
                    (0..cfg.block_len(b)).map(move |m| {
                        (0..n_x)
                            .map(|n| if b == Block::FV { vertical(m + 1, n / n_h) } else { 1.0 })
                            .collect()
                    })
                })
                .collect();
            let rho_px = DMatrix::from_fn(rows.len(), n_x, |i, n| rows[i][n]);
            let rho_qx = DMatrix::from_element(sites.len(), n_x, 1.0);
            Box::new(L2Ensrf::new(
                rho_xx,
                rho_px,
                rho_qx,
                n_h,
                sites.iter().map(|s| s % n_h).collect(),
                cfg.r_h,
                cfg.zeta_p,
                cfg.zeta_q,
            )?)
        }
    })
}

fn random_start(forcing: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    forcing
        .iter()
        .map(|f| {
            let e: f64 = StandardNormal.sample(rng);
            f + e
        })
        .collect()
}

/// `forcing + N(0, I)` drawn from a generator seeded with `seed`; the usual
/// starting point for spinning a model up onto its attractor.
pub fn perturbed_start(forcing: &[f64], seed: u64) -> Vec<f64> {
    random_start(forcing, &mut ChaCha8Rng::seed_from_u64(seed))
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let rk = Rk4::new(cfg.dt);
        let (truth, base) = match cfg.model {
            ModelKind::L96i => {
                let m = L96iModel::new(cfg.n_x);
                let base = SurrogateParams::for_l96i(&m, cfg.stencil);
                (Truth::Ring(m), base)
            }
            ModelKind::Ml96 => {
                let m = ML96Model::new(cfg.n_v, cfg.n_h);
                let base = SurrogateParams::for_ml96(&m, cfg.stencil);
                (Truth::Stack(m), base)
            }
        };
        let global = ranges(cfg, &cfg.global);
        let local = ranges(cfg, &cfg.local);
        let n_p = global.last().map_or(0, |(_, r)| r.end);
        let n_q = local.last().map_or(0, |(_, r)| r.end);
        let layout = PartitionLayout::new(truth.dim(), n_p, n_q)?;
        let op: Box<dyn ObsOperator> = match (cfg.resolved_obs(), &truth) {
            (ObsKind::Identity, _) => Box::new(LocalObsOperator::identity(truth.dim())),
            (ObsKind::Kernels, Truth::Stack(m)) => {
                let raw = KernelObsOperator::new(cfg.n_v, cfg.n_h, cfg.channels, cfg.kernel_half_width);
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(u64::MAX);
                let x0 = random_start(&m.forcing, &mut rng);
                Box::new(calibrate_kernels(&raw, m, &x0, &rk, cfg.truth_spinup, cfg.calibration_steps)?)
            }
            (ObsKind::Kernels, Truth::Ring(_)) => {
                return Err(Error::Config("kernel observations need the layered model".into()))
            }
        };
        let filter = build_filter(cfg, layout)?;
        Ok(Self {
            cfg: cfg.clone(),
            truth,
            base,
            layout,
            global,
            local,
            op,
            filter,
            rk,
        })
    }

    fn params_of(&self, p: &[f64], q: &[f64]) -> SurrogateParams {
        let mut s = self.base.clone();
        for (b, r) in &self.global {
            write_block(&mut s, *b, &p[r.clone()]);
        }
        for (b, r) in &self.local {
            write_block(&mut s, *b, &q[r.clone()]);
        }
        s
    }

    fn true_params(&self) -> (Vec<f64>, Vec<f64>) {
        let collect = |blocks: &[(Block, Range<usize>)]| {
            blocks.iter().flat_map(|(b, _)| block_values(&self.base, *b)).collect::<Vec<f64>>()
        };
        (collect(&self.global), collect(&self.local))
    }

    fn scores(&self, ens: &AugmentedEnsemble, xt: &[f64], pt: &[f64], qt: &[f64]) -> CycleScores {
        let l = self.layout;
        let err = |range: Range<usize>, truth: &[f64]| {
            if range.is_empty() {
                0.0
            } else {
                rmse(&ens.block_mean(range), truth).unwrap_or(f64::NAN)
            }
        };
        let monomial = self
            .global
            .iter()
            .find(|(b, _)| *b == Block::A)
            .map_or(0.0, |(_, r)| {
                let offset = l.n_x + r.start;
                err(offset..offset + r.len(), &pt[r.clone()])
            });
        CycleScores {
            state: err(l.x_range(), xt),
            global_param: err(l.p_range(), pt),
            local_param: err(l.q_range(), qt),
            monomial,
        }
    }

    fn repetition(&self, rep: usize) -> Result<RunResult> {
        let cfg = &self.cfg;
        let start = Instant::now();
        let seed = cfg.seed + rep as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random_start(self.truth.forcing(), &mut rng);
        let clim = climatology(&self.truth, &x0, &self.rk, cfg.truth_spinup, cfg.climatology_steps)?;
        let threshold = cfg.divergence_factor * clim.mean_std();
        let mut xt = clim.final_state;
        let (pt, qt) = self.true_params();

        let z_true: Vec<f64> = xt.iter().chain(&pt).chain(&qt).copied().collect();
        let mut std = vec![cfg.resolved_state_std(); self.layout.n_x];
        for (b, r) in self.global.iter().chain(&self.local) {
            std.extend(std::iter::repeat_n(cfg.block_std(*b), r.len()));
        }
        let mut ens = init_ensemble(self.layout, &z_true, &std, cfg.n_e, &mut rng)?;
        let initial = self.scores(&ens, &xt, &pt, &qt);
        let r_diag = DVector::from_element(self.op.n_obs(), cfg.obs_std * cfg.obs_std);

        let mut series = Vec::with_capacity(cfg.cycles);
        let mut diverged_at = None;
        let mut above = 0;
        for k in 0..cfg.cycles {
            let obs = perturb(&apply(self.op.as_ref(), &xt)?, &r_diag, k, &mut rng)?;
            let prior = AugmentedEnsemble::from_stats(self.layout, &inflate(&ens.stats()?, cfg.lambda)?)?;
            let analysed = match self.filter.analyse(&prior, &obs, self.op.as_ref()) {
                Ok(out) => out.ensemble,
                Err(_) => {
                    diverged_at = Some(k);
                    break;
                }
            };
            let s = self.scores(&analysed, &xt, &pt, &qt);
            series.push(s);
            above = if s.state > threshold { above + 1 } else { 0 };
            if !s.state.is_finite() || above >= cfg.divergence_window {
                diverged_at = Some(k);
                break;
            }
            if k + 1 == cfg.cycles {
                break;
            }
            match forecast(&analysed, cfg.obs_interval, &self.rk, |p, q| self.params_of(p, q), k) {
                Ok(e) => ens = e,
                Err(_) => {
                    diverged_at = Some(k);
                    break;
                }
            }
            integrate(&self.truth, &self.rk, &mut xt, cfg.obs_interval)?;
        }
        Ok(RunResult {
            repetition: rep,
            seed,
            initial,
            series,
            diverged_at,
            wall_time: start.elapsed(),
        })
    }
}

/// Runs every repetition of a twin experiment. Repetition `i` uses seed
/// `seed + i` for its truth, observations and initial ensemble; divergence
/// is recorded per repetition and does not stop the others.
pub fn run_twin(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let setup = Setup::new(cfg)?;
    let runs = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| setup.repetition(rep))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(filter: FilterKind) -> ExperimentConfig {
        ExperimentConfig {
            filter,
            global: vec![Block::A],
            n_e: 20,
            cycles: 30,
            spinup: 10,
            truth_spinup: 200,
            climatology_steps: 200,
            ..Default::default()
        }
    }

    #[test]
    fn zero_cycles_gives_initial_error_only() {
        let cfg = ExperimentConfig {
            cycles: 0,
            spinup: 0,
            ..short(FilterKind::LetkfHml)
        };
        let res = run_twin(&cfg).unwrap();
        let r = &res.runs[0];
        assert!(r.series.is_empty());
        assert!(r.initial.state > 0.0 && r.initial.global_param > 0.0);
        assert_eq!(r.time_avg_state(0), r.initial.state);
    }

    #[test]
    fn replay_is_deterministic() {
        let cfg = ExperimentConfig {
            repetitions: 2,
            ..short(FilterKind::LensrfHml)
        };
        let a = run_twin(&cfg).unwrap();
        let b = run_twin(&cfg).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.series, y.series);
            assert_eq!(x.initial, y.initial);
        }
        assert_ne!(a.runs[0].series, a.runs[1].series);
    }

    #[test]
    fn every_filter_runs() {
        for f in [
            FilterKind::Ensrf,
            FilterKind::Etkf,
            FilterKind::LensrfHml,
            FilterKind::LensrfHmlObs,
            FilterKind::LetkfHml,
            FilterKind::LetkfAksoy,
            FilterKind::L2ensrfHml,
        ] {
            let mut cfg = short(f);
            cfg.local = vec![Block::F];
            cfg.cycles = 5;
            cfg.spinup = 0;
            let res = run_twin(&cfg).unwrap();
            assert_eq!(res.runs[0].series.len(), 5, "{f:?}");
        }
    }

    #[test]
    fn known_model_filter_reduces_error() {
        let cfg = ExperimentConfig {
            global: vec![],
            ..short(FilterKind::LetkfHml)
        };
        let r = &run_twin(&cfg).unwrap().runs[0];
        assert!(r.last().state < 0.5 * r.initial.state);
    }

    #[test]
    fn divergence_is_recorded() {
        // a tiny ensemble with huge parameter errors runs away
        let cfg = ExperimentConfig {
            n_e: 3,
            std_a: Some(3.0),
            cycles: 400,
            divergence_window: 5,
            ..short(FilterKind::LetkfHml)
        };
        let res = run_twin(&cfg).unwrap();
        assert!(res.all_diverged());
        assert!(res.runs[0].time_avg_state(10).is_nan());
        assert_eq!(res.score(), f64::INFINITY);
    }
}
