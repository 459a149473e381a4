//! Observation operators, synthetic observations and ensemble observation
//! anomalies. Parameters are never observed: operators act on the state block.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{integrate, ML96Model, Rk4, Tendency};
use crate::error::{Error, Result};
use crate::numkit::{gc_unchecked, row_means};

/// Linear observation operator `y = H_x x`.
pub trait ObsOperator: Sync {
    fn n_obs(&self) -> usize;

    fn n_state(&self) -> usize;

    /// Writes `H_x x` into `y`; lengths are checked by [`apply`].
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// Nonzero entries `(state index, weight)` of each row of `H_x`.
    fn tangent_rows(&self) -> Vec<Vec<(usize, f64)>>;

    /// Grid index of each observation when the operator is fully local.
    fn local_map(&self) -> Option<&[usize]> {
        None
    }

    /// Horizontal column of each observation on a layer-major grid with `n_h`
    /// columns, or `None` if observations are not horizontally local.
    fn obs_columns(&self, n_h: usize) -> Option<Vec<usize>>;
}

pub fn apply(op: &dyn ObsOperator, x: &[f64]) -> Result<DVector<f64>> {
    if x.len() != op.n_state() {
        return Err(Error::Dimension(format!(
            "state has length {}, operator expects {}",
            x.len(),
            op.n_state()
        )));
    }
    let mut y = DVector::zeros(op.n_obs());
    op.apply_into(x, y.as_mut_slice());
    Ok(y)
}

/// Dense tangent linear `H_x` (`N_y × N_x`).
pub fn tangent(op: &dyn ObsOperator) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(op.n_obs(), op.n_state());
    for (p, row) in op.tangent_rows().into_iter().enumerate() {
        for (n, w) in row {
            h[(p, n)] += w;
        }
    }
    h
}

/// Secant anomalies `H(E_x)(I - 11ᵀ/N_e)/√(N_e-1)` of the state block `E_x`.
pub fn obs_anomalies(op: &dyn ObsOperator, ex: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n_e = ex.ncols();
    if n_e < 2 {
        return Err(Error::InsufficientEnsemble(n_e));
    }
    if ex.nrows() != op.n_state() {
        return Err(Error::Dimension(format!(
            "state block has {} rows, operator expects {}",
            ex.nrows(),
            op.n_state()
        )));
    }
    let mut hy = DMatrix::zeros(op.n_obs(), n_e);
    for j in 0..n_e {
        op.apply_into(ex.column(j).as_slice(), hy.column_mut(j).as_mut_slice());
    }
    let mean = row_means(&hy);
    let scale = 1.0 / ((n_e - 1) as f64).sqrt();
    for mut col in hy.column_iter_mut() {
        col -= &mean;
        col *= scale;
    }
    Ok(hy)
}

/// `y_p = c_p x_{h(p)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalObsOperator {
    n_state: usize,
    sites: Vec<usize>,
    coeffs: Vec<f64>,
}

impl LocalObsOperator {
    pub fn new(n_state: usize, sites: Vec<usize>, coeffs: Vec<f64>) -> Result<Self> {
        if sites.len() != coeffs.len() {
            return Err(Error::Dimension("one coefficient per observed site".into()));
        }
        if let Some(&s) = sites.iter().find(|&&s| s >= n_state) {
            return Err(Error::Dimension(format!("observed site {s} outside a state of {n_state}")));
        }
        Ok(Self {
            n_state,
            sites,
            coeffs,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_state: n,
            sites: (0..n).collect(),
            coeffs: vec![1.0; n],
        }
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

impl ObsOperator for LocalObsOperator {
    fn n_obs(&self) -> usize {
        self.sites.len()
    }

    fn n_state(&self) -> usize {
        self.n_state
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for ((yp, &s), &c) in y.iter_mut().zip(&self.sites).zip(&self.coeffs) {
            *yp = c * x[s];
        }
    }

    fn tangent_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.sites
            .iter()
            .zip(&self.coeffs)
            .map(|(&s, &c)| vec![(s, c)])
            .collect()
    }

    fn local_map(&self) -> Option<&[usize]> {
        Some(&self.sites)
    }

    fn obs_columns(&self, n_h: usize) -> Option<Vec<usize>> {
        Some(self.sites.iter().map(|s| s % n_h).collect())
    }
}

/// Vertical averaging kernels applied to every column of a layer-major stack.
/// Observation `h * n_channels + k` is channel `k` of column `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelObsOperator {
    pub n_v: usize,
    pub n_h: usize,
    /// One-based vertical level of each channel centre.
    pub centers: Vec<f64>,
    /// Raw kernel weights, `n_channels × n_v`.
    pub weights: DMatrix<f64>,
    pub normalisation: Vec<f64>,
}

impl KernelObsOperator {
    /// `n_channels` Gaspari–Cohn kernels centred at `(k - 1/2) N_v / n_channels`
    /// (one-based levels), vanishing `half_width` levels from the centre.
    pub fn new(n_v: usize, n_h: usize, n_channels: usize, half_width: f64) -> Self {
        let centers: Vec<f64> = (1..=n_channels)
            .map(|k| (k as f64 - 0.5) * n_v as f64 / n_channels as f64)
            .collect();
        let weights = DMatrix::from_fn(n_channels, n_v, |k, v| {
            let d = ((v + 1) as f64 - centers[k]).abs();
            gc_unchecked(2.0 * d / half_width)
        });
        Self {
            n_v,
            n_h,
            centers,
            weights,
            normalisation: vec![1.0; n_channels],
        }
    }

    pub fn n_channels(&self) -> usize {
        self.weights.nrows()
    }

    /// Effective weight of channel `k` on level `v`.
    pub fn effective_weight(&self, k: usize, v: usize) -> f64 {
        self.normalisation[k] * self.weights[(k, v)]
    }

    /// Writes `channel,level,raw_weight,normalised_weight` rows (one-based).
    pub fn write_weights_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("channel,level,raw_weight,normalised_weight\n");
        for k in 0..self.n_channels() {
            for v in 0..self.n_v {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    k + 1,
                    v + 1,
                    self.weights[(k, v)],
                    self.effective_weight(k, v)
                ));
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

impl ObsOperator for KernelObsOperator {
    fn n_obs(&self) -> usize {
        self.n_channels() * self.n_h
    }

    fn n_state(&self) -> usize {
        self.n_v * self.n_h
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let nc = self.n_channels();
        for h in 0..self.n_h {
            for k in 0..nc {
                let mut s = 0.0;
                for v in 0..self.n_v {
                    s += self.weights[(k, v)] * x[v * self.n_h + h];
                }
                y[h * nc + k] = self.normalisation[k] * s;
            }
        }
    }

    fn tangent_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let nc = self.n_channels();
        (0..self.n_obs())
            .map(|p| {
                let (h, k) = (p / nc, p % nc);
                (0..self.n_v)
                    .filter(|&v| self.weights[(k, v)] != 0.0)
                    .map(|v| (v * self.n_h + h, self.effective_weight(k, v)))
                    .collect()
            })
            .collect()
    }

    fn obs_columns(&self, n_h: usize) -> Option<Vec<usize>> {
        (n_h == self.n_h).then(|| (0..self.n_obs()).map(|p| p / self.n_channels()).collect())
    }
}

/// Rescales each channel so that the standard deviation of its output over a
/// free run of `model` matches the mean per-variable standard deviation of the
/// model. The current normalisation is multiplied by the correction, so a
/// calibrated operator is a fixed point.
pub fn calibrate_kernels(
    op: &KernelObsOperator,
    model: &ML96Model,
    x0: &[f64],
    rk: &Rk4,
    spinup: usize,
    run_length: usize,
) -> Result<KernelObsOperator> {
    if op.n_state() != model.dim() {
        return Err(Error::Dimension("operator and model grids differ".into()));
    }
    if run_length < 2 {
        return Err(Error::Calibration("run too short".into()));
    }
    let nc = op.n_channels();
    let mut x = x0.to_vec();
    integrate(model, rk, &mut x, spinup)?;
    let n = model.dim();
    let (mut xs, mut xss) = (vec![0.0; n], vec![0.0; n]);
    let (mut ys, mut yss) = (vec![0.0; nc], vec![0.0; nc]);
    let mut y = vec![0.0; op.n_obs()];
    for _ in 0..run_length {
        integrate(model, rk, &mut x, 1)?;
        for i in 0..n {
            xs[i] += x[i];
            xss[i] += x[i] * x[i];
        }
        op.apply_into(&x, &mut y);
        for (p, v) in y.iter().enumerate() {
            ys[p % nc] += v;
            yss[p % nc] += v * v;
        }
    }
    let std = |s: f64, ss: f64, count: f64| ((ss / count) - (s / count).powi(2)).max(0.0).sqrt();
    let t = run_length as f64;
    let target = (0..n).map(|i| std(xs[i], xss[i], t)).sum::<f64>() / n as f64;
    let mut out = op.clone();
    let pooled = t * op.n_h as f64;
    for k in 0..nc {
        let s = std(ys[k], yss[k], pooled);
        if !(s > 1e-12 * target) {
            return Err(Error::Calibration(format!("channel {} has no variability", k + 1)));
        }
        out.normalisation[k] *= target / s;
    }
    Ok(out)
}

/// Observations with diagonal error covariance `diag(r_diag)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    pub y: DVector<f64>,
    pub r_diag: DVector<f64>,
    pub time: usize,
}

impl ObsBatch {
    pub fn new(y: DVector<f64>, r_diag: DVector<f64>, time: usize) -> Result<Self> {
        if y.len() != r_diag.len() {
            return Err(Error::Dimension("one error variance per observation".into()));
        }
        if r_diag.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Domain("error variances must be positive".into()));
        }
        Ok(Self { y, r_diag, time })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Entrywise `R^{-1/2}`.
    pub fn r_inv_sqrt(&self) -> DVector<f64> {
        self.r_diag.map(|r| 1.0 / r.sqrt())
    }
}

/// `y = H(x_true) + ε`, `ε ~ N(0, diag(r_diag))`.
pub fn perturb<R: Rng + ?Sized>(
    truth_obs: &DVector<f64>,
    r_diag: &DVector<f64>,
    time: usize,
    rng: &mut R,
) -> Result<ObsBatch> {
    let y = DVector::from_iterator(
        truth_obs.len(),
        truth_obs.iter().zip(r_diag.iter()).map(|(t, r)| {
            let e: f64 = StandardNormal.sample(rng);
            t + r.sqrt() * e
        }),
    );
    ObsBatch::new(y, r_diag.clone(), time)
}
