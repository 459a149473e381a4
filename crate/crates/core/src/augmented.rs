//! Augmented state `z = [x; p; q]`: ensemble storage, statistics, inflation,
//! initialisation and the persistence forecast of the parameters.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::{integrate, Rk4, Tendency};
use crate::error::{Error, Result};
use crate::numkit::{row_means, sample_gaussian};

/// Block sizes of the augmented state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionLayout {
    pub n_x: usize,
    pub n_p: usize,
    pub n_q: usize,
}

impl PartitionLayout {
    pub fn new(n_x: usize, n_p: usize, n_q: usize) -> Result<Self> {
        if n_x == 0 {
            return Err(Error::Dimension("the state block must be non-empty".into()));
        }
        Ok(Self { n_x, n_p, n_q })
    }

    pub fn n_z(&self) -> usize {
        self.n_x + self.n_p + self.n_q
    }

    pub fn x_range(&self) -> Range<usize> {
        0..self.n_x
    }

    pub fn p_range(&self) -> Range<usize> {
        self.n_x..self.n_x + self.n_p
    }

    pub fn q_range(&self) -> Range<usize> {
        self.n_x + self.n_p..self.n_z()
    }
}

/// Ensemble matrix `E` (`N_z × N_e`, one member per column).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEnsemble {
    pub layout: PartitionLayout,
    pub members: DMatrix<f64>,
}

/// Mean `z̄ = E1/N_e` and normalised perturbations `Z = (E - z̄1ᵀ)/√(N_e-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    pub anomalies: DMatrix<f64>,
}

impl AugmentedEnsemble {
    pub fn new(layout: PartitionLayout, members: DMatrix<f64>) -> Result<Self> {
        if members.nrows() != layout.n_z() {
            return Err(Error::Dimension(format!(
                "ensemble has {} rows, layout needs {}",
                members.nrows(),
                layout.n_z()
            )));
        }
        if members.ncols() < 2 {
            return Err(Error::InsufficientEnsemble(members.ncols()));
        }
        Ok(Self { layout, members })
    }

    /// Rebuilds `E = z̄1ᵀ + √(N_e-1) Z`.
    pub fn from_stats(layout: PartitionLayout, stats: &EnsembleStats) -> Result<Self> {
        Self::new(layout, stats.reconstruct())
    }

    pub fn n_e(&self) -> usize {
        self.members.ncols()
    }

    pub fn x_block(&self) -> DMatrix<f64> {
        self.members.rows_range(self.layout.x_range()).into_owned()
    }

    pub fn p_block(&self) -> DMatrix<f64> {
        self.members.rows_range(self.layout.p_range()).into_owned()
    }

    pub fn q_block(&self) -> DMatrix<f64> {
        self.members.rows_range(self.layout.q_range()).into_owned()
    }

    pub fn stats(&self) -> Result<EnsembleStats> {
        stats(self)
    }

    /// Mean of the rows in `range`.
    pub fn block_mean(&self, range: Range<usize>) -> Vec<f64> {
        let n_e = self.n_e() as f64;
        range
            .map(|i| self.members.row(i).sum() / n_e)
            .collect()
    }
}

pub fn stats(ens: &AugmentedEnsemble) -> Result<EnsembleStats> {
    let n_e = ens.members.ncols();
    if n_e < 2 {
        return Err(Error::InsufficientEnsemble(n_e));
    }
    let mean = row_means(&ens.members);
    let mut anomalies = ens.members.clone();
    let scale = 1.0 / ((n_e - 1) as f64).sqrt();
    for mut col in anomalies.column_iter_mut() {
        col -= &mean;
        col *= scale;
    }
    Ok(EnsembleStats { mean, anomalies })
}

impl EnsembleStats {
    pub fn n_e(&self) -> usize {
        self.anomalies.ncols()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scale = ((self.n_e() - 1) as f64).sqrt();
        let mut e = &self.anomalies * scale;
        for mut col in e.column_iter_mut() {
            col += &self.mean;
        }
        e
    }
}

/// Multiplicative inflation `Z ← λZ` on every row.
pub fn inflate(stats: &EnsembleStats, lambda: f64) -> Result<EnsembleStats> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("inflation must be positive, got {lambda}")));
    }
    Ok(EnsembleStats {
        mean: stats.mean.clone(),
        anomalies: &stats.anomalies * lambda,
    })
}

/// Members `z_i = z_true + z' + z''_i` with one shared bias draw `z'` and
/// independent draws `z''_i`, both `N(0, diag(std²))`.
pub fn init_ensemble<R: Rng + ?Sized>(
    layout: PartitionLayout,
    z_true: &[f64],
    std: &[f64],
    n_e: usize,
    rng: &mut R,
) -> Result<AugmentedEnsemble> {
    let n_z = layout.n_z();
    if z_true.len() != n_z || std.len() != n_z {
        return Err(Error::Dimension(format!(
            "truth/std lengths {}/{} do not match N_z = {n_z}",
            z_true.len(),
            std.len()
        )));
    }
    if std.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Domain("standard deviations must be non-negative".into()));
    }
    let centre = sample_gaussian(z_true, std, rng);
    let mut members = DMatrix::zeros(n_z, n_e);
    for j in 0..n_e {
        let m = sample_gaussian(&centre, std, rng);
        members.column_mut(j).copy_from_slice(&m);
    }
    AugmentedEnsemble::new(layout, members)
}

/// Propagates each member's state block over `steps` RK4 steps with the model
/// built from that member's own `(p, q)`; parameter blocks persist.
///
/// `cycle` is only used to label a divergence.
pub fn forecast<M, F>(
    ens: &AugmentedEnsemble,
    steps: usize,
    rk: &Rk4,
    build: F,
    cycle: usize,
) -> Result<AugmentedEnsemble>
where
    M: Tendency,
    F: Fn(&[f64], &[f64]) -> M + Sync,
{
    let layout = ens.layout;
    let n_z = layout.n_z();
    let mut out = ens.clone();
    let failures: Vec<usize> = out
        .members
        .as_mut_slice()
        .par_chunks_mut(n_z)
        .enumerate()
        .filter_map(|(j, col)| {
            let (x, params) = col.split_at_mut(layout.n_x);
            let (p, q) = params.split_at(layout.n_p);
            let model = build(p, q);
            integrate(&model, rk, x, steps).err().map(|_| j)
        })
        .collect();
    match failures.first() {
        Some(&member) => Err(Error::MemberDiverged { member, cycle }),
        None => Ok(out),
    }
}
