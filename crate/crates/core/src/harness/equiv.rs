use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augmented::{AugmentedEnsemble, PartitionLayout};
use crate::error::Result;
use crate::filters::{
    matrix_shift_equivalence_check, Ensrf, Etkf, Filter, L2Ensrf, Lensrf, LensrfObsSpace, Letkf,
};
use crate::localisation::Geometry;
use crate::numkit::relative_diff;
use crate::obs::{LocalObsOperator, ObsBatch};

/// Random augmented system with a local linear operator observing `n_y`
/// distinct sites and a random diagonal `R`.
pub fn random_system(
    seed: u64,
    layout: PartitionLayout,
    n_e: usize,
    n_y: usize,
) -> Result<(AugmentedEnsemble, ObsBatch, LocalObsOperator)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members = DMatrix::from_fn(layout.n_z(), n_e, |_, _| rng.random_range(-2.0..2.0));
    let ens = AugmentedEnsemble::new(layout, members)?;
    let mut sites: Vec<usize> = (0..layout.n_x).collect();
    sites.shuffle(&mut rng);
    sites.truncate(n_y.min(layout.n_x));
    let coeffs = sites.iter().map(|_| rng.random_range(0.5..2.0)).collect();
    let op = LocalObsOperator::new(layout.n_x, sites, coeffs)?;
    let n = op.sites().len();
    let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let r = DVector::from_fn(n, |_, _| rng.random_range(0.3..3.0));
    Ok((ens, ObsBatch::new(y, r, 0)?, op))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub systems: usize,
    pub filters: Vec<&'static str>,
    /// Largest relative difference between two analysis ensembles.
    pub max_pairwise: f64,
    pub worst_pair: (&'static str, &'static str),
}

/// Runs every filter without localisation and with unit tapering on
/// `systems` random problems and compares all analysis ensembles pairwise.
pub fn equivalence_suite(systems: usize, seed: u64) -> Result<EquivalenceReport> {
    let (n_x, n_p, n_q, n_e, n_y) = (8, 3, 4, 5, 6);
    let layout = PartitionLayout::new(n_x, n_p, n_q)?;
    let q_sites: Vec<usize> = (0..n_q).map(|m| 2 * m).collect();
    let filters: Vec<Box<dyn Filter>> = vec![
        Box::new(Ensrf),
        Box::new(Etkf),
        Box::new(Lensrf::unlocalised(n_x, n_q)),
        Box::new(LensrfObsSpace::unlocalised(n_x, n_q)),
        Box::new(Letkf::new(Geometry::Ring { n: n_x }, f64::INFINITY, q_sites.clone(), 1.0, 1.0)?),
        Box::new(L2Ensrf::unlocalised(n_x, n_p, n_x, q_sites)?),
    ];
    let mut max_pairwise = 0.0f64;
    let mut worst_pair = (filters[0].name(), filters[0].name());
    for s in 0..systems {
        let (ens, obs, op) = random_system(seed.wrapping_add(s as u64), layout, n_e, n_y)?;
        let outs = filters
            .iter()
            .map(|f| f.analyse(&ens, &obs, &op).map(|o| o.ensemble.members))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..outs.len() {
            for j in i + 1..outs.len() {
                let d = relative_diff(&outs[i], &outs[j]);
                if d > max_pairwise {
                    max_pairwise = d;
                    worst_pair = (filters[i].name(), filters[j].name());
                }
            }
        }
    }
    Ok(EquivalenceReport {
        systems,
        filters: filters.iter().map(|f| f.name()).collect(),
        max_pairwise,
        worst_pair,
    })
}

/// Largest relative gap between the full-space and observation-space
/// perturbation updates over `systems` random linear problems
/// (`N_z = 8`, `N_y = 5`, `N_e = 4`).
pub fn shift_lemma_suite(systems: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for s in 0..systems {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        let z = DMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
        let h = DMatrix::from_fn(5, 8, |_, _| rng.random_range(-1.0..1.0));
        let r = DVector::from_fn(5, |_, _| rng.random_range(0.3..3.0));
        let (d, _) = matrix_shift_equivalence_check(&z, &h, &r, 0.0)?;
        worst = worst.max(d);
    }
    Ok(worst)
}
