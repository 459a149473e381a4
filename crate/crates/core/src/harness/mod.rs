//! Twin experiments: configuration, cycling driver, metrics, grid tuning and
//! result files.

mod config;
mod equiv;
mod output;
mod tune;
mod twin;

pub use config::{Block, ExperimentConfig, FilterKind, ModelKind, ObsKind};
pub use equiv::{equivalence_suite, random_system, shift_lemma_suite, EquivalenceReport};
pub use output::{emit_series, emit_summary, series_csv, summary_toml};
pub use tune::{grid_tune, TuneGrid, TuneOutcome, TuneRow};
pub use twin::{perturbed_start, run_twin, CycleScores, ExperimentResult, RunResult};

use crate::error::{Error, Result};

/// `√(mean((a - b)²))`.
pub fn rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "estimate has {} entries, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / estimate.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[1.5, -0.5, 2.5], &[1.0, -1.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.5355339059327378).abs() < 1e-15);
        assert!(rmse(&[0.0], &[1.0, 2.0]).is_err());
    }
}
