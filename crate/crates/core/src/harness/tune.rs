use super::config::ExperimentConfig;
use super::twin::run_twin;
use crate::error::{Error, Result};

/// Values to scan for each tuned setting; an empty list keeps the template value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuneGrid {
    pub r: Vec<f64>,
    pub lambda: Vec<f64>,
    pub zeta_p: Vec<f64>,
    pub zeta_q: Vec<f64>,
    pub r_h: Vec<f64>,
    pub r_v: Vec<f64>,
}

impl TuneGrid {
    /// Parses `key=v1,v2;key=v3`. Keys: `r`, `lambda`, `zeta_p`, `zeta_q`,
    /// `zeta` (both tapering coefficients, kept equal), `r_h`, `r_v`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut g = Self::default();
        for part in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, values) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid entry `{part}` is not key=values")))?;
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad grid value `{v}` for {key}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            match key.trim() {
                "r" => g.r = values,
                "lambda" => g.lambda = values,
                "zeta_p" => g.zeta_p = values,
                "zeta_q" => g.zeta_q = values,
                "zeta" => {
                    g.zeta_p = values.clone();
                    g.zeta_q = vec![f64::NAN];
                }
                "r_h" => g.r_h = values,
                "r_v" => g.r_v = values,
                other => return Err(Error::Config(format!("unknown grid key `{other}`"))),
            }
        }
        Ok(g)
    }

    /// Every grid point applied to `template`, in a fixed order.
    pub fn points(&self, template: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let mut out = Vec::new();
        for &lambda in &or(&self.lambda, template.lambda) {
            for &r in &or(&self.r, template.r) {
                for &r_h in &or(&self.r_h, template.r_h) {
                    for &r_v in &or(&self.r_v, template.r_v) {
                        for &zeta_p in &or(&self.zeta_p, template.zeta_p) {
                            for &zeta_q in &or(&self.zeta_q, template.zeta_q) {
                                // NaN marks ζ_q tied to ζ_p
                                let zeta_q = if zeta_q.is_nan() { zeta_p } else { zeta_q };
                                out.push(ExperimentConfig {
                                    lambda,
                                    r,
                                    r_h,
                                    r_v,
                                    zeta_p,
                                    zeta_q,
                                    ..template.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneRow {
    pub config: ExperimentConfig,
    /// Mean time-averaged state error; infinite when a repetition diverged.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: ExperimentConfig,
    pub best_score: f64,
    /// One row per grid point, in grid order.
    pub table: Vec<TuneRow>,
}

/// Runs every grid point and returns the lowest time-averaged state error.
/// Ties go to the smaller inflation, then the smaller radius.
pub fn grid_tune(template: &ExperimentConfig, grid: &TuneGrid) -> Result<TuneOutcome> {
    let mut table = Vec::new();
    for config in grid.points(template) {
        let score = run_twin(&config)?.score();
        table.push(TuneRow { config, score });
    }
    let best = table
        .iter()
        .filter(|row| row.score.is_finite())
        .min_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then(a.config.lambda.total_cmp(&b.config.lambda))
                .then(a.config.r.total_cmp(&b.config.r))
                .then(a.config.r_h.total_cmp(&b.config.r_h))
        })
        .ok_or(Error::TuningFailed)?;
    Ok(TuneOutcome {
        best: best.config.clone(),
        best_score: best.score,
        table,
    })
}
