use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hml_enkf::dynamics::{
    climatology, forecast_skill, lyapunov_spectrum, L96iModel, ML96Model, PerturbedBlock, Rk4,
    SkillConfig, SurrogateParams, Tendency,
};
use hml_enkf::harness::{
    emit_series, emit_summary, equivalence_suite, grid_tune, perturbed_start, run_twin, shift_lemma_suite,
    ExperimentConfig, ModelKind, TuneGrid,
};
use hml_enkf::Error;

#[derive(Parser)]
#[command(name = "hml-enkf", version, about = "Twin experiments with augmented-state local EnKFs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a twin experiment and write per-repetition series plus a summary.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (created if missing).
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Grid-search the algorithmic parameters of a configuration.
    Tune {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Grid as `key=v1,v2;key=...` over r, lambda, zeta_p, zeta_q, zeta, r_h, r_v.
        #[arg(long)]
        grid: String,
        /// Where to write the best configuration.
        #[arg(long)]
        best: Option<PathBuf>,
    },
    /// Forecast skill of the surrogate with perturbed monomials and forcings.
    Skill {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        #[arg(long, default_value_t = 0.5)]
        lead_time: f64,
        #[arg(long, default_value_t = 500)]
        trials: usize,
    },
    /// Leading Lyapunov exponents of a truth model.
    Lyapunov {
        model: ModelArg,
        /// Number of exponents (default: all for L96i, 80 for mL96).
        #[arg(long)]
        exponents: Option<usize>,
        #[arg(long, default_value_t = 20000)]
        steps: usize,
        #[arg(long, default_value_t = 2000)]
        transient: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Compare every filter without localisation on random systems.
    Equiv {
        #[arg(long, default_value_t = 50)]
        systems: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    L96i,
    Ml96,
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    ne: Option<usize>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    spinup: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    zeta_p: Option<f64>,
    #[arg(long)]
    zeta_q: Option<f64>,
    /// Any configuration key, as `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), Error> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        push("n_e", self.ne.map(|v| v.to_string()));
        push("cycles", self.cycles.map(|v| v.to_string()));
        push("spinup", self.spinup.map(|v| v.to_string()));
        push("repetitions", self.repetitions.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("filter", self.filter.as_ref().map(|v| format!("\"{v}\"")));
        push("r", self.r.map(|v| v.to_string()));
        push("lambda", self.lambda.map(|v| v.to_string()));
        push("zeta_p", self.zeta_p.map(|v| v.to_string()));
        push("zeta_q", self.zeta_q.map(|v| v.to_string()));
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in pairs {
            cfg.set(&k, &v)?;
        }
        cfg.validate()
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn run(config: &Path, overrides: &Overrides, out: &Path) -> Result<ExitCode, Error> {
    let cfg = load(config, overrides)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let result = run_twin(&cfg)?;
    for r in &result.runs {
        emit_series(r, &out.join(format!("series_{:03}.csv", r.repetition)))?;
        let status = match r.diverged_at {
            Some(k) => format!("diverged at cycle {k}"),
            None => format!("state rmse {:.4}", r.time_avg_state(cfg.spinup)),
        };
        println!("repetition {} (seed {}): {status}, {:.2?}", r.repetition, r.seed, r.wall_time);
    }
    emit_summary(&result, &out.join("summary.toml"))?;
    let (m, s) = result.state_stats();
    println!(
        "state rmse {m:.4} ± {s:.4} over {} converged repetitions ({} diverged)",
        result.runs.len() - result.diverged_count(),
        result.diverged_count()
    );
    Ok(if result.all_diverged() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn tune(config: &Path, overrides: &Overrides, grid: &str, best: Option<&Path>) -> Result<ExitCode, Error> {
    let cfg = load(config, overrides)?;
    let grid = TuneGrid::parse(grid)?;
    let outcome = match grid_tune(&cfg, &grid) {
        Ok(o) => o,
        Err(Error::TuningFailed) => {
            eprintln!("every grid point diverged");
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e),
    };
    println!("r,r_h,r_v,lambda,zeta_p,zeta_q,score");
    for row in &outcome.table {
        let c = &row.config;
        println!("{},{},{},{},{},{},{}", c.r, c.r_h, c.r_v, c.lambda, c.zeta_p, c.zeta_q, row.score);
    }
    let b = &outcome.best;
    println!(
        "best: r={} r_h={} r_v={} lambda={} zeta_p={} zeta_q={} score={:.4}",
        b.r, b.r_h, b.r_v, b.lambda, b.zeta_p, b.zeta_q, outcome.best_score
    );
    if let Some(path) = best {
        std::fs::write(path, b.to_toml_string()).map_err(|e| Error::io(path, e))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn skill(config: &Path, overrides: &Overrides, sigma: f64, lead_time: f64, trials: usize) -> Result<ExitCode, Error> {
    let cfg = load(config, overrides)?;
    let rk = Rk4::new(cfg.dt);
    let (reference, params, x0): (Box<dyn Tendency>, SurrogateParams, Vec<f64>) = match cfg.model {
        ModelKind::L96i => {
            let m = L96iModel::new(cfg.n_x);
            let p = SurrogateParams::for_l96i(&m, cfg.stencil);
            let x0 = perturbed_start(&m.forcing, cfg.seed);
            (Box::new(m), p, x0)
        }
        ModelKind::Ml96 => {
            let m = ML96Model::new(cfg.n_v, cfg.n_h);
            let p = SurrogateParams::for_ml96(&m, cfg.stencil);
            let x0 = perturbed_start(&m.forcing, cfg.seed);
            (Box::new(m), p, x0)
        }
    };
    let clim = climatology(reference.as_ref(), &x0, &rk, cfg.truth_spinup, cfg.climatology_steps)?;
    println!("block,mean_normalised_rmse,diverged_trials");
    for (name, block) in [("monomials", PerturbedBlock::Monomials), ("forcing", PerturbedBlock::Forcing)] {
        let rep = forecast_skill(
            &params,
            reference.as_ref(),
            &clim,
            &rk,
            &SkillConfig {
                lead_time,
                trials,
                block,
                sigma,
                spacing: 10,
                seed: cfg.seed,
            },
        )?;
        println!("{name},{},{}", rep.mean_rmse, rep.diverged_trials);
    }
    Ok(ExitCode::SUCCESS)
}

fn lyapunov(model: ModelArg, exponents: Option<usize>, steps: usize, transient: usize, seed: u64) -> Result<ExitCode, Error> {
    let rk = Rk4::new(0.05);
    let (m, x0): (Box<dyn Tendency>, Vec<f64>) = match model {
        ModelArg::L96i => {
            let m = L96iModel::new(40);
            let x0 = perturbed_start(&m.forcing, seed);
            (Box::new(m), x0)
        }
        ModelArg::Ml96 => {
            let m = ML96Model::new(32, 40);
            let x0 = perturbed_start(&m.forcing, seed);
            (Box::new(m), x0)
        }
    };
    let n = exponents.unwrap_or(match model {
        ModelArg::L96i => 40,
        ModelArg::Ml96 => 80,
    });
    let clim = climatology(m.as_ref(), &x0, &rk, transient, 0)?;
    let ex = lyapunov_spectrum(m.as_ref(), &clim.final_state, &rk, n, steps, transient)?;
    for (i, e) in ex.iter().enumerate() {
        println!("{i},{e}");
    }
    let positive = ex.iter().filter(|&&e| e > 0.01).count();
    let neutral = ex.iter().filter(|&&e| e.abs() <= 0.01).count();
    println!("positive: {positive}, near zero: {neutral}");
    Ok(ExitCode::SUCCESS)
}

fn equiv(systems: usize, seed: u64) -> Result<ExitCode, Error> {
    let report = equivalence_suite(systems, seed)?;
    let shift = shift_lemma_suite(systems, seed)?;
    println!("filters: {}", report.filters.join(", "));
    println!(
        "max pairwise relative difference over {} systems: {:.3e} ({} vs {})",
        report.systems, report.max_pairwise, report.worst_pair.0, report.worst_pair.1
    );
    println!("matrix shift identity, max relative difference: {shift:.3e}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, overrides, out } => run(config, overrides, out),
        Command::Tune { config, overrides, grid, best } => tune(config, overrides, grid, best.as_deref()),
        Command::Skill {
            config,
            overrides,
            sigma,
            lead_time,
            trials,
        } => skill(config, overrides, *sigma, *lead_time, *trials),
        Command::Lyapunov {
            model,
            exponents,
            steps,
            transient,
            seed,
        } => lyapunov(*model, *exponents, *steps, *transient, *seed),
        Command::Equiv { systems, seed } => equiv(*systems, *seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
