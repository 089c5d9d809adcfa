//! Experiment runner behind the `ergodic-mlmc` binary.
//!
//! Commands read a single TOML or JSON config document (unknown keys are
//! rejected), apply CLI overrides, and write plot-ready CSV/JSON artifacts.
//! Every artifact except the wall-clock timing table is deterministic given
//! (config, seed), independent of the worker count.

mod commands;

pub use commands::{cmd_estimate, cmd_logreg, cmd_rates, cmd_unbiased};

use crate::coupling::{LevelConfig, Observable, Schedule};
use crate::error::{Error, Result};
use crate::estimator::MlmcConfig;
use crate::integrator::{CouplingMode, ImplicitSolverParams, StepScheme};
use crate::model::{
    generate_logreg_fixture, map_newton, GradientModel, LogRegFixture, LogRegModel, OuModel,
    State, MAP_DEFAULT_MAX_ITER, MAP_DEFAULT_TOL,
};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const ENV_WORKERS: &str = "ERGODIC_MLMC_WORKERS";

#[derive(Parser, Debug)]
#[command(
    name = "ergodic-mlmc",
    about = "Multilevel Monte Carlo for invariant measures of Langevin SDEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fixed-sample-count per-level statistics and fitted decay rates.
    Rates(CommonArgs),
    /// Adaptive multilevel estimates across the eps list.
    Estimate(CommonArgs),
    /// Randomized-truncation (bias-free) estimator report.
    Unbiased(CommonArgs),
    /// Bayesian logistic-regression study: MAP, MLMC-SGLD, coupling traces.
    Logreg(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Path to the TOML or JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the eps list, comma separated (e.g. 0.05,0.025).
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Output directory (default: config `out`, then current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (the ERGODIC_MLMC_WORKERS env var takes precedence).
    #[arg(long)]
    workers: Option<usize>,
    /// Emit per-path coupling traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub h0: f64,
    #[serde(default)]
    pub eps: Vec<f64>,
    pub model: ModelConfig,
    pub scheme: SchemeConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub observable: Option<ObservableConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub unbiased: UnbiasedSection,
    #[serde(default)]
    pub trace: TraceSection,
}

#[derive(Deserialize, Debug, Clone)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Ou {
        kappa: f64,
        #[serde(default = "default_ou_dim")]
        dim: usize,
    },
    Logreg {
        #[serde(default)]
        fixture_path: Option<PathBuf>,
        #[serde(default = "default_fixture_seed")]
        fixture_seed: u64,
        #[serde(default = "default_n_data")]
        n_data: usize,
        #[serde(default = "default_logreg_dim")]
        dim: usize,
    },
}

fn default_ou_dim() -> usize {
    1
}
fn default_fixture_seed() -> u64 {
    1
}
fn default_n_data() -> usize {
    100
}
fn default_logreg_dim() -> usize {
    3
}

#[derive(Deserialize, Debug, Clone)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeConfig {
    Euler,
    Implicit {
        #[serde(default = "default_solver_tol")]
        solver_tol: f64,
        #[serde(default = "default_solver_max_iter")]
        solver_max_iter: usize,
    },
    Sgld {
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        #[serde(default = "default_coupling")]
        coupling: CouplingConfig,
    },
}

fn default_solver_tol() -> f64 {
    1e-12
}
fn default_solver_max_iter() -> usize {
    50
}
fn default_batch_size() -> usize {
    20
}
fn default_coupling() -> CouplingConfig {
    CouplingConfig::Union
}

#[derive(Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum CouplingConfig {
    Independent,
    Union,
    Stratified,
}

impl From<CouplingConfig> for CouplingMode {
    fn from(c: CouplingConfig) -> CouplingMode {
        match c {
            CouplingConfig::Independent => CouplingMode::Independent,
            CouplingConfig::Union => CouplingMode::Union,
            CouplingConfig::Stratified => CouplingMode::Stratified,
        }
    }
}

#[derive(Deserialize, Debug, Clone)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    TheoreticalRho {
        rho: f64,
        /// Contraction constant; defaults to the model's strong convexity.
        #[serde(default)]
        m: Option<f64>,
    },
    OptimalKzeta { k: f64, zeta: f64, beta: f64 },
    Linear { a: f64, b: f64 },
}

#[derive(Deserialize, Debug, Clone, Copy)]
#[serde(rename_all = "snake_case")]
pub enum ObservableConfig {
    /// g(x) = x_0².
    CoordinateSquared,
    /// g(x) = |x|².
    SquaredNorm,
    /// g(x) = |x − MAP|² (logistic-regression models only).
    MsdFromMap,
}

#[derive(Deserialize, Debug, Clone, Copy)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub warmup_samples: u64,
    pub warmup_levels: u32,
    pub max_level: u32,
    pub weak_rate: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            warmup_samples: 1000,
            warmup_levels: 2,
            max_level: 20,
            weak_rate: 1.0,
        }
    }
}

#[derive(Deserialize, Debug, Clone, Copy)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub levels: u32,
    pub samples_per_level: u64,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection {
            levels: 5,
            samples_per_level: 10_000,
        }
    }
}

#[derive(Deserialize, Debug, Clone, Copy)]
#[serde(deny_unknown_fields, default)]
pub struct UnbiasedSection {
    /// Geometric survival ratio r with P(J ≥ j) = r^j.
    pub ratio: f64,
    pub replicas: u64,
    /// Variance-decay rate β used to validate r ∈ (2^{-β}, 2^{-1}).
    pub variance_rate: f64,
}

impl Default for UnbiasedSection {
    fn default() -> Self {
        UnbiasedSection {
            ratio: 2.0f64.powf(-1.5),
            replicas: 100_000,
            variance_rate: 2.0,
        }
    }
}

#[derive(Deserialize, Debug, Clone, Copy)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSection {
    /// Level whose coupled phase is traced.
    pub level: u32,
    /// Replicas averaged for the coupling-distance table.
    pub replicas: u64,
}

impl Default for TraceSection {
    fn default() -> Self {
        TraceSection {
            level: 1,
            replicas: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        let config: ExperimentConfig = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0) {
            return Err(Error::Config(format!("h0 must be positive, got {}", self.h0)));
        }
        if self.eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Config("eps values must be positive".into()));
        }
        Ok(())
    }
}

/// Everything a command needs, assembled from the config.
pub struct Runtime {
    pub config: ExperimentConfig,
    pub model: Box<dyn GradientModel>,
    pub scheme: StepScheme,
    pub schedule: Schedule,
    pub x0: State,
    pub observable: Observable,
    pub out_dir: PathBuf,
    pub trace: bool,
    /// Present for logistic-regression models.
    pub fixture: Option<LogRegFixture>,
    pub map_point: Option<State>,
}

impl Runtime {
    pub fn level_config(&self) -> LevelConfig {
        LevelConfig {
            h0: self.config.h0,
            schedule: self.schedule,
            scheme: self.scheme.clone(),
        }
    }

    pub fn mlmc_config(&self) -> MlmcConfig {
        let est = &self.config.estimator;
        MlmcConfig {
            level: self.level_config(),
            x0: self.x0.clone(),
            warmup_samples: est.warmup_samples,
            warmup_levels: est.warmup_levels,
            max_level: est.max_level,
            weak_rate: est.weak_rate,
        }
    }
}

fn build_runtime(mut config: ExperimentConfig, args: &CommonArgs) -> Result<Runtime> {
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(eps) = &args.eps {
        config.eps = eps.clone();
    }
    config.validate()?;

    let scheme = match &config.scheme {
        SchemeConfig::Euler => StepScheme::ExplicitEuler,
        SchemeConfig::Implicit {
            solver_tol,
            solver_max_iter,
        } => StepScheme::ImplicitEuler(ImplicitSolverParams {
            tol: *solver_tol,
            max_iter: *solver_max_iter,
        }),
        SchemeConfig::Sgld {
            batch_size,
            coupling,
        } => StepScheme::sgld(*batch_size, (*coupling).into()),
    };

    let (model, fixture): (Box<dyn GradientModel>, Option<LogRegFixture>) = match &config.model {
        ModelConfig::Ou { kappa, dim } => (Box::new(OuModel::new(*kappa, *dim)?), None),
        ModelConfig::Logreg {
            fixture_path,
            fixture_seed,
            n_data,
            dim,
        } => {
            let fixture = match fixture_path {
                Some(path) => LogRegFixture::load(path)?,
                None => generate_logreg_fixture(*fixture_seed, *n_data, *dim),
            };
            let model: LogRegModel = fixture.to_model()?;
            (Box::new(model), Some(fixture))
        }
    };
    scheme.validate(model.as_ref())?;

    // Chain start: the MAP for posteriors, the origin otherwise.
    let (x0, map_point) = if matches!(config.model, ModelConfig::Logreg { .. }) {
        let map = map_newton(
            model.as_ref(),
            &State::zeros(model.dim()),
            MAP_DEFAULT_TOL,
            MAP_DEFAULT_MAX_ITER,
        )?;
        (map.clone(), Some(map))
    } else {
        (State::zeros(model.dim()), None)
    };

    let schedule = match &config.schedule {
        ScheduleConfig::TheoreticalRho { rho, m } => Schedule::TheoreticalRho {
            m: m.unwrap_or_else(|| model.strong_convexity()),
            rho: *rho,
        },
        ScheduleConfig::OptimalKzeta { k, zeta, beta } => Schedule::OptimalKZeta {
            k: *k,
            zeta: *zeta,
            beta: *beta,
        },
        ScheduleConfig::Linear { a, b } => Schedule::Linear { a: *a, b: *b },
    };

    let observable_kind = config.observable.unwrap_or({
        if matches!(config.model, ModelConfig::Logreg { .. }) {
            ObservableConfig::MsdFromMap
        } else {
            ObservableConfig::CoordinateSquared
        }
    });
    let observable = match observable_kind {
        ObservableConfig::CoordinateSquared => Observable::coordinate_squared(0),
        ObservableConfig::SquaredNorm => Observable::squared_norm(),
        ObservableConfig::MsdFromMap => {
            let map = map_point.as_ref().ok_or_else(|| {
                Error::Config("observable msd_from_map needs a logreg model".into())
            })?;
            Observable::squared_distance_from(map.coords().to_vec())
        }
    };

    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    Ok(Runtime {
        config,
        model,
        scheme,
        schedule,
        x0,
        observable,
        out_dir,
        trace: args.trace,
        fixture,
        map_point,
    })
}

fn resolve_workers(args: &CommonArgs, config: &ExperimentConfig) -> Result<Option<usize>> {
    if let Ok(v) = std::env::var(ENV_WORKERS) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{ENV_WORKERS}={v} is not a worker count")))?;
        if n == 0 {
            return Err(Error::Config(format!("{ENV_WORKERS} must be positive")));
        }
        return Ok(Some(n));
    }
    Ok(args.workers.or(config.workers))
}

/// Parse arguments, run the selected command, and map errors to exit codes:
/// 0 success, 2 config error, 3 numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version printing through the error.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (args, body): (&CommonArgs, fn(&Runtime) -> Result<()>) = match &cli.command {
        Command::Rates(a) => (a, cmd_rates),
        Command::Estimate(a) => (a, cmd_estimate),
        Command::Unbiased(a) => (a, cmd_unbiased),
        Command::Logreg(a) => (a, cmd_logreg),
    };
    match execute(args, body) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(args: &CommonArgs, body: fn(&Runtime) -> Result<()>) -> Result<()> {
    let config = ExperimentConfig::from_path(&args.config)?;
    let workers = resolve_workers(args, &config)?;
    let runtime = build_runtime(config, args)?;
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            pool.install(|| body(&runtime))
        }
        None => body(&runtime),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::Io(_) => 2,
        _ => 3,
    }
}
