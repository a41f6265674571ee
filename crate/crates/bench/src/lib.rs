//! Experiment configuration and batch runner behind the benchmark binary.
//!
//! A run is described by [`ExperimentConfig`]: a data source (synthetic or a
//! ratings file), the model and solver parameters, and the repeat/output
//! plan. [`run_experiment`] executes every (repeat, variant) pair, audits
//! each trace, and writes per-run trace CSVs plus aggregate summaries into
//! the output directory. Repeats draw their split and initialization seeds
//! from the master seed up front, so results are reproducible regardless of
//! how many repeats run concurrently.

// Validation code negates comparisons on purpose: `!(x > 0.0)` rejects NaN
// where `x <= 0.0` would wave it through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufReader, Write as _};
use std::path::PathBuf;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dcae::data::{self, DataError, RatingsFormat, SparseRatings};
use dcae::diagnostics::{
    aggregate, rmse, summary_csv_header, validate_trace, DiagnosticsError, RunSummary,
    TraceChecks, TraceConstants,
};
use dcae::matcomp::{build_dc_problem, FactorPair, MatcompError, MatcompInstance};
use dcae::solver::{write_trace_csv, SolverError};
use dcae::{run_solver, DcProblem, SolverConfig, Variant};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("instance error: {0}")]
    Instance(#[from] MatcompError),
    #[error("solver error: {0}")]
    Solver(#[from] SolverError),
    #[error("diagnostics error: {0}")]
    Diagnostics(#[from] DiagnosticsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{count} trace invariant violation(s) across {runs} run(s); see the emitted traces")]
    Violations { count: usize, runs: usize },
}

impl BenchError {
    /// Process exit code contract: 0 success, 2 config, 3 data, 4 solver,
    /// 5 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Instance(_) => 2,
            BenchError::Data(_) | BenchError::Diagnostics(_) | BenchError::Io(_) => 3,
            BenchError::Solver(_) => 4,
            BenchError::Violations { .. } => 5,
        }
    }
}

/// Where the ratings come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        m: usize,
        n: usize,
        t_true: usize,
        density: f64,
        noise_sd: f64,
    },
    File(PathBuf),
}

/// Full description of one experiment. Serializes to flat `section.key =
/// value` text via [`to_text`](ExperimentConfig::to_text) and back via
/// [`parse_config`]; the two are inverse on valid configs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub format: RatingsFormat,
    pub train_fraction: f64,
    pub rank: usize,
    pub lambda: f64,
    pub theta: f64,
    pub c1: f64,
    pub delta: f64,
    pub eta: f64,
    pub l_upper: f64,
    pub l_lower: f64,
    pub mu0: f64,
    /// Inertial weight; `None` means the solver's automatic choice.
    pub gamma: Option<f64>,
    pub max_ls_trials: usize,
    pub tol: f64,
    pub variants: Vec<Variant>,
    pub repeats: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub time_budget_s: Option<f64>,
    pub out_dir: PathBuf,
    pub parallel_repeats: usize,
    /// Record real elapsed seconds in traces; off keeps traces byte-stable.
    pub wall_clock: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic { m: 50, n: 40, t_true: 3, density: 0.5, noise_sd: 0.1 },
            format: RatingsFormat::DoubleColon,
            train_fraction: 0.7,
            rank: 5,
            lambda: 0.1,
            theta: 5.0,
            c1: 3.0,
            delta: 0.9999,
            eta: 0.9,
            l_upper: 1.0,
            l_lower: 1.0,
            mu0: 1.0,
            gamma: None,
            max_ls_trials: 50,
            tol: 1e-8,
            variants: vec![Variant::Dca, Variant::Idca, Variant::Dcae],
            repeats: 1,
            seed: 42,
            max_iters: 500,
            time_budget_s: None,
            out_dir: PathBuf::from("out"),
            parallel_repeats: 1,
            wall_clock: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        match &self.data {
            DataSource::Synthetic { m, n, t_true, density, noise_sd } => {
                if *m == 0 || *n == 0 || *t_true == 0 {
                    return bad("synthetic dimensions and t_true must be positive".into());
                }
                if !(*density > 0.0 && *density <= 1.0) {
                    return bad(format!("synthetic density must lie in (0, 1], got {density}"));
                }
                if !noise_sd.is_finite() || *noise_sd < 0.0 {
                    return bad(format!("synthetic noise_sd must be finite and >= 0, got {noise_sd}"));
                }
            }
            DataSource::File(path) => {
                if path.as_os_str().is_empty() {
                    return bad("data path is empty".into());
                }
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be finite and > 0, got {}", self.lambda));
        }
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return bad(format!("theta must be finite and > 0, got {}", self.theta));
        }
        if !(self.c1 >= 0.0) || !self.c1.is_finite() {
            return bad(format!("c1 must be finite and >= 0, got {}", self.c1));
        }
        if !(self.l_upper >= 1.0) || !self.l_upper.is_finite() {
            return bad(format!("L must be finite and >= 1, got {}", self.l_upper));
        }
        if !(self.l_lower >= 0.0) || !self.l_lower.is_finite() {
            return bad(format!("l must be finite and >= 0, got {}", self.l_lower));
        }
        if self.variants.is_empty() {
            return bad("variants must not be empty".into());
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return bad(format!("variant {v} listed twice"));
            }
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.parallel_repeats == 0 {
            return bad("parallel_repeats must be at least 1".into());
        }
        if let Some(t) = self.time_budget_s {
            if !(t > 0.0) || !t.is_finite() {
                return bad(format!("time_budget_s must be finite and > 0, got {t}"));
            }
        }
        self.solver_config()
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }

    /// The per-run solver configuration this experiment implies.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            delta: self.delta,
            eta: self.eta,
            max_linesearch_trials: self.max_ls_trials,
            max_iterations: self.max_iters,
            time_budget: self.time_budget_s.map(Duration::from_secs_f64),
            stop_tolerance: self.tol,
            inertial_gamma: self.gamma,
            mu0: self.mu0,
            record_lyapunov: true,
            restart_on_increase: false,
            force_beta_zero: false,
            wall_clock_time: self.wall_clock,
        }
    }

    /// Canonical flat `section.key = value` rendering; [`parse_config`]
    /// inverts it.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match &self.data {
            DataSource::Synthetic { m, n, t_true, density, noise_sd } => {
                writeln!(s, "data.source = synthetic").unwrap();
                writeln!(s, "data.synthetic = {m},{n},{t_true},{density},{noise_sd}").unwrap();
            }
            DataSource::File(path) => {
                writeln!(s, "data.source = file").unwrap();
                writeln!(s, "data.path = {}", path.display()).unwrap();
            }
        }
        writeln!(s, "data.format = {}", self.format).unwrap();
        writeln!(s, "data.train_fraction = {}", self.train_fraction).unwrap();
        writeln!(s, "model.rank = {}", self.rank).unwrap();
        writeln!(s, "model.lambda = {}", self.lambda).unwrap();
        writeln!(s, "model.theta = {}", self.theta).unwrap();
        writeln!(s, "model.c1 = {}", self.c1).unwrap();
        writeln!(s, "solver.delta = {}", self.delta).unwrap();
        writeln!(s, "solver.eta = {}", self.eta).unwrap();
        writeln!(s, "solver.L = {}", self.l_upper).unwrap();
        writeln!(s, "solver.l = {}", self.l_lower).unwrap();
        writeln!(s, "solver.mu0 = {}", self.mu0).unwrap();
        match self.gamma {
            Some(g) => writeln!(s, "solver.gamma = {g}").unwrap(),
            None => writeln!(s, "solver.gamma = auto").unwrap(),
        }
        writeln!(s, "solver.max_ls_trials = {}", self.max_ls_trials).unwrap();
        writeln!(s, "solver.tol = {}", self.tol).unwrap();
        let variant_names: Vec<&str> = self.variants.iter().map(|v| v.name()).collect();
        writeln!(s, "run.variants = {}", variant_names.join(",")).unwrap();
        writeln!(s, "run.repeats = {}", self.repeats).unwrap();
        writeln!(s, "run.seed = {}", self.seed).unwrap();
        writeln!(s, "run.max_iters = {}", self.max_iters).unwrap();
        match self.time_budget_s {
            Some(t) => writeln!(s, "run.time_budget_s = {t}").unwrap(),
            None => writeln!(s, "run.time_budget_s = none").unwrap(),
        }
        writeln!(s, "run.out = {}", self.out_dir.display()).unwrap();
        writeln!(s, "run.parallel_repeats = {}", self.parallel_repeats).unwrap();
        writeln!(s, "run.wall_clock = {}", self.wall_clock).unwrap();
        s
    }
}

/// Parses `m,n,t_true,density,noise_sd`.
pub fn parse_synthetic_spec(text: &str) -> Result<DataSource, String> {
    let fields: Vec<&str> = text.split(',').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(format!(
            "synthetic spec needs m,n,t_true,density,noise_sd (5 fields), got {}",
            fields.len()
        ));
    }
    let m = fields[0].parse::<usize>().map_err(|e| format!("bad m {:?}: {e}", fields[0]))?;
    let n = fields[1].parse::<usize>().map_err(|e| format!("bad n {:?}: {e}", fields[1]))?;
    let t_true = fields[2]
        .parse::<usize>()
        .map_err(|e| format!("bad t_true {:?}: {e}", fields[2]))?;
    let density = fields[3]
        .parse::<f64>()
        .map_err(|e| format!("bad density {:?}: {e}", fields[3]))?;
    let noise_sd = fields[4]
        .parse::<f64>()
        .map_err(|e| format!("bad noise_sd {:?}: {e}", fields[4]))?;
    Ok(DataSource::Synthetic { m, n, t_true, density, noise_sd })
}

/// Parses the flat key-value config format written by
/// [`ExperimentConfig::to_text`]: one `section.key = value` per line, `#`
/// comments and blank lines ignored, later lines may not repeat a key.
/// Unknown keys are errors. Missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, BenchError> {
    let bad = |msg: String| BenchError::Config(msg);
    let mut pairs: HashMap<String, String> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected key = value, got {line:?}", lineno + 1)))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.insert(key.clone(), value).is_some() {
            return Err(bad(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
    }

    let mut config = ExperimentConfig::default();
    let mut take = |key: &str| pairs.remove(key);

    match take("data.source").as_deref() {
        None => {}
        Some("synthetic") => { /* the default; data.synthetic refines it below */ }
        Some("file") => {
            let path = take("data.path")
                .ok_or_else(|| bad("data.source = file requires data.path".into()))?;
            config.data = DataSource::File(PathBuf::from(path));
        }
        Some(other) => {
            return Err(bad(format!(
                "data.source must be synthetic or file, got {other:?}"
            )))
        }
    }
    if let Some(spec) = take("data.synthetic") {
        if matches!(config.data, DataSource::File(_)) {
            return Err(bad("data.synthetic conflicts with data.source = file".into()));
        }
        config.data = parse_synthetic_spec(&spec).map_err(bad)?;
    }
    if let Some(p) = take("data.path") {
        // Only meaningful under data.source = file, which consumed it above.
        return Err(bad(format!(
            "data.path = {p:?} requires data.source = file"
        )));
    }

    fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, BenchError>
    where
        T::Err: std::fmt::Display,
    {
        value
            .parse::<T>()
            .map_err(|e| BenchError::Config(format!("bad value for {key}: {e}")))
    }

    macro_rules! scalar {
        ($key:literal, $field:expr) => {
            if let Some(v) = take($key) {
                $field = parse_as($key, &v)?;
            }
        };
    }

    scalar!("data.format", config.format);
    scalar!("data.train_fraction", config.train_fraction);
    scalar!("model.rank", config.rank);
    scalar!("model.lambda", config.lambda);
    scalar!("model.theta", config.theta);
    scalar!("model.c1", config.c1);
    scalar!("solver.delta", config.delta);
    scalar!("solver.eta", config.eta);
    scalar!("solver.L", config.l_upper);
    scalar!("solver.l", config.l_lower);
    scalar!("solver.mu0", config.mu0);
    if let Some(v) = take("solver.gamma") {
        config.gamma = if v == "auto" { None } else { Some(parse_as("solver.gamma", &v)?) };
    }
    scalar!("solver.max_ls_trials", config.max_ls_trials);
    scalar!("solver.tol", config.tol);
    if let Some(v) = take("run.variants") {
        let mut variants = Vec::new();
        for name in v.split(',') {
            variants.push(
                name.parse::<Variant>()
                    .map_err(|e| bad(format!("run.variants: {e}")))?,
            );
        }
        config.variants = variants;
    }
    scalar!("run.repeats", config.repeats);
    scalar!("run.seed", config.seed);
    scalar!("run.max_iters", config.max_iters);
    if let Some(v) = take("run.time_budget_s") {
        config.time_budget_s = if v == "none" {
            None
        } else {
            Some(parse_as("run.time_budget_s", &v)?)
        };
    }
    if let Some(v) = take("run.out") {
        config.out_dir = PathBuf::from(v);
    }
    scalar!("run.parallel_repeats", config.parallel_repeats);
    scalar!("run.wall_clock", config.wall_clock);

    if let Some(key) = pairs.keys().next() {
        return Err(bad(format!("unknown config key {key:?}")));
    }
    Ok(config)
}

/// One (variant, repeat) result inside an [`ExperimentReport`].
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub variant: Variant,
    /// 1-based repeat index.
    pub rep: usize,
    pub summary: RunSummary,
    pub trace_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    /// One aggregate per configured variant, in configuration order.
    pub aggregates: Vec<RunSummary>,
    pub summary_csv: PathBuf,
    pub summary_json: PathBuf,
    pub config_path: PathBuf,
    /// Total trace-invariant violations across all runs.
    pub violations: usize,
}

fn load_ratings(config: &ExperimentConfig) -> Result<SparseRatings, BenchError> {
    match &config.data {
        DataSource::Synthetic { m, n, t_true, density, noise_sd } => Ok(data::synthesize(
            *m,
            *n,
            *t_true,
            *density,
            *noise_sd,
            config.seed,
        )?),
        DataSource::File(path) => {
            let file = std::fs::File::open(path).map_err(DataError::from)?;
            Ok(data::parse_ratings(BufReader::new(file), config.format)?)
        }
    }
}

struct RepOutcome {
    runs: Vec<RunRecord>,
    violations: usize,
}

fn run_one_rep(
    config: &ExperimentConfig,
    full: &SparseRatings,
    rep: usize,
    split_seed: u64,
    init_seed: u64,
) -> Result<RepOutcome, BenchError> {
    let split = data::split(full, config.train_fraction, split_seed)?;
    let instance = MatcompInstance::with_constants(
        split.train.clone(),
        config.rank,
        config.lambda,
        config.theta,
        config.c1,
        config.l_upper,
        config.l_lower,
    )?;
    let x0 = instance.initial_point(init_seed);
    let shape = instance.shape();
    let (problem, oracle) = build_dc_problem(instance);
    let solver_config = config.solver_config();
    let constants = TraceConstants {
        l_upper: problem.l_upper(),
        l_lower: problem.l_lower(),
        delta: config.delta,
        rho: problem.kernel().strong_convexity(),
    };

    let mut runs = Vec::with_capacity(config.variants.len());
    let mut violations = 0usize;
    for &variant in &config.variants {
        let run = run_solver(&problem, &oracle, x0.as_flat(), &solver_config, variant)?;
        let report = validate_trace(&run.trace, &constants, TraceChecks::for_variant(variant));
        violations += report.violations.len();

        let z = FactorPair::from_flat(shape.0, shape.1, shape.2, run.x.clone())?;
        let test_rmse = rmse(&split.test, &z)?;
        let wall = if config.wall_clock { run.wall_time_s } else { 0.0 };
        let summary = RunSummary::single(
            variant,
            run.final_f(),
            test_rmse,
            run.iterations(),
            wall,
            report.violations.len(),
        );

        let trace_path = config
            .out_dir
            .join(format!("trace_{}_{}.csv", variant.name(), rep));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&trace_path)?);
        write_trace_csv(&mut file, &run.trace)?;
        file.flush()?;

        runs.push(RunRecord { variant, rep, summary, trace_path });
    }
    Ok(RepOutcome { runs, violations })
}

/// Runs the whole experiment and writes `trace_<variant>_<rep>.csv` per run,
/// `summary.csv`, `summary.json`, and `config.txt` into the output directory.
/// Trace-invariant violations do not abort the batch: everything is written
/// first, then reported as [`BenchError::Violations`].
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, BenchError> {
    config.validate()?;
    let full = load_ratings(config)?;
    std::fs::create_dir_all(&config.out_dir)?;

    // All per-rep randomness is drawn from the master seed before any run
    // starts, so concurrency cannot change results.
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let rep_seeds: Vec<(u64, u64)> = (0..config.repeats)
        .map(|_| (master.random::<u64>(), master.random::<u64>()))
        .collect();

    let mut outcomes: Vec<Option<Result<RepOutcome, BenchError>>> =
        (0..config.repeats).map(|_| None).collect();
    if config.parallel_repeats <= 1 {
        for i in 0..config.repeats {
            let (split_seed, init_seed) = rep_seeds[i];
            outcomes[i] = Some(run_one_rep(config, &full, i + 1, split_seed, init_seed));
        }
    } else {
        for wave_start in (0..config.repeats).step_by(config.parallel_repeats) {
            let wave_end = (wave_start + config.parallel_repeats).min(config.repeats);
            std::thread::scope(|scope| {
                let handles: Vec<_> = (wave_start..wave_end)
                    .map(|i| {
                        let (split_seed, init_seed) = rep_seeds[i];
                        let full = &full;
                        scope.spawn(move || run_one_rep(config, full, i + 1, split_seed, init_seed))
                    })
                    .collect();
                for (i, handle) in (wave_start..wave_end).zip(handles) {
                    outcomes[i] = Some(handle.join().expect("repeat job panicked"));
                }
            });
        }
    }

    let mut runs: Vec<RunRecord> = Vec::new();
    let mut violations = 0usize;
    for outcome in outcomes {
        let outcome = outcome.expect("every repeat was scheduled")?;
        violations += outcome.violations;
        runs.extend(outcome.runs);
    }

    let mut aggregates = Vec::with_capacity(config.variants.len());
    for &variant in &config.variants {
        let of_variant: Vec<RunSummary> = runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.summary.clone())
            .collect();
        aggregates.push(aggregate(&of_variant)?);
    }

    let summary_csv = config.out_dir.join("summary.csv");
    {
        let mut file = std::io::BufWriter::new(std::fs::File::create(&summary_csv)?);
        writeln!(file, "{}", summary_csv_header())?;
        for r in &runs {
            writeln!(file, "{}", r.summary.csv_row(&r.rep.to_string()))?;
        }
        for a in &aggregates {
            writeln!(file, "{}", a.csv_row("mean"))?;
        }
        file.flush()?;
    }

    let summary_json = config.out_dir.join("summary.json");
    {
        let body = serde_json::json!({
            "repeats": config.repeats,
            "variants": aggregates.iter().map(|a| a.to_json()).collect::<Vec<_>>(),
        });
        std::fs::write(&summary_json, format!("{body:#}\n"))?;
    }

    let config_path = config.out_dir.join("config.txt");
    std::fs::write(&config_path, config.to_text())?;

    let report = ExperimentReport {
        runs,
        aggregates,
        summary_csv,
        summary_json,
        config_path,
        violations,
    };
    if report.violations > 0 {
        return Err(BenchError::Violations {
            count: report.violations,
            runs: report.runs.len(),
        });
    }
    Ok(report)
}
