use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dcae_bench::{
    parse_config, parse_synthetic_spec, run_experiment, BenchError, DataSource, ExperimentConfig,
};

/// Benchmark of difference-of-convex solvers on nonnegative matrix
/// completion with an exponential concave penalty.
///
/// Runs the configured variants over seeded repeats, audits every trace
/// against its convergence guarantees, and writes per-run trace CSVs plus
/// aggregate summaries. Flags override values from --config.
#[derive(Debug, Parser)]
#[command(name = "dcae-bench")]
struct Cli {
    /// Experiment config file (flat `section.key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Ratings file to load instead of synthesizing data.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic instance given as m,n,t_true,density,noise_sd.
    #[arg(long, value_name = "SPEC")]
    synthetic: Option<String>,
    /// Ratings file format: mlcolon, csv, or ws.
    #[arg(long, value_name = "NAME")]
    format: Option<String>,
    /// Fraction of observed entries assigned to training, in (0, 1).
    #[arg(long, value_name = "F")]
    train_fraction: Option<f64>,
    /// Factorization rank of the model.
    #[arg(long, value_name = "T")]
    rank: Option<usize>,
    /// Penalty weight lambda.
    #[arg(long, value_name = "X")]
    lambda: Option<f64>,
    /// Penalty sharpness theta.
    #[arg(long, value_name = "X")]
    theta: Option<f64>,
    /// Extrapolation slack delta in (0, 1).
    #[arg(long, value_name = "X")]
    delta: Option<f64>,
    /// Line-search shrink factor eta in (0, 1).
    #[arg(long, value_name = "X")]
    eta: Option<f64>,
    /// Relative-smoothness upper constant (>= 1).
    #[arg(long = "L", value_name = "X")]
    l_upper: Option<f64>,
    /// Relative-smoothness lower constant (>= 0).
    #[arg(long = "l", value_name = "X")]
    l_lower: Option<f64>,
    /// Comma-separated subset of dca,idca,dcae.
    #[arg(long, value_name = "LIST")]
    variants: Option<String>,
    /// Number of seeded repeats.
    #[arg(long, value_name = "N")]
    repeats: Option<usize>,
    /// Master seed; all split and initialization seeds derive from it.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Iteration budget per run.
    #[arg(long, value_name = "N")]
    max_iters: Option<usize>,
    /// Wall-clock budget per run in seconds.
    #[arg(long, value_name = "X")]
    time_budget_s: Option<f64>,
    /// Relative step tolerance; 0 disables the tolerance stop.
    #[arg(long, value_name = "X")]
    tol: Option<f64>,
    /// Output directory for traces and summaries.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_defaults: bool,
    /// Run up to N repeats concurrently.
    #[arg(long, value_name = "N")]
    parallel_repeats: Option<usize>,
    /// Record real elapsed seconds in traces (gives up byte-identical
    /// reruns).
    #[arg(long)]
    wall_clock: bool,
}

fn build_config(cli: Cli) -> Result<ExperimentConfig, BenchError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                BenchError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(path) = cli.data {
        config.data = DataSource::File(path);
    }
    if let Some(spec) = cli.synthetic {
        config.data = parse_synthetic_spec(&spec).map_err(BenchError::Config)?;
    }
    if let Some(name) = cli.format {
        config.format = name.parse().map_err(BenchError::Config)?;
    }
    if let Some(v) = cli.train_fraction {
        config.train_fraction = v;
    }
    if let Some(v) = cli.rank {
        config.rank = v;
    }
    if let Some(v) = cli.lambda {
        config.lambda = v;
    }
    if let Some(v) = cli.theta {
        config.theta = v;
    }
    if let Some(v) = cli.delta {
        config.delta = v;
    }
    if let Some(v) = cli.eta {
        config.eta = v;
    }
    if let Some(v) = cli.l_upper {
        config.l_upper = v;
    }
    if let Some(v) = cli.l_lower {
        config.l_lower = v;
    }
    if let Some(list) = cli.variants {
        let mut variants = Vec::new();
        for name in list.split(',') {
            variants.push(name.parse().map_err(BenchError::Config)?);
        }
        config.variants = variants;
    }
    if let Some(v) = cli.repeats {
        config.repeats = v;
    }
    if let Some(v) = cli.seed {
        config.seed = v;
    }
    if let Some(v) = cli.max_iters {
        config.max_iters = v;
    }
    if let Some(v) = cli.time_budget_s {
        config.time_budget_s = Some(v);
    }
    if let Some(v) = cli.tol {
        config.tol = v;
    }
    if let Some(dir) = cli.out {
        config.out_dir = dir;
    }
    if let Some(v) = cli.parallel_repeats {
        config.parallel_repeats = v;
    }
    if cli.wall_clock {
        config.wall_clock = true;
    }
    Ok(config)
}

fn real_main() -> i32 {
    let cli = Cli::parse();
    if cli.print_defaults {
        print!("{}", ExperimentConfig::default().to_text());
        return 0;
    }
    let config = match build_config(cli) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match run_experiment(&config) {
        Ok(report) => {
            for a in &report.aggregates {
                println!(
                    "{}: mean final F {:.6e}, mean test RMSE {:.4} over {} repeat(s)",
                    a.variant, a.final_f, a.test_rmse, a.repeats
                );
            }
            println!("results written to {}", config.out_dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(u8::try_from(real_main()).unwrap_or(1))
}
