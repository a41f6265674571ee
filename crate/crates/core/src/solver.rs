//! The DC iteration driver: plain, inertial, and extrapolated variants.
//!
//! All three variants solve the same per-iteration model through a
//! [`SubproblemOracle`]; they differ only in the point the smooth part is
//! linearized at and in an optional inertial correction of the linear term.
//! The extrapolated variant ([`Variant::Dcae`]) picks its momentum weight by
//! backtracking until the Bregman-distance condition
//!
//! ```text
//!     (L + l) * D_phi(x_k, y_k)  <=  delta * L * D_phi(x_{k-1}, x_k)
//! ```
//!
//! holds, which is exactly what makes the per-step decrease inequality and the
//! Lyapunov monotonicity checked by `diagnostics` provable rather than
//! empirical luck.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bregman::{norm, DcProblem, OracleError, SubproblemOracle};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: problem expects {expected}, point has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("starting point is non-finite or outside dom g")]
    BadStart,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("objective became non-finite at iteration {k}")]
    Diverged { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Dca,
    Idca,
    Dcae,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dca => "dca",
            Variant::Idca => "idca",
            Variant::Dcae => "dcae",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dca" => Ok(Variant::Dca),
            "idca" => Ok(Variant::Idca),
            "dcae" => Ok(Variant::Dcae),
            other => Err(format!("unknown variant {other:?} (expected dca, idca, or dcae)")),
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `||x_k - x_{k-1}|| <= tol * (1 + ||x_k||)`.
    Tolerance,
    MaxIterations,
    TimeBudget,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Extrapolation slack in (0, 1); larger admits more momentum.
    pub delta: f64,
    /// Backtracking shrink factor in (0, 1).
    pub eta: f64,
    /// Shrink budget per line search; once exhausted, beta is forced to 0,
    /// which always satisfies the extrapolation condition.
    pub max_linesearch_trials: usize,
    pub max_iterations: usize,
    pub time_budget: Option<Duration>,
    /// Relative step tolerance; 0 disables the tolerance stop.
    pub stop_tolerance: f64,
    /// Inertial weight for [`Variant::Idca`]; `None` picks 0.1 * L * rho.
    pub inertial_gamma: Option<f64>,
    /// Start of the Nesterov sequence; >= 1, and 1 reproduces the classical
    /// schedule (first step unextrapolated).
    pub mu0: f64,
    /// Record the Lyapunov value F(x) + ((1+delta)L/2) * D_phi(x_prev, x)
    /// in the trace.
    pub record_lyapunov: bool,
    /// Reset mu to 1 whenever the objective increases. Off by default: the
    /// plain schedule never resets.
    pub restart_on_increase: bool,
    /// Pin beta to 0 (skipping the line search entirely), which makes the
    /// extrapolated variant coincide with the plain one.
    pub force_beta_zero: bool,
    /// Record real elapsed seconds in the trace. Off by default so identical
    /// runs produce byte-identical traces; the time column reads 0.
    pub wall_clock_time: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta: 0.9999,
            eta: 0.9,
            max_linesearch_trials: 50,
            max_iterations: 500,
            time_budget: None,
            stop_tolerance: 1e-8,
            inertial_gamma: None,
            mu0: 1.0,
            record_lyapunov: true,
            restart_on_increase: false,
            force_beta_zero: false,
            wall_clock_time: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: String| Err(SolverError::Config(msg));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.stop_tolerance >= 0.0) || !self.stop_tolerance.is_finite() {
            return bad(format!("stop_tolerance must be finite and >= 0, got {}", self.stop_tolerance));
        }
        if !(self.mu0 >= 1.0) || !self.mu0.is_finite() {
            return bad(format!("mu0 must be finite and >= 1, got {}", self.mu0));
        }
        if let Some(g) = self.inertial_gamma {
            if !(g >= 0.0) || !g.is_finite() {
                return bad(format!("inertial_gamma must be finite and >= 0, got {g}"));
            }
        }
        Ok(())
    }
}

/// Rolling state of one solver run. `bregman_step` caches
/// `D_phi(x_prev, x_curr)`, the quantity the next line search compares
/// against.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub x_curr: Vec<f64>,
    pub x_prev: Vec<f64>,
    /// Extrapolated point of the step being taken; equals `x_curr` whenever
    /// beta is 0.
    pub y: Vec<f64>,
    pub beta: f64,
    /// Nesterov sequence value used to seed the next line search.
    pub mu: f64,
    pub k: usize,
    pub f_curr: f64,
    pub bregman_step: f64,
}

impl IterateState {
    /// Run state at k = 0 with the conventional x_{-1} = x_0.
    pub fn initial(x0: Vec<f64>, f0: f64, mu0: f64) -> Self {
        IterateState {
            x_prev: x0.clone(),
            y: x0.clone(),
            x_curr: x0,
            beta: 0.0,
            mu: mu0,
            k: 0,
            f_curr: f0,
            bregman_step: 0.0,
        }
    }
}

/// One trace row. Row `k` describes the state after `k` steps; row 0 is the
/// starting point, with zero step quantities.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub k: usize,
    pub f: f64,
    pub beta: f64,
    pub ls_trials: usize,
    /// `||x_k - x_{k-1}||`.
    pub step_norm: f64,
    /// `D_phi(x_{k-1}, x_k)`.
    pub bregman_step: f64,
    /// Lyapunov value, when recording is enabled.
    pub phi: Option<f64>,
    pub time_s: f64,
    /// Extrapolation-condition slack measured when beta was accepted
    /// (nonpositive means the condition held). `None` for steps that never
    /// ran the line search. Kept in memory only; not a CSV column.
    pub beta_slack: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SolverRun {
    pub x: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Real elapsed seconds, measured regardless of `wall_clock_time`.
    pub wall_time_s: f64,
}

impl SolverRun {
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    pub fn final_f(&self) -> f64 {
        self.trace.last().expect("trace always has the initial record").f
    }
}

/// Next element of the Nesterov sequence: mu -> (1 + sqrt(1 + 4 mu^2)) / 2.
/// Strictly increasing, so the implied beta = (mu - 1)/mu climbs toward 1.
///
/// # Panics
/// If `mu_prev < 1`.
pub fn nesterov_mu_next(mu_prev: f64) -> f64 {
    assert!(mu_prev >= 1.0, "nesterov sequence requires mu >= 1, got {mu_prev}");
    0.5 * (1.0 + (1.0 + 4.0 * mu_prev * mu_prev).sqrt())
}

/// Outcome of one extrapolation line search.
#[derive(Debug, Clone)]
pub struct LineSearch {
    pub beta: f64,
    /// `x_curr + beta * (x_curr - x_prev)` for the accepted beta.
    pub y: Vec<f64>,
    /// Number of shrinks performed before acceptance.
    pub trials: usize,
    /// `(L + l) * D_phi(x_curr, y)` at acceptance.
    pub lhs: f64,
    /// `delta * L * D_phi(x_prev, x_curr)`, clamped to be nonnegative.
    pub rhs: f64,
}

/// Backtracks beta from `beta_init` by factors of `eta` until the
/// extrapolation condition holds, forcing beta = 0 once the shrink budget is
/// spent. beta = 0 always passes: the left side is exactly zero and the right
/// side is nonnegative.
pub fn find_beta<P: DcProblem + ?Sized>(
    problem: &P,
    x_curr: &[f64],
    x_prev: &[f64],
    beta_init: f64,
    config: &SolverConfig,
) -> LineSearch {
    debug_assert!((0.0..1.0).contains(&beta_init), "beta_init must lie in [0, 1)");
    let kernel = problem.kernel();
    let weight = problem.l_upper() + problem.l_lower();
    // Clamp away any tiny negative the kernel's distance may produce from
    // rounding: the true value is nonnegative and beta = 0 must always pass.
    let rhs = (config.delta * problem.l_upper() * kernel.distance(x_prev, x_curr)).max(0.0);
    let mut beta = beta_init;
    let mut trials = 0;
    loop {
        if beta == 0.0 {
            return LineSearch { beta: 0.0, y: x_curr.to_vec(), trials, lhs: 0.0, rhs };
        }
        let y: Vec<f64> = x_curr
            .iter()
            .zip(x_prev)
            .map(|(&c, &p)| c + beta * (c - p))
            .collect();
        let lhs = weight * kernel.distance(x_curr, &y);
        if lhs <= rhs {
            return LineSearch { beta, y, trials, lhs, rhs };
        }
        if trials >= config.max_linesearch_trials {
            return LineSearch { beta: 0.0, y: x_curr.to_vec(), trials, lhs: 0.0, rhs };
        }
        trials += 1;
        beta *= config.eta;
    }
}

/// Linear term of the model problem: `L * grad phi(p) - grad f(p) + xi` with
/// `xi = h_subgradient(q)`. The smooth parts are taken at `p` (the
/// extrapolated point for the accelerated variant), the concave part always
/// at the current iterate.
fn model_linear<P: DcProblem + ?Sized>(problem: &P, p: &[f64], q: &[f64]) -> Vec<f64> {
    let l_up = problem.l_upper();
    let grad_phi = problem.kernel().gradient(p);
    let grad_f = problem.f_gradient(p);
    let xi = problem.h_subgradient(q);
    (0..grad_phi.len())
        .map(|i| l_up * grad_phi[i] - grad_f[i] + xi[i])
        .collect()
}

/// One plain DC step from `x_curr`.
pub fn dca_step<P, O>(problem: &P, oracle: &O, x_curr: &[f64]) -> Result<Vec<f64>, SolverError>
where
    P: DcProblem + ?Sized,
    O: SubproblemOracle + ?Sized,
{
    let linear = model_linear(problem, x_curr, x_curr);
    Ok(oracle.solve(&linear)?)
}

/// One inertial DC step: the plain linear term perturbed by
/// `gamma * (x_curr - x_prev)`.
pub fn idca_step<P, O>(
    problem: &P,
    oracle: &O,
    x_curr: &[f64],
    x_prev: &[f64],
    gamma: f64,
) -> Result<Vec<f64>, SolverError>
where
    P: DcProblem + ?Sized,
    O: SubproblemOracle + ?Sized,
{
    debug_assert!(gamma >= 0.0);
    let mut linear = model_linear(problem, x_curr, x_curr);
    for i in 0..linear.len() {
        linear[i] += gamma * (x_curr[i] - x_prev[i]);
    }
    Ok(oracle.solve(&linear)?)
}

/// One extrapolated step from a state whose `y` and `beta` were already
/// accepted by [`find_beta`]. Consumes the state and returns its successor
/// with `x_prev`/`x_curr` shifted, the cached objective and Bregman step
/// updated, and the Nesterov value advanced.
pub fn dcae_step<P, O>(
    problem: &P,
    oracle: &O,
    state: IterateState,
    config: &SolverConfig,
) -> Result<IterateState, SolverError>
where
    P: DcProblem + ?Sized,
    O: SubproblemOracle + ?Sized,
{
    let linear = model_linear(problem, &state.y, &state.x_curr);
    let x_next = oracle.solve(&linear)?;
    advance(problem, config, state, x_next)
}

fn advance<P: DcProblem + ?Sized>(
    problem: &P,
    config: &SolverConfig,
    mut state: IterateState,
    x_next: Vec<f64>,
) -> Result<IterateState, SolverError> {
    if x_next.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::Diverged { k: state.k + 1 });
    }
    let f_next = problem.objective(&x_next);
    if !f_next.is_finite() {
        return Err(SolverError::Diverged { k: state.k + 1 });
    }
    let increased = f_next > state.f_curr;
    state.bregman_step = problem.kernel().distance(&state.x_curr, &x_next);
    state.x_prev = std::mem::replace(&mut state.x_curr, x_next);
    state.f_curr = f_next;
    state.k += 1;
    state.mu = if config.restart_on_increase && increased {
        1.0
    } else {
        nesterov_mu_next(state.mu)
    };
    Ok(state)
}

/// Everything a per-step observer gets to see, referenced straight from the
/// solver's working memory. `k` is the trace index of `x_next`.
pub struct StepObservation<'a> {
    pub k: usize,
    pub x_prev: &'a [f64],
    pub x_curr: &'a [f64],
    pub y: &'a [f64],
    pub x_next: &'a [f64],
    pub beta: f64,
    pub ls_trials: usize,
}

pub fn run_solver<P, O>(
    problem: &P,
    oracle: &O,
    x0: &[f64],
    config: &SolverConfig,
    variant: Variant,
) -> Result<SolverRun, SolverError>
where
    P: DcProblem + ?Sized,
    O: SubproblemOracle + ?Sized,
{
    run_with_observer(problem, oracle, x0, config, variant, |_| {})
}

/// [`run_solver`] with a callback invoked once per step, before the state
/// advances, so tests can recheck the extrapolation condition independently
/// of the solver's own bookkeeping.
pub fn run_with_observer<P, O, F>(
    problem: &P,
    oracle: &O,
    x0: &[f64],
    config: &SolverConfig,
    variant: Variant,
    mut observer: F,
) -> Result<SolverRun, SolverError>
where
    P: DcProblem + ?Sized,
    O: SubproblemOracle + ?Sized,
    F: FnMut(&StepObservation<'_>),
{
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(SolverError::Dimension { expected: problem.dim(), got: x0.len() });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::BadStart);
    }
    let f0 = problem.objective(x0);
    if !f0.is_finite() {
        return Err(SolverError::BadStart);
    }

    let start = Instant::now();
    let gamma = config
        .inertial_gamma
        .unwrap_or_else(|| 0.1 * problem.l_upper() * problem.kernel().strong_convexity());
    let mut state = IterateState::initial(x0.to_vec(), f0, config.mu0);
    let mut trace = Vec::with_capacity(config.max_iterations + 1);
    trace.push(IterationRecord {
        k: 0,
        f: f0,
        beta: 0.0,
        ls_trials: 0,
        step_norm: 0.0,
        bregman_step: 0.0,
        phi: config.record_lyapunov.then_some(f0),
        time_s: 0.0,
        beta_slack: None,
    });

    let stop = loop {
        if state.k >= config.max_iterations {
            break StopReason::MaxIterations;
        }
        if let Some(budget) = config.time_budget {
            if start.elapsed() >= budget {
                break StopReason::TimeBudget;
            }
        }

        let ls_trials;
        let mut slack = None;
        match variant {
            Variant::Dca | Variant::Idca => {
                state.beta = 0.0;
                state.y.clone_from(&state.x_curr);
                ls_trials = 0;
            }
            Variant::Dcae => {
                let beta_init = if config.force_beta_zero {
                    0.0
                } else {
                    (state.mu - 1.0) / state.mu
                };
                let ls = find_beta(problem, &state.x_curr, &state.x_prev, beta_init, config);
                slack = Some(ls.lhs - config.delta * problem.l_upper() * state.bregman_step);
                state.beta = ls.beta;
                state.y = ls.y;
                ls_trials = ls.trials;
            }
        }

        let x_next = match variant {
            Variant::Idca => idca_step(problem, oracle, &state.x_curr, &state.x_prev, gamma)?,
            Variant::Dca | Variant::Dcae => {
                let linear = model_linear(problem, &state.y, &state.x_curr);
                oracle.solve(&linear)?
            }
        };

        observer(&StepObservation {
            k: state.k + 1,
            x_prev: &state.x_prev,
            x_curr: &state.x_curr,
            y: &state.y,
            x_next: &x_next,
            beta: state.beta,
            ls_trials,
        });

        let step_norm = x_next
            .iter()
            .zip(&state.x_curr)
            .map(|(&n, &c)| (n - c) * (n - c))
            .sum::<f64>()
            .sqrt();
        let beta_rec = state.beta;
        state = advance(problem, config, state, x_next)?;

        let phi = config.record_lyapunov.then(|| {
            state.f_curr + 0.5 * (1.0 + config.delta) * problem.l_upper() * state.bregman_step
        });
        let time_s = if config.wall_clock_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        trace.push(IterationRecord {
            k: state.k,
            f: state.f_curr,
            beta: beta_rec,
            ls_trials,
            step_norm,
            bregman_step: state.bregman_step,
            phi,
            time_s,
            beta_slack: slack,
        });

        if config.stop_tolerance > 0.0
            && step_norm <= config.stop_tolerance * (1.0 + norm(&state.x_curr))
        {
            break StopReason::Tolerance;
        }
    };

    Ok(SolverRun {
        x: state.x_curr,
        trace,
        stop,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Fixed-point residual of the plain DC map: `||x - dca_step(x)||`. Zero
/// exactly when x reproduces itself, which certifies criticality.
pub fn criticality_residual(x: &[f64], x_next_from_dca: &[f64]) -> f64 {
    assert_eq!(x.len(), x_next_from_dca.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        let d = x[i] - x_next_from_dca[i];
        acc += d * d;
    }
    acc.sqrt()
}

/// Writes the trace in the fixed CSV layout
/// `k,F,beta,ls_trials,step_norm,bregman_step,phi_lyapunov,time_s`.
/// The Lyapunov cell is left empty when it was not recorded.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(out, "k,F,beta,ls_trials,step_norm,bregman_step,phi_lyapunov,time_s")?;
    for r in trace {
        match r.phi {
            Some(phi) => writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.k, r.f, r.beta, r.ls_trials, r.step_norm, r.bregman_step, phi, r.time_s
            )?,
            None => writeln!(
                out,
                "{},{},{},{},{},{},,{}",
                r.k, r.f, r.beta, r.ls_trials, r.step_norm, r.bregman_step, r.time_s
            )?,
        }
    }
    Ok(())
}
