//! Post-hoc certification of solver runs.
//!
//! A trace is re-audited against the inequalities the method is supposed to
//! guarantee: sufficient decrease per step, monotonicity of the inertial
//! Lyapunov function, the extrapolation acceptance condition, and square
//! summability of the step lengths. Runs that carry no such guarantee (the
//! plain inertial variant) are checked for finiteness only, selected through
//! [`TraceChecks`]. Aggregation over repeated runs and test-set error round
//! out the reporting side.

use serde_json::json;
use thiserror::Error;

use crate::data::SparseRatings;
use crate::matcomp::FactorPair;
use crate::solver::{IterationRecord, Variant};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("test set is empty")]
    EmptyTest,
    #[error("factor shape ({0}, rank, {1}) does not cover a {2} x {3} rating grid")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("cannot aggregate runs of different variants: {0} vs {1}")]
    MixedVariants(Variant, Variant),
}

/// Root mean squared prediction error over the observed entries of `test`.
pub fn rmse(test: &SparseRatings, z: &FactorPair) -> Result<f64, DiagnosticsError> {
    if test.is_empty() {
        return Err(DiagnosticsError::EmptyTest);
    }
    if z.m() != test.n_rows() || z.n() != test.n_cols() {
        return Err(DiagnosticsError::ShapeMismatch(z.m(), z.n(), test.n_rows(), test.n_cols()));
    }
    let mut acc = 0.0;
    for e in test.entries() {
        let resid = z.predict(e.row, e.col) - e.value;
        acc += resid * resid;
    }
    Ok((acc / test.len() as f64).sqrt())
}

/// The constants a trace was produced under; needed to reconstruct the
/// inequalities being checked.
#[derive(Debug, Clone, Copy)]
pub struct TraceConstants {
    pub l_upper: f64,
    pub l_lower: f64,
    pub delta: f64,
    /// Strong convexity modulus of the kernel.
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonFinite,
    Decrease,
    BetaCondition,
    Lyapunov,
    Summability,
}

/// One broken inequality at iteration `k`; `excess` is how far past the
/// tolerance it landed.
#[derive(Debug, Clone)]
pub struct Violation {
    pub k: usize,
    pub kind: ViolationKind,
    pub excess: f64,
}

#[derive(Debug, Clone)]
pub struct TraceReport {
    pub violations: Vec<Violation>,
    pub records: usize,
}

impl TraceReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Which inequalities to enforce. The extrapolated and plain majorization
/// variants guarantee all of them (the plain one is the zero-extrapolation
/// special case, so the same chain of bounds applies); the inertial variant
/// promises nothing beyond finite iterates.
#[derive(Debug, Clone, Copy)]
pub struct TraceChecks {
    pub finiteness: bool,
    pub decrease: bool,
    pub lyapunov: bool,
    pub beta_condition: bool,
    pub summability: bool,
}

impl TraceChecks {
    pub fn all() -> Self {
        TraceChecks {
            finiteness: true,
            decrease: true,
            lyapunov: true,
            beta_condition: true,
            summability: true,
        }
    }

    pub fn finiteness_only() -> Self {
        TraceChecks {
            finiteness: true,
            decrease: false,
            lyapunov: false,
            beta_condition: false,
            summability: false,
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Dca | Variant::Dcae => Self::all(),
            Variant::Idca => Self::finiteness_only(),
        }
    }
}

/// Relative slack allowed on the per-step decrease inequality.
pub const DECREASE_RTOL: f64 = 1e-8;
/// Relative slack allowed on Lyapunov monotonicity.
pub const LYAPUNOV_RTOL: f64 = 1e-8;
/// Absolute-ish slack on re-checked extrapolation acceptances.
pub const BETA_SLACK_TOL: f64 = 1e-12;
/// Additive slack on the square-summability budget.
pub const SUMMABILITY_SLACK: f64 = 1e-6;

/// Re-derives every enforced inequality from the recorded trace.
///
/// Decrease, per consecutive pair (prev at k, curr at k+1):
///
/// ```text
///     F_curr <= F_prev + delta * L * D_prev - L * D_curr + rtol * (1 + |F_prev|)
/// ```
///
/// where D_prev is the Bregman step into prev and D_curr the step into curr.
/// Lyapunov: `F + (1 + delta) * L / 2 * D` never increases (checked where
/// recorded). Beta: the stored acceptance slack stays below tolerance.
/// Summability: running sum of squared step norms stays within
/// `(F_0 - min F) / ((1 - delta) * L * rho)` plus slack.
pub fn validate_trace(
    trace: &[IterationRecord],
    constants: &TraceConstants,
    checks: TraceChecks,
) -> TraceReport {
    assert!(!trace.is_empty(), "a trace always contains the initial record");
    let mut violations = Vec::new();

    if checks.finiteness {
        for rec in trace {
            let mut finite = rec.f.is_finite()
                && rec.beta.is_finite()
                && rec.step_norm.is_finite()
                && rec.bregman_step.is_finite();
            if let Some(phi) = rec.phi {
                finite = finite && phi.is_finite();
            }
            if !finite {
                violations.push(Violation { k: rec.k, kind: ViolationKind::NonFinite, excess: f64::INFINITY });
            }
        }
    }

    let l = constants.l_upper;
    let f_min = trace.iter().map(|r| r.f).fold(f64::INFINITY, f64::min);
    let sum_budget = {
        let denom = (1.0 - constants.delta) * l * constants.rho;
        if denom > 0.0 && f_min.is_finite() {
            (trace[0].f - f_min) / denom + SUMMABILITY_SLACK
        } else {
            f64::INFINITY
        }
    };
    let mut step_sq_sum = 0.0;

    for pair in trace.windows(2) {
        let (prev, curr) = (&pair[0], &pair[1]);

        if checks.decrease {
            let lhs = curr.f - prev.f - constants.delta * l * prev.bregman_step + l * curr.bregman_step;
            let tol = DECREASE_RTOL * (1.0 + prev.f.abs());
            if lhs > tol {
                violations.push(Violation {
                    k: curr.k,
                    kind: ViolationKind::Decrease,
                    excess: lhs - tol,
                });
            }
        }

        if checks.lyapunov {
            if let (Some(phi_prev), Some(phi_curr)) = (prev.phi, curr.phi) {
                let tol = LYAPUNOV_RTOL * (1.0 + phi_prev.abs());
                if phi_curr > phi_prev + tol {
                    violations.push(Violation {
                        k: curr.k,
                        kind: ViolationKind::Lyapunov,
                        excess: phi_curr - phi_prev - tol,
                    });
                }
            }
        }

        if checks.beta_condition {
            if let Some(slack) = curr.beta_slack {
                let tol = BETA_SLACK_TOL * (1.0 + prev.bregman_step);
                if slack > tol {
                    violations.push(Violation {
                        k: curr.k,
                        kind: ViolationKind::BetaCondition,
                        excess: slack - tol,
                    });
                }
            }
        }

        if checks.summability {
            step_sq_sum += curr.step_norm * curr.step_norm;
            if step_sq_sum > sum_budget {
                violations.push(Violation {
                    k: curr.k,
                    kind: ViolationKind::Summability,
                    excess: step_sq_sum - sum_budget,
                });
            }
        }
    }

    TraceReport { violations, records: trace.len() }
}

/// Outcome of one run, or the mean of several; `repeats > 1` marks an
/// aggregate and fills the std fields.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub variant: Variant,
    pub final_f: f64,
    pub test_rmse: f64,
    pub iterations: f64,
    pub wall_time_s: f64,
    pub violations: usize,
    pub final_f_std: f64,
    pub test_rmse_std: f64,
    pub repeats: usize,
}

impl RunSummary {
    pub fn single(
        variant: Variant,
        final_f: f64,
        test_rmse: f64,
        iterations: usize,
        wall_time_s: f64,
        violations: usize,
    ) -> Self {
        RunSummary {
            variant,
            final_f,
            test_rmse,
            iterations: iterations as f64,
            wall_time_s,
            violations,
            final_f_std: 0.0,
            test_rmse_std: 0.0,
            repeats: 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "variant": self.variant.name(),
            "final_f": self.final_f,
            "test_rmse": self.test_rmse,
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
            "violations": self.violations,
            "final_f_std": self.final_f_std,
            "test_rmse_std": self.test_rmse_std,
            "repeats": self.repeats,
        })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

fn sample_std(values: &[f64], mu: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var: f64 = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Means and sample standard deviations over repeats of one variant.
pub fn aggregate(runs: &[RunSummary]) -> Result<RunSummary, DiagnosticsError> {
    let first = runs.first().ok_or(DiagnosticsError::EmptyAggregate)?;
    for r in runs {
        if r.variant != first.variant {
            return Err(DiagnosticsError::MixedVariants(first.variant, r.variant));
        }
    }
    let finals: Vec<f64> = runs.iter().map(|r| r.final_f).collect();
    let rmses: Vec<f64> = runs.iter().map(|r| r.test_rmse).collect();
    let final_f = mean(finals.iter().copied());
    let test_rmse = mean(rmses.iter().copied());
    Ok(RunSummary {
        variant: first.variant,
        final_f,
        test_rmse,
        iterations: mean(runs.iter().map(|r| r.iterations)),
        wall_time_s: mean(runs.iter().map(|r| r.wall_time_s)),
        violations: runs.iter().map(|r| r.violations).sum(),
        final_f_std: sample_std(&finals, final_f),
        test_rmse_std: sample_std(&rmses, test_rmse),
        repeats: runs.len(),
    })
}

pub fn summary_csv_header() -> &'static str {
    "variant,rep,final_f,test_rmse,iterations,wall_time_s,violations"
}

impl RunSummary {
    /// One CSV row under [`summary_csv_header`]; `rep` is the repeat index or
    /// a marker like `mean`.
    pub fn csv_row(&self, rep: &str) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.variant.name(),
            rep,
            self.final_f,
            self.test_rmse,
            self.iterations,
            self.wall_time_s,
            self.violations
        )
    }
}
