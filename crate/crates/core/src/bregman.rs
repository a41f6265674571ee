//! Bregman kernels, DC problem traits, and convexity audits.
//!
//! Everything downstream (solvers, the matrix completion instance, the trace
//! validator) speaks in terms of the two traits defined here: [`DcProblem`]
//! describes the objective split `F = f + g - h` together with the kernel that
//! measures smoothness, and [`SubproblemOracle`] solves the strongly convex
//! model problem that every iteration reduces to.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BregmanError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("non-finite input at coordinate {index}")]
    NonFinite { index: usize },
}

/// Failure of a subproblem solve. Oracles are expected to succeed on all
/// finite inputs; anything else is reported, never glossed over.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle setup: {0}")]
    Invalid(String),
    #[error("subproblem solve failed: {0}")]
    Numerical(String),
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// A differentiable, strongly convex reference function `phi`.
///
/// The induced Bregman distance is
/// `D_phi(x, y) = phi(x) - phi(y) - <grad phi(y), x - y>`,
/// nonnegative and zero exactly at `x = y`. Strong convexity of `phi` with
/// modulus `rho` gives the lower bound `D_phi(x, y) >= rho/2 * ||x - y||^2`,
/// which is what lets a Bregman decrease certify an actual step decrease.
pub trait BregmanKernel {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Modulus `rho > 0` such that `phi - rho/2 * ||.||^2` is convex.
    fn strong_convexity(&self) -> f64;

    /// `D_phi(x, y)`. The default evaluates the definition directly;
    /// implementations should override it with a cancellation-free form when
    /// one exists, since the solver probes distances between nearly equal
    /// points.
    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let grad_y = self.gradient(y);
        let mut inner = 0.0;
        for i in 0..x.len() {
            inner += grad_y[i] * (x[i] - y[i]);
        }
        self.value(x) - self.value(y) - inner
    }
}

/// `phi(x) = 1/2 ||x||^2`, the Euclidean kernel. Its Bregman distance is the
/// squared half-distance, so solvers running on it reduce to their familiar
/// gradient-style forms.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticKernel;

impl BregmanKernel for QuadraticKernel {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * norm_sq(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn strong_convexity(&self) -> f64 {
        1.0
    }

    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..x.len() {
            let d = x[i] - y[i];
            acc += d * d;
        }
        0.5 * acc
    }
}

/// Checked Bregman distance: rejects mismatched lengths and non-finite
/// coordinates before delegating to the kernel.
pub fn bregman_distance<K: BregmanKernel + ?Sized>(
    kernel: &K,
    x: &[f64],
    y: &[f64],
) -> Result<f64, BregmanError> {
    if x.len() != y.len() {
        return Err(BregmanError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    for (i, v) in x.iter().chain(y.iter()).enumerate() {
        if !v.is_finite() {
            return Err(BregmanError::NonFinite { index: i % x.len() });
        }
    }
    Ok(kernel.distance(x, y))
}

/// A composite objective `F(x) = f(x) + g(x) - h(x)`.
///
/// * `f` is differentiable and smooth relative to the kernel: `L*phi - f` and
///   `l*phi + f` are both convex for the constants reported by
///   [`l_upper`](DcProblem::l_upper) and [`l_lower`](DcProblem::l_lower).
/// * `g` is proper closed convex, allowed to take `f64::INFINITY` outside its
///   domain (constraints live here).
/// * `h` is convex and finite, with a subgradient available everywhere.
pub trait DcProblem {
    fn dim(&self) -> usize;

    fn f_value(&self, x: &[f64]) -> f64;

    fn f_gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Extended-real convex part; `f64::INFINITY` encodes infeasibility.
    fn g_value(&self, x: &[f64]) -> f64;

    fn h_value(&self, x: &[f64]) -> f64;

    /// Any element of the subdifferential of `h` at `x`.
    fn h_subgradient(&self, x: &[f64]) -> Vec<f64>;

    fn kernel(&self) -> &dyn BregmanKernel;

    /// `L > 0` with `L*phi - f` convex.
    fn l_upper(&self) -> f64;

    /// `l >= 0` with `l*phi + f` convex.
    fn l_lower(&self) -> f64;

    fn objective(&self, x: &[f64]) -> f64 {
        self.f_value(x) + self.g_value(x) - self.h_value(x)
    }
}

/// Solver of the per-iteration model problem
///
/// ```text
///     argmin_x  L*phi(x) + g(x) - <linear, x>
/// ```
///
/// for the `L` and `phi` of the problem the oracle was built from. The
/// objective is strongly convex, so the minimizer is unique; implementations
/// must return it to high accuracy because every convergence certificate in
/// the trace validator leans on exact subproblem optimality.
pub trait SubproblemOracle {
    fn solve(&self, linear: &[f64]) -> Result<Vec<f64>, OracleError>;
}

/// Convexity violation tally for one audited function.
#[derive(Debug, Clone, Copy)]
pub struct ConvexitySide {
    /// Largest observed value of `u(x_t) - (1-t) u(a) - t u(b)` over the
    /// sampled segments. Negative when the function looked strictly convex on
    /// every draw.
    pub worst_excess: f64,
    /// Number of draws whose excess exceeded the tolerance.
    pub violations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvexityReport {
    pub trials: usize,
    /// Audit of `L*phi - f`.
    pub upper: ConvexitySide,
    /// Audit of `l*phi + f`.
    pub lower: ConvexitySide,
}

impl ConvexityReport {
    pub fn is_clean(&self) -> bool {
        self.upper.violations == 0 && self.lower.violations == 0
    }
}

/// Excess of the secant inequality for `func` on the segment `[a, b]` at
/// parameter `t`: positive means the inequality
/// `func((1-t)a + tb) <= (1-t)func(a) + t func(b)` failed by that much.
pub fn convexity_excess<F: Fn(&[f64]) -> f64>(func: F, a: &[f64], b: &[f64], t: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "segment endpoints must share a length");
    let mid: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| (1.0 - t) * ai + t * bi)
        .collect();
    func(&mid) - (1.0 - t) * func(a) - t * func(b)
}

/// Sampled convexity audit of an arbitrary function. `sampler` draws segment
/// endpoints; the interpolation weight is drawn uniformly from `(0, 1)`.
pub fn audit_convexity<F, S>(
    func: F,
    mut sampler: S,
    trials: usize,
    tol: f64,
    seed: u64,
) -> ConvexitySide
where
    F: Fn(&[f64]) -> f64,
    S: FnMut(&mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>),
{
    assert!(trials > 0, "audit needs at least one trial");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..trials {
        let (a, b) = sampler(&mut rng);
        let t = draw_open_unit(&mut rng);
        let excess = convexity_excess(&func, &a, &b, t);
        if excess > worst {
            worst = excess;
        }
        if excess > tol {
            violations += 1;
        }
    }
    ConvexitySide {
        worst_excess: worst,
        violations,
    }
}

/// Sampled audit of the relative-smoothness certificates of a problem: checks
/// that `L*phi - f` and `l*phi + f` behave convexly along random segments.
/// Each trial draws one endpoint pair and one interpolation weight and scores
/// both functions on it.
pub fn check_relative_convexity<P, S>(
    problem: &P,
    mut sampler: S,
    trials: usize,
    tol: f64,
    seed: u64,
) -> ConvexityReport
where
    P: DcProblem + ?Sized,
    S: FnMut(&mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>),
{
    assert!(trials > 0, "audit needs at least one trial");
    let kernel = problem.kernel();
    let l_up = problem.l_upper();
    let l_low = problem.l_lower();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut upper = ConvexitySide {
        worst_excess: f64::NEG_INFINITY,
        violations: 0,
    };
    let mut lower = ConvexitySide {
        worst_excess: f64::NEG_INFINITY,
        violations: 0,
    };
    for _ in 0..trials {
        let (a, b) = sampler(&mut rng);
        assert_eq!(a.len(), b.len(), "sampler returned mismatched endpoints");
        let t = draw_open_unit(&mut rng);
        let mid: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(&ai, &bi)| (1.0 - t) * ai + t * bi)
            .collect();
        let (pa, pb, pm) = (kernel.value(&a), kernel.value(&b), kernel.value(&mid));
        let (fa, fb, fm) = (
            problem.f_value(&a),
            problem.f_value(&b),
            problem.f_value(&mid),
        );
        let score = |side: &mut ConvexitySide, va: f64, vb: f64, vm: f64| {
            let excess = vm - (1.0 - t) * va - t * vb;
            if excess > side.worst_excess {
                side.worst_excess = excess;
            }
            if excess > tol {
                side.violations += 1;
            }
        };
        score(
            &mut upper,
            l_up * pa - fa,
            l_up * pb - fb,
            l_up * pm - fm,
        );
        score(
            &mut lower,
            l_low * pa + fa,
            l_low * pb + fb,
            l_low * pm + fm,
        );
    }
    ConvexityReport {
        trials,
        upper,
        lower,
    }
}

/// Optimality probe for a claimed subproblem minimizer `x_plus` of
/// `L*phi(x) + g(x) - <linear, x>`.
///
/// First-order optimality says `linear - L*grad phi(x_plus)` is a subgradient
/// of `g` at `x_plus`, i.e. `g(z) >= g(x_plus) + <r, z - x_plus>` for every
/// `z`. The returned value is the worst (most positive) violation of that
/// inequality over the probe points; infeasible probes (`g(z)` infinite)
/// satisfy it trivially and are skipped.
pub fn subgradient_inequality_excess<P: DcProblem + ?Sized>(
    problem: &P,
    linear: &[f64],
    x_plus: &[f64],
    probes: &[Vec<f64>],
) -> f64 {
    let g_at = problem.g_value(x_plus);
    if !g_at.is_finite() {
        return f64::INFINITY;
    }
    let grad_phi = problem.kernel().gradient(x_plus);
    let l_up = problem.l_upper();
    let residual: Vec<f64> = linear
        .iter()
        .zip(&grad_phi)
        .map(|(&v, &p)| v - l_up * p)
        .collect();
    let mut worst = f64::NEG_INFINITY;
    for z in probes {
        let g_z = problem.g_value(z);
        if !g_z.is_finite() {
            continue;
        }
        let mut inner = 0.0;
        for i in 0..z.len() {
            inner += residual[i] * (z[i] - x_plus[i]);
        }
        let excess = g_at + inner - g_z;
        if excess > worst {
            worst = excess;
        }
    }
    worst
}

fn draw_open_unit(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // Uniform in (0, 1): resample the measure-zero endpoints away.
    loop {
        let t: f64 = rng.random();
        if t > 0.0 && t < 1.0 {
            return t;
        }
    }
}
