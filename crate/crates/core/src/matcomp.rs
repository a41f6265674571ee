//! Nonnegative matrix completion with an exponential concave penalty.
//!
//! The objective over a factor pair Z = (U, V) is
//!
//! ```text
//!     F(Z) = 1/2 * || P(A - UV) ||_F^2  +  lambda * sum_ij (1 - exp(-theta |z_ij|))
//! ```
//!
//! restricted to Z >= 0, where P keeps observed entries only. The penalty is
//! concave in |z|; peeling off its tangent cone at scale lambda*theta gives
//! the DC split used here:
//!
//! ```text
//!     g(Z) = indicator(Z >= 0) + lambda * theta * ||Z||_1
//!     h(Z) = lambda * theta * ||Z||_1 - penalty(Z)        (convex, smooth)
//! ```
//!
//! so that F = f + g - h with f the masked quadratic loss. The kernel is
//! quartic in ||Z|| so that f is smooth relative to it with constants L = l = 1,
//! and the per-iteration model problem has a closed form: threshold, then
//! scale by the positive root of a cubic.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bregman::{norm_sq, BregmanKernel, DcProblem, OracleError, SubproblemOracle};
use crate::data::SparseRatings;

#[derive(Debug, Error)]
pub enum MatcompError {
    #[error("factor shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("flat length {got} does not fit shape ({m} x {rank}) + ({rank} x {n})")]
    FlatLength { m: usize, rank: usize, n: usize, got: usize },
    #[error("kernel coefficients must be finite, nonnegative, and not both zero")]
    InvalidKernel,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// The variable (U, V): U is m x rank, V is rank x n, both row-major in one
/// flat buffer with U first. The generic solver works on the flat slice; this
/// type carries the shape and the factor-indexed views.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    m: usize,
    rank: usize,
    n: usize,
    data: Vec<f64>,
}

impl FactorPair {
    pub fn zeros(m: usize, rank: usize, n: usize) -> Self {
        FactorPair { m, rank, n, data: vec![0.0; m * rank + rank * n] }
    }

    pub fn from_flat(m: usize, rank: usize, n: usize, data: Vec<f64>) -> Result<Self, MatcompError> {
        if data.len() != m * rank + rank * n {
            return Err(MatcompError::FlatLength { m, rank, n, got: data.len() });
        }
        Ok(FactorPair { m, rank, n, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m, self.rank, self.n)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn u(&self, i: usize, r: usize) -> f64 {
        self.data[i * self.rank + r]
    }

    pub fn v(&self, r: usize, j: usize) -> f64 {
        self.data[self.m * self.rank + r * self.n + j]
    }

    pub fn u_mut(&mut self, i: usize, r: usize) -> &mut f64 {
        &mut self.data[i * self.rank + r]
    }

    pub fn v_mut(&mut self, r: usize, j: usize) -> &mut f64 {
        let idx = self.m * self.rank + r * self.n + j;
        &mut self.data[idx]
    }

    /// (UV)_ij.
    pub fn predict(&self, i: usize, j: usize) -> f64 {
        let voff = self.m * self.rank;
        let urow = &self.data[i * self.rank..(i + 1) * self.rank];
        let mut acc = 0.0;
        for (r, &ur) in urow.iter().enumerate() {
            acc += ur * self.data[voff + r * self.n + j];
        }
        acc
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }
}

/// `phi(z) = c1 w^2 + c2 w` with `w = ||z||^2 / 2` over the flattened pair.
/// Gradient `(2 c1 w + c2) z`; strongly convex with modulus c2 (the quartic
/// part is convex on its own and the linear-in-w part is exactly
/// `(c2/2)||z||^2`).
#[derive(Debug, Clone, Copy)]
pub struct QuarticKernel {
    c1: f64,
    c2: f64,
}

impl QuarticKernel {
    pub fn new(c1: f64, c2: f64) -> Result<Self, MatcompError> {
        let ok = c1.is_finite() && c2.is_finite() && c1 >= 0.0 && c2 >= 0.0 && c1 + c2 > 0.0;
        if !ok {
            return Err(MatcompError::InvalidKernel);
        }
        Ok(QuarticKernel { c1, c2 })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }
}

impl BregmanKernel for QuarticKernel {
    fn value(&self, x: &[f64]) -> f64 {
        let w = 0.5 * norm_sq(x);
        self.c1 * w * w + self.c2 * w
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let w = 0.5 * norm_sq(x);
        let scale = 2.0 * self.c1 * w + self.c2;
        x.iter().map(|&v| scale * v).collect()
    }

    fn strong_convexity(&self) -> f64 {
        self.c2
    }

    fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        // Expanded so nearby points do not cancel: with d = x - y,
        // s = <y, d>, q = ||d||^2 / 2,
        //   D(x, y) = c1 * (s^2 + s q + q (w_x + w_y)) + c2 * q,
        // which is the definition rearranged term by term.
        let mut dd = 0.0;
        let mut s = 0.0;
        let mut xx = 0.0;
        let mut yy = 0.0;
        for i in 0..x.len() {
            let d = x[i] - y[i];
            dd += d * d;
            s += y[i] * d;
            xx += x[i] * x[i];
            yy += y[i] * y[i];
        }
        let q = 0.5 * dd;
        self.c1 * (s * s + s * q + q * 0.5 * (xx + yy)) + self.c2 * q
    }
}

/// The problem data: observed ratings, rank, penalty parameters, kernel, and
/// the relative-smoothness constants. Immutable once built; share it between
/// the problem view and the oracle via [`build_dc_problem`].
#[derive(Debug, Clone)]
pub struct MatcompInstance {
    train: SparseRatings,
    rank: usize,
    lambda: f64,
    theta: f64,
    kernel: QuarticKernel,
    l_upper: f64,
    l_lower: f64,
}

impl MatcompInstance {
    /// Default constants: c1 = 3, c2 = the Frobenius norm of the observed
    /// entries, L = l = 1.
    pub fn new(train: SparseRatings, rank: usize, lambda: f64, theta: f64) -> Result<Self, MatcompError> {
        Self::with_constants(train, rank, lambda, theta, 3.0, 1.0, 1.0)
    }

    /// As [`new`](MatcompInstance::new) but with explicit c1 and smoothness
    /// constants; c2 stays data-derived.
    pub fn with_constants(
        train: SparseRatings,
        rank: usize,
        lambda: f64,
        theta: f64,
        c1: f64,
        l_upper: f64,
        l_lower: f64,
    ) -> Result<Self, MatcompError> {
        let c2 = train.frobenius_norm();
        let kernel = QuarticKernel::new(c1, c2)?;
        Self::with_kernel(train, rank, lambda, theta, kernel, l_upper, l_lower)
    }

    /// Fully explicit constructor; the caller owns the kernel choice.
    pub fn with_kernel(
        train: SparseRatings,
        rank: usize,
        lambda: f64,
        theta: f64,
        kernel: QuarticKernel,
        l_upper: f64,
        l_lower: f64,
    ) -> Result<Self, MatcompError> {
        if train.is_empty() {
            return Err(MatcompError::InvalidParameter("training set is empty".into()));
        }
        if rank == 0 {
            return Err(MatcompError::InvalidParameter("rank must be at least 1".into()));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(MatcompError::InvalidParameter(format!(
                "lambda must be finite and > 0, got {lambda}"
            )));
        }
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(MatcompError::InvalidParameter(format!(
                "theta must be finite and > 0, got {theta}"
            )));
        }
        if !(l_upper >= 1.0) || !l_upper.is_finite() {
            // Relative smoothness of the masked quadratic loss against this
            // kernel holds for L >= 1, not for smaller L.
            return Err(MatcompError::InvalidParameter(format!(
                "L must be finite and >= 1, got {l_upper}"
            )));
        }
        if !(l_lower >= 0.0) || !l_lower.is_finite() {
            return Err(MatcompError::InvalidParameter(format!(
                "l must be finite and >= 0, got {l_lower}"
            )));
        }
        Ok(MatcompInstance { train, rank, lambda, theta, kernel, l_upper, l_lower })
    }

    pub fn train(&self) -> &SparseRatings {
        &self.train
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn kernel(&self) -> &QuarticKernel {
        &self.kernel
    }

    pub fn l_upper(&self) -> f64 {
        self.l_upper
    }

    pub fn l_lower(&self) -> f64 {
        self.l_lower
    }

    pub fn m(&self) -> usize {
        self.train.n_rows()
    }

    pub fn n(&self) -> usize {
        self.train.n_cols()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.m(), self.rank, self.n())
    }

    /// Flattened variable length, m*rank + rank*n.
    pub fn dim(&self) -> usize {
        (self.m() + self.n()) * self.rank
    }

    /// Coefficient of the l1 term inside g.
    pub fn l1_coefficient(&self) -> f64 {
        self.lambda * self.theta
    }

    fn check_shape(&self, z: &FactorPair) -> Result<(), MatcompError> {
        if z.shape() != self.shape() {
            return Err(MatcompError::ShapeMismatch { expected: self.shape(), got: z.shape() });
        }
        Ok(())
    }

    /// 1/2 * sum over observed (i, j) of ((UV)_ij - A_ij)^2. Touches only
    /// observed entries; no dense product is formed.
    pub fn loss_value(&self, z: &FactorPair) -> Result<f64, MatcompError> {
        self.check_shape(z)?;
        Ok(self.loss_value_flat(z.as_flat()))
    }

    pub fn loss_value_flat(&self, flat: &[f64]) -> f64 {
        let rank = self.rank;
        let n = self.n();
        let voff = self.m() * rank;
        let mut acc = 0.0;
        for e in self.train.entries() {
            let urow = &flat[e.row * rank..(e.row + 1) * rank];
            let mut pred = 0.0;
            for (r, &ur) in urow.iter().enumerate() {
                pred += ur * flat[voff + r * n + e.col];
            }
            let resid = pred - e.value;
            acc += resid * resid;
        }
        0.5 * acc
    }

    /// Gradient of the loss as a flat vector: masked residuals pushed through
    /// rank-t updates, cost O(nnz * rank).
    pub fn loss_gradient(&self, z: &FactorPair) -> Result<FactorPair, MatcompError> {
        self.check_shape(z)?;
        let flat = self.loss_gradient_flat(z.as_flat());
        FactorPair::from_flat(self.m(), self.rank, self.n(), flat)
    }

    pub fn loss_gradient_flat(&self, flat: &[f64]) -> Vec<f64> {
        let rank = self.rank;
        let n = self.n();
        let voff = self.m() * rank;
        let mut grad = vec![0.0; flat.len()];
        for e in self.train.entries() {
            let ubase = e.row * rank;
            let mut pred = 0.0;
            for r in 0..rank {
                pred += flat[ubase + r] * flat[voff + r * n + e.col];
            }
            let resid = pred - e.value;
            for r in 0..rank {
                grad[ubase + r] += resid * flat[voff + r * n + e.col];
                grad[voff + r * n + e.col] += resid * flat[ubase + r];
            }
        }
        grad
    }

    /// lambda * sum (1 - exp(-theta |z|)) over every factor entry.
    pub fn penalty_value(&self, z: &FactorPair) -> Result<f64, MatcompError> {
        self.check_shape(z)?;
        Ok(self.penalty_value_flat(z.as_flat()))
    }

    pub fn penalty_value_flat(&self, flat: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &z in flat {
            // 1 - exp(-theta |z|) = -expm1(-theta |z|), exact near zero.
            acc -= (-self.theta * z.abs()).exp_m1();
        }
        self.lambda * acc
    }

    /// The convex remainder h = lambda*theta*||Z||_1 - penalty. Each term is
    /// lambda * (theta |z| + expm1(-theta |z|)) >= 0, increasing and convex
    /// in |z|, and differentiable everywhere (slope 0 at 0).
    pub fn penalty_h_value(&self, z: &FactorPair) -> Result<f64, MatcompError> {
        self.check_shape(z)?;
        Ok(self.penalty_h_value_flat(z.as_flat()))
    }

    pub fn penalty_h_value_flat(&self, flat: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &z in flat {
            let a = self.theta * z.abs();
            acc += a + (-a).exp_m1();
        }
        self.lambda * acc
    }

    /// Gradient of h: per entry `lambda*theta*(1 - exp(-theta |z|)) * sign(z)`
    /// with sign(0) = 0.
    pub fn penalty_h_gradient(&self, z: &FactorPair) -> Result<FactorPair, MatcompError> {
        self.check_shape(z)?;
        let flat = self.penalty_h_gradient_flat(z.as_flat());
        FactorPair::from_flat(self.m(), self.rank, self.n(), flat)
    }

    pub fn penalty_h_gradient_flat(&self, flat: &[f64]) -> Vec<f64> {
        let scale = self.lambda * self.theta;
        flat.iter()
            .map(|&z| {
                let sign = if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                -scale * (-self.theta * z.abs()).exp_m1() * sign
            })
            .collect()
    }

    /// The full objective F = loss + penalty (equals f + g - h on the
    /// feasible set).
    pub fn objective_value(&self, z: &FactorPair) -> Result<f64, MatcompError> {
        self.check_shape(z)?;
        Ok(self.loss_value_flat(z.as_flat()) + self.penalty_value_flat(z.as_flat()))
    }

    /// Closed-form minimizer of the per-iteration model. `parts` is the
    /// stacked (P | Q) block of the scaled model: the result minimizes
    ///
    /// ```text
    ///     phi(Z) + (lambda*theta/L) * sum(Z) + <parts, Z>    over Z >= 0,
    /// ```
    ///
    /// equivalently `L*phi(Z) + g(Z) - <v, Z>` with `parts = -v/L`. The
    /// solution thresholds entrywise, `S = [-parts - lambda*theta/L]_+`, and
    /// scales S by the positive root of `c1 ||S||^2 tau^3 + c2 tau = 1`.
    pub fn solve_subproblem(&self, parts: &FactorPair) -> Result<FactorPair, MatcompError> {
        self.check_shape(parts)?;
        let flat = self.solve_subproblem_flat(parts.as_flat())?;
        FactorPair::from_flat(self.m(), self.rank, self.n(), flat)
    }

    pub fn solve_subproblem_flat(&self, parts: &[f64]) -> Result<Vec<f64>, MatcompError> {
        let shift = self.l1_coefficient() / self.l_upper;
        let mut out: Vec<f64> = parts.iter().map(|&p| (-p - shift).max(0.0)).collect();
        let s = norm_sq(&out);
        if s == 0.0 {
            return Ok(out);
        }
        let tau = positive_cubic_root(self.kernel.c1 * s, self.kernel.c2)?;
        for v in &mut out {
            *v *= tau;
        }
        Ok(out)
    }

    /// Seeded start: entries i.i.d. uniform on [0, sqrt(mean rating / rank)),
    /// which puts UV at the data's scale in expectation.
    pub fn initial_point(&self, seed: u64) -> FactorPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = self.train.mean_value();
        let scale = if mean > 0.0 { (mean / self.rank as f64).sqrt() } else { 1.0 };
        let data = (0..self.dim()).map(|_| rng.random_range(0.0..scale)).collect();
        FactorPair { m: self.m(), rank: self.rank, n: self.n(), data }
    }
}

/// Unique positive root of `a tau^3 + b tau = 1` for a, b >= 0, not both
/// zero. The polynomial rises strictly from -1 at tau = 0, so the root is
/// unique and lies in (0, min(1/b, a^{-1/3})]: each term alone already
/// reaches 1 at those points. Newton from that upper end descends
/// monotonically; a bisection fallback covers the (unobserved) stall case.
pub fn positive_cubic_root(a: f64, b: f64) -> Result<f64, MatcompError> {
    if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
        return Err(MatcompError::InvalidParameter(format!(
            "cubic coefficients must be finite and nonnegative, got a = {a}, b = {b}"
        )));
    }
    if a == 0.0 && b == 0.0 {
        return Err(MatcompError::InvalidKernel);
    }
    if a == 0.0 {
        return Ok(1.0 / b);
    }
    if b == 0.0 {
        return Ok((1.0 / a).cbrt());
    }
    let upper = (1.0 / b).min((1.0 / a).cbrt());
    let poly = |t: f64| (a * t * t) * t + b * t - 1.0;
    let mut tau = upper;
    for _ in 0..64 {
        let p = poly(tau);
        if p.abs() <= 1e-15 {
            break;
        }
        let next = tau - p / (3.0 * a * tau * tau + b);
        if next == tau {
            break;
        }
        tau = next;
    }
    if poly(tau).abs() > 1e-13 {
        let mut lo = 0.0;
        let mut hi = upper;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if poly(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        tau = 0.5 * (lo + hi);
    }
    Ok(tau)
}

/// Splits one instance into the generic problem view and its subproblem
/// oracle, sharing the data.
pub fn build_dc_problem(inst: MatcompInstance) -> (MatcompProblem, MatcompOracle) {
    let inst = Arc::new(inst);
    (MatcompProblem { inst: Arc::clone(&inst) }, MatcompOracle { inst })
}

#[derive(Debug, Clone)]
pub struct MatcompProblem {
    inst: Arc<MatcompInstance>,
}

impl MatcompProblem {
    pub fn instance(&self) -> &MatcompInstance {
        &self.inst
    }
}

impl DcProblem for MatcompProblem {
    fn dim(&self) -> usize {
        self.inst.dim()
    }

    fn f_value(&self, x: &[f64]) -> f64 {
        self.inst.loss_value_flat(x)
    }

    fn f_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.inst.loss_gradient_flat(x)
    }

    fn g_value(&self, x: &[f64]) -> f64 {
        let mut sum = 0.0;
        for &v in x {
            if v < 0.0 {
                return f64::INFINITY;
            }
            sum += v;
        }
        self.inst.l1_coefficient() * sum
    }

    fn h_value(&self, x: &[f64]) -> f64 {
        self.inst.penalty_h_value_flat(x)
    }

    fn h_subgradient(&self, x: &[f64]) -> Vec<f64> {
        self.inst.penalty_h_gradient_flat(x)
    }

    fn kernel(&self) -> &dyn BregmanKernel {
        &self.inst.kernel
    }

    fn l_upper(&self) -> f64 {
        self.inst.l_upper
    }

    fn l_lower(&self) -> f64 {
        self.inst.l_lower
    }
}

#[derive(Debug, Clone)]
pub struct MatcompOracle {
    inst: Arc<MatcompInstance>,
}

impl SubproblemOracle for MatcompOracle {
    fn solve(&self, linear: &[f64]) -> Result<Vec<f64>, OracleError> {
        if linear.len() != self.inst.dim() {
            return Err(OracleError::Invalid(format!(
                "linear term has length {}, expected {}",
                linear.len(),
                self.inst.dim()
            )));
        }
        if linear.iter().any(|v| !v.is_finite()) {
            return Err(OracleError::Numerical("non-finite linear term".into()));
        }
        let inv_l = 1.0 / self.inst.l_upper;
        let parts: Vec<f64> = linear.iter().map(|&v| -v * inv_l).collect();
        self.inst
            .solve_subproblem_flat(&parts)
            .map_err(|e| OracleError::Numerical(e.to_string()))
    }
}
