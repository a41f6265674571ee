//! Shared helpers for the integration tests: independent oracles (finite
//! differences, projected gradient, bisection) and a one-dimensional problem
//! with a hand-checkable critical point. Everything here deliberately avoids
//! the closed forms under test.
#![allow(dead_code)]

use dcae::bregman::OracleError;
use dcae::matcomp::{positive_cubic_root, MatcompInstance, QuarticKernel};
use dcae::{BregmanKernel, DcProblem, SubproblemOracle};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central finite-difference gradient with per-coordinate step
/// `rel_h * (1 + |x_i|)`.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(func: F, x: &[f64], rel_h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = rel_h * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = func(&probe);
        probe[i] = x[i] - h;
        let down = func(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

pub fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(&g, &w)| (g - w).abs() / (1.0 + w.abs()))
        .fold(0.0, f64::max)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random vector with entries of magnitude in `[lo_mag, hi_mag)` and random
/// sign; keeps finite-difference probes clear of the |.| kink at zero.
pub fn signed_vec_away_from_zero(
    rng: &mut ChaCha8Rng,
    len: usize,
    lo_mag: f64,
    hi_mag: f64,
) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let mag = rng.random_range(lo_mag..hi_mag);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// One-dimensional composite with everything checkable by hand:
///
/// ```text
///     f(x) = x^4 / 4,   g = 0,   h(x) = x,
///     phi(x) = x^4 / 4 + x^2 / 2    (the quartic kernel with c1 = c2 = 1)
/// ```
///
/// so F(x) = x^4/4 - x with unique critical point x* = 1 (where x^3 = 1),
/// and `phi - f = x^2/2` is convex, giving L = 1, l = 0.
pub struct ToyProblem {
    kernel: QuarticKernel,
}

impl ToyProblem {
    pub fn new() -> Self {
        ToyProblem { kernel: QuarticKernel::new(1.0, 1.0).unwrap() }
    }

    pub fn critical_point() -> f64 {
        1.0
    }
}

impl DcProblem for ToyProblem {
    fn dim(&self) -> usize {
        1
    }

    fn f_value(&self, x: &[f64]) -> f64 {
        let v = x[0];
        0.25 * v * v * v * v
    }

    fn f_gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![x[0] * x[0] * x[0]]
    }

    fn g_value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn h_value(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn h_subgradient(&self, _x: &[f64]) -> Vec<f64> {
        vec![1.0]
    }

    fn kernel(&self) -> &dyn BregmanKernel {
        &self.kernel
    }

    fn l_upper(&self) -> f64 {
        1.0
    }

    fn l_lower(&self) -> f64 {
        0.0
    }
}

/// Exact oracle for [`ToyProblem`]: the model stationarity condition is
/// `x^3 + x = v`, solved through the scaled-cubic substitution `x = tau v`
/// with `v^2 tau^3 + tau = 1`.
pub struct ToyOracle;

impl SubproblemOracle for ToyOracle {
    fn solve(&self, linear: &[f64]) -> Result<Vec<f64>, OracleError> {
        let v = linear[0];
        if !v.is_finite() {
            return Err(OracleError::Numerical("non-finite linear term".into()));
        }
        if v == 0.0 {
            return Ok(vec![0.0]);
        }
        let tau = positive_cubic_root(v * v, 1.0)
            .map_err(|e| OracleError::Numerical(e.to_string()))?;
        Ok(vec![tau * v])
    }
}

/// Value of the per-iteration model `L*phi(z) + lambda*theta*sum(z) - <v, z>`
/// at a feasible point; infeasible points get +infinity.
pub fn model_value(inst: &MatcompInstance, linear: &[f64], z: &[f64]) -> f64 {
    if z.iter().any(|&v| v < 0.0) {
        return f64::INFINITY;
    }
    let mut inner = 0.0;
    let mut sum = 0.0;
    for i in 0..z.len() {
        inner += linear[i] * z[i];
        sum += z[i];
    }
    inst.l_upper() * inst.kernel().value(z) + inst.l1_coefficient() * sum - inner
}

/// Independent numerical minimizer of the subproblem model over z >= 0:
/// projected gradient with a backtracked step, run to tight stationarity.
/// Knows nothing of the threshold-and-scale closed form.
pub fn projected_gradient_model_min(
    inst: &MatcompInstance,
    linear: &[f64],
    max_iters: usize,
) -> Vec<f64> {
    let dim = linear.len();
    let l = inst.l_upper();
    let c1 = inst.kernel().c1();
    let c2 = inst.kernel().c2();
    let shift = inst.l1_coefficient();
    let grad = |z: &[f64]| -> Vec<f64> {
        let w = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        let scale = l * (2.0 * c1 * w + c2);
        (0..dim).map(|i| scale * z[i] + shift - linear[i]).collect()
    };
    let value = |z: &[f64]| model_value(inst, linear, z);

    let mut z = vec![0.0; dim];
    let mut fz = value(&z);
    let mut alpha = 1.0 / (l * c2.max(1e-12));
    for _ in 0..max_iters {
        let g = grad(&z);
        // Backtrack until the quadratic upper model at step alpha holds.
        let mut accepted = None;
        for _ in 0..200 {
            let znext: Vec<f64> = (0..dim).map(|i| (z[i] - alpha * g[i]).max(0.0)).collect();
            let fnext = value(&znext);
            let mut inner = 0.0;
            let mut dist = 0.0;
            for i in 0..dim {
                let d = znext[i] - z[i];
                inner += g[i] * d;
                dist += d * d;
            }
            if fnext <= fz + inner + dist / (2.0 * alpha) + 1e-15 * (1.0 + fz.abs()) {
                accepted = Some((znext, fnext, dist.sqrt()));
                break;
            }
            alpha *= 0.5;
        }
        let (znext, fnext, moved) = accepted.expect("backtracking always terminates");
        z = znext;
        fz = fnext;
        alpha *= 1.1;
        if moved <= 1e-14 * (1.0 + z.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
    z
}

/// Bisection root of `a t^3 + b t = 1` on (0, hi], oblivious to the Newton
/// path used in the library.
pub fn bisect_cubic(a: f64, b: f64, mut hi: f64) -> f64 {
    let poly = |t: f64| a * t * t * t + b * t - 1.0;
    assert!(poly(hi) >= 0.0, "upper bracket must sit past the root");
    let mut lo = 0.0;
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        if poly(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}
