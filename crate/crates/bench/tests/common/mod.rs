//! Helpers for the acceptance tests: independent numerical oracles and a
//! bare-kernel problem for line-search geometry checks. These deliberately
//! re-derive everything from definitions instead of calling the closed forms
//! under test.
#![allow(dead_code)]

use dcae::matcomp::MatcompInstance;
use dcae::{BregmanKernel, DcProblem, QuadraticKernel};
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

/// Random vector with entry magnitudes in `[lo_mag, hi_mag)` and random
/// signs; keeps finite differences away from the |.| kink.
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

/// Value of the subproblem model `L*phi(z) + lambda*theta*sum(z) - <v, z>`
/// over z >= 0; infeasible points score +infinity.
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

/// Projected gradient with a backtracked step on the subproblem model,
/// oblivious to the threshold-and-scale closed form.
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

/// Bisection root of `a t^3 + b t = 1` on (0, hi].
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

/// Zero objective over the Euclidean kernel: the line search on this problem
/// sees pure kernel geometry, so its acceptance threshold is closed-form.
pub struct EuclideanShell {
    kernel: QuadraticKernel,
    dim: usize,
}

impl EuclideanShell {
    pub fn new(dim: usize) -> Self {
        EuclideanShell { kernel: QuadraticKernel, dim }
    }
}

impl DcProblem for EuclideanShell {
    fn dim(&self) -> usize {
        self.dim
    }

    fn f_value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn f_gradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn g_value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn h_value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn h_subgradient(&self, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
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
