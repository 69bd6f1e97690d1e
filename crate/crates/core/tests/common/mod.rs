//! Reference implementations used by the integration tests. Each one is
//! written from the textbook definition and shares no code with the crate.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use qfldp_core::model::{Example, HybridModel, N_TRAINABLE};
use qfldp_core::statevector::GateOp;

pub type CMatrix = DMatrix<Complex64>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn ry(theta: f64) -> CMatrix {
    let (s, co) = (theta / 2.0).sin_cos();
    CMatrix::from_row_slice(2, 2, &[c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)])
}

fn rz(theta: f64) -> CMatrix {
    let h = theta / 2.0;
    CMatrix::from_row_slice(2, 2, &[c(h.cos(), -h.sin()), c(0.0, 0.0), c(0.0, 0.0), c(h.cos(), h.sin())])
}

/// `I (x) ... (x) op_k (x) ... (x) I`, qubit 0 leftmost.
fn embed(n: usize, ops: &[(usize, CMatrix)]) -> CMatrix {
    let mut out = CMatrix::identity(1, 1);
    for q in 0..n {
        let factor = ops
            .iter()
            .find(|(k, _)| *k == q)
            .map_or_else(|| CMatrix::identity(2, 2), |(_, m)| m.clone());
        out = out.kronecker(&factor);
    }
    out
}

/// Full `2^n x 2^n` matrix of one gate.
pub fn gate_matrix(n: usize, gate: &GateOp) -> CMatrix {
    match *gate {
        GateOp::Ry { target, theta } => embed(n, &[(target, ry(theta))]),
        GateOp::Rz { target, theta } => embed(n, &[(target, rz(theta))]),
        GateOp::Rot { target, alpha, beta, gamma } => {
            embed(n, &[(target, rz(alpha) * ry(beta) * rz(gamma))])
        }
        GateOp::Cnot { control, target } => {
            let p0 = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
            let p1 = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
            let x = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
            embed(n, &[(control, p0)]) + embed(n, &[(control, p1), (target, x)])
        }
    }
}

/// Product of the gate matrices, first gate rightmost.
pub fn circuit_matrix(n: usize, gates: &[GateOp]) -> CMatrix {
    gates
        .iter()
        .fold(CMatrix::identity(1 << n, 1 << n), |acc, g| gate_matrix(n, g) * acc)
}

pub fn apply_matrix(m: &CMatrix, psi: &[Complex64]) -> Vec<Complex64> {
    (m * nalgebra::DVector::from_column_slice(psi)).iter().copied().collect()
}

pub fn random_state<R: Rng>(n: usize, rng: &mut R) -> Vec<Complex64> {
    let v: Vec<Complex64> = (0..1 << n)
        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

pub fn random_circuit<R: Rng>(n: usize, len: usize, rng: &mut R) -> Vec<GateOp> {
    (0..len)
        .map(|_| {
            let target = rng.random_range(0..n);
            let mut angle = || rng.random_range(-2.0 * std::f64::consts::PI..2.0 * std::f64::consts::PI);
            let (a, b, g) = (angle(), angle(), angle());
            match rng.random_range(0..if n > 1 { 4 } else { 3 }) {
                0 => GateOp::Ry { target, theta: a },
                1 => GateOp::Rz { target, theta: a },
                2 => GateOp::Rot { target, alpha: a, beta: b, gamma: g },
                _ => {
                    let control = (target + rng.random_range(1..n)) % n;
                    GateOp::Cnot { control, target }
                }
            }
        })
        .collect()
}

/// Central differences of the cross-entropy loss in the trainable layout.
pub fn finite_difference_gradient(model: &HybridModel, example: &Example, h: f64) -> [f64; N_TRAINABLE] {
    let theta = model.trainable();
    let loss = |p: &[f64]| {
        let m = model.with_trainable(p).unwrap();
        -m.log_probabilities(example.features()).unwrap()[example.label() as usize]
    };
    let mut out = [0.0; N_TRAINABLE];
    for (i, o) in out.iter_mut().enumerate() {
        let mut plus = theta;
        let mut minus = theta;
        plus[i] += h;
        minus[i] -= h;
        *o = (loss(&plus) - loss(&minus)) / (2.0 * h);
    }
    out
}

/// Compensated (Neumaier) sum.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn ln_normal(x: f64, mean: f64, sigma: f64) -> f64 {
    -(x - mean).powi(2) / (2.0 * sigma * sigma) - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
}

fn ln_mixture(x: f64, q: f64, sigma: f64) -> f64 {
    let a = (1.0 - q).ln() + ln_normal(x, 0.0, sigma);
    let b = q.ln() + ln_normal(x, 1.0, sigma);
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln` of the integral of `exp(ln_f)` over the real line by the trapezoid
/// rule. A coarse scan finds where `ln_f` is within 60 of its maximum; only
/// those cells (plus a margin) are refined.
fn ln_integral(ln_f: impl Fn(f64) -> f64, lo: f64, hi: f64, coarse: f64, fine: f64) -> f64 {
    let n = ((hi - lo) / coarse).ceil() as usize;
    let scan: Vec<f64> = (0..=n).map(|i| ln_f(lo + i as f64 * coarse)).collect();
    let peak = scan.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<bool> = (0..=n)
        .map(|i| (i.saturating_sub(3)..=(i + 3).min(n)).any(|j| scan[j] > peak - 60.0))
        .collect();
    let per_cell = (coarse / fine).ceil() as usize;
    let h = coarse / per_cell as f64;
    let mut terms = Vec::new();
    let mut i = 0;
    while i < n {
        if !keep[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && keep[i] {
            i += 1;
        }
        let (a, b) = (lo + start as f64 * coarse, lo + i as f64 * coarse);
        let m = (i - start) * per_cell;
        for k in 0..=m {
            let w = if k == 0 || k == m { 0.5 } else { 1.0 };
            let x = a + (b - a) * k as f64 / m as f64;
            terms.push(w * (ln_f(x) - peak).exp());
        }
    }
    peak + (neumaier_sum(terms) * h).ln()
}

/// Per-step Rényi cost of the subsampled Gaussian, computed by brute-force
/// quadrature of both divergences between `N(0, s^2)` and
/// `(1 - q) N(0, s^2) + q N(1, s^2)`.
pub fn rdp_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    let reach = alpha + 40.0 * sigma + 2.0;
    let coarse = 0.5 * sigma;
    let fine = sigma.min(sigma * sigma) / 32.0;
    let forward = ln_integral(
        |x| alpha * ln_mixture(x, q, sigma) + (1.0 - alpha) * ln_normal(x, 0.0, sigma),
        -40.0 * sigma - 2.0,
        reach,
        coarse,
        fine,
    );
    let backward = ln_integral(
        |x| alpha * ln_normal(x, 0.0, sigma) + (1.0 - alpha) * ln_mixture(x, q, sigma),
        -reach,
        40.0 * sigma + 2.0,
        coarse,
        fine,
    );
    (forward.max(backward) / (alpha - 1.0)).max(0.0)
}

/// Exact `delta(eps)` of the Gaussian mechanism with sensitivity 1 and noise `sigma`.
pub fn gaussian_delta(eps: f64, sigma: f64) -> f64 {
    let phi = Normal::standard();
    phi.cdf(0.5 / sigma - eps * sigma) - eps.exp() * phi.cdf(-0.5 / sigma - eps * sigma)
}

/// Smallest `eps` with `gaussian_delta(eps) <= delta`.
pub fn gaussian_epsilon(delta: f64, sigma: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while gaussian_delta(hi, sigma) > delta {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_delta(mid, sigma) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Best of basic and advanced composition of `steps` Poisson-subsampled
/// Gaussian steps, each amplified from the exact Gaussian curve.
pub fn composition_epsilon(q: f64, sigma: f64, steps: u64, delta: f64) -> f64 {
    let k = steps as f64;
    let amplified = |d0: f64| (q * (gaussian_epsilon(d0, sigma).exp() - 1.0)).ln_1p();
    let basic = k * amplified(delta / (k * q));
    let e1 = amplified(delta / (2.0 * k * q));
    let advanced = e1 * (2.0 * k * (2.0 / delta).ln()).sqrt() + k * e1 * e1.exp_m1();
    basic.min(advanced)
}

/// Test accuracy of a least-squares linear classifier fitted on `train`.
pub fn linear_probe_accuracy(train: &[Example], test: &[Example]) -> f64 {
    let d = train[0].features().len();
    let design = |data: &[Example]| {
        DMatrix::from_fn(data.len(), d + 1, |i, j| if j < d { data[i].features()[j] } else { 1.0 })
    };
    let target = nalgebra::DVector::from_fn(train.len(), |i, _| if train[i].label() == 1 { 1.0 } else { -1.0 });
    let w = design(train).svd(true, true).solve(&target, 1e-12).unwrap();
    let scores = design(test) * w;
    let correct = test
        .iter()
        .zip(scores.iter())
        .filter(|(e, s)| (**s > 0.0) == (e.label() == 1))
        .count();
    correct as f64 / test.len() as f64
}
