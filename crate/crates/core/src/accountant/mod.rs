//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per step, the cost at order `a` is the Rényi divergence between
//! `mu_0 = N(0, s^2)` and the mixture `mu_q = (1 - q) N(0, s^2) + q N(1, s^2)`,
//! taken in whichever direction is larger. Costs add over steps and are
//! converted to `(epsilon, delta)` by
//!
//! ```text
//! epsilon = min_a  rdp(a) + ln(1 / delta) / (a - 1)
//! ```

pub mod quadrature;

use crate::error::{Error, Result};
use quadrature::integrate;

/// Base order grid plus a dense band where the optimum usually falls.
pub const DEFAULT_ORDERS: &[f64] = &[
    1.1, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0, 3.25, 3.5, 3.75, 4.0, 4.5, 5.0, 5.5, 6.0,
    7.0, 8.0, 10.0, 12.0, 14.0, 16.0, 20.0, 24.0, 28.0, 32.0, 40.0, 48.0, 64.0, 128.0, 256.0,
    512.0, 1024.0, 4096.0, 1e6,
];

const REL_TOL: f64 = 1e-11;
const MAX_SEGMENTS: usize = 20_000;
/// Integrand is truncated where it falls below `e^-TAIL_LOG` of its peak.
const TAIL_LOG: f64 = 60.0;

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log-density ratio `ln(mu_q(x) / mu_0(x))` and related quantities.
struct Mixture {
    q: f64,
    var: f64,
    ln_q: f64,
    ln_1mq: f64,
    ln_norm: f64,
}

impl Mixture {
    fn new(q: f64, sigma: f64) -> Self {
        let var = sigma * sigma;
        Self {
            q,
            var,
            ln_q: q.ln(),
            ln_1mq: (-q).ln_1p(),
            ln_norm: (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln(),
        }
    }

    fn t(&self, x: f64) -> f64 {
        (2.0 * x - 1.0) / (2.0 * self.var)
    }

    fn ln_base(&self, x: f64) -> f64 {
        -x * x / (2.0 * self.var) - self.ln_norm
    }

    /// `(u, ln r)` with `r = mu_q / mu_0 = 1 + u`.
    fn ratio(&self, x: f64) -> (f64, f64) {
        let t = self.t(x);
        if t < 30.0 {
            let u = self.q * t.exp_m1();
            (u, u.ln_1p())
        } else {
            let lr = log_add_exp(self.ln_1mq, self.ln_q + t);
            (lr.exp() - 1.0, lr)
        }
    }

    /// Peak of `ln(mu_0 * r^beta)` if the shifted component alone made up `r`.
    fn shifted_reference(&self, beta: f64) -> f64 {
        if beta > 0.0 {
            (beta * beta - beta) / (2.0 * self.var) + beta * self.ln_q - self.ln_norm
        } else {
            0.0
        }
    }

    /// `ln_integrand(x, beta) - reference` with the large terms cancelled
    /// analytically where `r` is dominated by the shifted component.
    fn ln_integrand_rel(&self, x: f64, beta: f64, reference: f64) -> f64 {
        let t = self.t(x);
        if beta > 0.0 && t >= 30.0 {
            let d = x - beta;
            let tail = (self.ln_1mq - self.ln_q - t).exp().ln_1p();
            -d * d / (2.0 * self.var) + beta * tail
        } else {
            self.ln_integrand(x, beta) - reference
        }
    }

    /// Share of the shifted component in the mixture at `x`.
    fn shifted_share(&self, x: f64) -> f64 {
        let z = self.t(x) + self.ln_q - self.ln_1mq;
        1.0 / (1.0 + (-z).exp())
    }

    /// `ln` of the integrand `mu_0 * r^beta`.
    fn ln_integrand(&self, x: f64, beta: f64) -> f64 {
        self.ln_base(x) + beta * self.ratio(x).1
    }

    /// `mu_0 * (r^beta - 1 - beta (r - 1))`, nonnegative by convexity of
    /// `r -> r^beta` for `beta > 1` or `beta < 0`. Its integral is `I - 1`.
    fn excess_integrand(&self, x: f64, beta: f64) -> f64 {
        let ln_base = self.ln_base(x);
        if ln_base < -745.0 {
            return 0.0;
        }
        let (u, lr) = self.ratio(x);
        if u.abs() * beta.abs().max(1.0) < 0.05 {
            // Binomial series of (1 + u)^beta from the quadratic term on.
            let mut term = beta * u;
            let mut sum = 0.0;
            for k in 2..60 {
                term *= (beta - (k - 1) as f64) / k as f64 * u;
                sum += term;
                if term.abs() <= 1e-17 * sum.abs() {
                    break;
                }
            }
            return ln_base.exp() * sum.max(0.0);
        }
        // Term by term in log space: u can overflow where mu_0 underflows.
        let powered = (ln_base + beta * lr).exp();
        let base = ln_base.exp();
        let linear = if u > 0.0 {
            let ln_u = if lr > 30.0 { lr + (-(-lr).exp()).ln_1p() } else { u.ln() };
            beta * (ln_base + ln_u).exp()
        } else {
            beta * base * u
        };
        (powered - base - linear).max(0.0)
    }

    /// Stationary points of `ln_integrand`, which satisfy `x = beta * share(x)`.
    fn modes(&self, beta: f64) -> Vec<f64> {
        let map = |x: f64| beta * self.shifted_share(x);
        if beta > 0.0 {
            // The map is increasing: iterate up from 0 and down from beta to
            // reach the lowest and highest fixed points.
            let iterate = |mut x: f64| {
                for _ in 0..10_000 {
                    let next = map(x);
                    if (next - x).abs() <= 1e-12 * (1.0 + x.abs()) {
                        return next;
                    }
                    x = next;
                }
                x
            };
            vec![iterate(0.0), iterate(beta)]
        } else {
            // Decreasing map: unique root of x - map(x) in [beta, 0].
            let (mut lo, mut hi) = (beta, 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid - map(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            vec![0.5 * (lo + hi)]
        }
    }

    /// Natural log of `I(beta) = E_{mu_0}[r^beta]`.
    fn ln_moment(&self, beta: f64) -> Result<f64> {
        let sigma = self.var.sqrt();
        let modes = self.modes(beta);
        let reference = self.shifted_reference(beta);
        let peak_rel = modes
            .iter()
            .map(|&m| self.ln_integrand_rel(m, beta, reference))
            .fold(f64::NEG_INFINITY, f64::max);
        let peak = reference + peak_rel;
        // Integration window from a quadratic envelope of ln_integrand.
        let c0 = -self.ln_norm;
        let drop = (c0 - peak + TAIL_LOG).max(0.0);
        let half = (2.0 * self.var * drop).sqrt();
        let (mut a, mut b) = (-half, half.max(0.5));
        if beta > 0.0 {
            let disc = beta * beta - beta + 2.0 * self.var * drop;
            if disc > 0.0 {
                b = b.max(beta + disc.sqrt());
            }
        } else {
            let lift = (beta - 1.0).abs() * (-self.ln_1mq);
            let half = (2.0 * self.var * (drop + lift)).sqrt();
            a = a.min(-half);
            b = b.max(half);
        }
        a = a.min(-14.0 * sigma);
        b = b.max(14.0 * sigma + 1.0);

        let mut points = vec![a, b];
        for &m in &modes {
            for k in [-8.0, -2.0, 0.0, 2.0, 8.0] {
                let p = m + k * sigma;
                if p > a && p < b {
                    points.push(p);
                }
            }
        }
        points.sort_by(f64::total_cmp);
        points.dedup();

        // A relative error e in I is an absolute error e in ln I, so the
        // tolerance can grow with |ln I| (about |peak|). Large orders need
        // this: ln_integrand itself carries rounding error ~ 1e-16 |peak|.
        let tol = (REL_TOL * peak_rel.abs().max(1.0)).min(1e-3);
        let scaled = integrate(
            |x| (self.ln_integrand_rel(x, beta, reference) - peak_rel).exp(),
            &points,
            tol,
            0.0,
            MAX_SEGMENTS,
        );
        if !scaled.converged || scaled.value.is_nan() || scaled.value <= 0.0 {
            return Err(Error::Numerical(format!(
                "moment integral did not converge (q={}, beta={beta})",
                self.q
            )));
        }
        let ln_i = reference + (peak_rel + scaled.value.ln());
        if ln_i > 1.0 {
            return Ok(ln_i);
        }
        // Near I = 1 the log-space estimate loses relative accuracy; integrate
        // the excess over 1 directly instead.
        let excess = integrate(|x| self.excess_integrand(x, beta), &points, REL_TOL, 1e-300, MAX_SEGMENTS);
        if !excess.converged {
            return Err(Error::Numerical(format!(
                "excess moment integral did not converge (q={}, beta={beta})",
                self.q
            )));
        }
        Ok(excess.value.max(0.0).ln_1p())
    }
}

/// Rényi divergence of order `alpha` for one step of the subsampled
/// Gaussian mechanism with sampling rate `q` and noise multiplier `sigma`.
///
/// `q = 1` uses the closed form `alpha / (2 sigma^2)`; `q = 0` costs nothing;
/// `sigma = 0` with `q > 0` returns `f64::INFINITY`.
pub fn rdp_step_cost(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid(format!("sampling rate must be in [0, 1], got {q}")));
    }
    if sigma.is_nan() || sigma < 0.0 || sigma.is_infinite() {
        return Err(Error::invalid(format!("noise multiplier must be finite and >= 0, got {sigma}")));
    }
    if alpha.is_nan() || alpha <= 1.0 || alpha.is_infinite() {
        return Err(Error::invalid(format!("Rényi order must be finite and > 1, got {alpha}")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let mix = Mixture::new(q, sigma);
    // D(mu_q || mu_0) integrates r^alpha; D(mu_0 || mu_q) integrates r^(1 - alpha).
    let remove = mix.ln_moment(alpha)? / (alpha - 1.0);
    let add = mix.ln_moment(1.0 - alpha)? / (alpha - 1.0);
    Ok(remove.max(add).max(0.0))
}

/// `(epsilon, order)` answer of a ledger query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpent {
    pub epsilon: f64,
    pub order: f64,
}

/// Accumulated privacy cost of repeated steps at fixed `(q, sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    q: f64,
    sigma: f64,
    delta: f64,
    steps: u64,
    orders: Vec<f64>,
    step_costs: Vec<f64>,
}

impl PrivacyLedger {
    pub fn new(q: f64, sigma: f64, delta: f64) -> Result<Self> {
        Self::with_orders(q, sigma, delta, DEFAULT_ORDERS.to_vec())
    }

    pub fn with_orders(q: f64, sigma: f64, delta: f64, orders: Vec<f64>) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta must be in (0, 1), got {delta}")));
        }
        let step_costs = orders
            .iter()
            .map(|&a| rdp_step_cost(q, sigma, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { q, sigma, delta, steps: 0, orders, step_costs })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    /// Accumulated cost per order: `steps * step_cost`.
    pub fn rdp_costs(&self) -> Vec<f64> {
        self.step_costs.iter().map(|&c| self.cost_at(c)).collect()
    }

    fn cost_at(&self, step_cost: f64) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.steps as f64 * step_cost
        }
    }

    pub fn accumulate(&mut self, steps: u64) {
        self.steps += steps;
    }

    pub fn accumulated(mut self, steps: u64) -> Self {
        self.accumulate(steps);
        self
    }

    /// Smallest epsilon over the order grid at this ledger's delta.
    pub fn epsilon(&self) -> Result<PrivacySpent> {
        if self.orders.is_empty() {
            return Err(Error::InvalidState("ledger has no Rényi orders".into()));
        }
        let log_inv_delta = -self.delta.ln();
        let mut best = PrivacySpent { epsilon: f64::INFINITY, order: self.orders[0] };
        for (&alpha, &c) in self.orders.iter().zip(&self.step_costs) {
            let eps = self.cost_at(c) + log_inv_delta / (alpha - 1.0);
            if eps < best.epsilon {
                best = PrivacySpent { epsilon: eps, order: alpha };
            }
        }
        Ok(best)
    }
}

/// Epsilon after `steps` steps at `(q, sigma)` for the given `delta`.
pub fn epsilon_for(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<f64> {
    Ok(PrivacyLedger::new(q, sigma, delta)?.accumulated(steps).epsilon()?.epsilon)
}

/// Smallest noise multiplier (to relative precision 1e-6) whose epsilon after
/// `steps` steps does not exceed `target_epsilon`.
pub fn calibrate_sigma(target_epsilon: f64, q: f64, steps: u64, delta: f64) -> Result<f64> {
    if target_epsilon.is_nan() || target_epsilon <= 0.0 || target_epsilon.is_infinite() {
        return Err(Error::invalid(format!("target epsilon must be positive, got {target_epsilon}")));
    }
    let (mut lo, mut hi) = (1e-2, 1e2);
    if epsilon_for(q, hi, steps, delta)? > target_epsilon {
        return Err(Error::invalid(format!(
            "target epsilon {target_epsilon} unreachable with sigma <= {hi}"
        )));
    }
    if epsilon_for(q, lo, steps, delta)? <= target_epsilon {
        return Ok(lo);
    }
    while hi / lo > 1.0 + 1e-6 {
        let mid = (lo * hi).sqrt();
        if epsilon_for(q, mid, steps, delta)? > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
