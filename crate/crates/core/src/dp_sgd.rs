//! DP-SGD: Poisson lots, per-example clipping, Gaussian noise.
//!
//! One step computes
//!
//! ```text
//! theta <- theta - lr / L * (sum_i clip(g_i, C) + N(0, sigma^2 C^2 I))
//! ```
//!
//! where `L` is the *expected* lot size, not the realized one.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Example, HybridModel, N_TRAINABLE};

/// Hyperparameters of a DP-SGD step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    clip_norm: f64,
    noise_multiplier: f64,
    lot_size: usize,
    learning_rate: f64,
}

impl DpConfig {
    /// `clip_norm` may be `f64::INFINITY` (no clipping) only when the noise
    /// multiplier is zero.
    pub fn new(clip_norm: f64, noise_multiplier: f64, lot_size: usize, learning_rate: f64) -> Result<Self> {
        if clip_norm.is_nan() || clip_norm <= 0.0 {
            return Err(Error::invalid(format!("clip norm must be positive, got {clip_norm}")));
        }
        if !noise_multiplier.is_finite() || noise_multiplier < 0.0 {
            return Err(Error::invalid(format!(
                "noise multiplier must be finite and >= 0, got {noise_multiplier}"
            )));
        }
        if clip_norm.is_infinite() && noise_multiplier > 0.0 {
            return Err(Error::invalid("unbounded clip norm requires zero noise"));
        }
        if lot_size == 0 {
            return Err(Error::invalid("lot size must be at least 1"));
        }
        if !learning_rate.is_finite() || learning_rate <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Self { clip_norm, noise_multiplier, lot_size, learning_rate })
    }

    pub fn clip_norm(&self) -> f64 {
        self.clip_norm
    }

    pub fn noise_multiplier(&self) -> f64 {
        self.noise_multiplier
    }

    pub fn lot_size(&self) -> usize {
        self.lot_size
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Standard deviation of the noise added to the clipped-gradient sum.
    pub fn noise_std(&self) -> f64 {
        if self.noise_multiplier == 0.0 {
            0.0
        } else {
            self.noise_multiplier * self.clip_norm
        }
    }

    /// Sampling probability `L / N` for a shard of `n` examples.
    pub fn sampling_rate(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid("shard is empty"));
        }
        if self.lot_size > n {
            return Err(Error::invalid(format!(
                "lot size {} exceeds shard size {n}",
                self.lot_size
            )));
        }
        Ok(self.lot_size as f64 / n as f64)
    }

    /// `ceil(N / L)` steps make one epoch over a shard of `n` examples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.lot_size)
    }
}

/// Scales `g` to norm at most `clip_norm`, preserving direction.
pub fn clip_gradient(g: &[f64], clip_norm: f64) -> Result<Vec<f64>> {
    if clip_norm.is_nan() || clip_norm <= 0.0 {
        return Err(Error::invalid(format!("clip norm must be positive, got {clip_norm}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("gradient has non-finite entries"));
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= clip_norm {
        return Ok(g.to_vec());
    }
    // Rounding can leave the scaled norm a few ulps above the bound.
    let mut factor = clip_norm / norm;
    loop {
        let out: Vec<f64> = g.iter().map(|v| v * factor).collect();
        if out.iter().map(|v| v * v).sum::<f64>().sqrt() <= clip_norm {
            return Ok(out);
        }
        factor = factor.next_down();
    }
}

/// Poisson sampling: each of `n` indices is kept independently with probability `q`.
pub fn sample_lot<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("sampling probability must be in (0, 1], got {q}")));
    }
    Ok((0..n).filter(|_| rng.random::<f64>() < q).collect())
}

/// `N(0, std^2 I)` in the trainable-parameter layout.
pub fn gaussian_noise<R: Rng + ?Sized>(std: f64, rng: &mut R) -> [f64; N_TRAINABLE] {
    let mut out = [0.0; N_TRAINABLE];
    if std > 0.0 {
        for v in out.iter_mut() {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// Sum of clipped per-example gradients plus Gaussian noise.
///
/// Gradients may be evaluated in parallel; the sum runs in lot order and the
/// noise is drawn afterwards, so the result is independent of scheduling.
pub fn noisy_clipped_sum<R: Rng + ?Sized>(
    model: &HybridModel,
    lot: &[&Example],
    cfg: &DpConfig,
    rng: &mut R,
) -> Result<[f64; N_TRAINABLE]> {
    let grads: Vec<[f64; N_TRAINABLE]> = lot
        .par_iter()
        .map(|e| model.loss_and_gradient(e).map(|(_, g)| g))
        .collect::<Result<_>>()?;
    let mut sum = [0.0; N_TRAINABLE];
    for g in &grads {
        let clipped = clip_gradient(g, cfg.clip_norm)
            .map_err(|_| Error::Numerical("non-finite per-example gradient".into()))?;
        for (s, c) in sum.iter_mut().zip(&clipped) {
            *s += c;
        }
    }
    let noise = gaussian_noise(cfg.noise_std(), rng);
    for (s, n) in sum.iter_mut().zip(&noise) {
        *s += n;
    }
    Ok(sum)
}

/// One DP-SGD step on `lot`. An empty lot still applies the noise term.
pub fn dp_sgd_step<R: Rng + ?Sized>(
    model: &HybridModel,
    lot: &[&Example],
    cfg: &DpConfig,
    rng: &mut R,
) -> Result<HybridModel> {
    let sum = noisy_clipped_sum(model, lot, cfg, rng)?;
    let rate = cfg.learning_rate / cfg.lot_size as f64;
    let mut params = model.trainable();
    for (p, s) in params.iter_mut().zip(&sum) {
        *p -= rate * s;
    }
    model.with_trainable(&params)
}
